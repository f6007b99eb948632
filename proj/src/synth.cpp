#include "veto/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "veto/errors.hpp"
#include "veto/rng.hpp"

namespace veto {

namespace {

struct Region {
  std::int64_t y0, y1, x0, x1;
};

Region signature_region(int predicate, const SynthConfig& cfg) {
  const int g = cfg.signature_grid;
  const int block = predicate % (g * g);
  const int by = block / g, bx = block % g;
  const std::int64_t h = cfg.feature_height, w = cfg.feature_width;
  return Region{by * h / g, (by + 1) * h / g, bx * w / g, (bx + 1) * w / g};
}

int subject_channel(int predicate, const SynthConfig& cfg) {
  const int g = cfg.signature_grid;
  return 2 * (predicate / (g * g));
}

double region_mean(const Tensor& grid, std::int64_t channel, const Region& r) {
  double acc = 0.0;
  for (std::int64_t y = r.y0; y < r.y1; ++y)
    for (std::int64_t x = r.x0; x < r.x1; ++x) acc += grid.at3(channel, y, x);
  return acc / static_cast<double>((r.y1 - r.y0) * (r.x1 - r.x0));
}

}  // namespace

void SynthConfig::validate() const {
  if (num_predicates < 4) throw ValidationError("synth: need at least 4 predicate classes");
  if (zipf_exponent <= 0.0) throw ValidationError("synth: zipf_exponent must be positive");
  if (num_scenes < 1) throw ValidationError("synth: need at least one scene");
  if (entities_per_scene < 2) throw ValidationError("synth: need at least two entities per scene");
  if (num_entity_classes < 1) throw ValidationError("synth: need at least one entity class");
  if (signature_grid < 1) throw ValidationError("synth: signature_grid must be positive");
  if (feature_height < signature_grid || feature_width < signature_grid) {
    throw ValidationError("synth: feature grid smaller than the signature grid");
  }
  const int planes = (num_predicates + signature_grid * signature_grid - 1) /
                     (signature_grid * signature_grid);
  if (visual_channels < 2 * planes) {
    throw ValidationError("synth: visual_channels must be at least " + std::to_string(2 * planes) +
                          " to hold the role signatures");
  }
  if (image_size <= 0.0) throw ValidationError("synth: image_size must be positive");
  if (noise_std < 0.0) throw ValidationError("synth: noise_std must be non-negative");
  if (signature_amplitude <= 0.0) throw ValidationError("synth: signature_amplitude must be positive");
  if (val_fraction < 0.0 || test_fraction < 0.0 || val_fraction + test_fraction >= 1.0) {
    throw ValidationError("synth: split fractions must be non-negative and leave a train split");
  }
}

nlohmann::json SynthConfig::to_json() const {
  return {{"num_predicates", num_predicates},
          {"zipf_exponent", zipf_exponent},
          {"num_scenes", num_scenes},
          {"entities_per_scene", entities_per_scene},
          {"num_entity_classes", num_entity_classes},
          {"visual_channels", visual_channels},
          {"feature_height", feature_height},
          {"feature_width", feature_width},
          {"signature_grid", signature_grid},
          {"image_size", image_size},
          {"noise_std", noise_std},
          {"signature_amplitude", signature_amplitude},
          {"val_fraction", val_fraction},
          {"test_fraction", test_fraction}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig cfg;
  cfg.num_predicates = j.value("num_predicates", cfg.num_predicates);
  cfg.zipf_exponent = j.value("zipf_exponent", cfg.zipf_exponent);
  cfg.num_scenes = j.value("num_scenes", cfg.num_scenes);
  cfg.entities_per_scene = j.value("entities_per_scene", cfg.entities_per_scene);
  cfg.num_entity_classes = j.value("num_entity_classes", cfg.num_entity_classes);
  cfg.visual_channels = j.value("visual_channels", cfg.visual_channels);
  cfg.feature_height = j.value("feature_height", cfg.feature_height);
  cfg.feature_width = j.value("feature_width", cfg.feature_width);
  cfg.signature_grid = j.value("signature_grid", cfg.signature_grid);
  cfg.image_size = j.value("image_size", cfg.image_size);
  cfg.noise_std = j.value("noise_std", cfg.noise_std);
  cfg.signature_amplitude = j.value("signature_amplitude", cfg.signature_amplitude);
  cfg.val_fraction = j.value("val_fraction", cfg.val_fraction);
  cfg.test_fraction = j.value("test_fraction", cfg.test_fraction);
  return cfg;
}

DatasetManifest synthesize_dataset(const SynthConfig& cfg, std::uint64_t seed,
                                   const std::filesystem::path& out_dir) {
  cfg.validate();
  RngStream rng(seed, "synth");

  // Zipf law over frequency ranks; predicate ids are a shuffled assignment of
  // ranks so downstream frequency sorting is exercised on non-trivial input.
  std::vector<double> cumulative(static_cast<std::size_t>(cfg.num_predicates));
  double z = 0.0;
  for (int r = 0; r < cfg.num_predicates; ++r) {
    z += std::pow(static_cast<double>(r + 1), -cfg.zipf_exponent);
    cumulative[static_cast<std::size_t>(r)] = z;
  }
  std::vector<int> rank_to_id(static_cast<std::size_t>(cfg.num_predicates));
  std::iota(rank_to_id.begin(), rank_to_id.end(), 0);
  rng.shuffle(rank_to_id);

  auto sample_predicate = [&]() {
    const double u = rng.uniform() * cumulative.back();
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
    const int rank = static_cast<int>(it - cumulative.begin());
    return rank_to_id[static_cast<std::size_t>(std::min(rank, cfg.num_predicates - 1))];
  };

  std::filesystem::create_directories(out_dir / "scenes");

  DatasetManifest manifest;
  for (int p = 0; p < cfg.num_predicates; ++p) {
    char name[32];
    std::snprintf(name, sizeof(name), "pred_%02d", p);
    manifest.predicate_names.emplace_back(name);
  }
  for (int c = 0; c < cfg.num_entity_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "entity_%02d", c);
    manifest.entity_class_names.emplace_back(name);
  }
  manifest.predicate_freq.assign(static_cast<std::size_t>(cfg.num_predicates), 0);

  const int n_val = static_cast<int>(std::lround(cfg.num_scenes * cfg.val_fraction));
  const int n_test = static_cast<int>(std::lround(cfg.num_scenes * cfg.test_fraction));
  const int n_train = cfg.num_scenes - n_val - n_test;
  if (n_train < 1) throw ValidationError("synth: split fractions leave no training scenes");

  for (int si = 0; si < cfg.num_scenes; ++si) {
    SceneInstance scene;
    scene.image_width = cfg.image_size;
    scene.image_height = cfg.image_size;

    for (int e = 0; e < cfg.entities_per_scene; ++e) {
      EntityDetection ent;
      const double x1 = rng.uniform(0.0, 0.6 * cfg.image_size);
      const double y1 = rng.uniform(0.0, 0.6 * cfg.image_size);
      ent.box = {x1, y1, x1 + rng.uniform(0.2, 0.4) * cfg.image_size,
                 y1 + rng.uniform(0.2, 0.4) * cfg.image_size};
      ent.class_id = static_cast<int>(rng.uniform_int(cfg.num_entity_classes));
      ent.score = rng.uniform(0.5, 1.0);
      ent.visual = Tensor({cfg.visual_channels, cfg.feature_height, cfg.feature_width});
      for (std::int64_t i = 0; i < ent.visual.numel(); ++i) {
        ent.visual[i] = rng.normal(0.0, cfg.noise_std);
      }
      ent.depth = Tensor({1, cfg.feature_height, cfg.feature_width});
      for (std::int64_t i = 0; i < ent.depth.numel(); ++i) {
        ent.depth[i] = rng.normal(0.0, cfg.noise_std);
      }
      scene.entities.push_back(std::move(ent));
    }

    // Disjoint subject/object pairing keeps at most one planted signature per
    // entity and role.
    std::vector<int> order(static_cast<std::size_t>(cfg.entities_per_scene));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (int pair = 0; pair + 1 < cfg.entities_per_scene; pair += 2) {
      int subject = order[static_cast<std::size_t>(pair)];
      int object = order[static_cast<std::size_t>(pair + 1)];
      if (rng.uniform() < 0.5) std::swap(subject, object);
      const int predicate = sample_predicate();
      scene.gt_triplets.push_back(Triplet{subject, predicate, object});

      const Region r = signature_region(predicate, cfg);
      const int sub_ch = subject_channel(predicate, cfg);
      Tensor& sub_vis = scene.entities[static_cast<std::size_t>(subject)].visual;
      Tensor& obj_vis = scene.entities[static_cast<std::size_t>(object)].visual;
      Tensor& sub_dep = scene.entities[static_cast<std::size_t>(subject)].depth;
      Tensor& obj_dep = scene.entities[static_cast<std::size_t>(object)].depth;
      for (std::int64_t y = r.y0; y < r.y1; ++y) {
        for (std::int64_t x = r.x0; x < r.x1; ++x) {
          sub_vis.at3(sub_ch, y, x) += cfg.signature_amplitude;
          obj_vis.at3(sub_ch + 1, y, x) += cfg.signature_amplitude;
          sub_dep.at3(0, y, x) += cfg.signature_amplitude;
          obj_dep.at3(0, y, x) -= cfg.signature_amplitude;
        }
      }
    }

    char name[48];
    std::snprintf(name, sizeof(name), "scenes/scene_%05d.json", si);
    save_scene(scene, out_dir / name);
    if (si < n_train) {
      for (const Triplet& t : scene.gt_triplets) {
        manifest.predicate_freq[static_cast<std::size_t>(t.predicate)]++;
      }
      manifest.train_scenes.emplace_back(name);
    } else if (si < n_train + n_val) {
      manifest.val_scenes.emplace_back(name);
    } else {
      manifest.test_scenes.emplace_back(name);
    }
  }

  manifest.provenance = {{"config", cfg.to_json()}, {"seed", seed}};
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

int oracle_predict(const SceneInstance& scene, int subject, int object,
                   const SynthConfig& cfg) {
  const Tensor& sub = scene.entities[static_cast<std::size_t>(subject)].visual;
  const Tensor& obj = scene.entities[static_cast<std::size_t>(object)].visual;
  int best = 0;
  double best_score = -1e300;
  for (int p = 0; p < cfg.num_predicates; ++p) {
    const Region r = signature_region(p, cfg);
    const int ch = subject_channel(p, cfg);
    const double score = region_mean(sub, ch, r) + region_mean(obj, ch + 1, r);
    if (score > best_score) {
      best_score = score;
      best = p;
    }
  }
  return best;
}

double oracle_accuracy(const std::vector<SceneInstance>& scenes, const SynthConfig& cfg) {
  std::int64_t total = 0, correct = 0;
  for (const SceneInstance& scene : scenes) {
    for (const Triplet& t : scene.gt_triplets) {
      ++total;
      if (oracle_predict(scene, t.subject, t.object, cfg) == t.predicate) ++correct;
    }
  }
  if (total == 0) throw ValidationError("oracle_accuracy: no ground-truth triplets");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace veto
