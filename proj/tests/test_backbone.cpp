#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "veto/errors.hpp"
#include "veto/geom_features.hpp"
#include "veto/gradcheck.hpp"
#include "veto/synth.hpp"

using namespace veto;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.num_predicates = 12;
  cfg.zipf_exponent = 1.0;
  cfg.num_scenes = 60;
  cfg.entities_per_scene = 3;
  cfg.num_entity_classes = 6;
  cfg.visual_channels = 4;
  cfg.feature_height = 8;
  cfg.feature_width = 8;
  cfg.signature_grid = 4;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_SUITE_BEGIN("backbone");

TEST_CASE("generation is reproducible byte for byte") {
  auto dir_a = testing::fresh_temp_dir("synth_a");
  auto dir_b = testing::fresh_temp_dir("synth_b");
  SynthConfig cfg = small_config();
  synthesize_dataset(cfg, 99, dir_a);
  synthesize_dataset(cfg, 99, dir_b);
  CHECK(slurp(dir_a / "manifest.json") == slurp(dir_b / "manifest.json"));
  CHECK(slurp(dir_a / "scenes/scene_00000.json") == slurp(dir_b / "scenes/scene_00000.json"));
  CHECK(slurp(dir_a / "scenes/scene_00059.json") == slurp(dir_b / "scenes/scene_00059.json"));

  // A different seed must not reproduce the same bytes.
  auto dir_c = testing::fresh_temp_dir("synth_c");
  synthesize_dataset(cfg, 100, dir_c);
  CHECK(slurp(dir_a / "scenes/scene_00000.json") != slurp(dir_c / "scenes/scene_00000.json"));
}

TEST_CASE("zipf frequencies: head is about M times the tail at s=1") {
  auto dir = testing::fresh_temp_dir("synth_zipf");
  SynthConfig cfg = small_config();
  cfg.num_scenes = 600;
  cfg.val_fraction = 0.0;
  cfg.test_fraction = 0.0;
  const DatasetManifest manifest = synthesize_dataset(cfg, 7, dir);

  std::int64_t head = 0, tail = 1 << 30, total = 0;
  for (std::int64_t f : manifest.predicate_freq) {
    head = std::max(head, f);
    tail = std::min(tail, f);
    total += f;
  }
  CHECK(total == 600);  // one triplet per scene with 3 entities
  // Expectation is exactly 12:1; allow generous sampling noise.
  CHECK(head >= 7 * tail);
  CHECK(head <= 20 * std::max<std::int64_t>(tail, 1));
}

TEST_CASE("manifest frequency table equals a recount from the scene files") {
  auto dir = testing::fresh_temp_dir("synth_recount");
  SynthConfig cfg = small_config();
  const DatasetManifest manifest = synthesize_dataset(cfg, 3, dir);
  std::vector<std::int64_t> recount(static_cast<std::size_t>(cfg.num_predicates), 0);
  for (const std::string& rel : manifest.train_scenes) {
    const SceneInstance scene =
        load_scene(dir / rel, cfg.num_entity_classes, cfg.num_predicates);
    for (const Triplet& t : scene.gt_triplets) recount[static_cast<std::size_t>(t.predicate)]++;
  }
  CHECK(recount == manifest.predicate_freq);
}

TEST_CASE("planted signatures are decodable by the generator's own rule") {
  auto dir = testing::fresh_temp_dir("synth_oracle");
  SynthConfig cfg = small_config();
  cfg.num_scenes = 200;
  synthesize_dataset(cfg, 21, dir);
  const Dataset ds = load_dataset(dir);
  CHECK(oracle_accuracy(ds.train, cfg) > 0.95);
  CHECK(oracle_accuracy(ds.test, cfg) > 0.95);
}

TEST_CASE("minimal case: two entities give one ordered pair per direction") {
  auto dir = testing::fresh_temp_dir("synth_minimal");
  SynthConfig cfg = small_config();
  cfg.num_predicates = 4;
  cfg.num_scenes = 1;
  cfg.entities_per_scene = 2;
  cfg.val_fraction = 0.0;
  cfg.test_fraction = 0.0;
  const DatasetManifest manifest = synthesize_dataset(cfg, 5, dir);
  REQUIRE(manifest.train_scenes.size() == 1);
  const SceneInstance scene = load_scene(dir / manifest.train_scenes[0], cfg.num_entity_classes,
                                         cfg.num_predicates);
  CHECK(scene.entities.size() == 2);
  CHECK(scene.gt_triplets.size() == 1);  // the one annotated direction
  const Triplet& t = scene.gt_triplets[0];
  CHECK(t.subject != t.object);
  CHECK(t.subject >= 0);
  CHECK(t.subject < 2);
}

TEST_CASE("scene save/load round trip is structurally exact") {
  auto dir = testing::fresh_temp_dir("scene_roundtrip");
  SynthConfig cfg = small_config();
  cfg.num_scenes = 2;
  const DatasetManifest manifest = synthesize_dataset(cfg, 17, dir);
  const fs::path path = dir / manifest.train_scenes[0];
  const SceneInstance a = load_scene(path, cfg.num_entity_classes, cfg.num_predicates);
  save_scene(a, dir / "copy.json");
  const SceneInstance b = load_scene(dir / "copy.json", cfg.num_entity_classes,
                                     cfg.num_predicates);
  CHECK(a.image_width == b.image_width);
  REQUIRE(a.entities.size() == b.entities.size());
  for (std::size_t i = 0; i < a.entities.size(); ++i) {
    CHECK(a.entities[i].box == b.entities[i].box);
    CHECK(a.entities[i].class_id == b.entities[i].class_id);
    CHECK(a.entities[i].visual.vec() == b.entities[i].visual.vec());
    CHECK(a.entities[i].depth.vec() == b.entities[i].depth.vec());
  }
  CHECK(a.gt_triplets == b.gt_triplets);
}

TEST_CASE("invariant violations are rejected, never repaired") {
  SceneInstance scene;
  scene.image_width = 32;
  scene.image_height = 32;
  for (int i = 0; i < 2; ++i) {
    EntityDetection e;
    e.box = {1.0, 1.0, 9.0, 9.0};
    e.class_id = 0;
    e.visual = Tensor({2, 4, 4});
    e.depth = Tensor({1, 4, 4});
    scene.entities.push_back(std::move(e));
  }
  scene.gt_triplets.push_back({0, 1, 1});
  CHECK_NOTHROW(scene.validate(3, 4));

  SUBCASE("self relation") {
    scene.gt_triplets[0] = {1, 0, 1};
    CHECK_THROWS_AS(scene.validate(3, 4), ValidationError);
  }
  SUBCASE("degenerate box") {
    scene.entities[0].box = {9.0, 1.0, 9.0, 9.0};
    CHECK_THROWS_AS(scene.validate(3, 4), ValidationError);
  }
  SUBCASE("predicate out of range") {
    scene.gt_triplets[0] = {0, 4, 1};
    CHECK_THROWS_AS(scene.validate(3, 4), ValidationError);
  }
  SUBCASE("entity index out of range") {
    scene.gt_triplets[0] = {0, 1, 5};
    CHECK_THROWS_AS(scene.validate(3, 4), ValidationError);
  }
  SUBCASE("class id out of range") {
    scene.entities[1].class_id = 7;
    CHECK_THROWS_AS(scene.validate(3, 4), ValidationError);
  }
  SUBCASE("mismatched grid extents") {
    scene.entities[0].depth = Tensor({1, 5, 4});
    CHECK_THROWS_AS(scene.validate(3, 4), ValidationError);
  }
}

TEST_CASE("load_scene reports parse failures") {
  auto dir = testing::fresh_temp_dir("scene_parse");
  std::ofstream(dir / "bad.json") << "{not json";
  CHECK_THROWS_AS(load_scene(dir / "bad.json", 3, 4), ValidationError);
  CHECK_THROWS_AS(load_scene(dir / "missing.json", 3, 4), ValidationError);
}

TEST_CASE("invalid synth config fails before writing anything") {
  auto dir = testing::fresh_temp_dir("synth_invalid");
  SynthConfig cfg = small_config();
  cfg.num_predicates = 2;  // below the minimum of 4
  CHECK_THROWS_AS(synthesize_dataset(cfg, 1, dir / "sub"), ValidationError);
  CHECK_FALSE(fs::exists(dir / "sub"));
}

TEST_CASE("geometric extractor: shapes, zero case, gradients") {
  RngStream rng(31, "geom-test");
  ParameterStore store;
  GeometricExtractor extractor({.out_channels = 3, .hidden_channels = 2}, store, rng);

  SUBCASE("output shape is out_channels x h x w") {
    for (int h : {3, 5, 9}) {
      Tape tape;
      Var out = extractor.forward(tape, Var(Tensor({1, h, h + 1})));
      CHECK(out.shape() == Shape{3, h, h + 1});
    }
  }

  SUBCASE("zero depth grid with zero biases maps to zero features") {
    Tape tape;
    Var out = extractor.forward(tape, Var(Tensor({1, 6, 6})));
    for (std::int64_t i = 0; i < out.value().numel(); ++i) CHECK(out.value()[i] == 0.0);
  }

  SUBCASE("gradient check at 1e-4") {
    const Tensor depth = testing::random_tensor({1, 5, 5}, rng);
    Tensor probe({3, 5, 5});
    for (std::int64_t i = 0; i < probe.numel(); ++i) probe[i] = rng.normal();
    auto loss = [&](Tape& tape) {
      Var out = extractor.forward(tape, Var(Tensor(depth)));
      return sum(tape, mul(tape, out, Var(Tensor(probe))));
    };
    GradCheckOptions opt;
    opt.tolerance = 1e-4;
    auto report = check_gradients(store, loss, opt);
    CHECK(report.passed);
  }
}

TEST_SUITE_END();
