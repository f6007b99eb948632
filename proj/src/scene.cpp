#include "veto/scene.hpp"

#include <fstream>

#include "veto/errors.hpp"

namespace veto {

namespace {

nlohmann::json grid_to_json(const Tensor& t) {
  // [c][y][x] nesting, all floats decimal.
  nlohmann::json channels = nlohmann::json::array();
  const std::int64_t c = t.extent(0), h = t.extent(1), w = t.extent(2);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::int64_t y = 0; y < h; ++y) {
      nlohmann::json cols = nlohmann::json::array();
      for (std::int64_t x = 0; x < w; ++x) cols.push_back(t.at3(ch, y, x));
      rows.push_back(std::move(cols));
    }
    channels.push_back(std::move(rows));
  }
  return channels;
}

Tensor grid_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty() || !j[0][0].is_array()) {
    throw ValidationError("scene field '" + what + "' must be a [c][y][x] array");
  }
  const std::int64_t c = static_cast<std::int64_t>(j.size());
  const std::int64_t h = static_cast<std::int64_t>(j[0].size());
  const std::int64_t w = static_cast<std::int64_t>(j[0][0].size());
  Tensor t({c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    if (static_cast<std::int64_t>(j[ch].size()) != h) {
      throw ValidationError("scene field '" + what + "' has ragged rows");
    }
    for (std::int64_t y = 0; y < h; ++y) {
      if (static_cast<std::int64_t>(j[ch][y].size()) != w) {
        throw ValidationError("scene field '" + what + "' has ragged columns");
      }
      for (std::int64_t x = 0; x < w; ++x) t.at3(ch, y, x) = j[ch][y][x].get<double>();
    }
  }
  return t;
}

nlohmann::json parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("parse error in " + path.string() + ": " + e.what());
  }
}

}  // namespace

void SceneInstance::validate(int num_entity_classes, int num_predicates) const {
  if (image_width <= 0 || image_height <= 0) {
    throw ValidationError("scene image_size must be positive");
  }
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const EntityDetection& e = entities[i];
    if (!(e.box[0] < e.box[2]) || !(e.box[1] < e.box[3])) {
      throw ValidationError("entity " + std::to_string(i) + " has a degenerate box [" +
                            std::to_string(e.box[0]) + ", " + std::to_string(e.box[1]) + ", " +
                            std::to_string(e.box[2]) + ", " + std::to_string(e.box[3]) + "]");
    }
    if (e.class_id < 0 || e.class_id >= num_entity_classes) {
      throw ValidationError("entity " + std::to_string(i) + " has class_id " +
                            std::to_string(e.class_id) + " outside [0, " +
                            std::to_string(num_entity_classes) + ")");
    }
    if (e.score < 0.0 || e.score > 1.0) {
      throw ValidationError("entity " + std::to_string(i) + " has score outside [0, 1]");
    }
    if (e.visual.rank() != 3 || e.depth.rank() != 3) {
      throw ValidationError("entity " + std::to_string(i) + " feature grids must be rank 3");
    }
    if (e.visual.extent(1) != e.depth.extent(1) || e.visual.extent(2) != e.depth.extent(2)) {
      throw ValidationError("entity " + std::to_string(i) +
                            " visual and geometric grids disagree on spatial extent: " +
                            shape_str(e.visual.shape()) + " vs " + shape_str(e.depth.shape()));
    }
  }
  const int n = static_cast<int>(entities.size());
  for (std::size_t i = 0; i < gt_triplets.size(); ++i) {
    const Triplet& t = gt_triplets[i];
    auto describe = [&]() {
      return "triplet " + std::to_string(i) + " (" + std::to_string(t.subject) + ", " +
             std::to_string(t.predicate) + ", " + std::to_string(t.object) + ")";
    };
    if (t.subject < 0 || t.subject >= n || t.object < 0 || t.object >= n) {
      throw ValidationError(describe() + " references a missing entity");
    }
    if (t.subject == t.object) {
      throw ValidationError(describe() + " relates an entity to itself");
    }
    if (t.predicate < 0 || t.predicate >= num_predicates) {
      throw ValidationError(describe() + " has predicate outside [0, " +
                            std::to_string(num_predicates) + ")");
    }
  }
}

SceneInstance load_scene(const std::filesystem::path& path, int num_entity_classes,
                         int num_predicates) {
  const nlohmann::json j = parse_file(path);
  SceneInstance scene;
  try {
    scene.image_width = j.at("image_size").at(0).get<double>();
    scene.image_height = j.at("image_size").at(1).get<double>();
    for (const auto& je : j.at("entities")) {
      EntityDetection e;
      for (int k = 0; k < 4; ++k) e.box[static_cast<std::size_t>(k)] = je.at("box").at(static_cast<std::size_t>(k)).get<double>();
      e.class_id = je.at("class_id").get<int>();
      e.score = je.at("score").get<double>();
      e.visual = grid_from_json(je.at("visual"), "visual");
      e.depth = grid_from_json(je.at("geometric"), "geometric");
      scene.entities.push_back(std::move(e));
    }
    for (const auto& jt : j.at("gt_triplets")) {
      scene.gt_triplets.push_back(Triplet{jt.at(0).get<int>(), jt.at(1).get<int>(), jt.at(2).get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed scene file " + path.string() + ": " + e.what());
  }
  scene.validate(num_entity_classes, num_predicates);
  return scene;
}

void save_scene(const SceneInstance& scene, const std::filesystem::path& path) {
  nlohmann::json j;
  j["image_size"] = {scene.image_width, scene.image_height};
  nlohmann::json entities = nlohmann::json::array();
  for (const EntityDetection& e : scene.entities) {
    nlohmann::json je;
    je["box"] = e.box;
    je["class_id"] = e.class_id;
    je["score"] = e.score;
    je["visual"] = grid_to_json(e.visual);
    je["geometric"] = grid_to_json(e.depth);
    entities.push_back(std::move(je));
  }
  j["entities"] = std::move(entities);
  nlohmann::json triplets = nlohmann::json::array();
  for (const Triplet& t : scene.gt_triplets) {
    triplets.push_back({t.subject, t.predicate, t.object});
  }
  j["gt_triplets"] = std::move(triplets);
  write_json_atomic(j, path);
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const nlohmann::json j = parse_file(path);
  DatasetManifest m;
  try {
    m.predicate_names = j.at("predicate_names").get<std::vector<std::string>>();
    m.entity_class_names = j.at("entity_class_names").get<std::vector<std::string>>();
    m.train_scenes = j.at("splits").at("train").get<std::vector<std::string>>();
    m.val_scenes = j.at("splits").at("val").get<std::vector<std::string>>();
    m.test_scenes = j.at("splits").at("test").get<std::vector<std::string>>();
    m.predicate_freq = j.at("predicate_freq").get<std::vector<std::int64_t>>();
    if (j.contains("provenance")) m.provenance = j.at("provenance");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest " + path.string() + ": " + e.what());
  }
  if (m.predicate_freq.size() != m.predicate_names.size()) {
    throw ValidationError("manifest frequency table length does not match predicate count");
  }
  for (std::int64_t f : m.predicate_freq) {
    if (f < 0) throw ValidationError("manifest frequency table has a negative count");
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  nlohmann::json j;
  j["predicate_names"] = manifest.predicate_names;
  j["entity_class_names"] = manifest.entity_class_names;
  j["splits"] = {{"train", manifest.train_scenes},
                 {"val", manifest.val_scenes},
                 {"test", manifest.test_scenes}};
  j["predicate_freq"] = manifest.predicate_freq;
  j["provenance"] = manifest.provenance;
  write_json_atomic(j, path, 2);
}

const std::vector<SceneInstance>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ValidationError("unknown split '" + name + "' (expected train, val or test)");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.root = dir;
  ds.manifest = load_manifest(dir / "manifest.json");
  auto load_split = [&](const std::vector<std::string>& names, std::vector<SceneInstance>& out) {
    for (const std::string& rel : names) {
      out.push_back(load_scene(dir / rel, ds.manifest.num_entity_classes(),
                               ds.manifest.num_predicates()));
    }
  };
  load_split(ds.manifest.train_scenes, ds.train);
  load_split(ds.manifest.val_scenes, ds.val);
  load_split(ds.manifest.test_scenes, ds.test);
  return ds;
}

void write_json_atomic(const nlohmann::json& value, const std::filesystem::path& path,
                       int indent) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out << value.dump(indent);
    out << "\n";
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace veto
