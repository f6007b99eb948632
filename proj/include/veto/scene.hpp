#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "veto/tensor.hpp"

#include "json.hpp"

namespace veto {

// One detected entity with its feature grids. `visual` is the c_v×h×w RGB
// feature stand-in; `depth` is the 1×h×w synthetic depth grid from which the
// trainable geometric extractor produces the c_d-channel features at runtime.
struct EntityDetection {
  std::array<double, 4> box{};  // x1, y1, x2, y2 in image coordinates
  int class_id = 0;
  double score = 1.0;
  Tensor visual;
  Tensor depth;
};

struct Triplet {
  int subject = 0;
  int predicate = 0;
  int object = 0;
  bool operator==(const Triplet&) const = default;
};

struct SceneInstance {
  double image_width = 0.0;
  double image_height = 0.0;
  std::vector<EntityDetection> entities;
  std::vector<Triplet> gt_triplets;

  // Rejects (never repairs) invariant violations; the message names the
  // offending entity or triplet.
  void validate(int num_entity_classes, int num_predicates) const;
};

struct DatasetManifest {
  std::vector<std::string> predicate_names;
  std::vector<std::string> entity_class_names;
  std::vector<std::string> train_scenes;  // paths relative to the manifest
  std::vector<std::string> val_scenes;
  std::vector<std::string> test_scenes;
  std::vector<std::int64_t> predicate_freq;  // exact counts over the train split
  nlohmann::json provenance;                 // config + seed used at generation

  int num_predicates() const { return static_cast<int>(predicate_names.size()); }
  int num_entity_classes() const { return static_cast<int>(entity_class_names.size()); }
};

SceneInstance load_scene(const std::filesystem::path& path, int num_entity_classes,
                         int num_predicates);
void save_scene(const SceneInstance& scene, const std::filesystem::path& path);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Manifest plus eagerly loaded, validated scenes.
struct Dataset {
  std::filesystem::path root;
  DatasetManifest manifest;
  std::vector<SceneInstance> train;
  std::vector<SceneInstance> val;
  std::vector<SceneInstance> test;

  const std::vector<SceneInstance>& split(const std::string& name) const;
};

Dataset load_dataset(const std::filesystem::path& dir);

// Writes `value` to `path` via a temporary file + rename, so a crash mid-write
// cannot corrupt an existing artifact. `indent` < 0 means compact.
void write_json_atomic(const nlohmann::json& value, const std::filesystem::path& path,
                       int indent = -1);

}  // namespace veto
