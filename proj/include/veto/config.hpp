#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "veto/model.hpp"
#include "veto/optimizer.hpp"
#include "veto/synth.hpp"

#include "json.hpp"

namespace veto {

struct TrainConfig {
  std::string mode = "meet";  // single | rwt | meet | baseline
  std::int64_t steps = 5000;
  int batch_size = 12;
  AdamConfig adam;
  ScheduleConfig schedule;
  std::int64_t eval_every = 500;
  std::int64_t checkpoint_every = 500;
  int eval_k = 20;             // k used for the in-training validation metric
  std::string resume_from;     // optional checkpoint path

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// The whole run: every module config plus seeds and paths. Validated as a
// whole before any work and embedded into every artifact for provenance.
struct RunConfig {
  SynthConfig synth;
  ModelConfig model;
  int meet_groups = 3;
  std::vector<int> meet_boundaries;  // optional explicit cumulative boundaries
  TrainConfig train;
  std::vector<int> eval_ks = {20, 50, 100};
  bool graph_constrained = true;
  std::string data_dir = "data";
  std::string out_dir = "out";
  std::uint64_t seed = 7;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  // Derives the model dims the dataset dictates (predicate/entity counts,
  // channels, grid extents) and cross-checks everything else.
  void align_with(const DatasetManifest& manifest, const SceneInstance& sample);
};

}  // namespace veto
