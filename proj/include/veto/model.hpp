#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "veto/encoder.hpp"
#include "veto/geom_features.hpp"
#include "veto/meet.hpp"
#include "veto/metrics.hpp"
#include "veto/parameters.hpp"
#include "veto/patches.hpp"
#include "veto/scene.hpp"

#include "json.hpp"

namespace veto {

struct ModelConfig {
  PatchConfig patch;
  EncoderConfig encoder;
  GeomConfig geom;
  BaselineConfig baseline;
  int visual_channels = 64;
  int feature_height = 16;  // used by the baseline head's dense projection
  int feature_width = 16;
  int class_embed_dim = 32;
  int num_entity_classes = 10;
  int num_predicates = 12;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// The full relation network: geometric extractor, cross-relation patches,
// modality fusion, cue tokens, transformer encoder, and either a single
// M-way head or MEET expert heads (pass `groups` for the latter).
class VetoModel {
 public:
  VetoModel(const ModelConfig& cfg, std::uint64_t seed,
            const PredicateGroups* groups = nullptr);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  bool is_meet() const { return expert_heads_.has_value(); }

  // Relation feature y for an ordered entity pair (the encoder's class-token
  // output after the final LayerNorm).
  Var relation_feature(Tape& tape, const SceneInstance& scene, int subject, int object,
                       RngStream* dropout_rng = nullptr) const;

  Var single_logits(Tape& tape, const Var& y) const;
  std::vector<Var> expert_logits(Tape& tape, const Var& y) const;
  Var expert_logits(Tape& tape, const Var& y, int expert) const;

  // Inference-time ranked prediction (single-head softmax or MEET merging).
  RankedPrediction predict_pair(const SceneInstance& scene, int subject, int object) const;

 private:
  ModelConfig cfg_;
  std::optional<PredicateGroups> groups_;
  ParameterStore store_;
  std::optional<GeometricExtractor> extractor_;
  std::optional<PatchFusion> fusion_;
  std::optional<CueTokenBuilder> cues_;
  std::optional<RelationEncoder> encoder_;
  std::optional<ClassifierHead> single_head_;
  std::optional<ExpertHeads> expert_heads_;
};

// The conventional global-projection baseline as a standalone model.
class BaselineModel {
 public:
  BaselineModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  Var logits(Tape& tape, const SceneInstance& scene, const Tensor& canvas, int subject,
             int object) const;
  RankedPrediction predict_pair(const SceneInstance& scene, int subject, int object) const;

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  std::optional<BaselineRelationHead> head_;
};

// Trainable-parameter comparison between the local-projection path and the
// conventional dense baseline at matched dims.
struct ParamCountReport {
  std::int64_t veto_total = 0;
  std::int64_t veto_patch_projections = 0;      // shared per-patch maps
  std::int64_t baseline_total = 0;
  std::int64_t baseline_dense_projections = 0;  // the two dense entity layers
  double projection_ratio = 0.0;                // dense / patch
  std::map<std::string, std::int64_t> veto_breakdown;

  nlohmann::json to_json() const;
};

// Counts by building the models and summing tensor sizes. Allocates the full
// parameter set; use the analytic route for paper-scale configs.
ParamCountReport count_parameters(const ModelConfig& cfg);

// Closed-form counts mirroring the construction; must agree with
// count_parameters exactly (checked in the tests at desk dims).
ParamCountReport count_parameters_analytic(const ModelConfig& cfg);

// ---- Shared evaluation plumbing ---------------------------------------------

using PairPredictor = std::function<RankedPrediction(const SceneInstance&, int, int)>;

// Predictions for every ordered pair (subject-major enumeration).
PredictedGraph predict_scene(const PairPredictor& predictor, const SceneInstance& scene);

MetricReport evaluate_scenes(const PairPredictor& predictor,
                             const std::vector<SceneInstance>& scenes, int num_predicates,
                             const std::vector<int>& ks,
                             const std::vector<std::int64_t>& train_frequency,
                             const EvalOptions& options = {});

// Mean of per-class recall within each expert group at ks[k_index]; classes
// absent from the split are skipped.
std::vector<double> group_mean_recall(const MetricReport& report, const PredicateGroups& groups,
                                      std::size_t k_index);

}  // namespace veto
