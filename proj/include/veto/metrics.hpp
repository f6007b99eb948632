#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "veto/meet.hpp"
#include "veto/scene.hpp"

#include "json.hpp"

namespace veto {

// Prediction for one ordered entity pair. `prediction.ranked` must already be
// sorted by confidence descending with ties broken by predicate id ascending.
struct PairPrediction {
  int subject = 0;
  int object = 0;
  RankedPrediction prediction;
};

// All ordered-pair predictions of one scene. PredCls requires a prediction
// for every pair a ground-truth triplet references.
struct PredictedGraph {
  std::vector<PairPrediction> pairs;
};

struct EvalOptions {
  // Graph-constrained ranking (at most one predicate per ordered pair) is the
  // only implemented mode; the flag exists as a config stub and `false` is
  // rejected at validation.
  bool graph_constrained = true;
};

// Per-scene hit statistics at one k.
struct SceneRecallStats {
  std::int64_t gt_total = 0;
  std::int64_t hits_total = 0;
  std::vector<std::int64_t> gt_per_class;
  std::vector<std::int64_t> hits_per_class;
};

// Top-k triplet recall under the graph constraint. The global ranking sorts
// each pair's top candidate by (confidence desc, pair index asc, predicate id
// asc); a GT triplet hits iff its (pair, predicate) is among the first k.
SceneRecallStats recall_at_k(const PredictedGraph& pred, const SceneInstance& gt,
                             int num_predicates, int k, const EvalOptions& options = {});

// Independent oracle: enumerates every (pair, predicate, confidence) entry,
// sorts the flat list with the same tie rule, walks it skipping already-taken
// pairs, and recounts. Must match recall_at_k bit for bit.
SceneRecallStats oracle_recall_at_k(const PredictedGraph& pred, const SceneInstance& gt,
                                    int num_predicates, int k,
                                    const EvalOptions& options = {});

struct MetricReport {
  std::vector<int> ks;
  std::vector<double> recall;       // fractions in [0, 1], one per k
  std::vector<double> mean_recall;  // per-class mean, zero-GT classes excluded
  std::vector<double> average;      // exactly (recall + mean_recall) / 2
  // Predicates in descending training-frequency order, and per-k recall per
  // predicate in that order (-1 marks classes with no GT in the split).
  std::vector<int> predicates_by_frequency;
  std::vector<std::vector<double>> per_predicate_recall;
  std::int64_t scenes = 0;
  std::int64_t gt_triplets = 0;
};

// Folds per-scene stats (outer index scene, inner index aligned with `ks`)
// into split-level metrics. mR aggregates class hits/GT across scenes first.
MetricReport aggregate_report(const std::vector<std::vector<SceneRecallStats>>& per_scene,
                              const std::vector<int>& ks,
                              const std::vector<std::int64_t>& train_frequency);

// Percentages with one decimal, in a compact R/mR/A table.
std::string render_report_table(const MetricReport& report);

nlohmann::json report_to_json(const MetricReport& report, const nlohmann::json& fingerprint);

}  // namespace veto
