#include "veto/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "veto/errors.hpp"

namespace veto {

namespace {

struct RankEntry {
  double confidence;
  int pair_index;
  int predicate;
};

bool rank_before(const RankEntry& a, const RankEntry& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.pair_index != b.pair_index) return a.pair_index < b.pair_index;
  return a.predicate < b.predicate;
}

void check_options(const EvalOptions& options) {
  if (!options.graph_constrained) {
    throw ValidationError("unconstrained ranking is a config stub and not implemented");
  }
}

// Validates the PredictedGraph invariants and maps ordered pairs to indices.
std::map<std::pair<int, int>, int> index_pairs(const PredictedGraph& pred, int num_predicates) {
  std::map<std::pair<int, int>, int> index;
  for (std::size_t i = 0; i < pred.pairs.size(); ++i) {
    const PairPrediction& pp = pred.pairs[i];
    if (!index.emplace(std::make_pair(pp.subject, pp.object), static_cast<int>(i)).second) {
      throw ValidationError("duplicate prediction for pair (" + std::to_string(pp.subject) +
                            ", " + std::to_string(pp.object) + ")");
    }
    if (pp.prediction.ranked.empty()) {
      throw ValidationError("empty ranked list for pair (" + std::to_string(pp.subject) + ", " +
                            std::to_string(pp.object) + ")");
    }
    std::vector<bool> seen(static_cast<std::size_t>(num_predicates), false);
    for (std::size_t r = 0; r < pp.prediction.ranked.size(); ++r) {
      const auto& [pred_id, conf] = pp.prediction.ranked[r];
      if (pred_id < 0 || pred_id >= num_predicates) {
        throw ValidationError("prediction names predicate " + std::to_string(pred_id) +
                              " outside [0, " + std::to_string(num_predicates) + ")");
      }
      if (seen[static_cast<std::size_t>(pred_id)]) {
        throw ValidationError("pair ranking repeats predicate " + std::to_string(pred_id));
      }
      seen[static_cast<std::size_t>(pred_id)] = true;
      if (r > 0) {
        const auto& [prev_id, prev_conf] = pp.prediction.ranked[r - 1];
        if (prev_conf < conf || (prev_conf == conf && prev_id > pred_id)) {
          throw ValidationError("pair ranking is not sorted by (confidence desc, id asc)");
        }
      }
    }
  }
  return index;
}

SceneRecallStats count_hits(const std::vector<RankEntry>& topk, const SceneInstance& gt,
                            const std::map<std::pair<int, int>, int>& pair_index,
                            int num_predicates) {
  SceneRecallStats stats;
  stats.gt_per_class.assign(static_cast<std::size_t>(num_predicates), 0);
  stats.hits_per_class.assign(static_cast<std::size_t>(num_predicates), 0);
  std::map<std::pair<int, int>, bool> in_topk;
  for (const RankEntry& e : topk) in_topk[{e.pair_index, e.predicate}] = true;
  for (const Triplet& t : gt.gt_triplets) {
    const auto it = pair_index.find({t.subject, t.object});
    if (it == pair_index.end()) {
      throw ValidationError("ground-truth pair (" + std::to_string(t.subject) + ", " +
                            std::to_string(t.object) + ") has no prediction");
    }
    ++stats.gt_total;
    ++stats.gt_per_class[static_cast<std::size_t>(t.predicate)];
    if (in_topk.count({it->second, t.predicate})) {
      ++stats.hits_total;
      ++stats.hits_per_class[static_cast<std::size_t>(t.predicate)];
    }
  }
  return stats;
}

}  // namespace

SceneRecallStats recall_at_k(const PredictedGraph& pred, const SceneInstance& gt,
                             int num_predicates, int k, const EvalOptions& options) {
  check_options(options);
  if (k < 1) throw ValidationError("recall: k must be at least 1");
  const auto pair_index = index_pairs(pred, num_predicates);

  // Graph constraint: each pair contributes its top candidate only.
  std::vector<RankEntry> entries;
  entries.reserve(pred.pairs.size());
  for (std::size_t i = 0; i < pred.pairs.size(); ++i) {
    const auto& [pred_id, conf] = pred.pairs[i].prediction.ranked.front();
    entries.push_back(RankEntry{conf, static_cast<int>(i), pred_id});
  }
  std::sort(entries.begin(), entries.end(), rank_before);
  if (static_cast<int>(entries.size()) > k) entries.resize(static_cast<std::size_t>(k));
  return count_hits(entries, gt, pair_index, num_predicates);
}

SceneRecallStats oracle_recall_at_k(const PredictedGraph& pred, const SceneInstance& gt,
                                    int num_predicates, int k, const EvalOptions& options) {
  check_options(options);
  if (k < 1) throw ValidationError("recall: k must be at least 1");
  const auto pair_index = index_pairs(pred, num_predicates);

  // Exhaustive route: flatten every candidate of every pair, sort globally,
  // then walk down keeping the first candidate seen per pair.
  std::vector<RankEntry> flat;
  for (std::size_t i = 0; i < pred.pairs.size(); ++i) {
    for (const auto& [pred_id, conf] : pred.pairs[i].prediction.ranked) {
      flat.push_back(RankEntry{conf, static_cast<int>(i), pred_id});
    }
  }
  std::sort(flat.begin(), flat.end(), rank_before);

  std::vector<RankEntry> topk;
  std::vector<bool> taken(pred.pairs.size(), false);
  for (const RankEntry& e : flat) {
    if (static_cast<int>(topk.size()) >= k) break;
    if (taken[static_cast<std::size_t>(e.pair_index)]) continue;
    taken[static_cast<std::size_t>(e.pair_index)] = true;
    topk.push_back(e);
  }
  return count_hits(topk, gt, pair_index, num_predicates);
}

MetricReport aggregate_report(const std::vector<std::vector<SceneRecallStats>>& per_scene,
                              const std::vector<int>& ks,
                              const std::vector<std::int64_t>& train_frequency) {
  if (per_scene.empty()) throw ValidationError("report: no scenes evaluated");
  const int num_predicates = static_cast<int>(train_frequency.size());

  MetricReport report;
  report.ks = ks;
  report.scenes = static_cast<std::int64_t>(per_scene.size());

  report.predicates_by_frequency.resize(static_cast<std::size_t>(num_predicates));
  std::iota(report.predicates_by_frequency.begin(), report.predicates_by_frequency.end(), 0);
  std::sort(report.predicates_by_frequency.begin(), report.predicates_by_frequency.end(),
            [&](int a, int b) {
              if (train_frequency[static_cast<std::size_t>(a)] !=
                  train_frequency[static_cast<std::size_t>(b)]) {
                return train_frequency[static_cast<std::size_t>(a)] >
                       train_frequency[static_cast<std::size_t>(b)];
              }
              return a < b;
            });

  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    double recall_sum = 0.0;
    std::int64_t scenes_with_gt = 0;
    std::vector<std::int64_t> class_gt(static_cast<std::size_t>(num_predicates), 0);
    std::vector<std::int64_t> class_hits(static_cast<std::size_t>(num_predicates), 0);
    std::int64_t gt_total = 0;
    for (const auto& scene_stats : per_scene) {
      if (scene_stats.size() != ks.size()) {
        throw ValidationError("report: per-scene stats do not align with the k list");
      }
      const SceneRecallStats& s = scene_stats[ki];
      gt_total += s.gt_total;
      if (s.gt_total > 0) {
        recall_sum += static_cast<double>(s.hits_total) / static_cast<double>(s.gt_total);
        ++scenes_with_gt;
      }
      for (int p = 0; p < num_predicates; ++p) {
        class_gt[static_cast<std::size_t>(p)] += s.gt_per_class[static_cast<std::size_t>(p)];
        class_hits[static_cast<std::size_t>(p)] += s.hits_per_class[static_cast<std::size_t>(p)];
      }
    }
    if (scenes_with_gt == 0) throw ValidationError("report: no ground-truth triplets in split");
    report.gt_triplets = gt_total;
    const double r = recall_sum / static_cast<double>(scenes_with_gt);

    double mr_sum = 0.0;
    int mr_classes = 0;
    std::vector<double> per_class(static_cast<std::size_t>(num_predicates), -1.0);
    for (int p = 0; p < num_predicates; ++p) {
      if (class_gt[static_cast<std::size_t>(p)] > 0) {
        const double cr = static_cast<double>(class_hits[static_cast<std::size_t>(p)]) /
                          static_cast<double>(class_gt[static_cast<std::size_t>(p)]);
        per_class[static_cast<std::size_t>(p)] = cr;
        mr_sum += cr;
        ++mr_classes;
      }
    }
    const double mr = mr_sum / static_cast<double>(mr_classes);

    report.recall.push_back(r);
    report.mean_recall.push_back(mr);
    report.average.push_back((r + mr) / 2.0);

    std::vector<double> ordered;
    ordered.reserve(static_cast<std::size_t>(num_predicates));
    for (int p : report.predicates_by_frequency) {
      ordered.push_back(per_class[static_cast<std::size_t>(p)]);
    }
    report.per_predicate_recall.push_back(std::move(ordered));
  }
  return report;
}

std::string render_report_table(const MetricReport& report) {
  std::string out = "    k      R@k     mR@k      A@k\n";
  char line[128];
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    std::snprintf(line, sizeof(line), "%5d %8.1f %8.1f %8.1f\n", report.ks[i],
                  100.0 * report.recall[i], 100.0 * report.mean_recall[i],
                  100.0 * report.average[i]);
    out += line;
  }
  return out;
}

nlohmann::json report_to_json(const MetricReport& report, const nlohmann::json& fingerprint) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& row : report.per_predicate_recall) {
    nlohmann::json jrow = nlohmann::json::array();
    for (double v : row) {
      if (v < 0.0) {
        jrow.push_back(nullptr);
      } else {
        jrow.push_back(v);
      }
    }
    per_class.push_back(std::move(jrow));
  }
  return {{"fingerprint", fingerprint},
          {"ks", report.ks},
          {"recall", report.recall},
          {"mean_recall", report.mean_recall},
          {"average", report.average},
          {"predicates_by_frequency", report.predicates_by_frequency},
          {"per_predicate_recall", per_class},
          {"scenes", report.scenes},
          {"gt_triplets", report.gt_triplets}};
}

}  // namespace veto
