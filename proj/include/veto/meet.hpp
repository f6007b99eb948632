#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "veto/autograd.hpp"
#include "veto/encoder.hpp"
#include "veto/parameters.hpp"
#include "veto/rng.hpp"

#include "json.hpp"

namespace veto {

// Sampling clamp: max(min(centre/freq, 1.0), 0.01). freq 0 counts as "rarer
// than anything", so the ratio saturates at 1.
double sampling_clamp(double centre, double freq);

// One expert's slice of the frequency-sorted predicate list. local labels are
// indices into `members` (descending-frequency order) and the OOD pseudo-label
// is members.size(), the 0-based last slot of a (|group|+1)-way classifier.
struct ExpertGroup {
  std::vector<int> members;               // global predicate ids, P_sort order
  std::int64_t centre_frequency = 0;      // Freq of the central member
  std::vector<double> sampling_weights;   // by global id; in [0.01, 1.0]
  std::vector<int> local_labels;          // by global id; OOD for non-members

  int ood_label() const { return static_cast<int>(members.size()); }
  int logit_count() const { return static_cast<int>(members.size()) + 1; }
  bool contains(int predicate) const;
};

struct PredicateGroups {
  std::vector<std::int64_t> frequency;  // by global id, training-split counts
  std::vector<int> sorted_predicates;   // descending frequency, ties by id
  std::vector<int> boundaries;          // G+1 cumulative split points
  std::vector<ExpertGroup> groups;

  int num_predicates() const { return static_cast<int>(sorted_predicates.size()); }
  int num_groups() const { return static_cast<int>(groups.size()); }
  int group_of(int predicate) const;
  // Global id for a group's local (non-OOD) label: looks up P_sort at the
  // group's cumulative offset.
  int global_id(int group, int local_label) const;

  nlohmann::json to_json() const;
  static PredicateGroups from_json(const nlohmann::json& j);
};

// Splits predicates into `num_groups` contiguous near-equal groups of the
// descending-frequency order (sizes differ by at most 1, larger groups
// first), centred at index floor(|group|/2), with clamp-derived sampling
// weights for in-group and out-of-group predicates.
PredicateGroups build_groups(const std::vector<std::int64_t>& frequency, int num_groups);

// Same, with explicit cumulative boundaries (0 = first, M = last).
PredicateGroups build_groups(const std::vector<std::int64_t>& frequency,
                             const std::vector<int>& boundaries);

// One training sample routed to an expert.
struct ExpertSample {
  int sample_index = 0;  // position in the incoming batch
  int label = 0;         // local label (possibly OOD)
};

// Independent Bernoulli inclusion per (sample, expert) at the group's
// sampling weight for the sample's global predicate. Each expert consumes
// its own stream, so subsets are order-independent across experts.
std::vector<std::vector<ExpertSample>> sample_expert_batches(
    const std::vector<int>& global_labels, const PredicateGroups& groups,
    std::vector<RngStream>& expert_streams);

// Sum over experts of the mean cross-entropy over that expert's subset;
// empty subsets contribute nothing. `sample_weights[g][i]` optionally scales
// the i-th term of expert g (per-class reweighting hooks in here).
Var multi_expert_loss(Tape& tape, const std::vector<std::vector<Var>>& expert_logits,
                      const std::vector<std::vector<int>>& expert_labels,
                      const std::vector<std::vector<double>>& sample_weights = {});

// Per entity-pair, the confidence-ranked merged prediction. Never contains
// an OOD pseudo-label.
struct RankedPrediction {
  std::vector<std::pair<int, double>> ranked;  // (global predicate id, confidence)
};

// Evaluation-stage merging: per expert, softmax over all logits (the OOD
// belief depresses in-group confidences), drop the OOD entry, surface the
// in-group argmax as the expert's candidate. The G candidates rank first by
// confidence; remaining in-group classes follow, ranked by retained
// probability. Ties break by global id ascending.
RankedPrediction merge_expert_predictions(const std::vector<std::vector<double>>& expert_logits,
                                          const PredicateGroups& groups);

// Single-head ranking for the non-MEET variants: softmax over all predicates.
RankedPrediction rank_single_head(const std::vector<double>& logits);

// One (|group|+1)-way linear classifier per expert over the shared relation
// feature; no parameter sharing between experts.
class ExpertHeads {
 public:
  ExpertHeads(int embed_dim, const PredicateGroups& groups, ParameterStore& store,
              RngStream& init_rng, const std::string& prefix = "head");

  std::vector<Var> logits(Tape& tape, const Var& y) const;  // one Var per expert
  Var logits_for(Tape& tape, const Var& y, int expert) const;

 private:
  std::vector<ClassifierHead> heads_;
};

}  // namespace veto
