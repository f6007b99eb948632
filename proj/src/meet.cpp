#include "veto/meet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "veto/errors.hpp"

namespace veto {

double sampling_clamp(double centre, double freq) {
  if (freq <= 0.0) return 1.0;
  return std::max(std::min(centre / freq, 1.0), 0.01);
}

bool ExpertGroup::contains(int predicate) const {
  return local_labels[static_cast<std::size_t>(predicate)] != ood_label();
}

int PredicateGroups::group_of(int predicate) const {
  for (int g = 0; g < num_groups(); ++g) {
    if (groups[static_cast<std::size_t>(g)].contains(predicate)) return g;
  }
  throw ValidationError("predicate " + std::to_string(predicate) + " belongs to no group");
}

int PredicateGroups::global_id(int group, int local_label) const {
  const int offset = boundaries[static_cast<std::size_t>(group)];
  return sorted_predicates[static_cast<std::size_t>(offset + local_label)];
}

nlohmann::json PredicateGroups::to_json() const {
  nlohmann::json jgroups = nlohmann::json::array();
  for (const ExpertGroup& g : groups) {
    jgroups.push_back({{"members", g.members},
                       {"centre_frequency", g.centre_frequency},
                       {"sampling_weights", g.sampling_weights},
                       {"local_labels", g.local_labels}});
  }
  return {{"frequency", frequency},
          {"sorted_predicates", sorted_predicates},
          {"boundaries", boundaries},
          {"groups", jgroups}};
}

PredicateGroups PredicateGroups::from_json(const nlohmann::json& j) {
  PredicateGroups out;
  try {
    out.frequency = j.at("frequency").get<std::vector<std::int64_t>>();
    out.sorted_predicates = j.at("sorted_predicates").get<std::vector<int>>();
    out.boundaries = j.at("boundaries").get<std::vector<int>>();
    for (const auto& jg : j.at("groups")) {
      ExpertGroup g;
      g.members = jg.at("members").get<std::vector<int>>();
      g.centre_frequency = jg.at("centre_frequency").get<std::int64_t>();
      g.sampling_weights = jg.at("sampling_weights").get<std::vector<double>>();
      g.local_labels = jg.at("local_labels").get<std::vector<int>>();
      out.groups.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed predicate-group spec: ") + e.what());
  }
  return out;
}

PredicateGroups build_groups(const std::vector<std::int64_t>& frequency, int num_groups) {
  const int m = static_cast<int>(frequency.size());
  if (num_groups < 1) throw ValidationError("expert groups: need at least one group");
  if (num_groups > m) {
    throw ValidationError("expert groups: " + std::to_string(num_groups) + " groups for " +
                          std::to_string(m) + " predicates");
  }
  // Near-equal contiguous sizes, larger groups first.
  std::vector<int> boundaries(static_cast<std::size_t>(num_groups) + 1, 0);
  const int base = m / num_groups, extra = m % num_groups;
  for (int g = 0; g < num_groups; ++g) {
    boundaries[static_cast<std::size_t>(g) + 1] =
        boundaries[static_cast<std::size_t>(g)] + base + (g < extra ? 1 : 0);
  }
  return build_groups(frequency, boundaries);
}

PredicateGroups build_groups(const std::vector<std::int64_t>& frequency,
                             const std::vector<int>& boundaries) {
  const int m = static_cast<int>(frequency.size());
  if (boundaries.size() < 2 || boundaries.front() != 0 || boundaries.back() != m) {
    throw ValidationError("expert groups: boundaries must run from 0 to the predicate count");
  }
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] <= boundaries[i - 1]) {
      throw ValidationError("expert groups: boundaries must be strictly increasing");
    }
  }
  for (std::int64_t f : frequency) {
    if (f < 0) throw ValidationError("expert groups: negative frequency");
  }

  PredicateGroups out;
  out.frequency = frequency;
  out.boundaries = boundaries;
  out.sorted_predicates.resize(static_cast<std::size_t>(m));
  std::iota(out.sorted_predicates.begin(), out.sorted_predicates.end(), 0);
  std::sort(out.sorted_predicates.begin(), out.sorted_predicates.end(), [&](int a, int b) {
    if (frequency[static_cast<std::size_t>(a)] != frequency[static_cast<std::size_t>(b)]) {
      return frequency[static_cast<std::size_t>(a)] > frequency[static_cast<std::size_t>(b)];
    }
    return a < b;
  });

  const int num_groups = static_cast<int>(boundaries.size()) - 1;
  for (int g = 0; g < num_groups; ++g) {
    ExpertGroup group;
    const int lo = boundaries[static_cast<std::size_t>(g)];
    const int hi = boundaries[static_cast<std::size_t>(g) + 1];
    group.members.assign(out.sorted_predicates.begin() + lo, out.sorted_predicates.begin() + hi);
    const int centre_index = static_cast<int>(group.members.size()) / 2;
    group.centre_frequency =
        frequency[static_cast<std::size_t>(group.members[static_cast<std::size_t>(centre_index)])];

    group.sampling_weights.resize(static_cast<std::size_t>(m));
    group.local_labels.assign(static_cast<std::size_t>(m), static_cast<int>(group.members.size()));
    for (int p = 0; p < m; ++p) {
      group.sampling_weights[static_cast<std::size_t>(p)] = sampling_clamp(
          static_cast<double>(group.centre_frequency),
          static_cast<double>(frequency[static_cast<std::size_t>(p)]));
    }
    for (std::size_t i = 0; i < group.members.size(); ++i) {
      group.local_labels[static_cast<std::size_t>(group.members[i])] = static_cast<int>(i);
    }
    out.groups.push_back(std::move(group));
  }
  return out;
}

std::vector<std::vector<ExpertSample>> sample_expert_batches(
    const std::vector<int>& global_labels, const PredicateGroups& groups,
    std::vector<RngStream>& expert_streams) {
  if (expert_streams.size() != groups.groups.size()) {
    throw ValidationError("expert sampling: need one stream per expert");
  }
  std::vector<std::vector<ExpertSample>> out(groups.groups.size());
  for (std::size_t g = 0; g < groups.groups.size(); ++g) {
    const ExpertGroup& group = groups.groups[g];
    for (std::size_t i = 0; i < global_labels.size(); ++i) {
      const int p = global_labels[i];
      if (p < 0 || p >= groups.num_predicates()) {
        throw ValidationError("expert sampling: predicate " + std::to_string(p) + " out of range");
      }
      const double w = group.sampling_weights[static_cast<std::size_t>(p)];
      if (expert_streams[g].uniform() < w) {
        out[g].push_back(ExpertSample{static_cast<int>(i),
                                      group.local_labels[static_cast<std::size_t>(p)]});
      }
    }
  }
  return out;
}

Var multi_expert_loss(Tape& tape, const std::vector<std::vector<Var>>& expert_logits,
                      const std::vector<std::vector<int>>& expert_labels,
                      const std::vector<std::vector<double>>& sample_weights) {
  if (expert_logits.size() != expert_labels.size()) {
    throw ValidationError("multi-expert loss: logits/labels expert counts disagree");
  }
  Var total(Tensor::scalar(0.0));
  for (std::size_t g = 0; g < expert_logits.size(); ++g) {
    if (expert_logits[g].empty()) continue;
    if (expert_logits[g].size() != expert_labels[g].size()) {
      throw ValidationError("multi-expert loss: expert " + std::to_string(g) +
                            " has mismatched logits and labels");
    }
    Var stacked = stack_rows(tape, expert_logits[g]);
    const std::vector<double> weights =
        sample_weights.empty() ? std::vector<double>{} : sample_weights[g];
    Var expert_ce = cross_entropy(tape, stacked, expert_labels[g], weights);
    total = add(tape, total, expert_ce);
  }
  return total;
}

namespace {

std::vector<double> softmax_probs(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> probs(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    z += probs[i];
  }
  for (double& p : probs) p /= z;
  return probs;
}

void sort_by_confidence(std::vector<std::pair<int, double>>& entries) {
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
}

}  // namespace

RankedPrediction merge_expert_predictions(const std::vector<std::vector<double>>& expert_logits,
                                          const PredicateGroups& groups) {
  if (static_cast<int>(expert_logits.size()) != groups.num_groups()) {
    throw ValidationError("merge: expected logits for every expert");
  }
  std::vector<std::pair<int, double>> candidates;
  std::vector<std::pair<int, double>> remainder;
  for (int g = 0; g < groups.num_groups(); ++g) {
    const ExpertGroup& group = groups.groups[static_cast<std::size_t>(g)];
    const std::vector<double>& logits = expert_logits[static_cast<std::size_t>(g)];
    if (static_cast<int>(logits.size()) != group.logit_count()) {
      throw ValidationError("merge: expert " + std::to_string(g) + " emitted " +
                            std::to_string(logits.size()) + " logits, expected " +
                            std::to_string(group.logit_count()));
    }
    for (double v : logits) {
      if (!std::isfinite(v)) throw NumericError("merge: non-finite expert logit");
    }
    // Probabilities are normalized over all slots including OOD, then the OOD
    // entry is discarded: an OOD-confident expert surfaces a weak candidate.
    const std::vector<double> probs = softmax_probs(logits);
    int best_local = 0;
    for (int i = 1; i < static_cast<int>(group.members.size()); ++i) {
      if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best_local)]) {
        best_local = i;
      }
    }
    for (int i = 0; i < static_cast<int>(group.members.size()); ++i) {
      const int global = groups.global_id(g, i);
      const double confidence = probs[static_cast<std::size_t>(i)];
      if (i == best_local) {
        candidates.emplace_back(global, confidence);
      } else {
        remainder.emplace_back(global, confidence);
      }
    }
  }
  sort_by_confidence(candidates);
  sort_by_confidence(remainder);

  RankedPrediction out;
  out.ranked = std::move(candidates);
  out.ranked.insert(out.ranked.end(), remainder.begin(), remainder.end());
  return out;
}

RankedPrediction rank_single_head(const std::vector<double>& logits) {
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("ranking: non-finite logit");
  }
  const std::vector<double> probs = softmax_probs(logits);
  RankedPrediction out;
  out.ranked.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out.ranked.emplace_back(static_cast<int>(i), probs[i]);
  }
  sort_by_confidence(out.ranked);
  return out;
}

ExpertHeads::ExpertHeads(int embed_dim, const PredicateGroups& groups, ParameterStore& store,
                         RngStream& init_rng, const std::string& prefix) {
  for (int g = 0; g < groups.num_groups(); ++g) {
    heads_.emplace_back(embed_dim, groups.groups[static_cast<std::size_t>(g)].logit_count(),
                        store, init_rng, prefix + ".expert" + std::to_string(g));
  }
}

std::vector<Var> ExpertHeads::logits(Tape& tape, const Var& y) const {
  std::vector<Var> out;
  out.reserve(heads_.size());
  for (const ClassifierHead& head : heads_) out.push_back(head.logits(tape, y));
  return out;
}

Var ExpertHeads::logits_for(Tape& tape, const Var& y, int expert) const {
  if (expert < 0 || expert >= static_cast<int>(heads_.size())) {
    throw ValidationError("expert index " + std::to_string(expert) + " out of range");
  }
  return heads_[static_cast<std::size_t>(expert)].logits(tape, y);
}

}  // namespace veto
