#include "veto/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include "veto/errors.hpp"

namespace veto {

namespace {

constexpr const char* kCheckpointFormat = "veto-checkpoint-v1";

nlohmann::json parse_json_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ValidationError(std::string("cannot open ") + what + " " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string(what) + " parse error in " + path.string() + ": " +
                          e.what());
  }
}

}  // namespace

Trainer::Trainer(const RunConfig& cfg, const Dataset& dataset)
    : cfg_(cfg),
      data_(dataset),
      groups_(cfg.meet_boundaries.empty()
                  ? build_groups(dataset.manifest.predicate_freq, cfg.meet_groups)
                  : build_groups(dataset.manifest.predicate_freq, cfg.meet_boundaries)),
      adam_(cfg.train.adam),
      schedule_(cfg.train.schedule),
      data_rng_(cfg.seed, "data"),
      dropout_rng_(cfg.seed, "dropout") {
  cfg_.validate();
  if (cfg_.model.num_predicates != dataset.manifest.num_predicates()) {
    throw ValidationError("trainer: config expects " + std::to_string(cfg_.model.num_predicates) +
                          " predicates, dataset has " +
                          std::to_string(dataset.manifest.num_predicates()));
  }
  const std::string& mode = cfg_.train.mode;
  if (mode == "meet") {
    veto_.emplace(cfg_.model, cfg_.seed, &groups_);
  } else if (mode == "single" || mode == "rwt") {
    veto_.emplace(cfg_.model, cfg_.seed, nullptr);
  } else {
    baseline_.emplace(cfg_.model, cfg_.seed);
  }
  for (int g = 0; g < groups_.num_groups(); ++g) {
    expert_rngs_.emplace_back(cfg_.seed, "meet.expert" + std::to_string(g));
  }

  for (std::size_t si = 0; si < data_.train.size(); ++si) {
    for (const Triplet& t : data_.train[si].gt_triplets) {
      pool_.push_back(TrainSample{static_cast<int>(si), t.subject, t.object, t.predicate});
    }
  }
  if (pool_.empty()) throw ValidationError("trainer: training split has no annotated pairs");

  // Inverse-frequency importance weights for the reweighting variant.
  std::int64_t total = 0;
  for (std::int64_t f : data_.manifest.predicate_freq) total += f;
  const double mean_freq =
      static_cast<double>(total) / static_cast<double>(cfg_.model.num_predicates);
  for (std::int64_t f : data_.manifest.predicate_freq) {
    class_weights_.push_back(mean_freq / static_cast<double>(std::max<std::int64_t>(f, 1)));
  }

  if (!cfg_.train.resume_from.empty()) {
    load_checkpoint(cfg_.train.resume_from);
    resumed_ = true;
  }
}

ParameterStore& Trainer::param_store() {
  return veto_ ? veto_->store() : baseline_->store();
}

double Trainer::batch_loss(Tape& tape, const std::vector<TrainSample>& batch) {
  const std::string& mode = cfg_.train.mode;
  RngStream* drop = cfg_.model.encoder.attention_dropout > 0.0 ? &dropout_rng_ : nullptr;
  Var loss;
  if (mode == "baseline") {
    std::vector<Var> rows;
    std::vector<int> labels;
    for (const TrainSample& s : batch) {
      const SceneInstance& scene = data_.train[static_cast<std::size_t>(s.scene)];
      const Tensor canvas = whole_image_canvas(scene, cfg_.model.baseline.canvas_resolution);
      rows.push_back(baseline_->logits(tape, scene, canvas, s.subject, s.object));
      labels.push_back(s.predicate);
    }
    loss = cross_entropy(tape, stack_rows(tape, rows), labels);
  } else if (mode == "meet") {
    std::vector<int> labels;
    labels.reserve(batch.size());
    for (const TrainSample& s : batch) labels.push_back(s.predicate);
    const auto subsets = sample_expert_batches(labels, groups_, expert_rngs_);

    // The trunk runs only for samples some expert actually drew.
    std::set<int> needed;
    for (const auto& subset : subsets) {
      for (const ExpertSample& es : subset) needed.insert(es.sample_index);
    }
    std::map<int, Var> features;
    for (int idx : needed) {
      const TrainSample& s = batch[static_cast<std::size_t>(idx)];
      const SceneInstance& scene = data_.train[static_cast<std::size_t>(s.scene)];
      features[idx] = veto_->relation_feature(tape, scene, s.subject, s.object, drop);
    }
    std::vector<std::vector<Var>> expert_logits(subsets.size());
    std::vector<std::vector<int>> expert_labels(subsets.size());
    for (std::size_t g = 0; g < subsets.size(); ++g) {
      for (const ExpertSample& es : subsets[g]) {
        expert_logits[g].push_back(
            veto_->expert_logits(tape, features.at(es.sample_index), static_cast<int>(g)));
        expert_labels[g].push_back(es.label);
      }
    }
    loss = multi_expert_loss(tape, expert_logits, expert_labels);
  } else {  // single | rwt
    std::vector<Var> rows;
    std::vector<int> labels;
    std::vector<double> weights;
    for (const TrainSample& s : batch) {
      const SceneInstance& scene = data_.train[static_cast<std::size_t>(s.scene)];
      Var y = veto_->relation_feature(tape, scene, s.subject, s.object, drop);
      rows.push_back(veto_->single_logits(tape, y));
      labels.push_back(s.predicate);
      if (mode == "rwt") {
        weights.push_back(class_weights_[static_cast<std::size_t>(s.predicate)]);
      }
    }
    loss = cross_entropy(tape, stack_rows(tape, rows), labels, weights);
  }
  const double value = loss.value().item();
  if (!std::isfinite(value)) {
    throw NumericError("non-finite loss at step " + std::to_string(step_));
  }
  tape.backward(loss);
  return value;
}

double Trainer::train_step() {
  std::vector<TrainSample> batch;
  batch.reserve(static_cast<std::size_t>(cfg_.train.batch_size));
  for (int i = 0; i < cfg_.train.batch_size; ++i) {
    batch.push_back(pool_[static_cast<std::size_t>(
        data_rng_.uniform_int(static_cast<std::int64_t>(pool_.size())))]);
  }
  param_store().zero_grad();
  Tape tape;
  const double loss = batch_loss(tape, batch);
  adam_.step(param_store(), schedule_.factor(step_));
  ++step_;
  return loss;
}

void Trainer::run() {
  std::filesystem::create_directories(cfg_.out_dir);
  const std::filesystem::path log_path = std::filesystem::path(cfg_.out_dir) / "train_log.jsonl";
  std::ofstream log(log_path, resumed_ ? std::ios::app : std::ios::trunc);
  if (!log) throw ValidationError("cannot open log " + log_path.string());
  if (!resumed_) {
    log << nlohmann::json({{"config", cfg_.to_json()}}).dump() << "\n";
  }

  const std::filesystem::path ckpt_path = std::filesystem::path(cfg_.out_dir) / "checkpoint.json";
  while (step_ < cfg_.train.steps) {
    const double lr_factor = schedule_.factor(step_);
    const double loss = train_step();
    log << nlohmann::json({{"step", step_ - 1},
                           {"lr", cfg_.train.adam.learning_rate * lr_factor},
                           {"loss", loss}})
               .dump()
        << "\n";
    if (step_ % cfg_.train.eval_every == 0 && step_ < cfg_.train.steps) {
      const MetricReport report = evaluate("val", {cfg_.train.eval_k});
      schedule_.observe(report.mean_recall[0]);
      log << nlohmann::json({{"step", step_},
                             {"split", "val"},
                             {"k", cfg_.train.eval_k},
                             {"recall", report.recall[0]},
                             {"mean_recall", report.mean_recall[0]},
                             {"average", report.average[0]},
                             {"decays", schedule_.decays()}})
                 .dump()
          << "\n";
    }
    if (step_ % cfg_.train.checkpoint_every == 0) {
      save_checkpoint(ckpt_path);
    }
  }
  save_checkpoint(ckpt_path);
}

MetricReport Trainer::evaluate(const std::string& split, const std::vector<int>& ks) const {
  EvalOptions options;
  options.graph_constrained = cfg_.graph_constrained;
  return evaluate_scenes(predictor(), data_.split(split), cfg_.model.num_predicates, ks,
                         data_.manifest.predicate_freq, options);
}

PairPredictor Trainer::predictor() const {
  if (veto_) {
    const VetoModel* model = &*veto_;
    return [model](const SceneInstance& scene, int s, int o) {
      return model->predict_pair(scene, s, o);
    };
  }
  const BaselineModel* model = &*baseline_;
  return [model](const SceneInstance& scene, int s, int o) {
    return model->predict_pair(scene, s, o);
  };
}

nlohmann::json Trainer::build_checkpoint() const {
  nlohmann::json rng = {{"data", data_rng_.state()}, {"dropout", dropout_rng_.state()}};
  nlohmann::json experts = nlohmann::json::array();
  for (const RngStream& s : expert_rngs_) experts.push_back(s.state());
  rng["experts"] = experts;
  return {{"format", kCheckpointFormat},
          {"config", cfg_.to_json()},
          {"step", step_},
          {"groups", groups_.to_json()},
          {"parameters", veto_ ? veto_->store().state_dict() : baseline_->store().state_dict()},
          {"optimizer", adam_.state()},
          {"schedule", schedule_.state()},
          {"rng", rng}};
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  write_json_atomic(build_checkpoint(), path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  nlohmann::json j = parse_json_file(path, "checkpoint");
  if (j.value("format", "") != kCheckpointFormat) {
    throw ValidationError("unrecognized checkpoint format in " + path.string());
  }
  const RunConfig saved = RunConfig::from_json(j.at("config"));
  if (saved.model.to_json() != cfg_.model.to_json()) {
    throw ValidationError("checkpoint model config does not match the current config");
  }
  if (saved.train.mode != cfg_.train.mode) {
    throw ValidationError("checkpoint was trained in mode '" + saved.train.mode +
                          "', current mode is '" + cfg_.train.mode + "'");
  }
  if (saved.seed != cfg_.seed) {
    throw ValidationError("checkpoint seed does not match the current config");
  }
  if (j.at("groups") != groups_.to_json()) {
    throw ValidationError("checkpoint expert groups do not match the dataset");
  }
  param_store().load_state_dict(j.at("parameters"));
  adam_.load_state(j.at("optimizer"));
  schedule_.load_state(j.at("schedule"));
  data_rng_.set_state(j.at("rng").at("data").get<std::string>());
  dropout_rng_.set_state(j.at("rng").at("dropout").get<std::string>());
  const auto expert_states = j.at("rng").at("experts").get<std::vector<std::string>>();
  if (expert_states.size() != expert_rngs_.size()) {
    throw ValidationError("checkpoint expert stream count mismatch");
  }
  for (std::size_t g = 0; g < expert_rngs_.size(); ++g) {
    expert_rngs_[g].set_state(expert_states[g]);
  }
  step_ = j.at("step").get<std::int64_t>();
}

std::unique_ptr<Trainer> trainer_from_checkpoint(const std::filesystem::path& checkpoint,
                                                 const Dataset& dataset) {
  RunConfig cfg = checkpoint_config(checkpoint);
  cfg.train.resume_from = checkpoint.string();
  return std::make_unique<Trainer>(cfg, dataset);
}

RunConfig checkpoint_config(const std::filesystem::path& checkpoint) {
  const nlohmann::json j = parse_json_file(checkpoint, "checkpoint");
  if (j.value("format", "") != kCheckpointFormat) {
    throw ValidationError("unrecognized checkpoint format in " + checkpoint.string());
  }
  return RunConfig::from_json(j.at("config"));
}

}  // namespace veto
