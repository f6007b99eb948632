#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "veto/config.hpp"
#include "veto/model.hpp"
#include "veto/optimizer.hpp"

namespace veto {

struct TrainSample {
  int scene = 0;
  int subject = 0;
  int object = 0;
  int predicate = 0;
};

// Owns the model, optimizer, schedule and named RNG streams for one training
// run. Batches are drawn i.i.d. with replacement from the annotated-pair pool
// via the "data" stream; MEET experts consume one dedicated stream each, so
// resume only needs to restore stream states.
class Trainer {
 public:
  // `dataset` must outlive the trainer.
  Trainer(const RunConfig& cfg, const Dataset& dataset);

  // Trains to cfg.train.steps with JSONL logging under cfg.out_dir, periodic
  // validation + checkpointing, and a final checkpoint. A non-finite loss
  // aborts with NumericError before any checkpoint write.
  void run();

  double train_step();  // one optimization step; returns the batch loss
  std::int64_t step() const { return step_; }

  MetricReport evaluate(const std::string& split, const std::vector<int>& ks) const;
  PairPredictor predictor() const;

  const RunConfig& config() const { return cfg_; }
  const PredicateGroups& groups() const { return groups_; }
  ParameterStore& param_store();
  VetoModel* veto_model() { return veto_ ? &*veto_ : nullptr; }

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  nlohmann::json build_checkpoint() const;
  double batch_loss(Tape& tape, const std::vector<TrainSample>& batch);

  RunConfig cfg_;
  const Dataset& data_;
  PredicateGroups groups_;
  std::optional<VetoModel> veto_;
  std::optional<BaselineModel> baseline_;
  Adam adam_;
  LrSchedule schedule_;
  RngStream data_rng_;
  RngStream dropout_rng_;
  std::vector<RngStream> expert_rngs_;
  std::vector<TrainSample> pool_;
  std::vector<double> class_weights_;  // per-class loss weights for mode=rwt
  std::int64_t step_ = 0;
  bool resumed_ = false;
};

// Rebuilds a trainer (model, groups, optimizer, streams) from a checkpoint's
// embedded config; refuses config/shape mismatches.
std::unique_ptr<Trainer> trainer_from_checkpoint(const std::filesystem::path& checkpoint,
                                                 const Dataset& dataset);

// Reads just the embedded RunConfig of a checkpoint.
RunConfig checkpoint_config(const std::filesystem::path& checkpoint);

}  // namespace veto
