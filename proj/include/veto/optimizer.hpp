#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "veto/parameters.hpp"

#include "json.hpp"

namespace veto {

struct AdamConfig {
  double learning_rate = 1.2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over a ParameterStore's trainable parameters.
// Moments are keyed by parameter name so state survives checkpoints.
class Adam {
 public:
  explicit Adam(const AdamConfig& cfg) : cfg_(cfg) {}

  // Applies one update using the parameters' accumulated gradients at
  // effective learning rate cfg.learning_rate * lr_factor.
  void step(ParameterStore& store, double lr_factor);

  std::int64_t steps_taken() const { return t_; }
  nlohmann::json state() const;
  void load_state(const nlohmann::json& j);

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, std::vector<double>> first_moment_;
  std::map<std::string, std::vector<double>> second_moment_;
};

struct ScheduleConfig {
  std::int64_t warmup_steps = 200;
  double decay_factor = 0.1;
  int max_decays = 3;
  int patience = 2;  // evaluations without improvement before a decay
};

// Linear warmup (factor 0 at step 0) combined with patience-based decay on a
// higher-is-better validation metric.
class LrSchedule {
 public:
  explicit LrSchedule(const ScheduleConfig& cfg) : cfg_(cfg) {}

  double factor(std::int64_t step) const;
  void observe(double metric);  // call after each validation evaluation
  int decays() const { return decays_; }

  nlohmann::json state() const;
  void load_state(const nlohmann::json& j);

 private:
  ScheduleConfig cfg_;
  int decays_ = 0;
  int evals_since_best_ = 0;
  double best_metric_ = -1.0;
};

}  // namespace veto
