#include "veto/optimizer.hpp"

#include <cmath>

#include "veto/errors.hpp"

namespace veto {

void Adam::step(ParameterStore& store, double lr_factor) {
  ++t_;
  const double correction1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double lr = cfg_.learning_rate * lr_factor;
  for (Parameter& p : store.all()) {
    if (!p.trainable) continue;
    auto& m = first_moment_[p.name];
    auto& v = second_moment_[p.name];
    const std::size_t n = static_cast<std::size_t>(p.var.value().numel());
    if (m.empty()) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
    Tensor& value = p.var.mutable_value();
    const Tensor& grad = p.var.grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad[static_cast<std::int64_t>(i)];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / correction1;
      const double vhat = v[i] / correction2;
      value[static_cast<std::int64_t>(i)] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

nlohmann::json Adam::state() const {
  return {{"t", t_}, {"m", first_moment_}, {"v", second_moment_}};
}

void Adam::load_state(const nlohmann::json& j) {
  try {
    t_ = j.at("t").get<std::int64_t>();
    first_moment_ = j.at("m").get<std::map<std::string, std::vector<double>>>();
    second_moment_ = j.at("v").get<std::map<std::string, std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed optimizer state: ") + e.what());
  }
}

double LrSchedule::factor(std::int64_t step) const {
  double f = 1.0;
  if (cfg_.warmup_steps > 0 && step < cfg_.warmup_steps) {
    f = static_cast<double>(step) / static_cast<double>(cfg_.warmup_steps);
  }
  for (int d = 0; d < decays_; ++d) f *= cfg_.decay_factor;
  return f;
}

void LrSchedule::observe(double metric) {
  if (metric > best_metric_) {
    best_metric_ = metric;
    evals_since_best_ = 0;
    return;
  }
  ++evals_since_best_;
  if (evals_since_best_ >= cfg_.patience && decays_ < cfg_.max_decays) {
    ++decays_;
    evals_since_best_ = 0;
  }
}

nlohmann::json LrSchedule::state() const {
  return {{"decays", decays_},
          {"evals_since_best", evals_since_best_},
          {"best_metric", best_metric_}};
}

void LrSchedule::load_state(const nlohmann::json& j) {
  try {
    decays_ = j.at("decays").get<int>();
    evals_since_best_ = j.at("evals_since_best").get<int>();
    best_metric_ = j.at("best_metric").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed schedule state: ") + e.what());
  }
}

}  // namespace veto
