#include "veto/parameters.hpp"

#include <cmath>

#include "veto/errors.hpp"

namespace veto {

Var ParameterStore::add(const std::string& name, Tensor init, bool trainable) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
  Var v(std::move(init), trainable);
  index_[name] = params_.size();
  params_.push_back(Parameter{name, v, trainable});
  return v;
}

Var ParameterStore::add_xavier(const std::string& name, Shape shape, std::int64_t fan_in,
                               std::int64_t fan_out, RngStream& init_rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = init_rng.normal(0.0, stddev);
  return add(name, std::move(t));
}

Var ParameterStore::add_normal(const std::string& name, Shape shape, double stddev,
                               RngStream& init_rng) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = init_rng.normal(0.0, stddev);
  return add(name, std::move(t));
}

Var ParameterStore::add_zeros(const std::string& name, Shape shape) {
  return add(name, Tensor(std::move(shape)));
}

Var ParameterStore::add_ones(const std::string& name, Shape shape) {
  return add(name, Tensor::full(std::move(shape), 1.0));
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return params_[it->second];
}

std::int64_t ParameterStore::trainable_count() const { return trainable_count(""); }

std::int64_t ParameterStore::trainable_count(const std::string& prefix) const {
  std::int64_t n = 0;
  for (const Parameter& p : params_) {
    if (p.trainable && p.name.rfind(prefix, 0) == 0) n += p.var.value().numel();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (Parameter& p : params_) p.var.zero_grad();
}

nlohmann::json ParameterStore::state_dict() const {
  nlohmann::json out = nlohmann::json::object();
  for (const Parameter& p : params_) {
    out[p.name] = {{"shape", p.var.value().shape()}, {"data", p.var.value().vec()}};
  }
  return out;
}

void ParameterStore::load_state_dict(const nlohmann::json& state) {
  if (!state.is_object()) throw ValidationError("parameter state must be a JSON object");
  for (const Parameter& p : params_) {
    if (!state.contains(p.name)) {
      throw ValidationError("checkpoint is missing parameter " + p.name);
    }
  }
  for (auto it = state.begin(); it != state.end(); ++it) {
    if (!index_.count(it.key())) {
      throw ValidationError("checkpoint has unknown parameter " + it.key());
    }
    Parameter& p = params_[index_[it.key()]];
    const Shape shape = it.value().at("shape").get<Shape>();
    if (shape != p.var.value().shape()) {
      throw ValidationError("checkpoint shape " + shape_str(shape) + " for " + it.key() +
                            " does not match model shape " + shape_str(p.var.value().shape()));
    }
    std::vector<double> data = it.value().at("data").get<std::vector<double>>();
    if (static_cast<std::int64_t>(data.size()) != p.var.value().numel()) {
      throw ValidationError("checkpoint data length mismatch for " + it.key());
    }
    p.var.mutable_value() = Tensor(shape, std::move(data));
  }
}

}  // namespace veto
