#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "veto/autograd.hpp"
#include "veto/rng.hpp"
#include "veto/tensor.hpp"

#include "json.hpp"

namespace veto {

struct Parameter {
  std::string name;
  Var var;
  bool trainable = true;
};

// Named parameter registry. Registration order is the deterministic order
// used for initialization draws and optimizer state, and names are unique.
class ParameterStore {
 public:
  Var add(const std::string& name, Tensor init, bool trainable = true);

  // Convenience initializers; all draws come from `init_rng` in call order.
  Var add_xavier(const std::string& name, Shape shape, std::int64_t fan_in,
                 std::int64_t fan_out, RngStream& init_rng);
  Var add_normal(const std::string& name, Shape shape, double stddev, RngStream& init_rng);
  Var add_zeros(const std::string& name, Shape shape);
  Var add_ones(const std::string& name, Shape shape);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  // Sum of product(shape) over trainable parameters.
  std::int64_t trainable_count() const;
  // Same, restricted to names starting with `prefix`.
  std::int64_t trainable_count(const std::string& prefix) const;

  void zero_grad();

  // Checkpoint payload: parameter name -> {shape, data}.
  nlohmann::json state_dict() const;
  // Rejects unknown names, missing names and shape mismatches.
  void load_state_dict(const nlohmann::json& state);

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace veto
