#pragma once

#include <filesystem>
#include <string>

#include "veto/autograd.hpp"
#include "veto/gradcheck.hpp"
#include "veto/parameters.hpp"
#include "veto/rng.hpp"

namespace veto::testing {

inline Tensor random_tensor(Shape shape, RngStream& rng, double stddev = 1.0) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

// Scalar loss that is sensitive to every output entry: sum(out * fixed noise).
inline Var weighted_sum(Tape& tape, const Var& out, RngStream& rng) {
  Tensor w(out.shape());
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, 1.0);
  return sum(tape, mul(tape, out, Var(std::move(w))));
}

// Finite-difference check of a single op: inputs become store parameters,
// the probe loss is a fixed random weighting of the op output.
template <typename BuildOp>
GradCheckReport fd_check_op(std::vector<Tensor> inputs, BuildOp op, double tolerance,
                            std::uint64_t seed = 11) {
  ParameterStore store;
  std::vector<Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    vars.push_back(store.add("input" + std::to_string(i), std::move(inputs[i])));
  }
  RngStream probe(seed, "fd-probe");
  Tensor weights;  // fixed across loss evaluations
  bool first = true;
  auto loss_fn = [&](Tape& tape) -> Var {
    Var out = op(tape, vars);
    if (first) {
      weights = Tensor(out.shape());
      for (std::int64_t i = 0; i < weights.numel(); ++i) weights[i] = probe.normal();
      first = false;
    }
    return sum(tape, mul(tape, out, Var(weights)));
  };
  GradCheckOptions opt;
  opt.tolerance = tolerance;
  return check_gradients(store, loss_fn, opt);
}

inline std::filesystem::path fresh_temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("veto_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace veto::testing
