#include "veto/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "veto/errors.hpp"

namespace veto {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " (" << entries_checked << " entries";
  if (entries_checked > 0) {
    os << ", worst " << worst.parameter << "[" << worst.index << "] rel_err " << worst.rel_err;
  }
  os << ", " << failures.size() << " failures)";
  return os.str();
}

GradCheckReport check_gradients(ParameterStore& store,
                                const std::function<Var(Tape&)>& loss_fn,
                                const GradCheckOptions& options) {
  store.zero_grad();
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }
  // Snapshot analytic gradients before perturbing anything.
  std::map<std::string, std::vector<double>> analytic;
  for (const Parameter& p : store.all()) {
    if (p.trainable) analytic[p.name] = p.var.grad().vec();
  }

  auto eval_loss = [&]() {
    Tape tape;
    return loss_fn(tape).value().item();
  };

  GradCheckReport report;
  const double h = options.step;
  for (Parameter& p : store.all()) {
    auto it = analytic.find(p.name);
    if (it == analytic.end()) continue;  // frozen parameters are excluded

    std::vector<std::int64_t> indices;
    const std::int64_t n = p.var.value().numel();
    if (options.subsample_threshold > 0 && n > options.subsample_threshold &&
        options.subsample_rng != nullptr) {
      for (std::int64_t i = 0; i < options.subsample; ++i) {
        indices.push_back(options.subsample_rng->uniform_int(n));
      }
      std::sort(indices.begin(), indices.end());
      indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    } else {
      indices.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;
    }

    for (std::int64_t i : indices) {
      Tensor& value = const_cast<Parameter&>(p).var.mutable_value();
      const double saved = value[i];
      value[i] = saved + h;
      const double up = eval_loss();
      value[i] = saved - h;
      const double down = eval_loss();
      value[i] = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double a = it->second[static_cast<std::size_t>(i)];
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});

      ++report.entries_checked;
      if (rel > report.worst.rel_err) {
        report.worst = GradCheckEntry{p.name, i, a, numeric, rel};
      }
      if (rel > options.tolerance) {
        report.passed = false;
        report.failures.push_back(GradCheckEntry{p.name, i, a, numeric, rel});
      }
    }
  }
  return report;
}

}  // namespace veto
