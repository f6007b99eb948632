#pragma once

#include <functional>
#include <string>

#include "veto/autograd.hpp"
#include "veto/parameters.hpp"

namespace veto {

struct GradCheckEntry {
  std::string parameter;
  std::int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  std::int64_t entries_checked = 0;
  GradCheckEntry worst;  // largest rel_err seen
  std::vector<GradCheckEntry> failures;
  std::string summary() const;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  // When a parameter has more entries than this, only `subsample` randomly
  // chosen entries are probed (0 disables subsampling).
  std::int64_t subsample_threshold = 0;
  std::int64_t subsample = 64;
  RngStream* subsample_rng = nullptr;
};

// Central finite differences against the tape's analytic gradients for every
// trainable parameter entry of `store`. `loss_fn` must rebuild the forward
// pass from the store's current parameter values on each call. The relative
// error uses a unit floor: |a - n| / max(1, |a|, |n|).
GradCheckReport check_gradients(ParameterStore& store,
                                const std::function<Var(Tape&)>& loss_fn,
                                const GradCheckOptions& options = {});

}  // namespace veto
