#pragma once

#include <cstdint>
#include <vector>

#include "ddlab/autodiff.hpp"

namespace ddlab {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

// Bias-corrected Adam update of params.values from params.grads.
// Throws NumericalError if any gradient is non-finite; params are untouched then.
void adam_step(ParamStore& params, const AdamConfig& config, AdamState& state);

// Plain gradient descent, same non-finite check as adam_step.
void sgd_step(ParamStore& params, double lr);

}  // namespace ddlab
