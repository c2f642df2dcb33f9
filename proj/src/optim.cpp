#include "ddlab/optim.hpp"

#include <cmath>
#include <string>

#include "ddlab/errors.hpp"

namespace ddlab {

namespace {

void require_finite(const std::vector<double>& g, const char* who) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) {
      throw NumericalError(std::string(who) + ": non-finite gradient at coordinate " +
                           std::to_string(i));
    }
  }
}

}  // namespace

void adam_step(ParamStore& params, const AdamConfig& config, AdamState& state) {
  const auto& g = params.grads();
  require_finite(g, "adam_step");
  if (state.m.size() != g.size()) {
    state.m.assign(g.size(), 0.0);
    state.v.assign(g.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  auto& w = params.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g[i] * g[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    w[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

void sgd_step(ParamStore& params, double lr) {
  const auto& g = params.grads();
  require_finite(g, "sgd_step");
  auto& w = params.values();
  for (std::size_t i = 0; i < g.size(); ++i) w[i] -= lr * g[i];
}

}  // namespace ddlab
