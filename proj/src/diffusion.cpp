#include "ddlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace ddlab {

double NoiseSchedule::alpha(double t) const {
  if (t <= 0.0) return 1.0;
  if (t >= 1.0) return 0.0;
  switch (kind_) {
    case ScheduleKind::linear:
      return 1.0 - t;
    case ScheduleKind::cosine:
      return std::cos(0.5 * std::numbers::pi * t);
  }
  return 1.0 - t;
}

double NoiseSchedule::alpha_derivative(double t) const {
  switch (kind_) {
    case ScheduleKind::linear:
      return -1.0;
    case ScheduleKind::cosine:
      return -0.5 * std::numbers::pi * std::sin(0.5 * std::numbers::pi * t);
  }
  return -1.0;
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? "linear" : "cosine";
}
std::string to_string(ProcessKind kind) {
  return kind == ProcessKind::masked ? "masked" : "uniform";
}
ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw std::invalid_argument("unknown schedule '" + s + "' (expected linear|cosine)");
}
ProcessKind parse_process_kind(const std::string& s) {
  if (s == "masked") return ProcessKind::masked;
  if (s == "uniform") return ProcessKind::uniform;
  throw std::invalid_argument("unknown process '" + s + "' (expected masked|uniform)");
}

std::string to_string(LossWeighting w) {
  return w == LossWeighting::constant ? "constant" : "mdlm";
}

LossWeighting parse_loss_weighting(const std::string& s) {
  if (s == "constant") return LossWeighting::constant;
  if (s == "mdlm") return LossWeighting::mdlm;
  throw std::invalid_argument("unknown weighting '" + s + "' (expected constant|mdlm)");
}

double loss_weight(LossWeighting w, const NoiseSchedule& schedule, double t) {
  if (w == LossWeighting::constant) return 1.0;
  const double one_minus = 1.0 - schedule.alpha(t);
  if (one_minus <= 0.0) return 1000.0;
  return std::min(1000.0, -schedule.alpha_derivative(t) / one_minus);
}

DiffusionProcess::DiffusionProcess(ProcessKind kind, int vocab, NoiseSchedule schedule)
    : kind_(kind), vocab_(vocab), schedule_(schedule) {
  if (vocab < 1) throw std::invalid_argument("DiffusionProcess: vocab must be >= 1");
}

double DiffusionProcess::stationary(int token) const {
  if (is_masked()) return token == mask_id() ? 1.0 : 0.0;
  return 1.0 / vocab_;
}

void DiffusionProcess::validate_tokens(const TokenBatch& tokens, bool allow_mask) const {
  const int limit = allow_mask ? state_vocab() : vocab_;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= limit) {
      throw std::invalid_argument("token id " + std::to_string(tokens[i]) +
                                  " invalid for this " + to_string(kind_) + " process");
    }
  }
}

namespace {

void check_time(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument(std::string(what) + ": time " + std::to_string(t) +
                                " outside [0, 1]");
  }
}

}  // namespace

TokenBatch diffuse(const TokenBatch& x, std::span<const double> t,
                   const DiffusionProcess& process, Rng& rng) {
  if (t.size() != x.batch()) throw std::invalid_argument("diffuse: one time per example");
  process.validate_tokens(x, false);
  TokenBatch z = x;
  for (std::size_t b = 0; b < x.batch(); ++b) {
    check_time(t[b], "diffuse");
    const double a = process.alpha(t[b]);
    for (std::size_t d = 0; d < x.positions(); ++d) {
      const double u = rng.uniform();
      const auto noise = static_cast<int>(rng.below(static_cast<std::uint64_t>(process.vocab())));
      if (u < a) continue;
      z.at(b, d) = process.is_masked() ? process.mask_id() : noise;
    }
  }
  return z;
}

TokenBatch diffuse(const TokenBatch& x, double t, const DiffusionProcess& process, Rng& rng) {
  std::vector<double> ts(x.batch(), t);
  return diffuse(x, ts, process, rng);
}

void posterior_row(std::span<const double> x, int z_t, double s, double t,
                   const DiffusionProcess& process, std::span<double> out) {
  const int v = process.state_vocab();
  const int k = process.vocab();
  if (!(0.0 <= s && s <= t && t <= 1.0)) {
    throw std::invalid_argument("posterior: need 0 <= s <= t <= 1, got s=" + std::to_string(s) +
                                " t=" + std::to_string(t));
  }
  if (static_cast<int>(x.size()) != k || static_cast<int>(out.size()) != v) {
    throw std::invalid_argument("posterior: row width mismatch");
  }
  if (z_t < 0 || z_t >= v) throw std::invalid_argument("posterior: invalid z_t token");
  std::fill(out.begin(), out.end(), 0.0);
  const double alpha_s = process.alpha(s);
  const double alpha_t = process.alpha(t);
  if (s == t || alpha_s == alpha_t) {
    out[static_cast<std::size_t>(z_t)] = 1.0;
    return;
  }
  const double x_z = z_t < k ? x[static_cast<std::size_t>(z_t)] : 0.0;
  const double pi_z = process.stationary(z_t);
  const double denom = alpha_t * x_z + (1.0 - alpha_t) * pi_z;
  if (!(denom >= 1e-30)) {
    throw std::invalid_argument("posterior: x and z_t are inconsistent (likelihood " +
                                std::to_string(denom) + ")");
  }
  const double a_ts = alpha_t / alpha_s;
  for (int j = 0; j < v; ++j) {
    const double first = a_ts * (j == z_t ? 1.0 : 0.0) + (1.0 - a_ts) * pi_z;
    if (first == 0.0) continue;
    const double xj = j < k ? x[static_cast<std::size_t>(j)] : 0.0;
    const double second = alpha_s * xj + (1.0 - alpha_s) * process.stationary(j);
    out[static_cast<std::size_t>(j)] = first * second / denom;
  }
}

Tensor posterior(const Tensor& x, const TokenBatch& z_t, std::span<const double> s,
                 std::span<const double> t, const DiffusionProcess& process) {
  const auto k = static_cast<std::size_t>(process.vocab());
  const auto v = static_cast<std::size_t>(process.state_vocab());
  if (x.rank() != 3 || x.dim(0) != z_t.batch() || x.dim(1) != z_t.positions() || x.dim(2) != k) {
    throw std::invalid_argument("posterior: x shape " + shape_str(x.shape()) +
                                " incompatible with z_t");
  }
  if (s.size() != z_t.batch() || t.size() != z_t.batch()) {
    throw std::invalid_argument("posterior: one (s, t) per example");
  }
  Tensor out({z_t.batch(), z_t.positions(), v});
  for (std::size_t b = 0; b < z_t.batch(); ++b) {
    for (std::size_t d = 0; d < z_t.positions(); ++d) {
      const std::size_t r = b * z_t.positions() + d;
      posterior_row(x.row(r), z_t[r], s[b], t[b], process, out.row(r));
    }
  }
  return out;
}

Tensor posterior(const Tensor& x, const TokenBatch& z_t, double s, double t,
                 const DiffusionProcess& process) {
  std::vector<double> ss(z_t.batch(), s), ts(z_t.batch(), t);
  return posterior(x, z_t, ss, ts, process);
}

Tensor posterior(const TokenBatch& x, const TokenBatch& z_t, double s, double t,
                 const DiffusionProcess& process) {
  process.validate_tokens(x, false);
  return posterior(one_hot(x, static_cast<std::size_t>(process.vocab())), z_t, s, t, process);
}

TokenBatch posterior_sample(const Tensor& x, const TokenBatch& z_t, std::span<const double> s,
                            std::span<const double> t, const DiffusionProcess& process,
                            Rng& rng) {
  return categorical_sample(posterior(x, z_t, s, t, process), rng);
}

TokenBatch posterior_sample(const TokenBatch& x, const TokenBatch& z_t,
                            std::span<const double> s, std::span<const double> t,
                            const DiffusionProcess& process, Rng& rng) {
  process.validate_tokens(x, false);
  return posterior_sample(one_hot(x, static_cast<std::size_t>(process.vocab())), z_t, s, t,
                          process, rng);
}

TokenBatch posterior_sample(const TokenBatch& x, const TokenBatch& z_t, double s, double t,
                            const DiffusionProcess& process, Rng& rng) {
  std::vector<double> ss(z_t.batch(), s), ts(z_t.batch(), t);
  return posterior_sample(x, z_t, ss, ts, process, rng);
}

Tensor carry_over(const Tensor& probs, const TokenBatch& z_t, const DiffusionProcess& process) {
  if (!process.is_masked()) return probs;
  Tensor out = probs;
  for (std::size_t r = 0; r < z_t.size(); ++r) {
    if (z_t[r] == process.mask_id()) continue;
    auto row = out.row(r);
    std::fill(row.begin(), row.end(), 0.0);
    row[static_cast<std::size_t>(z_t[r])] = 1.0;
  }
  return out;
}

TokenBatch prior_sample(const DiffusionProcess& process, std::size_t batch,
                        std::size_t positions, Rng& rng) {
  TokenBatch z(batch, positions, process.is_masked() ? process.mask_id() : 0);
  if (!process.is_masked()) {
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(process.vocab())));
    }
  }
  return z;
}

std::vector<bool> top_p_keep(std::span<const double> probs, double p) {
  std::vector<bool> keep(probs.size(), false);
  if (p >= 1.0) {
    std::fill(keep.begin(), keep.end(), true);
    return keep;
  }
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  double cum = 0.0;
  for (auto c : order) {
    keep[c] = true;
    cum += probs[c];
    if (cum >= p - 1e-12) break;
  }
  return keep;
}

Tensor modified_probs(const Tensor& logits, const LogitMods& mods) {
  Tensor out = log_softmax(logits, -1);
  const bool identity = mods.temperature == 1.0 && mods.top_p >= 1.0;
  std::vector<double> tempered;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    if (identity) {
      for (auto& v : row) v = std::exp(v);
      continue;
    }
    for (auto& v : row) v /= mods.temperature;
    tempered.assign(row.begin(), row.end());
    softmax_inplace(tempered);
    const auto keep = top_p_keep(tempered, mods.top_p);
    if (std::isinf(mods.shift)) {
      double z = 0.0;
      for (std::size_t c = 0; c < row.size(); ++c) {
        row[c] = keep[c] ? tempered[c] : 0.0;
        z += row[c];
      }
      for (auto& v : row) v /= z;
    } else {
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (!keep[c]) row[c] -= mods.shift;
      }
      softmax_inplace(row);
    }
  }
  return out;
}

TokenBatch ancestral_sample(const DenoiseFn& model, const DiffusionProcess& process, int steps,
                            const LogitMods& mods, std::size_t batch, std::size_t positions,
                            Rng& rng, const StepObserver& observer) {
  if (steps < 1) throw std::invalid_argument("ancestral_sample: steps must be >= 1");
  TokenBatch z = prior_sample(process, batch, positions, rng);
  for (int i = steps; i >= 1; --i) {
    const double t = static_cast<double>(i) / steps;
    const double s = static_cast<double>(i - 1) / steps;
    const Tensor probs = carry_over(modified_probs(model(z, t), mods), z, process);
    const TokenBatch x = categorical_sample(probs, rng);
    z = posterior_sample(x, z, s, t, process, rng);
    if (observer) observer(i, z);
  }
  return z;
}

}  // namespace ddlab
