#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ddlab/categorical.hpp"
#include "ddlab/rng.hpp"
#include "ddlab/tensor.hpp"

namespace ddlab {

enum class ScheduleKind { linear, cosine };

// alpha(t): probability that a token is still clean at time t.
// linear: 1 - t. cosine: cos(pi t / 2), pinned to exactly 0 at t = 1.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(ScheduleKind kind = ScheduleKind::linear) : kind_(kind) {}
  ScheduleKind kind() const { return kind_; }
  double alpha(double t) const;
  double alpha_derivative(double t) const;

 private:
  ScheduleKind kind_;
};

enum class ProcessKind { masked, uniform };

std::string to_string(ScheduleKind kind);
std::string to_string(ProcessKind kind);
ScheduleKind parse_schedule_kind(const std::string& s);
ProcessKind parse_process_kind(const std::string& s);

// Per-time loss weight w(t). constant: 1. mdlm: -alpha'(t) / (1 - alpha(t)),
// capped at 1000 to keep t -> 0 draws from dominating a batch.
enum class LossWeighting { constant, mdlm };

std::string to_string(LossWeighting w);
LossWeighting parse_loss_weighting(const std::string& s);
double loss_weight(LossWeighting w, const NoiseSchedule& schedule, double t);

// Forward process interpolating data towards a factorized stationary
// distribution pi: one-hot on MASK (masked) or uniform over K (uniform).
class DiffusionProcess {
 public:
  DiffusionProcess(ProcessKind kind, int vocab, NoiseSchedule schedule = NoiseSchedule{});

  ProcessKind kind() const { return kind_; }
  bool is_masked() const { return kind_ == ProcessKind::masked; }
  // Number of data categories K.
  int vocab() const { return vocab_; }
  // K + 1 for masked processes, K otherwise.
  int state_vocab() const { return is_masked() ? vocab_ + 1 : vocab_; }
  // K for masked processes, -1 otherwise.
  int mask_id() const { return is_masked() ? vocab_ : -1; }
  double stationary(int token) const;
  const NoiseSchedule& schedule() const { return schedule_; }
  double alpha(double t) const { return schedule_.alpha(t); }

  // Throws std::invalid_argument on out-of-range ids, or on MASK when not allowed.
  void validate_tokens(const TokenBatch& tokens, bool allow_mask) const;

 private:
  ProcessKind kind_;
  int vocab_;
  NoiseSchedule schedule_;
};

// z_t ~ Cat(alpha_t x + (1 - alpha_t) pi), per position.
TokenBatch diffuse(const TokenBatch& x, double t, const DiffusionProcess& process, Rng& rng);
// Per-example times (t.size() == batch).
TokenBatch diffuse(const TokenBatch& x, std::span<const double> t,
                   const DiffusionProcess& process, Rng& rng);

// q(z_s | z_t, x) for one position. `x` has K entries (soft or one-hot); the
// result has state_vocab() entries. Throws if the pair (x, z_t) has vanishing
// likelihood.
void posterior_row(std::span<const double> x, int z_t, double s, double t,
                   const DiffusionProcess& process, std::span<double> out);

// Batched posterior: x is [B, D, K], result is [B, D, V].
Tensor posterior(const Tensor& x, const TokenBatch& z_t, double s, double t,
                 const DiffusionProcess& process);
Tensor posterior(const Tensor& x, const TokenBatch& z_t, std::span<const double> s,
                 std::span<const double> t, const DiffusionProcess& process);
Tensor posterior(const TokenBatch& x, const TokenBatch& z_t, double s, double t,
                 const DiffusionProcess& process);

TokenBatch posterior_sample(const Tensor& x, const TokenBatch& z_t, std::span<const double> s,
                            std::span<const double> t, const DiffusionProcess& process,
                            Rng& rng);
TokenBatch posterior_sample(const TokenBatch& x, const TokenBatch& z_t, double s, double t,
                            const DiffusionProcess& process, Rng& rng);
TokenBatch posterior_sample(const TokenBatch& x, const TokenBatch& z_t,
                            std::span<const double> s, std::span<const double> t,
                            const DiffusionProcess& process, Rng& rng);

// Under absorbing noise an unmasked token is already clean: replace the
// prediction at those positions by the one-hot of z_t. No-op for uniform.
Tensor carry_over(const Tensor& probs, const TokenBatch& z_t, const DiffusionProcess& process);

// Draws the fully-noised state z_1 ~ pi.
TokenBatch prior_sample(const DiffusionProcess& process, std::size_t batch,
                        std::size_t positions, Rng& rng);

// Logit modifications applied before sampling: temperature, then nucleus
// selection on the tempered distribution. A finite `shift` lowers
// out-of-nucleus logits by that constant; an infinite one removes them.
struct LogitMods {
  double temperature = 1.0;
  double top_p = 1.0;
  double shift = std::numeric_limits<double>::infinity();
};

// Nucleus membership for one probability row: categories sorted by
// probability descending (lower index first on ties), smallest prefix whose
// cumulative mass reaches p. p >= 1 keeps everything.
std::vector<bool> top_p_keep(std::span<const double> probs, double p);

// Applies `mods` to log-probability rows [.., K] and returns probabilities.
Tensor modified_probs(const Tensor& logits, const LogitMods& mods);

// Denoiser interface: logits [B, D, K] over data categories for state z at time t.
using DenoiseFn = std::function<Tensor(const TokenBatch& z, double t)>;
using StepObserver = std::function<void(int step, const TokenBatch& z)>;

// n-step ancestral sampler on the uniform time grid t_i = i / n, i = n..1.
TokenBatch ancestral_sample(const DenoiseFn& model, const DiffusionProcess& process, int steps,
                            const LogitMods& mods, std::size_t batch, std::size_t positions,
                            Rng& rng, const StepObserver& observer = {});

}  // namespace ddlab
