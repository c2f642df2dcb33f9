#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ddlab/autodiff.hpp"
#include "ddlab/checkpoint.hpp"
#include "ddlab/datasets.hpp"
#include "ddlab/diffusion.hpp"
#include "ddlab/models.hpp"
#include "ddlab/optim.hpp"

namespace ddlab {

enum class LossVariant { cross_entropy, posterior_kl };
enum class OptimizerKind { adam, sgd };

std::string to_string(LossVariant v);
LossVariant parse_loss_variant(const std::string& s);
std::string to_string(OptimizerKind o);
OptimizerKind parse_optimizer_kind(const std::string& s);

struct DistillConfig {
  int k = 1;                  // student sampling steps
  double temperature = 1.0;   // tau in (0, 1]
  double top_p = 1.0;         // p in (0, 1]
  double shift = 2.0;         // Delta for out-of-nucleus teacher logits
  bool soft_target = false;   // auxiliary target x_hat_eta(z_t); masked only
  int gen_updates = 1;        // per cycle of gen_updates + aux_updates steps
  int aux_updates = 1;
  LossVariant variant = LossVariant::cross_entropy;
  LossWeighting weighting = LossWeighting::constant;
  double ds = 1.0 / 64.0;     // posterior_kl discretization gap
  std::size_t batch = 64;
  double lr = 3e-3;           // auxiliary rate; the generator uses lr * gen_lr_scale
  double gen_lr_scale = 0.5;
  // Adam by default; sgd has no per-coordinate normalization, so its step
  // vanishes with the gradient (used to probe fixed points).
  OptimizerKind optimizer = OptimizerKind::adam;
  // Cosine decay of both rates to lr_floor * lr over this many steps (0 keeps
  // them constant). Steps past the horizon stay at the floor.
  std::uint64_t lr_decay_steps = 0;
  double lr_floor = 0.0;
  // Negative control: out-of-nucleus teacher logits become the -1e20
  // sentinel instead of being lowered by `shift`.
  bool naive_top_p = false;
  // Test hook: the loss at this step is replaced by NaN (-1 disables).
  long long fault_inject_step = -1;

  void validate(const DiffusionProcess& process) const;
  bool generator_phase(std::uint64_t step) const;
  double lr_scale(std::uint64_t step) const;
};

struct TimePair {
  double s = 0.0;
  double t = 0.0;
};

// s ~ U(0, 1), delta ~ U(0, 1/k), t = min(1, s + delta).
TimePair sample_times(Rng& rng, int k);
// Same with explicit draws (s, delta), for tests of the clamp.
TimePair times_from_draws(double s, double delta);

// Teacher logit surgery on raw logits [.., K]: s = log_softmax(raw) / tau,
// nucleus computed on softmax(s), out-of-nucleus entries lowered by shift.
// The result is not renormalized.
Tensor teacher_logits(const Tensor& raw_logits, double temperature, double top_p, double shift);
Tensor teacher_logits(const Denoiser& teacher, const TokenBatch& z_s, std::span<const double> s,
                      double temperature, double top_p, double shift);
// The sentinel variant (out-of-nucleus logits set to -1e20). Only used to
// reproduce the gradient blow-up it causes.
Tensor naive_top_p_logits(const Tensor& raw_logits, double temperature, double top_p);

// -sum_c gen_probs_c (teacher_logp_c - aux_logp_c), weighted per position.
// Only gen_probs is differentiable. `weights` is [B, D]; the overloads
// without it average uniformly over all positions.
Var generator_loss(Var gen_probs, const Tensor& teacher_logp, const Tensor& aux_logp,
                   const Tensor& weights);
Var generator_loss(Var gen_probs, const Tensor& teacher_logp, const Tensor& aux_logp);

// -sum_c (target_c + teacher_probs_c) aux_logp_c, weighted per position.
Var auxiliary_loss(const Tensor& target, const Tensor& teacher_probs, Var aux_logp,
                   const Tensor& weights);
Var auxiliary_loss(const Tensor& target, const Tensor& teacher_probs, Var aux_logp);

// pi(x) = q(z_{s_lo} = . | z_{s_hi} = z, x) for soft x [B, D, K]; result
// [B, D, V], differentiable in x. Rows whose likelihood vanishes become a
// point mass on z with zero gradient.
Var posterior_probs(Var x, const TokenBatch& z, std::span<const double> s_lo,
                    std::span<const double> s_hi, const DiffusionProcess& process);

// log(max(x, floor)); gradient 1/x where x > floor, else 0.
Var log_floor(Var x, double floor = 1e-300);

// Posterior-space losses. Probabilities are [B, D, K] in data space; z_s is
// the conditioning state at time s, mapped to s - ds (clamped at 0).
Var generator_loss_posterior(Var gen_probs, const Tensor& teacher_probs, const Tensor& aux_probs,
                             const TokenBatch& z_s, std::span<const double> s, double ds,
                             const DiffusionProcess& process, const Tensor& weights);
Var auxiliary_loss_posterior(const Tensor& target, const Tensor& teacher_probs, Var aux_probs,
                             const TokenBatch& z_s, std::span<const double> s, double ds,
                             const DiffusionProcess& process, const Tensor& weights);

struct DistillState {
  Generator generator;
  Denoiser auxiliary;
  AdamState gen_adam;
  AdamState aux_adam;
  Rng rng;
  std::uint64_t step = 0;
};

// Generator and auxiliary start as teacher copies; the noise projection is
// drawn with standard deviation noise_init_scale from a stream of `rng`.
DistillState init_distill_state(const Denoiser& teacher, int noise_width, const Rng& rng,
                                double noise_init_scale = 0.0);

enum class Phase { gen, aux };
std::string to_string(Phase p);

struct DistillStepResult {
  double loss = 0.0;
  Phase phase = Phase::gen;
  double grad_norm = 0.0;
  double max_abs_teacher_logit = 0.0;
};

// One alternating update. Generator steps update only the generator,
// auxiliary steps only the auxiliary. Step i uses state.rng.split(i).
// Throws NumericalError (with step, tau, p and the largest teacher logit) on a
// non-finite loss; the models are left untouched in that case.
DistillStepResult distill_step(DistillState& state, const Denoiser& teacher,
                               const SyntheticDataset& dataset, const DiffusionProcess& process,
                               const DistillConfig& config);

// k-step sampler with fresh generator noise at every step.
TokenBatch student_sample(const Generator& generator, const DiffusionProcess& process, int k,
                          std::size_t batch, Rng& rng, const LogitMods& mods = {},
                          const StepObserver& observer = {});

struct DistillLogRow {
  std::uint64_t step = 0;
  Phase phase = Phase::gen;
  double loss = 0.0;
  double gen_output_entropy = 0.0;
  double eval_kl = 0.0;
  bool has_eval = false;
  double wallclock_ms = 0.0;
};

struct DistillRunOptions {
  std::uint64_t steps = 4000;  // total run length; logging and eval follow it
  std::uint64_t stop_at = 0;   // stop early once state.step reaches this (0: never)
  int log_every = 10;
  int eval_every = 500;        // exact k-step KL of the student (0 disables)
  int eval_noise_draws = 64;
  int entropy_probes = 64;
  // Called after each completed step (e.g. to save state).
  std::function<void(const DistillState&)> after_step;
};

std::vector<DistillLogRow> run_distillation(DistillState& state, const Denoiser& teacher,
                                            const SyntheticDataset& dataset,
                                            const DiffusionProcess& process,
                                            const DistillConfig& config,
                                            const DistillRunOptions& options);

// Full state (both models, both Adam states, rng, step) for bit-exact resume.
Checkpoint distill_state_checkpoint(const DistillState& state,
                                    const std::map<std::string, std::string>& extra = {});
DistillState distill_state_from_checkpoint(const Checkpoint& ckpt);

}  // namespace ddlab
