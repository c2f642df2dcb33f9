#include "ddlab/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "ddlab/errors.hpp"
#include "ddlab/metrics.hpp"
#include "ddlab/teacher.hpp"

namespace ddlab {

std::string to_string(LossVariant v) {
  return v == LossVariant::cross_entropy ? "cross_entropy" : "posterior_kl";
}

LossVariant parse_loss_variant(const std::string& s) {
  if (s == "cross_entropy") return LossVariant::cross_entropy;
  if (s == "posterior_kl") return LossVariant::posterior_kl;
  throw std::invalid_argument("unknown loss variant '" + s +
                              "' (expected cross_entropy|posterior_kl)");
}

std::string to_string(OptimizerKind o) { return o == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected adam|sgd)");
}

std::string to_string(Phase p) { return p == Phase::gen ? "gen" : "aux"; }

void DistillConfig::validate(const DiffusionProcess& process) const {
  if (k < 1) throw std::invalid_argument("distill: k must be >= 1");
  if (!(temperature > 0.0 && temperature <= 1.0)) {
    throw std::invalid_argument("distill: temperature must be in (0, 1]");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("distill: top_p must be in (0, 1]");
  if (!(shift > 0.0)) throw std::invalid_argument("distill: shift must be > 0");
  if (soft_target && !process.is_masked()) {
    throw std::invalid_argument("distill: soft targets require a masked process");
  }
  if (gen_updates < 1 || aux_updates < 1) {
    throw std::invalid_argument("distill: update counts must be >= 1");
  }
  if (!(ds > 0.0 && ds < 1.0)) throw std::invalid_argument("distill: ds must be in (0, 1)");
  if (batch < 1) throw std::invalid_argument("distill: batch must be >= 1");
  if (!(lr > 0.0) || !(gen_lr_scale > 0.0)) {
    throw std::invalid_argument("distill: learning rates must be positive");
  }
  if (!(lr_floor >= 0.0 && lr_floor <= 1.0)) {
    throw std::invalid_argument("distill: lr_floor must be in [0, 1]");
  }
}

double DistillConfig::lr_scale(std::uint64_t step) const {
  if (lr_decay_steps == 0) return 1.0;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(lr_decay_steps));
  return lr_floor + (1.0 - lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

bool DistillConfig::generator_phase(std::uint64_t step) const {
  const auto cycle = static_cast<std::uint64_t>(gen_updates + aux_updates);
  return step % cycle < static_cast<std::uint64_t>(gen_updates);
}

TimePair times_from_draws(double s, double delta) {
  return TimePair{s, std::min(1.0, s + delta)};
}

TimePair sample_times(Rng& rng, int k) {
  if (k < 1) throw std::invalid_argument("sample_times: k must be >= 1");
  const double s = rng.uniform();
  const double delta = rng.uniform() / k;
  return times_from_draws(s, delta);
}

// ------------------------------------------------------------ logit surgery

Tensor teacher_logits(const Tensor& raw_logits, double temperature, double top_p, double shift) {
  if (!(temperature > 0.0) || !(top_p > 0.0) || !(shift >= 0.0)) {
    throw std::invalid_argument("teacher_logits: need tau > 0, p > 0, shift >= 0");
  }
  Tensor out = log_softmax(raw_logits, -1);
  std::vector<double> probs;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (auto& v : row) v /= temperature;
    if (top_p >= 1.0) continue;
    probs.assign(row.begin(), row.end());
    softmax_inplace(probs);
    const auto keep = top_p_keep(probs, top_p);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (!keep[c]) row[c] -= shift;
    }
  }
  return out;
}

Tensor teacher_logits(const Denoiser& teacher, const TokenBatch& z_s, std::span<const double> s,
                      double temperature, double top_p, double shift) {
  return teacher_logits(teacher.logits(z_s, s), temperature, top_p, shift);
}

Tensor naive_top_p_logits(const Tensor& raw_logits, double temperature, double top_p) {
  Tensor out = log_softmax(raw_logits, -1);
  std::vector<double> probs;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (auto& v : row) v /= temperature;
    probs.assign(row.begin(), row.end());
    softmax_inplace(probs);
    const auto keep = top_p_keep(probs, top_p);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (!keep[c]) row[c] = -1e20;
    }
  }
  return out;
}

// ------------------------------------------------------------------- losses

namespace {

void check_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " +
                                shape_str(b));
  }
}

Tensor uniform_weights(const Shape& shape) {
  if (shape.size() != 3) throw std::invalid_argument("loss: expected [B, D, K] inputs");
  const double w = 1.0 / static_cast<double>(shape[0] * shape[1]);
  return Tensor({shape[0], shape[1]}, w);
}

void check_weights(const Tensor& weights, const Shape& shape, const char* what) {
  if (shape.size() != 3 || weights.rank() != 2 || weights.dim(0) != shape[0] ||
      weights.dim(1) != shape[1]) {
    throw std::invalid_argument(std::string(what) + ": weights " + shape_str(weights.shape()) +
                                " do not match " + shape_str(shape));
  }
}

Tensor constant_posterior(const Tensor& x, const TokenBatch& z, std::span<const double> s_lo,
                          std::span<const double> s_hi, const DiffusionProcess& process) {
  Tape tape;
  return posterior_probs(tape.constant(x), z, s_lo, s_hi, process).value();
}

}  // namespace

Var generator_loss(Var gen_probs, const Tensor& teacher_logp, const Tensor& aux_logp,
                   const Tensor& weights) {
  const auto& shape = gen_probs.shape();
  check_same_shape(shape, teacher_logp.shape(), "generator_loss");
  check_same_shape(shape, aux_logp.shape(), "generator_loss");
  check_weights(weights, shape, "generator_loss");
  const std::size_t k = shape[2];
  Tensor coef(shape);
  for (std::size_t i = 0; i < coef.size(); ++i) {
    const double w = weights[i / k];
    if (w != 0.0) coef[i] = -w * (teacher_logp[i] - aux_logp[i]);
  }
  return weighted_sum(gen_probs, coef);
}

Var generator_loss(Var gen_probs, const Tensor& teacher_logp, const Tensor& aux_logp) {
  return generator_loss(gen_probs, teacher_logp, aux_logp, uniform_weights(gen_probs.shape()));
}

Var auxiliary_loss(const Tensor& target, const Tensor& teacher_probs, Var aux_logp,
                   const Tensor& weights) {
  const auto& shape = aux_logp.shape();
  check_same_shape(shape, target.shape(), "auxiliary_loss");
  check_same_shape(shape, teacher_probs.shape(), "auxiliary_loss");
  check_weights(weights, shape, "auxiliary_loss");
  const std::size_t k = shape[2];
  Tensor coef(shape);
  for (std::size_t i = 0; i < coef.size(); ++i) {
    coef[i] = -weights[i / k] * (target[i] + teacher_probs[i]);
  }
  return weighted_sum(aux_logp, coef);
}

Var auxiliary_loss(const Tensor& target, const Tensor& teacher_probs, Var aux_logp) {
  return auxiliary_loss(target, teacher_probs, aux_logp, uniform_weights(aux_logp.shape()));
}

Var posterior_probs(Var x, const TokenBatch& z, std::span<const double> s_lo,
                    std::span<const double> s_hi, const DiffusionProcess& process) {
  const auto& xv = x.value();
  const auto k = static_cast<std::size_t>(process.vocab());
  const auto v = static_cast<std::size_t>(process.state_vocab());
  if (xv.rank() != 3 || xv.dim(0) != z.batch() || xv.dim(1) != z.positions() || xv.dim(2) != k) {
    throw std::invalid_argument("posterior_probs: x shape " + shape_str(xv.shape()) +
                                " incompatible with state batch");
  }
  if (s_lo.size() != z.batch() || s_hi.size() != z.batch()) {
    throw std::invalid_argument("posterior_probs: one time pair per example");
  }
  process.validate_tokens(z, true);
  const std::size_t rows = z.size();
  // Per row: alpha_lo, alpha_hi, denominator (0 marks a degenerate row).
  std::vector<double> a_lo(rows), a_hi(rows), denom(rows, 0.0);
  Tensor out({z.batch(), z.positions(), v});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t b = r / z.positions();
    if (!(0.0 <= s_lo[b] && s_lo[b] <= s_hi[b] && s_hi[b] <= 1.0)) {
      throw std::invalid_argument("posterior_probs: need 0 <= s_lo <= s_hi <= 1");
    }
    const int zt = z[r];
    a_lo[r] = process.alpha(s_lo[b]);
    a_hi[r] = process.alpha(s_hi[b]);
    const double x_z = static_cast<std::size_t>(zt) < k ? xv[r * k + static_cast<std::size_t>(zt)] : 0.0;
    const double dn = a_hi[r] * x_z + (1.0 - a_hi[r]) * process.stationary(zt);
    auto row = out.row(r);
    if (a_lo[r] == a_hi[r] || !(dn >= 1e-30)) {
      row[static_cast<std::size_t>(zt)] = 1.0;
      continue;
    }
    denom[r] = dn;
    const double a_ts = a_hi[r] / a_lo[r];
    const double pi_z = process.stationary(zt);
    for (std::size_t j = 0; j < v; ++j) {
      const double first = a_ts * (static_cast<int>(j) == zt ? 1.0 : 0.0) + (1.0 - a_ts) * pi_z;
      const double xj = j < k ? xv[r * k + j] : 0.0;
      const double second = a_lo[r] * xj + (1.0 - a_lo[r]) * process.stationary(static_cast<int>(j));
      row[j] = std::max(0.0, first * second / dn);
    }
  }
  const auto ix = x.id;
  return x.tape->add_node(
      std::move(out), {ix},
      [ix, z, a_lo = std::move(a_lo), a_hi = std::move(a_hi), denom = std::move(denom), k, v,
       process](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        const auto& y = tp.value(self);
        if (!tp.requires_grad(ix)) return;
        Tensor& gx = tp.grad_of(ix);
        for (std::size_t r = 0; r < denom.size(); ++r) {
          const double dn = denom[r];
          if (dn == 0.0) continue;
          const int zt = z[r];
          const double a_ts = a_hi[r] / a_lo[r];
          const double pi_z = process.stationary(zt);
          double gy = 0.0;
          for (std::size_t j = 0; j < v; ++j) gy += g[r * v + j] * y[r * v + j];
          for (std::size_t i = 0; i < k; ++i) {
            const double first =
                a_ts * (static_cast<int>(i) == zt ? 1.0 : 0.0) + (1.0 - a_ts) * pi_z;
            gx[r * k + i] += g[r * v + i] * first * a_lo[r] / dn;
          }
          if (static_cast<std::size_t>(zt) < k) {
            gx[r * k + static_cast<std::size_t>(zt)] -= gy * a_hi[r] / dn;
          }
        }
      });
}

Var log_floor(Var x, double floor) {
  Tensor out = x.value();
  for (auto& v : out.vec()) v = std::log(std::max(v, floor));
  const auto ix = x.id;
  return x.tape->add_node(std::move(out), {ix}, [ix, floor](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(ix)) return;
    const auto& g = tp.grad(self);
    const auto& xv = tp.value(ix);
    Tensor& gx = tp.grad_of(ix);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > floor) gx[i] += g[i] / xv[i];
    }
  });
}

namespace {

std::vector<double> lowered_times(std::span<const double> s, double ds) {
  std::vector<double> lo(s.size());
  for (std::size_t b = 0; b < s.size(); ++b) lo[b] = std::max(0.0, s[b] - ds);
  return lo;
}

Tensor broadcast_weights(const Tensor& weights, std::size_t v) {
  Tensor out({weights.dim(0), weights.dim(1), v});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = weights[i / v];
  return out;
}

}  // namespace

Var generator_loss_posterior(Var gen_probs, const Tensor& teacher_probs, const Tensor& aux_probs,
                             const TokenBatch& z_s, std::span<const double> s, double ds,
                             const DiffusionProcess& process, const Tensor& weights) {
  const auto& shape = gen_probs.shape();
  check_same_shape(shape, teacher_probs.shape(), "generator_loss_posterior");
  check_same_shape(shape, aux_probs.shape(), "generator_loss_posterior");
  check_weights(weights, shape, "generator_loss_posterior");
  const auto lo = lowered_times(s, ds);
  const Var pi_gen = posterior_probs(gen_probs, z_s, lo, s, process);
  const Tensor pi_teacher = constant_posterior(teacher_probs, z_s, lo, s, process);
  const Tensor pi_aux = constant_posterior(aux_probs, z_s, lo, s, process);
  const std::size_t v = pi_teacher.last_dim();
  Tensor coef = broadcast_weights(weights, v);
  for (std::size_t i = 0; i < coef.size(); ++i) {
    if (coef[i] == 0.0) continue;
    coef[i] *= std::log(std::max(pi_aux[i], 1e-300)) - std::log(std::max(pi_teacher[i], 1e-300));
  }
  return weighted_sum(pi_gen, coef);
}

Var auxiliary_loss_posterior(const Tensor& target, const Tensor& teacher_probs, Var aux_probs,
                             const TokenBatch& z_s, std::span<const double> s, double ds,
                             const DiffusionProcess& process, const Tensor& weights) {
  const auto& shape = aux_probs.shape();
  check_same_shape(shape, target.shape(), "auxiliary_loss_posterior");
  check_same_shape(shape, teacher_probs.shape(), "auxiliary_loss_posterior");
  check_weights(weights, shape, "auxiliary_loss_posterior");
  const auto lo = lowered_times(s, ds);
  const Var log_pi_aux = log_floor(posterior_probs(aux_probs, z_s, lo, s, process));
  const Tensor pi_target = constant_posterior(target, z_s, lo, s, process);
  const Tensor pi_teacher = constant_posterior(teacher_probs, z_s, lo, s, process);
  Tensor coef = broadcast_weights(weights, pi_target.last_dim());
  for (std::size_t i = 0; i < coef.size(); ++i) coef[i] *= -(pi_target[i] + pi_teacher[i]);
  return weighted_sum(log_pi_aux, coef);
}

// -------------------------------------------------------------- alternation

DistillState init_distill_state(const Denoiser& teacher, int noise_width, const Rng& rng,
                                double noise_init_scale) {
  ModelConfig gen_config = teacher.config();
  gen_config.noise_width = noise_width;
  constexpr std::uint64_t kInitStream = std::uint64_t{1} << 47;
  auto models = init_from_teacher(teacher, gen_config, noise_init_scale,
                                  rng.split(kInitStream).next_u64());
  return DistillState{std::move(models.generator), std::move(models.auxiliary), {}, {}, rng, 0};
}

namespace {

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.vec()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

DistillStepResult distill_step(DistillState& state, const Denoiser& teacher,
                               const SyntheticDataset& dataset, const DiffusionProcess& process,
                               const DistillConfig& config) {
  if (!teacher.config().compatible_with(state.generator.config()) ||
      !teacher.config().compatible_with(state.auxiliary.config())) {
    throw IncompatibleArtifact("distill_step: teacher, generator and auxiliary shapes differ");
  }
  const std::uint64_t step = state.step;
  Rng rng = state.rng.split(step);
  const std::size_t n = config.batch;
  const auto k = static_cast<std::size_t>(process.vocab());

  const TokenBatch x0 = dataset.sample(n, rng);
  std::vector<double> s(n), t(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto tp = sample_times(rng, config.k);
    s[b] = tp.s;
    t[b] = tp.t;
  }
  const TokenBatch z_t = diffuse(x0, t, process, rng);
  const Tensor noise = state.generator.draw_noise(n, rng);

  DistillStepResult result;
  result.phase = config.generator_phase(step) ? Phase::gen : Phase::aux;
  const bool gen_phase = result.phase == Phase::gen;

  Tape tape;
  Var gen_logits = gen_phase ? state.generator.forward(tape, z_t, t, noise)
                             : state.generator.forward_const(tape, z_t, t, noise);
  Var gen_probs = softmax(gen_logits);
  const Tensor sample_probs = carry_over(gen_probs.value(), z_t, process);
  const TokenBatch x = categorical_sample(sample_probs, rng);
  const TokenBatch z_s = posterior_sample(x, z_t, s, t, process, rng);

  const Tensor surgery =
      config.naive_top_p
          ? naive_top_p_logits(teacher.logits(z_s, s), config.temperature, config.top_p)
          : teacher_logits(teacher, z_s, s, config.temperature, config.top_p, config.shift);
  result.max_abs_teacher_logit = max_abs(surgery);
  const Tensor teacher_logp = log_softmax(surgery, -1);
  const Tensor teacher_probs = softmax(surgery, -1);
  const Tensor weights = position_weights(z_s, s, process, config.weighting);

  Var loss;
  if (gen_phase) {
    const Tensor aux_logits = state.auxiliary.logits(z_s, s);
    if (config.variant == LossVariant::cross_entropy) {
      loss = generator_loss(gen_probs, teacher_logp, log_softmax(aux_logits, -1), weights);
    } else {
      loss = generator_loss_posterior(gen_probs, teacher_probs, softmax(aux_logits, -1), z_s, s,
                                      config.ds, process, weights);
    }
  } else {
    const Tensor target = config.soft_target ? sample_probs : one_hot(x, k);
    const Var aux_logits = state.auxiliary.forward(tape, z_s, s);
    if (config.variant == LossVariant::cross_entropy) {
      loss = auxiliary_loss(target, teacher_probs, log_softmax(aux_logits), weights);
    } else {
      loss = auxiliary_loss_posterior(target, teacher_probs, softmax(aux_logits), z_s, s,
                                      config.ds, process, weights);
    }
  }

  result.loss = loss.value().item();
  if (config.fault_inject_step >= 0 &&
      step == static_cast<std::uint64_t>(config.fault_inject_step)) {
    result.loss = std::numeric_limits<double>::quiet_NaN();
  }
  if (!std::isfinite(result.loss)) {
    std::ostringstream msg;
    msg << "distillation diverged: non-finite " << to_string(result.phase) << " loss at step "
        << step << " (tau=" << config.temperature << ", top_p=" << config.top_p
        << ", max |teacher logit|=" << result.max_abs_teacher_logit << ")";
    throw NumericalError(msg.str());
  }

  ParamStore& params = gen_phase ? state.generator.params() : state.auxiliary.params();
  AdamState& adam = gen_phase ? state.gen_adam : state.aux_adam;
  const double lr =
      (gen_phase ? config.lr * config.gen_lr_scale : config.lr) * config.lr_scale(step);
  params.zero_grad();
  tape.backward(loss);
  result.grad_norm = params.grad_norm();
  if (config.optimizer == OptimizerKind::adam) {
    adam_step(params, AdamConfig{.lr = lr}, adam);
  } else {
    sgd_step(params, lr);
  }
  ++state.step;
  return result;
}

TokenBatch student_sample(const Generator& generator, const DiffusionProcess& process, int k,
                          std::size_t batch, Rng& rng, const LogitMods& mods,
                          const StepObserver& observer) {
  DenoiseFn fn = [&](const TokenBatch& z, double t) {
    return generator.logits(z, t, generator.draw_noise(z.batch(), rng));
  };
  return ancestral_sample(fn, process, k, mods, batch,
                          static_cast<std::size_t>(generator.config().seq_len), rng, observer);
}

std::vector<DistillLogRow> run_distillation(DistillState& state, const Denoiser& teacher,
                                            const SyntheticDataset& dataset,
                                            const DiffusionProcess& process,
                                            const DistillConfig& config,
                                            const DistillRunOptions& options) {
  config.validate(process);
  std::vector<DistillLogRow> log;
  const auto start = std::chrono::steady_clock::now();
  const bool can_eval = options.eval_every > 0 &&
                        std::pow(process.state_vocab(), dataset.seq_len()) <= kMaxChainStates;
  const ExactDistribution q = dataset.exact();
  // Evaluation streams live far above the per-step training streams.
  constexpr std::uint64_t kEvalStream = std::uint64_t{1} << 48;
  const std::uint64_t noise_seed = state.rng.split(kEvalStream).next_u64();

  const std::uint64_t stop =
      options.stop_at > 0 ? std::min(options.stop_at, options.steps) : options.steps;
  while (state.step < stop) {
    const std::uint64_t step = state.step;
    const auto res = distill_step(state, teacher, dataset, process, config);
    const bool last = state.step == options.steps;
    const bool eval = can_eval && ((step + 1) % static_cast<std::uint64_t>(options.eval_every) == 0 || last);
    const bool logged = options.log_every > 0 &&
                        (step % static_cast<std::uint64_t>(options.log_every) == 0 || last || eval);
    if (logged) {
      DistillLogRow row;
      row.step = step;
      row.phase = res.phase;
      row.loss = res.loss;
      Rng probe_rng = state.rng.split(kEvalStream + 1 + step);
      row.gen_output_entropy =
          generator_output_entropy(state.generator, process, options.entropy_probes, probe_rng);
      if (eval) {
        row.eval_kl = kl(q, exact_chain_distribution(
                                chain_model(state.generator, options.eval_noise_draws, noise_seed),
                                process, dataset.seq_len(), config.k));
        row.has_eval = true;
      }
      row.wallclock_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - start)
                             .count();
      log.push_back(row);
    }
    if (options.after_step) options.after_step(state);
  }
  return log;
}

// ---------------------------------------------------------------- resume

Checkpoint distill_state_checkpoint(const DistillState& state,
                                    const std::map<std::string, std::string>& extra) {
  Checkpoint ckpt;
  ckpt.header = state.generator.config().to_kv();
  ckpt.header["kind"] = "distill_state";
  ckpt.header["step"] = std::to_string(state.step);
  ckpt.header["rng_key"] = std::to_string(state.rng.key());
  ckpt.header["rng_counter"] = std::to_string(state.rng.counter());
  ckpt.header["gen_params"] = std::to_string(state.generator.params().size());
  ckpt.header["aux_params"] = std::to_string(state.auxiliary.params().size());
  ckpt.header["gen_adam_len"] = std::to_string(state.gen_adam.m.size());
  ckpt.header["gen_adam_step"] = std::to_string(state.gen_adam.step);
  ckpt.header["aux_adam_len"] = std::to_string(state.aux_adam.m.size());
  ckpt.header["aux_adam_step"] = std::to_string(state.aux_adam.step);
  for (const auto& [key, value] : extra) ckpt.header[key] = value;
  auto append = [&](const std::vector<double>& v) {
    ckpt.values.insert(ckpt.values.end(), v.begin(), v.end());
  };
  append(state.generator.params().values());
  append(state.auxiliary.params().values());
  append(state.gen_adam.m);
  append(state.gen_adam.v);
  append(state.aux_adam.m);
  append(state.aux_adam.v);
  return ckpt;
}

DistillState distill_state_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.get("kind") != "distill_state") {
    throw IncompatibleArtifact("checkpoint kind '" + ckpt.get("kind") + "' is not a distill state");
  }
  auto count = [&](const std::string& key) {
    return static_cast<std::size_t>(std::stoull(ckpt.get(key)));
  };
  const ModelConfig gen_config = ModelConfig::from_kv(ckpt.header);
  ModelConfig aux_config = gen_config;
  aux_config.noise_width = 0;
  const std::size_t n_gen = count("gen_params"), n_aux = count("aux_params");
  const std::size_t n_gm = count("gen_adam_len"), n_am = count("aux_adam_len");
  if (ckpt.values.size() != n_gen + n_aux + 2 * n_gm + 2 * n_am) {
    throw IncompatibleArtifact("distill state: payload size does not match header");
  }
  std::size_t pos = 0;
  auto take = [&](std::size_t len) {
    std::vector<double> v(ckpt.values.begin() + static_cast<std::ptrdiff_t>(pos),
                          ckpt.values.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
    return v;
  };
  Generator gen(gen_config, params_from_values(gen_config, take(n_gen)));
  Denoiser aux(aux_config, params_from_values(aux_config, take(n_aux)));
  AdamState gen_adam{take(n_gm), take(n_gm), std::stoull(ckpt.get("gen_adam_step"))};
  AdamState aux_adam{take(n_am), take(n_am), std::stoull(ckpt.get("aux_adam_step"))};
  Rng rng(std::stoull(ckpt.get("rng_key")), std::stoull(ckpt.get("rng_counter")));
  return DistillState{std::move(gen), std::move(aux), std::move(gen_adam), std::move(aux_adam),
                      rng, std::stoull(ckpt.get("step"))};
}

}  // namespace ddlab
