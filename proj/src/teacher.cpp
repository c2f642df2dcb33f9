#include "ddlab/teacher.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ddlab/errors.hpp"
#include "ddlab/metrics.hpp"

namespace ddlab {

Tensor position_weights(const TokenBatch& z, std::span<const double> t,
                        const DiffusionProcess& process, LossWeighting weighting) {
  if (t.size() != z.batch()) throw std::invalid_argument("position_weights: one time per example");
  Tensor w({z.batch(), z.positions()});
  std::size_t count = 0;
  for (std::size_t b = 0; b < z.batch(); ++b) {
    const double wt = loss_weight(weighting, process.schedule(), t[b]);
    for (std::size_t d = 0; d < z.positions(); ++d) {
      if (process.is_masked() && z.at(b, d) != process.mask_id()) continue;
      w.at(b, d) = wt;
      ++count;
    }
  }
  if (count > 0) {
    for (auto& v : w.vec()) v /= static_cast<double>(count);
  }
  return w;
}

Var teacher_loss(Tape& tape, Denoiser& model, const TokenBatch& x,
                 const DiffusionProcess& process, Rng& rng, LossWeighting weighting) {
  const auto k = static_cast<std::size_t>(process.vocab());
  if (model.config().vocab != process.vocab() ||
      static_cast<std::size_t>(model.config().seq_len) != x.positions()) {
    throw std::invalid_argument("teacher_loss: model does not match batch / process");
  }
  std::vector<double> t(x.batch());
  for (auto& v : t) v = rng.uniform();
  const TokenBatch z = diffuse(x, t, process, rng);
  const Var logp = log_softmax(model.forward(tape, z, t));
  const Tensor pw = position_weights(z, t, process, weighting);
  Tensor coef({x.batch(), x.positions(), k});
  for (std::size_t r = 0; r < x.size(); ++r) {
    coef[r * k + static_cast<std::size_t>(x[r])] = -pw[r];
  }
  return weighted_sum(logp, coef);
}

TeacherResult train_teacher(const SyntheticDataset& dataset, const DiffusionProcess& process,
                            const ModelConfig& model_config, const TeacherTrainConfig& config,
                            const Rng& rng) {
  if (config.steps < 0) throw std::invalid_argument("train_teacher: negative step count");
  Denoiser model(model_config, config.init_seed);
  AdamState adam;
  const AdamConfig adam_config{.lr = config.lr};
  std::vector<TeacherLogRow> log;
  const auto start = std::chrono::steady_clock::now();
  const bool can_eval = config.eval_every > 0 &&
                        std::pow(process.state_vocab(), dataset.seq_len()) <= kMaxChainStates;
  const ExactDistribution q = dataset.exact();

  auto eval_kl = [&]() {
    return kl(q, exact_chain_distribution(chain_model(model), process, dataset.seq_len(),
                                          config.eval_k));
  };

  for (int step = 0; step < config.steps; ++step) {
    Rng step_rng = rng.split(static_cast<std::uint64_t>(step));
    const TokenBatch x = dataset.sample(config.batch, step_rng);
    Tape tape;
    model.params().zero_grad();
    const Var loss = teacher_loss(tape, model, x, process, step_rng, config.weighting);
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      throw NumericalError("teacher training diverged at step " + std::to_string(step) +
                           ": loss = " + std::to_string(value));
    }
    tape.backward(loss);
    adam_step(model.params(), adam_config, adam);

    TeacherLogRow row;
    row.step = step;
    row.loss = value;
    if (can_eval && ((step + 1) % config.eval_every == 0 || step + 1 == config.steps)) {
      row.eval_kl = eval_kl();
      row.has_eval = true;
    }
    row.wallclock_ms = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - start)
                           .count();
    log.push_back(row);
  }
  return TeacherResult{std::move(model), std::move(log)};
}

}  // namespace ddlab
