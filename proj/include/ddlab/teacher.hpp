#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ddlab/autodiff.hpp"
#include "ddlab/datasets.hpp"
#include "ddlab/diffusion.hpp"
#include "ddlab/models.hpp"
#include "ddlab/optim.hpp"

namespace ddlab {

// Per-position weights [B, D] for diffusion cross-entropy losses evaluated at
// state z with per-example times. Masked processes only count masked
// positions. Weights are w(t) divided by the number of counted positions, so
// a weighted sum is a mean over them; all-zero when nothing counts.
Tensor position_weights(const TokenBatch& z, std::span<const double> t,
                        const DiffusionProcess& process, LossWeighting weighting);

// Weighted data cross-entropy of the denoiser at z_t ~ q(z_t | x) with
// t ~ U(0, 1) per example.
Var teacher_loss(Tape& tape, Denoiser& model, const TokenBatch& x,
                 const DiffusionProcess& process, Rng& rng, LossWeighting weighting);

struct TeacherTrainConfig {
  int steps = 3000;
  std::size_t batch = 64;
  double lr = 3e-3;
  LossWeighting weighting = LossWeighting::constant;
  // Exact-chain KL every eval_every steps (0 disables) with eval_k sampling steps.
  int eval_every = 500;
  int eval_k = 16;
  std::uint64_t init_seed = 0;
};

struct TeacherLogRow {
  int step = 0;
  double loss = 0.0;
  double eval_kl = 0.0;
  bool has_eval = false;
  double wallclock_ms = 0.0;
};

struct TeacherResult {
  Denoiser model;
  std::vector<TeacherLogRow> log;
};

// Adam on teacher_loss with a fresh batch per step; step i draws from
// rng.split(i). Throws NumericalError on a non-finite loss.
TeacherResult train_teacher(const SyntheticDataset& dataset, const DiffusionProcess& process,
                            const ModelConfig& model_config, const TeacherTrainConfig& config,
                            const Rng& rng);

}  // namespace ddlab
