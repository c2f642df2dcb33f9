#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ddlab/categorical.hpp"
#include "ddlab/diffusion.hpp"
#include "ddlab/exact_distribution.hpp"
#include "ddlab/models.hpp"
#include "ddlab/reference_model.hpp"

namespace ddlab {

// Per-state clean-data predictions for the exact chain: an equally weighted
// list of factorized components, each [B, D, K] probabilities. Deterministic
// models return one component; noise-conditioned generators one per noise draw.
using ChainModel = std::function<std::vector<Tensor>(const TokenBatch& states, double t)>;

inline constexpr std::size_t kMaxChainStates = 20000;

// Exact distribution of the k-step sampler's output (uniform time grid,
// posterior transitions, carry-over for masked processes), by pushing
// probability mass through every reachable state.
ExactDistribution exact_chain_distribution(const ChainModel& model,
                                           const DiffusionProcess& process, int positions,
                                           int k);

ChainModel chain_model(const Denoiser& model, const LogitMods& mods = {});
// Averages over `noise_draws` fixed standard-normal draws seeded by `seed`.
ChainModel chain_model(const Generator& model, int noise_draws, std::uint64_t seed,
                       const LogitMods& mods = {});

// KL(q || p) with p floored at 1e-12 where q > 0.
double kl(const ExactDistribution& q, const ExactDistribution& p);
double total_variation(const ExactDistribution& q, const ExactDistribution& p);
inline constexpr double kKlFloor = 1e-12;

struct ExactConditional {
  Tensor probs;                 // [B, D, K] marginals of q(x_d | z)
  std::vector<double> evidence; // q(z) at time t, per state
};

// E_q[x | z_t] by enumeration. Unreachable states (evidence 0) get uniform rows.
ExactConditional exact_conditional(const ExactDistribution& q, const TokenBatch& z, double t,
                                   const DiffusionProcess& process);

// Chain driven by the exact factorized posterior marginals of q.
ExactDistribution factorized_oracle_chain(const ExactDistribution& q,
                                          const DiffusionProcess& process, int k);

// Empirical histogram of samples as a distribution.
ExactDistribution empirical_distribution(const TokenBatch& samples, int vocab);

// Plug-in unigram token entropy (nats). Requires >= 1000 samples.
double sample_entropy(const TokenBatch& samples, int vocab);

// Mean per-position entropy of the model's predictions at fully-noised
// inputs (t = 1, states drawn from pi), over n_probes noise draws.
double generator_output_entropy(const Generator& generator, const DiffusionProcess& process,
                                int n_probes, Rng& rng);
double generator_output_entropy(const Denoiser& model, const DiffusionProcess& process,
                                int n_probes, Rng& rng);

// exp of the mean per-token negative log-likelihood under the reference model.
double generative_perplexity(const ReferenceModel& ref, const TokenBatch& samples);

struct GradientMomentResult {
  double estimate = 0.0;
  double stderr_ = 0.0;
  // Norm of the mean data log-likelihood gradient over all data batches.
  double data_grad_norm = 0.0;
  bool ref_unconverged = false;
  std::vector<double> pair_values;
};

struct GradientMomentOptions {
  std::size_t batch_size = 256;
  int n_pairs = 200;
  double unconverged_threshold = 0.05;
};

// Paired-minibatch estimate of || E_g[grad log p] - E_q[grad log p] ||^2:
// mean over pairs of (g1 - q1) . (g2 - q2) with four independent batches.
GradientMomentResult gradient_moment(const ReferenceModel& ref, const BatchSampler& gen_sampler,
                                     const BatchSampler& data_sampler,
                                     const GradientMomentOptions& options, Rng& rng);

}  // namespace ddlab
