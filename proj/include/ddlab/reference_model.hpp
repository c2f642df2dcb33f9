#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ddlab/categorical.hpp"
#include "ddlab/optim.hpp"
#include "ddlab/rng.hpp"

namespace ddlab {

using BatchSampler = std::function<TokenBatch(std::size_t n, Rng& rng)>;

// Autoregressive categorical model with one logit table per (position,
// prefix): p(x) = prod_d softmax(theta[d, x_<d])[x_d]. Exact for the
// enumerable datasets used here, and its log-likelihood gradient is analytic.
class ReferenceModel {
 public:
  ReferenceModel(int vocab, int positions);

  int vocab() const { return vocab_; }
  int positions() const { return positions_; }
  std::size_t num_params() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Conditional distribution of position d given prefix x_<d.
  std::vector<double> conditional(std::span<const int> prefix) const;
  double log_prob(std::span<const int> sequence) const;
  // grad += weight * d log p(sequence) / d theta
  void add_log_prob_grad(std::span<const int> sequence, double weight,
                         std::span<double> grad) const;
  // Batch mean of the log-likelihood gradient.
  std::vector<double> mean_log_prob_grad(const TokenBatch& batch) const;

  // Maximum-likelihood training with Adam on minibatches from `data`; the
  // rate follows a cosine decay to 0 over `steps`.
  void train(const BatchSampler& data, int steps, std::size_t batch, const AdamConfig& adam,
             Rng& rng);

  // Greedy decoding: every position takes its most likely continuation.
  std::vector<int> argmax_sequence() const;

 private:
  std::size_t table_offset(std::span<const int> prefix) const;

  int vocab_;
  int positions_;
  std::vector<std::size_t> position_offsets_;
  std::vector<double> params_;
};

}  // namespace ddlab
