#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ddlab/rng.hpp"
#include "ddlab/tensor.hpp"

namespace ddlab {

// Integer sequences, batch x positions. Values are category ids; the MASK id
// (when a process has one) is the largest id.
class TokenBatch {
 public:
  TokenBatch() = default;
  TokenBatch(std::size_t batch, std::size_t positions, int fill = 0)
      : batch_(batch), positions_(positions), tokens_(batch * positions, fill) {}
  TokenBatch(std::size_t batch, std::size_t positions, std::vector<int> tokens);

  std::size_t batch() const { return batch_; }
  std::size_t positions() const { return positions_; }
  std::size_t size() const { return tokens_.size(); }

  int& at(std::size_t b, std::size_t d) { return tokens_[b * positions_ + d]; }
  int at(std::size_t b, std::size_t d) const { return tokens_[b * positions_ + d]; }
  int& operator[](std::size_t i) { return tokens_[i]; }
  int operator[](std::size_t i) const { return tokens_[i]; }

  std::span<const int> tokens() const { return tokens_; }
  std::span<const int> sequence(std::size_t b) const {
    return std::span<const int>(tokens_).subspan(b * positions_, positions_);
  }

  friend bool operator==(const TokenBatch&, const TokenBatch&) = default;

 private:
  std::size_t batch_ = 0;
  std::size_t positions_ = 0;
  std::vector<int> tokens_;
};

// Normalizes along `axis` (negative counts from the end) with max subtraction.
Tensor softmax(const Tensor& logits, int axis = -1);
Tensor log_softmax(const Tensor& logits, int axis = -1);

// In-place row versions used by the hot loops.
void softmax_inplace(std::span<double> row);
void log_softmax_inplace(std::span<double> row);

// One draw per row of a [batch, positions, categories] probability tensor.
// Uses Gumbel-argmax on log-probabilities; zero-probability categories are
// never chosen.
TokenBatch categorical_sample(const Tensor& probs, Rng& rng);
// Single row.
int categorical_sample_row(std::span<const double> probs, Rng& rng);

// Per-position -sum_c target_c * logprob_c. Output drops the last axis.
// Terms with target_c == 0 contribute zero even if logprob_c is -inf.
Tensor cross_entropy(const Tensor& target, const Tensor& predicted_logprobs);

// One-hot encoding with `categories` classes: [batch, positions, categories].
Tensor one_hot(const TokenBatch& tokens, std::size_t categories);

double entropy(std::span<const double> probs);

}  // namespace ddlab
