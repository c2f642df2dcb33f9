#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ddlab {

// Probability table over all K^D sequences. Index is the base-K number with
// position 0 as the most significant digit.
class ExactDistribution {
 public:
  static constexpr int kMaxPositions = 4;
  static constexpr int kMaxVocab = 4;

  ExactDistribution(int vocab, int positions);
  ExactDistribution(int vocab, int positions, std::vector<double> probs);

  int vocab() const { return vocab_; }
  int positions() const { return positions_; }
  std::size_t outcomes() const { return probs_.size(); }

  double operator[](std::size_t i) const { return probs_[i]; }
  double& operator[](std::size_t i) { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }

  std::size_t encode(std::span<const int> sequence) const;
  std::vector<int> decode(std::size_t index) const;
  double total() const;

 private:
  int vocab_;
  int positions_;
  std::vector<double> probs_;
};

// Index of `sequence` in base `base` (position 0 most significant).
std::size_t encode_sequence(std::span<const int> sequence, int base);
std::vector<int> decode_sequence(std::size_t index, int base, int positions);

}  // namespace ddlab
