#pragma once

#include <string>
#include <vector>

#include "ddlab/categorical.hpp"
#include "ddlab/exact_distribution.hpp"
#include "ddlab/rng.hpp"

namespace ddlab {

enum class DatasetKind { correlated_bits, mode_mixture, markov_chain };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& s);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::correlated_bits;
  int seq_len = 2;
  int vocab = 2;
  // mode_mixture: pick a mode by weight, then resample each token uniformly
  // with probability flip_prob.
  std::vector<std::vector<int>> modes;
  std::vector<double> mode_weights;
  double flip_prob = 0.0;
  // markov_chain: x_0 ~ initial, x_d ~ transition[x_{d-1}].
  std::vector<double> initial;
  std::vector<std::vector<double>> transition;

  void validate() const;
};

// Small synthetic sequence distributions whose q(x) is enumerable.
// correlated_bits: every position repeats one uniformly drawn token.
class SyntheticDataset {
 public:
  explicit SyntheticDataset(DatasetSpec spec);

  static SyntheticDataset correlated_bits(int seq_len = 2, int vocab = 2);
  // Three cyclic modes over D=3, K=3 with a little token noise.
  static SyntheticDataset default_mode_mixture();
  static SyntheticDataset default_markov_chain();

  const DatasetSpec& spec() const { return spec_; }
  int seq_len() const { return spec_.seq_len; }
  int vocab() const { return spec_.vocab; }

  // Ancestral draw from the generative description (independent of exact()).
  TokenBatch sample(std::size_t n, Rng& rng) const;
  // Probability of one sequence, from the closed form.
  double probability(std::span<const int> sequence) const;
  ExactDistribution exact() const;

 private:
  DatasetSpec spec_;
};

}  // namespace ddlab
