#include "ddlab/datasets.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ddlab {

// ------------------------------------------------------- ExactDistribution

std::size_t encode_sequence(std::span<const int> sequence, int base) {
  std::size_t idx = 0;
  for (int v : sequence) idx = idx * static_cast<std::size_t>(base) + static_cast<std::size_t>(v);
  return idx;
}

std::vector<int> decode_sequence(std::size_t index, int base, int positions) {
  std::vector<int> seq(static_cast<std::size_t>(positions));
  for (int d = positions - 1; d >= 0; --d) {
    seq[static_cast<std::size_t>(d)] = static_cast<int>(index % static_cast<std::size_t>(base));
    index /= static_cast<std::size_t>(base);
  }
  return seq;
}

ExactDistribution::ExactDistribution(int vocab, int positions)
    : vocab_(vocab), positions_(positions) {
  if (vocab < 1 || vocab > kMaxVocab || positions < 1 || positions > kMaxPositions) {
    throw std::invalid_argument("ExactDistribution: need 1 <= K <= 4 and 1 <= D <= 4");
  }
  probs_.assign(static_cast<std::size_t>(std::pow(vocab, positions)), 0.0);
}

ExactDistribution::ExactDistribution(int vocab, int positions, std::vector<double> probs)
    : ExactDistribution(vocab, positions) {
  if (probs.size() != probs_.size()) {
    throw std::invalid_argument("ExactDistribution: table size mismatch");
  }
  probs_ = std::move(probs);
}

std::size_t ExactDistribution::encode(std::span<const int> sequence) const {
  return encode_sequence(sequence, vocab_);
}

std::vector<int> ExactDistribution::decode(std::size_t index) const {
  return decode_sequence(index, vocab_, positions_);
}

double ExactDistribution::total() const {
  return std::accumulate(probs_.begin(), probs_.end(), 0.0);
}

// --------------------------------------------------------- SyntheticDataset

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::correlated_bits:
      return "correlated_bits";
    case DatasetKind::mode_mixture:
      return "mode_mixture";
    case DatasetKind::markov_chain:
      return "markov_chain";
  }
  return "?";
}

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "correlated_bits") return DatasetKind::correlated_bits;
  if (s == "mode_mixture") return DatasetKind::mode_mixture;
  if (s == "markov_chain") return DatasetKind::markov_chain;
  throw std::invalid_argument("unknown dataset kind '" + s +
                              "' (expected correlated_bits|mode_mixture|markov_chain)");
}

namespace {

void check_simplex(const std::vector<double>& p, std::size_t n, const std::string& what) {
  if (p.size() != n) throw std::invalid_argument(what + ": expected " + std::to_string(n) + " entries");
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument(what + ": negative entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument(what + ": does not sum to 1");
}

int draw(const std::vector<double>& p, Rng& rng) {
  double u = rng.uniform();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (u < p[i]) return static_cast<int>(i);
    u -= p[i];
  }
  // Rounding left u marginally above the last cumulative sum.
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

}  // namespace

void DatasetSpec::validate() const {
  if (seq_len < 1 || vocab < 1) throw std::invalid_argument("dataset: seq_len and vocab must be >= 1");
  const auto k = static_cast<std::size_t>(vocab);
  switch (kind) {
    case DatasetKind::correlated_bits:
      break;
    case DatasetKind::mode_mixture:
      if (modes.empty()) throw std::invalid_argument("dataset: mode_mixture needs modes");
      for (const auto& m : modes) {
        if (m.size() != static_cast<std::size_t>(seq_len)) {
          throw std::invalid_argument("dataset: mode length differs from seq_len");
        }
        for (int v : m) {
          if (v < 0 || v >= vocab) throw std::invalid_argument("dataset: mode token out of range");
        }
      }
      check_simplex(mode_weights, modes.size(), "dataset.weights");
      if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) {
        throw std::invalid_argument("dataset: flip must be in [0, 1]");
      }
      break;
    case DatasetKind::markov_chain:
      check_simplex(initial, k, "dataset.initial");
      if (transition.size() != k) throw std::invalid_argument("dataset: transition must be K x K");
      for (const auto& row : transition) check_simplex(row, k, "dataset.transition row");
      break;
  }
}

SyntheticDataset::SyntheticDataset(DatasetSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

SyntheticDataset SyntheticDataset::correlated_bits(int seq_len, int vocab) {
  DatasetSpec spec;
  spec.kind = DatasetKind::correlated_bits;
  spec.seq_len = seq_len;
  spec.vocab = vocab;
  return SyntheticDataset(spec);
}

SyntheticDataset SyntheticDataset::default_mode_mixture() {
  DatasetSpec spec;
  spec.kind = DatasetKind::mode_mixture;
  spec.seq_len = 3;
  spec.vocab = 3;
  spec.modes = {{0, 1, 2}, {2, 0, 1}, {1, 2, 0}};
  spec.mode_weights = {0.5, 0.3, 0.2};
  spec.flip_prob = 0.02;
  return SyntheticDataset(spec);
}

SyntheticDataset SyntheticDataset::default_markov_chain() {
  DatasetSpec spec;
  spec.kind = DatasetKind::markov_chain;
  spec.seq_len = 4;
  spec.vocab = 3;
  spec.initial = {0.5, 0.3, 0.2};
  spec.transition = {{0.8, 0.1, 0.1}, {0.1, 0.1, 0.8}, {0.45, 0.45, 0.1}};
  return SyntheticDataset(spec);
}

TokenBatch SyntheticDataset::sample(std::size_t n, Rng& rng) const {
  const auto d = static_cast<std::size_t>(spec_.seq_len);
  const auto k = static_cast<std::uint64_t>(spec_.vocab);
  TokenBatch out(n, d);
  for (std::size_t b = 0; b < n; ++b) {
    switch (spec_.kind) {
      case DatasetKind::correlated_bits: {
        const int v = static_cast<int>(rng.below(k));
        for (std::size_t i = 0; i < d; ++i) out.at(b, i) = v;
        break;
      }
      case DatasetKind::mode_mixture: {
        const auto& mode = spec_.modes[static_cast<std::size_t>(draw(spec_.mode_weights, rng))];
        for (std::size_t i = 0; i < d; ++i) {
          const double u = rng.uniform();
          const int noise = static_cast<int>(rng.below(k));
          out.at(b, i) = u < spec_.flip_prob ? noise : mode[i];
        }
        break;
      }
      case DatasetKind::markov_chain: {
        int prev = draw(spec_.initial, rng);
        out.at(b, 0) = prev;
        for (std::size_t i = 1; i < d; ++i) {
          prev = draw(spec_.transition[static_cast<std::size_t>(prev)], rng);
          out.at(b, i) = prev;
        }
        break;
      }
    }
  }
  return out;
}

double SyntheticDataset::probability(std::span<const int> x) const {
  const double k = spec_.vocab;
  switch (spec_.kind) {
    case DatasetKind::correlated_bits:
      for (int v : x) {
        if (v != x[0]) return 0.0;
      }
      return 1.0 / k;
    case DatasetKind::mode_mixture: {
      double total = 0.0;
      for (std::size_t m = 0; m < spec_.modes.size(); ++m) {
        double p = spec_.mode_weights[m];
        for (std::size_t i = 0; i < x.size(); ++i) {
          p *= (x[i] == spec_.modes[m][i] ? 1.0 - spec_.flip_prob : 0.0) + spec_.flip_prob / k;
        }
        total += p;
      }
      return total;
    }
    case DatasetKind::markov_chain: {
      double p = spec_.initial[static_cast<std::size_t>(x[0])];
      for (std::size_t i = 1; i < x.size(); ++i) {
        p *= spec_.transition[static_cast<std::size_t>(x[i - 1])][static_cast<std::size_t>(x[i])];
      }
      return p;
    }
  }
  return 0.0;
}

ExactDistribution SyntheticDataset::exact() const {
  ExactDistribution q(spec_.vocab, spec_.seq_len);
  for (std::size_t i = 0; i < q.outcomes(); ++i) q[i] = probability(q.decode(i));
  return q;
}

}  // namespace ddlab
