#include "ddlab/categorical.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "ddlab/errors.hpp"

namespace ddlab {
namespace {

struct AxisLayout {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisLayout layout_for(const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  if (rank == 0) throw std::invalid_argument("softmax: scalar input");
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw std::invalid_argument("softmax: axis out of range");
  AxisLayout l;
  for (int i = 0; i < a; ++i) l.outer *= shape[i];
  l.extent = shape[a];
  for (int i = a + 1; i < rank; ++i) l.inner *= shape[i];
  return l;
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericalError(std::string(what) + ": non-finite input");
}

template <typename RowFn>
Tensor apply_along(const Tensor& x, int axis, RowFn fn) {
  const auto l = layout_for(x.shape(), axis);
  Tensor out = x;
  std::vector<double> buf(l.extent);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.extent * l.inner + i;
      for (std::size_t k = 0; k < l.extent; ++k) buf[k] = x[base + k * l.inner];
      fn(std::span<double>(buf));
      for (std::size_t k = 0; k < l.extent; ++k) out[base + k * l.inner] = buf[k];
    }
  }
  return out;
}

}  // namespace

TokenBatch::TokenBatch(std::size_t batch, std::size_t positions, std::vector<int> tokens)
    : batch_(batch), positions_(positions), tokens_(std::move(tokens)) {
  if (tokens_.size() != batch * positions) {
    throw std::invalid_argument("TokenBatch: size mismatch");
  }
}

void softmax_inplace(std::span<double> row) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : row) m = std::max(m, v);
  double z = 0.0;
  for (auto& v : row) {
    v = std::exp(v - m);
    z += v;
  }
  for (auto& v : row) v /= z;
}

void log_softmax_inplace(std::span<double> row) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : row) m = std::max(m, v);
  double z = 0.0;
  for (double v : row) z += std::exp(v - m);
  const double lse = m + std::log(z);
  for (auto& v : row) v -= lse;
}

Tensor softmax(const Tensor& logits, int axis) {
  require_finite(logits, "softmax");
  return apply_along(logits, axis, softmax_inplace);
}

Tensor log_softmax(const Tensor& logits, int axis) {
  require_finite(logits, "log_softmax");
  return apply_along(logits, axis, log_softmax_inplace);
}

int categorical_sample_row(std::span<const double> probs, Rng& rng) {
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument("categorical_sample: negative or NaN probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("categorical_sample: row sums to " + std::to_string(sum));
  }
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < probs.size(); ++c) {
    // One Gumbel draw per category keeps the stream layout independent of the values.
    const double g = rng.gumbel();
    if (probs[c] <= 0.0) continue;
    const double score = std::log(probs[c]) + g;
    if (best < 0 || score > best_score) {
      best = static_cast<int>(c);
      best_score = score;
    }
  }
  return best;
}

TokenBatch categorical_sample(const Tensor& probs, Rng& rng) {
  if (probs.rank() != 3) throw std::invalid_argument("categorical_sample: expected [B, D, K]");
  TokenBatch out(probs.dim(0), probs.dim(1));
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    out[r] = categorical_sample_row(probs.row(r), rng);
  }
  return out;
}

Tensor cross_entropy(const Tensor& target, const Tensor& predicted_logprobs) {
  if (target.shape() != predicted_logprobs.shape()) {
    throw std::invalid_argument("cross_entropy: shape mismatch " + shape_str(target.shape()) +
                                " vs " + shape_str(predicted_logprobs.shape()));
  }
  Shape out_shape(target.shape().begin(), target.shape().end() - 1);
  Tensor out(out_shape);
  for (std::size_t r = 0; r < target.rows(); ++r) {
    const auto t = target.row(r);
    const auto lp = predicted_logprobs.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < t.size(); ++c) {
      if (t[c] != 0.0) acc -= t[c] * lp[c];
    }
    out[r] = acc;
  }
  return out;
}

Tensor one_hot(const TokenBatch& tokens, std::size_t categories) {
  Tensor out({tokens.batch(), tokens.positions(), categories});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int v = tokens[i];
    if (v < 0 || static_cast<std::size_t>(v) >= categories) {
      throw std::invalid_argument("one_hot: token " + std::to_string(v) + " out of range");
    }
    out[i * categories + static_cast<std::size_t>(v)] = 1.0;
  }
  return out;
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace ddlab
