#include "ddlab/reference_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ddlab/autodiff.hpp"

namespace ddlab {

ReferenceModel::ReferenceModel(int vocab, int positions) : vocab_(vocab), positions_(positions) {
  if (vocab < 1 || positions < 1) throw std::invalid_argument("ReferenceModel: bad shape");
  std::size_t offset = 0;
  std::size_t prefixes = 1;
  for (int d = 0; d < positions; ++d) {
    position_offsets_.push_back(offset);
    offset += prefixes * static_cast<std::size_t>(vocab);
    prefixes *= static_cast<std::size_t>(vocab);
    if (offset > 1'000'000) throw std::invalid_argument("ReferenceModel: table too large");
  }
  params_.assign(offset, 0.0);
}

std::size_t ReferenceModel::table_offset(std::span<const int> prefix) const {
  std::size_t p = 0;
  for (int v : prefix) p = p * static_cast<std::size_t>(vocab_) + static_cast<std::size_t>(v);
  return position_offsets_[prefix.size()] + p * static_cast<std::size_t>(vocab_);
}

std::vector<double> ReferenceModel::conditional(std::span<const int> prefix) const {
  const auto off = table_offset(prefix);
  std::vector<double> row(params_.begin() + static_cast<std::ptrdiff_t>(off),
                          params_.begin() + static_cast<std::ptrdiff_t>(off) + vocab_);
  softmax_inplace(row);
  return row;
}

double ReferenceModel::log_prob(std::span<const int> x) const {
  if (static_cast<int>(x.size()) != positions_) {
    throw std::invalid_argument("ReferenceModel: sequence length mismatch");
  }
  double lp = 0.0;
  std::vector<double> row;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const auto off = table_offset(x.first(d));
    row.assign(params_.begin() + static_cast<std::ptrdiff_t>(off),
               params_.begin() + static_cast<std::ptrdiff_t>(off) + vocab_);
    log_softmax_inplace(row);
    lp += row[static_cast<std::size_t>(x[d])];
  }
  return lp;
}

void ReferenceModel::add_log_prob_grad(std::span<const int> x, double weight,
                                       std::span<double> grad) const {
  if (grad.size() != params_.size()) throw std::invalid_argument("ReferenceModel: grad size");
  for (std::size_t d = 0; d < x.size(); ++d) {
    const auto off = table_offset(x.first(d));
    const auto p = conditional(x.first(d));
    for (std::size_t c = 0; c < p.size(); ++c) {
      grad[off + c] += weight * ((static_cast<int>(c) == x[d] ? 1.0 : 0.0) - p[c]);
    }
  }
}

std::vector<double> ReferenceModel::mean_log_prob_grad(const TokenBatch& batch) const {
  std::vector<double> g(params_.size(), 0.0);
  const double w = 1.0 / static_cast<double>(batch.batch());
  for (std::size_t b = 0; b < batch.batch(); ++b) add_log_prob_grad(batch.sequence(b), w, g);
  return g;
}

void ReferenceModel::train(const BatchSampler& data, int steps, std::size_t batch,
                           const AdamConfig& adam, Rng& rng) {
  ParamStore store;
  store.add("table", {params_.size()});
  store.values() = params_;
  AdamState state;
  for (int i = 0; i < steps; ++i) {
    params_ = store.values();
    const auto g = mean_log_prob_grad(data(batch, rng));
    // Ascent on log-likelihood.
    for (std::size_t j = 0; j < g.size(); ++j) store.grads()[j] = -g[j];
    AdamConfig cfg = adam;
    cfg.lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * i / steps));
    adam_step(store, cfg, state);
  }
  params_ = store.values();
}

std::vector<int> ReferenceModel::argmax_sequence() const {
  std::vector<int> x;
  for (int d = 0; d < positions_; ++d) {
    const auto p = conditional(x);
    x.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
  }
  return x;
}

}  // namespace ddlab
