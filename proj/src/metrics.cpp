#include "ddlab/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ddlab {

namespace {

std::size_t ipow(std::size_t base, int exp) {
  std::size_t r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

}  // namespace

ExactDistribution exact_chain_distribution(const ChainModel& model,
                                           const DiffusionProcess& process, int positions,
                                           int k) {
  if (k < 1) throw std::invalid_argument("exact_chain_distribution: k must be >= 1");
  const int v = process.state_vocab();
  const int kv = process.vocab();
  const auto n_states = ipow(static_cast<std::size_t>(v), positions);
  if (n_states > kMaxChainStates) {
    throw std::invalid_argument("exact_chain_distribution: " + std::to_string(n_states) +
                                " states exceed the enumeration guard of " +
                                std::to_string(kMaxChainStates));
  }
  const auto d_count = static_cast<std::size_t>(positions);
  std::vector<double> mass(n_states, 0.0);
  if (process.is_masked()) {
    std::vector<int> all_mask(d_count, process.mask_id());
    mass[encode_sequence(all_mask, v)] = 1.0;
  } else {
    for (auto& m : mass) m = 1.0 / static_cast<double>(n_states);
  }

  std::vector<double> onehot(static_cast<std::size_t>(kv));
  // post[(z * K + c) * V + j] = q(z_s = j | z_t = z, x = e_c); valid[z * K + c] marks
  // pairs with nonzero likelihood.
  std::vector<double> post(static_cast<std::size_t>(v * kv * v));
  std::vector<char> valid(static_cast<std::size_t>(v * kv));
  std::vector<std::vector<std::pair<int, double>>> trans(d_count);

  for (int i = k; i >= 1; --i) {
    const double t = static_cast<double>(i) / k;
    const double s = static_cast<double>(i - 1) / k;
    const double alpha_t = process.alpha(t);
    for (int z = 0; z < v; ++z) {
      for (int c = 0; c < kv; ++c) {
        const double lik = alpha_t * (z == c ? 1.0 : 0.0) + (1.0 - alpha_t) * process.stationary(z);
        const auto zc = static_cast<std::size_t>(z * kv + c);
        valid[zc] = (lik >= 1e-30 || s == t) ? 1 : 0;
        if (!valid[zc]) continue;
        std::fill(onehot.begin(), onehot.end(), 0.0);
        onehot[static_cast<std::size_t>(c)] = 1.0;
        posterior_row(onehot, z, s, t, process,
                      std::span<double>(post).subspan(zc * static_cast<std::size_t>(v),
                                                      static_cast<std::size_t>(v)));
      }
    }

    std::vector<std::size_t> active;
    for (std::size_t a = 0; a < n_states; ++a) {
      if (mass[a] > 0.0) active.push_back(a);
    }
    TokenBatch states(active.size(), d_count);
    for (std::size_t b = 0; b < active.size(); ++b) {
      const auto seq = decode_sequence(active[b], v, positions);
      for (std::size_t d = 0; d < d_count; ++d) states.at(b, d) = seq[d];
    }
    auto comps = model(states, t);
    if (comps.empty()) throw std::invalid_argument("exact_chain_distribution: model gave no components");
    const double comp_weight = 1.0 / static_cast<double>(comps.size());

    std::vector<double> next(n_states, 0.0);
    std::vector<double> row(static_cast<std::size_t>(v));
    for (auto& comp : comps) {
      const Tensor probs = carry_over(comp, states, process);
      for (std::size_t b = 0; b < active.size(); ++b) {
        for (std::size_t d = 0; d < d_count; ++d) {
          const int z = states.at(b, d);
          std::fill(row.begin(), row.end(), 0.0);
          const auto p = probs.row(b * d_count + d);
          for (int c = 0; c < kv; ++c) {
            const double pc = p[static_cast<std::size_t>(c)];
            if (pc == 0.0) continue;
            const auto zc = static_cast<std::size_t>(z * kv + c);
            if (!valid[zc]) {
              throw std::logic_error("exact_chain_distribution: model put mass on an "
                                     "inconsistent clean token");
            }
            for (int j = 0; j < v; ++j) {
              row[static_cast<std::size_t>(j)] += pc * post[zc * static_cast<std::size_t>(v) + j];
            }
          }
          trans[d].clear();
          for (int j = 0; j < v; ++j) {
            if (row[static_cast<std::size_t>(j)] > 0.0) trans[d].emplace_back(j, row[static_cast<std::size_t>(j)]);
          }
        }
        // Enumerate the product of per-position transitions.
        const double base = mass[active[b]] * comp_weight;
        std::vector<std::size_t> pick(d_count, 0);
        while (true) {
          double w = base;
          std::size_t idx = 0;
          for (std::size_t d = 0; d < d_count; ++d) {
            const auto& [tok, pr] = trans[d][pick[d]];
            w *= pr;
            idx = idx * static_cast<std::size_t>(v) + static_cast<std::size_t>(tok);
          }
          next[idx] += w;
          std::size_t d = d_count;
          while (d > 0) {
            --d;
            if (++pick[d] < trans[d].size()) break;
            pick[d] = 0;
            if (d == 0) goto done;
          }
          if (d_count == 0) break;
        }
      done:;
      }
    }
    mass = std::move(next);
  }

  ExactDistribution out(kv, positions);
  double stray = 0.0;
  for (std::size_t a = 0; a < n_states; ++a) {
    if (mass[a] == 0.0) continue;
    const auto seq = decode_sequence(a, v, positions);
    bool clean = true;
    for (int tok : seq) clean = clean && tok < kv;
    if (clean) {
      out[encode_sequence(seq, kv)] += mass[a];
    } else {
      stray += mass[a];
    }
  }
  if (stray > 1e-12) {
    throw std::logic_error("exact_chain_distribution: " + std::to_string(stray) +
                           " mass left on noisy states at t = 0");
  }
  return out;
}

ChainModel chain_model(const Denoiser& model, const LogitMods& mods) {
  return [&model, mods](const TokenBatch& states, double t) {
    return std::vector<Tensor>{modified_probs(model.logits(states, t), mods)};
  };
}

ChainModel chain_model(const Generator& model, int noise_draws, std::uint64_t seed,
                       const LogitMods& mods) {
  const auto width = static_cast<std::size_t>(model.noise_width());
  const int draws = width == 0 ? 1 : noise_draws;
  if (draws < 1) throw std::invalid_argument("chain_model: noise_draws must be >= 1");
  Rng rng(seed);
  std::vector<std::vector<double>> eps(static_cast<std::size_t>(draws));
  for (auto& e : eps) {
    e.resize(width);
    for (auto& x : e) x = rng.normal();
  }
  return [&model, mods, eps, width](const TokenBatch& states, double t) {
    std::vector<Tensor> comps;
    for (const auto& e : eps) {
      Tensor noise({states.batch(), width});
      for (std::size_t b = 0; b < states.batch(); ++b) {
        for (std::size_t j = 0; j < width; ++j) noise.at(b, j) = e[j];
      }
      comps.push_back(modified_probs(model.logits(states, t, noise), mods));
    }
    return comps;
  };
}

double kl(const ExactDistribution& q, const ExactDistribution& p) {
  if (q.outcomes() != p.outcomes()) throw std::invalid_argument("kl: support mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < q.outcomes(); ++i) {
    if (q[i] <= 0.0) continue;
    acc += q[i] * std::log(q[i] / std::max(p[i], kKlFloor));
  }
  return std::max(acc, 0.0);
}

double total_variation(const ExactDistribution& q, const ExactDistribution& p) {
  if (q.outcomes() != p.outcomes()) throw std::invalid_argument("tv: support mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < q.outcomes(); ++i) acc += std::abs(q[i] - p[i]);
  return 0.5 * acc;
}

ExactConditional exact_conditional(const ExactDistribution& q, const TokenBatch& z, double t,
                                   const DiffusionProcess& process) {
  const int k = q.vocab();
  const auto d_count = static_cast<std::size_t>(q.positions());
  if (process.vocab() != k || z.positions() != d_count) {
    throw std::invalid_argument("exact_conditional: shape mismatch");
  }
  const double alpha = process.alpha(t);
  ExactConditional out{Tensor({z.batch(), d_count, static_cast<std::size_t>(k)}),
                       std::vector<double>(z.batch(), 0.0)};
  for (std::size_t b = 0; b < z.batch(); ++b) {
    double total = 0.0;
    for (std::size_t x = 0; x < q.outcomes(); ++x) {
      if (q[x] == 0.0) continue;
      const auto seq = q.decode(x);
      double w = q[x];
      for (std::size_t d = 0; d < d_count && w > 0.0; ++d) {
        const int zd = z.at(b, d);
        w *= alpha * (zd == seq[d] ? 1.0 : 0.0) + (1.0 - alpha) * process.stationary(zd);
      }
      if (w == 0.0) continue;
      total += w;
      for (std::size_t d = 0; d < d_count; ++d) out.probs.at(b, d, static_cast<std::size_t>(seq[d])) += w;
    }
    out.evidence[b] = total;
    for (std::size_t d = 0; d < d_count; ++d) {
      for (int c = 0; c < k; ++c) {
        auto& p = out.probs.at(b, d, static_cast<std::size_t>(c));
        p = total > 0.0 ? p / total : 1.0 / k;
      }
    }
  }
  return out;
}

ExactDistribution factorized_oracle_chain(const ExactDistribution& q,
                                          const DiffusionProcess& process, int k) {
  ChainModel oracle = [&](const TokenBatch& states, double t) {
    return std::vector<Tensor>{exact_conditional(q, states, t, process).probs};
  };
  return exact_chain_distribution(oracle, process, q.positions(), k);
}

ExactDistribution empirical_distribution(const TokenBatch& samples, int vocab) {
  ExactDistribution out(vocab, static_cast<int>(samples.positions()));
  const double w = 1.0 / static_cast<double>(samples.batch());
  for (std::size_t b = 0; b < samples.batch(); ++b) out[out.encode(samples.sequence(b))] += w;
  return out;
}

double sample_entropy(const TokenBatch& samples, int vocab) {
  if (samples.batch() < 1000) {
    throw std::invalid_argument("sample_entropy: need at least 1000 samples, got " +
                                std::to_string(samples.batch()));
  }
  std::vector<double> counts(static_cast<std::size_t>(vocab), 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) counts.at(static_cast<std::size_t>(samples[i])) += 1.0;
  for (auto& c : counts) c /= static_cast<double>(samples.size());
  return entropy(counts);
}

namespace {

double mean_row_entropy(const Tensor& logits) {
  const Tensor probs = softmax(logits, -1);
  double acc = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) acc += entropy(probs.row(r));
  return acc / static_cast<double>(probs.rows());
}

}  // namespace

double generator_output_entropy(const Generator& generator, const DiffusionProcess& process,
                                int n_probes, Rng& rng) {
  const auto n = static_cast<std::size_t>(n_probes);
  const auto z = prior_sample(process, n, static_cast<std::size_t>(generator.config().seq_len), rng);
  const Tensor noise = generator.draw_noise(n, rng);
  return mean_row_entropy(generator.logits(z, 1.0, noise));
}

double generator_output_entropy(const Denoiser& model, const DiffusionProcess& process,
                                int n_probes, Rng& rng) {
  const auto n = static_cast<std::size_t>(n_probes);
  const auto z = prior_sample(process, n, static_cast<std::size_t>(model.config().seq_len), rng);
  return mean_row_entropy(model.logits(z, 1.0));
}

double generative_perplexity(const ReferenceModel& ref, const TokenBatch& samples) {
  double nll = 0.0;
  for (std::size_t b = 0; b < samples.batch(); ++b) nll -= ref.log_prob(samples.sequence(b));
  return std::exp(nll / static_cast<double>(samples.size()));
}

GradientMomentResult gradient_moment(const ReferenceModel& ref, const BatchSampler& gen_sampler,
                                     const BatchSampler& data_sampler,
                                     const GradientMomentOptions& options, Rng& rng) {
  if (options.n_pairs < 2) throw std::invalid_argument("gradient_moment: need >= 2 pairs");
  GradientMomentResult result;
  const std::size_t n = ref.num_params();
  std::vector<double> data_mean(n, 0.0);
  auto diff = [&](const TokenBatch& g, const TokenBatch& q) {
    auto gg = ref.mean_log_prob_grad(g);
    const auto gq = ref.mean_log_prob_grad(q);
    for (std::size_t j = 0; j < n; ++j) {
      gg[j] -= gq[j];
      data_mean[j] += gq[j];
    }
    return gg;
  };
  for (int p = 0; p < options.n_pairs; ++p) {
    const auto xg1 = gen_sampler(options.batch_size, rng);
    const auto xq1 = data_sampler(options.batch_size, rng);
    const auto xg2 = gen_sampler(options.batch_size, rng);
    const auto xq2 = data_sampler(options.batch_size, rng);
    const auto d1 = diff(xg1, xq1);
    const auto d2 = diff(xg2, xq2);
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += d1[j] * d2[j];
    result.pair_values.push_back(dot);
  }
  const double m = static_cast<double>(result.pair_values.size());
  double mean = 0.0;
  for (double v : result.pair_values) mean += v;
  mean /= m;
  double var = 0.0;
  for (double v : result.pair_values) var += (v - mean) * (v - mean);
  var /= (m - 1.0);
  result.estimate = mean;
  result.stderr_ = std::sqrt(var / m);
  double norm = 0.0;
  for (double g : data_mean) norm += (g / (2.0 * m)) * (g / (2.0 * m));
  result.data_grad_norm = std::sqrt(norm);
  result.ref_unconverged = result.data_grad_norm > options.unconverged_threshold;
  return result;
}

}  // namespace ddlab
