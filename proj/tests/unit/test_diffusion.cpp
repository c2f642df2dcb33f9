#include <cmath>
#include <vector>

#include "doctest.h"
#include "ddlab/diffusion.hpp"
#include "ddlab/metrics.hpp"
#include "ddlab/models.hpp"

using namespace ddlab;

namespace {

// Bayes' rule with the forward kernels, independent of the library's
// closed form: q(z_s | z_t, x) ∝ q(z_t | z_s) q(z_s | x).
std::vector<double> bayes_posterior(const std::vector<double>& x, int z_t, double s, double t,
                                    const DiffusionProcess& p) {
  const int V = p.state_vocab();
  const double as = p.alpha(s), at = p.alpha(t);
  const double ats = as > 0 ? at / as : 0.0;
  std::vector<double> out(V, 0.0);
  double z = 0.0;
  for (int v = 0; v < V; ++v) {
    const double xv = v < p.vocab() ? x[v] : 0.0;
    const double prior = as * xv + (1 - as) * p.stationary(v);
    const double lik = ats * (v == z_t ? 1.0 : 0.0) + (1 - ats) * p.stationary(z_t);
    out[v] = prior * lik;
    z += out[v];
  }
  for (auto& v : out) v /= z;
  return out;
}

std::vector<double> frequencies(const TokenBatch& z, int V) {
  std::vector<double> f(V, 0.0);
  for (int v : z.tokens()) f[v] += 1.0;
  for (auto& v : f) v /= static_cast<double>(z.size());
  return f;
}

double tv(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return 0.5 * d;
}

const double kGrid[] = {0.0, 0.25, 0.5, 0.75, 1.0};

}  // namespace

TEST_CASE("schedules") {
  for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
    NoiseSchedule s(kind);
    CHECK(std::abs(s.alpha(0.0) - 1.0) < 1e-12);
    CHECK(std::abs(s.alpha(1.0)) < 1e-12);
    double prev = 2.0;
    for (int i = 0; i <= 100; ++i) {
      const double a = s.alpha(i / 100.0);
      CHECK(a < prev);
      prev = a;
      const double h = 1e-6, t = std::clamp(i / 100.0, h, 1 - h);
      CHECK(s.alpha_derivative(t) ==
            doctest::Approx((s.alpha(t + h) - s.alpha(t - h)) / (2 * h)).epsilon(1e-5));
    }
  }
  CHECK(loss_weight(LossWeighting::constant, NoiseSchedule{}, 0.3) == 1.0);
  CHECK(loss_weight(LossWeighting::mdlm, NoiseSchedule{}, 0.5) == doctest::Approx(2.0));
  CHECK(loss_weight(LossWeighting::mdlm, NoiseSchedule{}, 0.0) == 1000.0);
}

TEST_CASE("diffuse examples") {
  Rng rng(1);
  TokenBatch x(100, 3);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<int>(i % 2);
  DiffusionProcess masked(ProcessKind::masked, 2);
  DiffusionProcess uniform(ProcessKind::uniform, 2);
  CHECK(diffuse(x, 0.0, masked, rng) == x);
  CHECK(diffuse(x, 0.0, uniform, rng) == x);
  for (int v : diffuse(x, 1.0, masked, rng).tokens()) CHECK(v == masked.mask_id());
  CHECK_THROWS(diffuse(x, 1.2, masked, rng));
  CHECK_THROWS(diffuse(x, -0.1, masked, rng));

  TokenBatch big(1, 100000, 1);
  const auto z = diffuse(big, 0.5, uniform, rng);
  const double keep = frequencies(z, 2)[1];
  CHECK(std::abs(keep - 0.75) < 0.01);

  TokenBatch with_mask(1, 1, 2);
  CHECK_THROWS(diffuse(with_mask, 0.5, masked, rng));
  CHECK_THROWS(diffuse(with_mask, 0.5, uniform, rng));
}

TEST_CASE("posterior examples") {
  DiffusionProcess masked(ProcessKind::masked, 2);
  std::vector<double> out(3);
  // alpha_s = 0.75, alpha_t = 0.5 on the linear schedule.
  posterior_row(std::vector<double>{0.0, 1.0}, masked.mask_id(), 0.25, 0.5, masked, out);
  CHECK(out[1] == doctest::Approx(0.5));
  CHECK(out[2] == doctest::Approx(0.5));
  CHECK(out[0] == 0.0);
  // Already unmasked: point mass for every s.
  for (double s : {0.0, 0.3, 0.7}) {
    posterior_row(std::vector<double>{0.4, 0.6}, 1, s, 0.7, masked, out);
    CHECK(out == std::vector<double>{0.0, 1.0, 0.0});
  }
  // s = t: point mass on z_t.
  DiffusionProcess uniform(ProcessKind::uniform, 3);
  std::vector<double> o3(3);
  posterior_row(std::vector<double>{0.2, 0.3, 0.5}, 2, 0.4, 0.4, uniform, o3);
  CHECK(o3[2] == doctest::Approx(1.0));
  // Inconsistent pair: x puts no mass on the observed unmasked token at t = 1 - tiny.
  posterior_row(std::vector<double>{1.0, 0.0}, 0, 0.1, 0.6, masked, out);
  CHECK_THROWS(posterior_row(std::vector<double>{1.0, 0.0}, 1, 0.1, 0.6, masked, out));
  CHECK_THROWS(posterior_row(std::vector<double>{0.5, 0.5}, 0, 0.7, 0.6, masked, out));
}

TEST_CASE("posterior matches Bayes' rule and rows sum to one") {
  Rng rng(2);
  for (auto kind : {ProcessKind::masked, ProcessKind::uniform}) {
    for (auto sched : {ScheduleKind::linear, ScheduleKind::cosine}) {
      DiffusionProcess p(kind, 3, NoiseSchedule(sched));
      const int V = p.state_vocab();
      std::vector<double> out(V);
      for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> x(3);
        double z = 0.0;
        for (auto& v : x) z += (v = rng.uniform() + 1e-3);
        for (auto& v : x) v /= z;
        const double t = rng.uniform(0.01, 1.0);
        const double s = rng.uniform() * t;
        const int zt = static_cast<int>(rng.below(V));
        posterior_row(x, zt, s, t, p, out);
        double sum = 0.0;
        for (double v : out) sum += v;
        CHECK(std::abs(sum - 1.0) < 1e-10);
        const auto ref = bayes_posterior(x, zt, s, t, p);
        for (int v = 0; v < V; ++v) CHECK(std::abs(out[v] - ref[v]) < 1e-12);
      }
    }
  }
}

TEST_CASE("posterior_sample frequencies and edge cases") {
  Rng rng(3);
  const std::size_t N = 100000;
  for (auto kind : {ProcessKind::masked, ProcessKind::uniform}) {
    DiffusionProcess p(kind, 2);
    const int V = p.state_vocab();
    for (double t : kGrid) {
      for (double s : kGrid) {
        if (s > t) continue;
        for (int zt = 0; zt < V; ++zt) {
          const std::vector<double> x{0.0, 1.0};
          std::vector<double> expect(V);
          // Skip (x, z_t) pairs the forward process cannot produce.
          const double lik = p.alpha(t) * (zt == 1 ? 1.0 : 0.0) + (1 - p.alpha(t)) * p.stationary(zt);
          if (lik == 0.0) continue;
          posterior_row(x, zt, s, t, p, expect);
          TokenBatch xs(1, N, 1), zs(1, N, zt);
          const auto got = posterior_sample(xs, zs, s, t, p, rng);
          CHECK(tv(frequencies(got, V), expect) < 0.01);
        }
      }
    }
  }
  DiffusionProcess masked(ProcessKind::masked, 2);
  TokenBatch x(50, 3);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<int>(i % 2);
  auto zt = diffuse(x, 0.6, masked, rng);
  CHECK(posterior_sample(x, zt, 0.6, 0.6, masked, rng) == zt);
  CHECK(posterior_sample(x, zt, 0.0, 0.6, masked, rng) == x);
  // Carry-over is exact: unmasked positions never move.
  for (int rep = 0; rep < 20; ++rep) {
    const auto zs = posterior_sample(x, zt, 0.3, 0.6, masked, rng);
    for (std::size_t i = 0; i < zs.size(); ++i) {
      if (zt[i] != masked.mask_id()) CHECK(zs[i] == zt[i]);
    }
  }
}

TEST_CASE("marginal consistency and uniform stationarity") {
  Rng rng(4);
  const std::size_t N = 100000;
  for (auto kind : {ProcessKind::masked, ProcessKind::uniform}) {
    DiffusionProcess p(kind, 2);
    const int V = p.state_vocab();
    TokenBatch x(1, N, 0);
    for (double t : kGrid) {
      for (double s : kGrid) {
        if (s > t) continue;
        const auto zt = diffuse(x, t, p, rng);
        const auto zs = posterior_sample(x, zt, s, t, p, rng);
        std::vector<double> expect(V);
        for (int v = 0; v < V; ++v)
          expect[v] = p.alpha(s) * (v == 0 ? 1.0 : 0.0) + (1 - p.alpha(s)) * p.stationary(v);
        CHECK(tv(frequencies(zs, V), expect) < 0.01);
      }
    }
  }
  DiffusionProcess u(ProcessKind::uniform, 3);
  TokenBatch xpi(1, N);
  for (std::size_t i = 0; i < N; ++i) xpi[i] = static_cast<int>(rng.below(3));
  for (double t : kGrid) {
    CHECK(tv(frequencies(diffuse(xpi, t, u, rng), 3), {1.0 / 3, 1.0 / 3, 1.0 / 3}) < 0.01);
  }
}

TEST_CASE("carry_over and logit mods") {
  DiffusionProcess masked(ProcessKind::masked, 2);
  Tensor probs({1, 2, 2}, 0.5);
  TokenBatch z(1, 2, std::vector<int>{2, 1});
  const auto c = carry_over(probs, z, masked);
  CHECK(c.at(0, 0, 0) == 0.5);
  CHECK(c.at(0, 1, 1) == 1.0);
  CHECK(c.at(0, 1, 0) == 0.0);
  DiffusionProcess uniform(ProcessKind::uniform, 2);
  TokenBatch zu(1, 2, std::vector<int>{0, 1});
  CHECK(carry_over(probs, zu, uniform).vec() == probs.vec());

  CHECK(top_p_keep(std::vector<double>{0.5, 0.3, 0.2}, 0.7) == std::vector<bool>{true, true, false});
  CHECK(top_p_keep(std::vector<double>{0.25, 0.25, 0.5}, 0.6) ==
        std::vector<bool>{true, false, true});
  CHECK(top_p_keep(std::vector<double>{0.5, 0.3, 0.2}, 1.0) == std::vector<bool>{true, true, true});

  Tensor logits({1, 3}, std::vector<double>{std::log(0.5), std::log(0.3), std::log(0.2)});
  auto hard = modified_probs(logits, LogitMods{1.0, 0.7});
  CHECK(hard[0] == doctest::Approx(0.625));
  CHECK(hard[2] == 0.0);
  auto cold = modified_probs(logits, LogitMods{0.5, 1.0});
  CHECK(cold[0] == doctest::Approx(0.25 / (0.25 + 0.09 + 0.04)));
}

TEST_CASE("ancestral sampling") {
  Rng rng(5);
  DiffusionProcess masked(ProcessKind::masked, 3);
  SUBCASE("one step is a single forward pass on the all-MASK state") {
    int calls = 0;
    DenoiseFn model = [&](const TokenBatch& z, double t) {
      ++calls;
      CHECK(t == 1.0);
      for (int v : z.tokens()) CHECK(v == masked.mask_id());
      Tensor l({z.batch(), z.positions(), 3});
      for (std::size_t b = 0; b < z.batch(); ++b) l.at(b, 0, 2) = 50.0;
      return l;
    };
    const auto out = ancestral_sample(model, masked, 1, {}, 10, 2, rng);
    CHECK(calls == 1);
    for (std::size_t b = 0; b < 10; ++b) CHECK(out.at(b, 0) == 2);
  }
  SUBCASE("degenerate denoiser gives all zeros") {
    DenoiseFn point = [](const TokenBatch& z, double) {
      Tensor l({z.batch(), z.positions(), 3}, -1e3);
      for (std::size_t i = 0; i < z.size(); ++i) l[i * 3] = 0.0;
      return l;
    };
    for (int n : {1, 3, 8}) {
      for (auto kind : {ProcessKind::masked, ProcessKind::uniform}) {
        const auto out = ancestral_sample(point, DiffusionProcess(kind, 3), n, {}, 20, 3, rng);
        for (int v : out.tokens()) CHECK(v == 0);
      }
    }
  }
  SUBCASE("steps must be positive") {
    DenoiseFn any = [](const TokenBatch& z, double) { return Tensor({z.batch(), z.positions(), 3}); };
    CHECK_THROWS(ancestral_sample(any, masked, 0, {}, 1, 1, rng));
  }
}

TEST_CASE("exact chain distribution matches Monte Carlo sampling") {
  ModelConfig cfg;
  cfg.head_init_scale = 1.0;
  for (auto kind : {ProcessKind::masked, ProcessKind::uniform}) {
    cfg.has_mask = kind == ProcessKind::masked;
    Denoiser model(cfg, 17);
    DiffusionProcess p(kind, 2);
    for (int k : {1, 3}) {
      const auto exact = exact_chain_distribution(chain_model(model), p, 2, k);
      CHECK(exact.total() == doctest::Approx(1.0).epsilon(1e-12));
      Rng rng(6 + k);
      DenoiseFn fn = [&](const TokenBatch& z, double t) { return model.logits(z, t); };
      const auto samples = ancestral_sample(fn, p, k, {}, 200000, 2, rng);
      CHECK(total_variation(exact, empirical_distribution(samples, 2)) < 0.02);
    }
  }
}
