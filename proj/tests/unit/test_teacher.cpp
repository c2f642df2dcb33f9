#include <cmath>
#include <vector>

#include "doctest.h"
#include "ddlab/errors.hpp"
#include "ddlab/metrics.hpp"
#include "ddlab/teacher.hpp"

using namespace ddlab;

namespace {

double loss_value(Denoiser& m, const TokenBatch& x, const DiffusionProcess& p, Rng& rng) {
  Tape tape;
  return teacher_loss(tape, m, x, p, rng, LossWeighting::constant).value().item();
}

// One converged teacher shared by the tests below.
const TeacherResult& trained_teacher() {
  static const TeacherResult result = [] {
    TeacherTrainConfig cfg;
    cfg.eval_every = 500;
    return train_teacher(SyntheticDataset::correlated_bits(),
                         DiffusionProcess(ProcessKind::masked, 2), ModelConfig{}, cfg, Rng(1));
  }();
  return result;
}

}  // namespace

TEST_CASE("position weights") {
  DiffusionProcess masked(ProcessKind::masked, 2);
  TokenBatch z(2, 3, std::vector<int>{2, 0, 2, 1, 1, 1});
  const std::vector<double> t{0.5, 0.5};
  const auto w = position_weights(z, t, masked, LossWeighting::constant);
  CHECK(w.at(0, 0) == 0.5);
  CHECK(w.at(0, 1) == 0.0);
  CHECK(w.at(0, 2) == 0.5);
  for (std::size_t d = 0; d < 3; ++d) CHECK(w.at(1, d) == 0.0);
  const auto wm = position_weights(z, t, masked, LossWeighting::mdlm);
  CHECK(wm.at(0, 0) == doctest::Approx(1.0));
  DiffusionProcess uniform(ProcessKind::uniform, 2);
  TokenBatch zu(1, 4, 1);
  const auto wu = position_weights(zu, std::vector<double>{0.3}, uniform, LossWeighting::constant);
  for (double v : wu.vec()) CHECK(v == 0.25);
}

TEST_CASE("teacher loss examples") {
  Rng rng(1);
  SUBCASE("point mass on the true tokens gives zero loss") {
    ModelConfig c;
    c.head_init_scale = 0.0;
    Denoiser m(c, 1);
    m.params().values("head_b")[0] = 60.0;
    TokenBatch x(64, 2, 0);
    for (auto kind : {ProcessKind::masked, ProcessKind::uniform}) {
      CHECK(loss_value(m, x, DiffusionProcess(kind, 2), rng) < 1e-20);
    }
  }
  SUBCASE("uniform predictor gives ln K") {
    for (int k : {2, 3}) {
      ModelConfig c;
      c.vocab = k;
      c.head_init_scale = 0.0;
      Denoiser m(c, 2);
      const auto x = SyntheticDataset::correlated_bits(2, k).sample(64, rng);
      for (auto kind : {ProcessKind::masked, ProcessKind::uniform}) {
        c.has_mask = kind == ProcessKind::masked;
        Denoiser mk(c, 2);
        const double l = loss_value(mk, x, DiffusionProcess(kind, k), rng);
        // A masked batch with no masked position at all contributes 0 instead.
        CHECK(l == doctest::Approx(std::log(double(k))).epsilon(1e-12));
      }
    }
  }
  SUBCASE("zero training steps leave the uniform predictor") {
    ModelConfig c;
    c.head_init_scale = 0.0;
    TeacherTrainConfig cfg;
    cfg.steps = 0;
    auto res = train_teacher(SyntheticDataset::correlated_bits(),
                             DiffusionProcess(ProcessKind::masked, 2), c, cfg, Rng(3));
    const auto x = SyntheticDataset::correlated_bits().sample(64, rng);
    CHECK(loss_value(res.model, x, DiffusionProcess(ProcessKind::masked, 2), rng) ==
          doctest::Approx(std::log(2.0)));
    CHECK(res.log.empty());
  }
  SUBCASE("mismatched model is rejected") {
    ModelConfig c;
    c.vocab = 3;
    Denoiser m(c, 1);
    TokenBatch x(4, 2, 0);
    Tape tape;
    CHECK_THROWS(teacher_loss(tape, m, x, DiffusionProcess(ProcessKind::masked, 2), rng,
                              LossWeighting::constant));
  }
}

TEST_CASE("teacher loss gradient matches finite differences") {
  Rng data_rng(4);
  const auto x = SyntheticDataset::default_mode_mixture().sample(16, data_rng);
  for (auto kind : {ProcessKind::masked, ProcessKind::uniform}) {
    for (auto w : {LossWeighting::constant, LossWeighting::mdlm}) {
      ModelConfig c;
      c.seq_len = 3;
      c.vocab = 3;
      c.has_mask = kind == ProcessKind::masked;
      c.head_init_scale = 1.0;
      Denoiser m(c, 5);
      DiffusionProcess p(kind, 3);
      auto report = finite_diff_check(
          [&](Tape& tape) {
            Rng rng(77);  // same t and z_t on every evaluation
            return teacher_loss(tape, m, x, p, rng, w);
          },
          m.params());
      CHECK(report.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("trained teacher on correlated bits") {
  const auto& res = trained_teacher();
  const auto q = SyntheticDataset::correlated_bits().exact();
  DiffusionProcess p(ProcessKind::masked, 2);
  const double kl16 = kl(q, exact_chain_distribution(chain_model(res.model), p, 2, 16));
  const double kl1 = kl(q, exact_chain_distribution(chain_model(res.model), p, 2, 1));
  CHECK(kl16 <= 0.05);
  CHECK(std::abs(kl1 - std::log(2.0)) <= 0.05);
  // Close to the exact conditional means close to the factorized oracle chain.
  const double oracle64 = kl(q, factorized_oracle_chain(q, p, 64));
  CHECK(oracle64 <= 0.01);
  CHECK(kl(q, exact_chain_distribution(chain_model(res.model), p, 2, 64)) <= oracle64 + 0.05);

  // The periodic evaluation logged the same 16-step KL at the last step.
  REQUIRE(!res.log.empty());
  CHECK(res.log.back().has_eval);
  CHECK(res.log.back().eval_kl == doctest::Approx(kl16));

  SUBCASE("loss decreases over 100-step windows up to sampling noise") {
    std::vector<double> mean, se;
    for (std::size_t start = 0; start + 100 <= res.log.size(); start += 100) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t i = start; i < start + 100; ++i) {
        s += res.log[i].loss;
        s2 += res.log[i].loss * res.log[i].loss;
      }
      const double m = s / 100;
      mean.push_back(m);
      se.push_back(std::sqrt(std::max(0.0, s2 / 100 - m * m) / 100));
    }
    REQUIRE(mean.size() >= 10);
    CHECK(mean.back() < mean.front() - 0.1);
    for (std::size_t i = 1; i < mean.size(); ++i) {
      const double allowance = 3.0 * std::hypot(se[i], se[i - 1]);
      CHECK_MESSAGE(mean[i] <= mean[i - 1] + allowance, "window " << i);
    }
  }

  SUBCASE("outputs approach the exact conditional at reachable states") {
    double total = 0.0;
    int count = 0;
    for (double t : {0.1, 0.3, 0.5, 0.7, 0.9, 1.0}) {
      TokenBatch z(9, 2);
      for (int i = 0; i < 9; ++i) {
        z.at(i, 0) = i / 3;
        z.at(i, 1) = i % 3;
      }
      const auto exact = exact_conditional(q, z, t, p);
      const auto pred = softmax(res.model.logits(z, t));
      for (std::size_t b = 0; b < 9; ++b) {
        if (exact.evidence[b] <= 0.0) continue;
        for (std::size_t d = 0; d < 2; ++d) {
          // Unmasked positions are carried over by the sampler; only masked ones matter.
          if (z.at(b, d) != p.mask_id()) continue;
          total += 0.5 * (std::abs(pred.at(b, d, 0) - exact.probs.at(b, d, 0)) +
                          std::abs(pred.at(b, d, 1) - exact.probs.at(b, d, 1)));
          ++count;
        }
      }
    }
    REQUIRE(count > 0);
    CHECK(total / count < 0.05);
  }
}

TEST_CASE("training is deterministic and rejects divergence") {
  TeacherTrainConfig cfg;
  cfg.steps = 50;
  cfg.eval_every = 0;
  auto data = SyntheticDataset::correlated_bits();
  DiffusionProcess p(ProcessKind::masked, 2);
  auto a = train_teacher(data, p, ModelConfig{}, cfg, Rng(9));
  auto b = train_teacher(data, p, ModelConfig{}, cfg, Rng(9));
  CHECK(a.model.params().values() == b.model.params().values());
  REQUIRE(a.log.size() == 50);
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);

  cfg.lr = 1e300;
  cfg.steps = 5;
  CHECK_THROWS_AS(train_teacher(data, p, ModelConfig{}, cfg, Rng(9)), NumericalError);
}
