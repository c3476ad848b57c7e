#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "claw/compo.hpp"
#include "claw/sequence_policy.hpp"
#include "support.hpp"

using namespace claw;
using namespace claw::compo;
using claw::testing::golden;

namespace {

Matrix<double> random_logits(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix<double> m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  }
  return m;
}

Trace random_trace(Index rows, Index cols, std::size_t len, std::mt19937_64& rng) {
  Trace t;
  for (std::size_t i = 0; i < len; ++i) {
    t.push_back({static_cast<Index>(rng() % static_cast<std::uint64_t>(rows)),
                 static_cast<Index>(rng() % static_cast<std::uint64_t>(cols))});
  }
  return t;
}

double central_difference(TabularPolicy<double> policy, const TabularPolicy<double>& ref,
                          std::span<const PreferenceExample> batch, double beta, Index r, Index c, double h) {
  const double x = policy.logits()(r, c);
  policy.logits()(r, c) = x + h;
  const double up = compo_loss(policy, ref, batch, beta);
  policy.logits()(r, c) = x - h;
  const double down = compo_loss(policy, ref, batch, beta);
  return (up - down) / (2 * h);
}

}  // namespace

TEST_CASE("loss at known margins") {
  const auto& g = golden().at("compo");
  CHECK(compo_loss_from_log_ratios(0.0, 0.0, 0.1) == doctest::Approx(g.at("ln2").get<double>()).epsilon(1e-15));
  CHECK(compo_loss_from_log_ratios(0.5, -0.5, 1.0) ==
        doctest::Approx(g.at("loss_margin_1").get<double>()).epsilon(1e-12));
  CHECK(compo_loss_from_log_ratios(0.5, -0.5, 2.0) ==
        doctest::Approx(g.at("loss_margin_2").get<double>()).epsilon(1e-12));
  CHECK_THROWS_AS(compo_loss_from_log_ratios(std::nan(""), 0.0, 0.1), NonFinite);
  CHECK_THROWS_AS(compo_loss_from_log_ratios(0.0, -std::numeric_limits<double>::infinity(), 0.1), NonFinite);
}

TEST_CASE("softplus and sigmoid are stable at the extremes") {
  CHECK(softplus(800.0) == 800.0);
  CHECK(softplus(-800.0) == 0.0);
  CHECK(std::isfinite(softplus(1e308)));
  CHECK(sigmoid(-800.0) == 0.0);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(log_sigmoid(0.0) == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("identical policy and reference give ln 2 for every pair") {
  std::mt19937_64 rng(3);
  TabularPolicy<double> p(random_logits(4, 6, rng));
  std::vector<PreferenceExample> batch;
  for (int i = 0; i < 10; ++i) batch.push_back({random_trace(4, 6, 3, rng), random_trace(4, 6, 5, rng)});
  CHECK(compo_loss(p, p, std::span<const PreferenceExample>(batch), 0.1) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(compo_loss(p, p, std::span<const PreferenceExample>(), 0.1), std::invalid_argument);
  CHECK_THROWS_AS(compo_loss(p, p, std::span<const PreferenceExample>(batch), 0.0), std::invalid_argument);
}

TEST_CASE("closed-form optimum") {
  Vector<double> ref = Vector<double>::Constant(4, 0.25);
  Vector<double> reward(4);
  reward << 1, 0, 0, 0;
  auto pi = closed_form_policy(ref, reward, 1.0);
  CHECK(pi(0) == doctest::Approx(golden().at("compo").at("closed_form_e_over_e_plus_3").get<double>()).epsilon(1e-14));
  CHECK(pi.sum() == doctest::Approx(1.0).epsilon(1e-15));

  Vector<double> skewed(3);
  skewed << 0.2, 0.5, 0.3;
  auto same = closed_form_policy(skewed, Vector<double>::Constant(3, 7.0), 0.1);
  CHECK((same - skewed).cwiseAbs().maxCoeff() < 1e-14);

  Vector<double> r3(3);
  r3 << 1, -2, 0.5;
  auto flat = closed_form_policy(skewed, r3, 1e9);
  CHECK((flat - skewed).cwiseAbs().maxCoeff() < 1e-8);

  // Zero reference mass stays zero; huge rewards do not overflow.
  Vector<double> support(3);
  support << 0.0, 0.5, 0.5;
  Vector<double> big(3);
  big << 1e4, 1e4, 0;
  auto sparse = closed_form_policy(support, big, 0.01);
  CHECK(sparse(0) == 0.0);
  CHECK(sparse(1) == doctest::Approx(1.0));
  CHECK_THROWS_AS(closed_form_policy(support, r3, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(closed_form_policy(support, Vector<double>::Zero(2), 1.0), std::invalid_argument);
}

TEST_CASE("closed form beats random challengers on the KL objective") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int draw = 0; draw < 5; ++draw) {
    Index k = 2 + static_cast<Index>(rng() % 8);
    Vector<double> ref(k), reward(k);
    for (Index i = 0; i < k; ++i) {
      ref(i) = u(rng);
      reward(i) = 4 * u(rng) - 2;
    }
    ref /= ref.sum();
    const double beta = 0.05 + u(rng);
    auto pi = closed_form_policy(ref, reward, beta);
    const double best = kl_objective(pi, ref, reward, beta);
    // The optimum value is beta * log Z.
    double z = 0;
    for (Index i = 0; i < k; ++i) z += ref(i) * std::exp(reward(i) / beta);
    CHECK(best == doctest::Approx(beta * std::log(z)).epsilon(1e-12));
    for (int c = 0; c < 200; ++c) {
      Vector<double> q(k);
      for (Index i = 0; i < k; ++i) q(i) = u(rng);
      q /= q.sum();
      CHECK(kl_objective(q, ref, reward, beta) <= best + 1e-12);
    }
  }
}

TEST_CASE("KL objective by exact summation") {
  Vector<double> pi(2), ref(2), reward(2);
  pi << 0.9, 0.1;
  ref << 0.5, 0.5;
  reward << 0, 0;
  CHECK(kl_objective(pi, ref, reward, 1.0) ==
        doctest::Approx(golden().at("compo").at("kl_two_outcome").get<double>()).epsilon(1e-14));
  Vector<double> outside(2);
  outside << 1.0, 0.0;
  CHECK_THROWS_AS(kl_objective(pi, outside, reward, 1.0), std::domain_error);
  // Zero policy mass outside the support is fine.
  CHECK(kl_objective(outside, outside, reward, 1.0) == 0.0);
}

TEST_CASE("analytic gradient matches finite differences") {
  std::mt19937_64 rng(41);
  for (auto scoring : {SequenceScoring::Sum, SequenceScoring::LengthNormalized}) {
    for (int draw = 0; draw < 10; ++draw) {
      const Index rows = 3, cols = 5;
      TabularPolicy<double> ref(random_logits(rows, cols, rng), scoring);
      TabularPolicy<double> p(random_logits(rows, cols, rng, 2.0), scoring);
      std::vector<PreferenceExample> batch;
      for (int i = 0; i < 3; ++i) {
        batch.push_back({random_trace(rows, cols, 1 + rng() % 4, rng), random_trace(rows, cols, 1 + rng() % 4, rng)});
      }
      const double beta = 0.1 + 0.9 * static_cast<double>(draw) / 10.0;
      std::span<const PreferenceExample> s(batch);
      auto grad = compo_grad(p, ref, s, beta);
      for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
          double fd = central_difference(p, ref, s, beta, r, c, 1e-5);
          CHECK(std::abs(grad(r, c) - fd) <= 1e-6 * std::max(std::abs(fd), 1e-3));
        }
      }
    }
  }
}

TEST_CASE("gradient of a single outcome pair has the documented form") {
  std::mt19937_64 rng(5);
  TabularPolicy<double> ref(random_logits(1, 4, rng));
  TabularPolicy<double> p(random_logits(1, 4, rng));
  const double beta = 0.5;
  std::vector<PreferenceExample> one{{outcome(0, 1), outcome(0, 3)}};
  auto grad = compo_grad(p, ref, std::span<const PreferenceExample>(one), beta);
  const double m = preference_margin(p, ref, one[0], beta);
  // Softmax terms cancel between y_w and y_l on a shared row.
  Matrix<double> expect = Matrix<double>::Zero(1, 4);
  expect(0, 1) = -beta * sigmoid(-m);
  expect(0, 3) = beta * sigmoid(-m);
  CHECK((grad - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("gradient vanishes at large margins") {
  Matrix<double> logits = Matrix<double>::Zero(1, 3);
  logits(0, 0) = 400;
  TabularPolicy<double> p(logits);
  TabularPolicy<double> ref(1, 3);
  std::vector<PreferenceExample> one{{outcome(0, 0), outcome(0, 1)}};
  auto grad = compo_grad(p, ref, std::span<const PreferenceExample>(one), 1.0);
  CHECK(grad.cwiseAbs().maxCoeff() < 1e-100);
  CHECK(compo_loss(p, ref, std::span<const PreferenceExample>(one), 1.0) < 1e-100);
}

TEST_CASE("implied reward is linear in beta and zero against itself") {
  std::mt19937_64 rng(8);
  TabularPolicy<double> ref(random_logits(2, 4, rng));
  TabularPolicy<double> p(random_logits(2, 4, rng));
  auto y = random_trace(2, 4, 3, rng);
  CHECK(implied_reward(p, ref, y, 0.3) == doctest::Approx(3.0 * implied_reward(p, ref, y, 0.1)));
  CHECK(implied_reward(ref, ref, y, 0.3) == 0.0);
  for (Index r = 0; r < 2; ++r) CHECK(p.distribution(r).sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("one pair trains monotonically") {
  TabularPolicy<double> init(1, 4);
  std::vector<PreferenceExample> data{{outcome(0, 0), outcome(0, 1)}};
  ComPOConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.steps = 100;
  cfg.batch_size = 1;
  auto result = train(init, std::span<const PreferenceExample>(data), cfg);
  REQUIRE(result.trace.size() == 101);
  CHECK(result.trace.front().loss == doctest::Approx(std::log(2.0)));
  CHECK(result.trace.front().mean_margin == 0.0);
  for (std::size_t i = 1; i < result.trace.size(); ++i) {
    CHECK(result.trace[i].loss < result.trace[i - 1].loss);
    CHECK(result.trace[i].mean_margin > result.trace[i - 1].mean_margin);
  }
  auto d = result.policy.distribution(0);
  CHECK(d(0) > 0.25);
  CHECK(d(1) < 0.25);
  CHECK(result.reference.logits() == init.logits());
}

TEST_CASE("training is deterministic for a seed and shuffles by seed") {
  std::mt19937_64 rng(12);
  TabularPolicy<double> init(4, 6);
  std::vector<PreferenceExample> data;
  for (int i = 0; i < 9; ++i) data.push_back({random_trace(4, 6, 2, rng), random_trace(4, 6, 2, rng)});
  ComPOConfig cfg;
  cfg.batch_size = 2;
  cfg.steps = 30;
  cfg.seed = 77;
  std::span<const PreferenceExample> s(data);
  auto a = train(init, s, cfg);
  auto b = train(init, s, cfg);
  CHECK(a.policy.logits() == b.policy.logits());
  for (std::size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].loss == b.trace[i].loss);
  cfg.seed = 78;
  auto c = train(init, s, cfg);
  CHECK(c.policy.logits() != a.policy.logits());
}

TEST_CASE("AdamW also lowers the loss") {
  TabularPolicy<double> init(2, 3);
  std::vector<PreferenceExample> data{{outcome(0, 0), outcome(0, 2)}, {outcome(1, 1), outcome(1, 0)}};
  ComPOConfig cfg;
  cfg.steps = 50;
  cfg.batch_size = 2;
  AdamW<double> opt(0.05);
  auto result = train(init, std::span<const PreferenceExample>(data), cfg, &opt);
  CHECK(result.trace.back().loss < result.trace.front().loss);
  CHECK(result.trace.back().mean_margin > 0.0);
}

TEST_CASE("training rejects bad input") {
  TabularPolicy<double> init(1, 2);
  std::vector<PreferenceExample> data{{outcome(0, 0), outcome(0, 1)}};
  std::span<const PreferenceExample> s(data);
  ComPOConfig cfg;
  CHECK_THROWS_AS(train(init, std::span<const PreferenceExample>(), cfg), std::invalid_argument);
  cfg.beta = -1;
  CHECK_THROWS_AS(train(init, s, cfg), std::invalid_argument);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(init, s, cfg), std::invalid_argument);

  cfg = {};
  Matrix<double> bad = Matrix<double>::Zero(1, 2);
  bad(0, 1) = std::nan("");
  try {
    train(TabularPolicy<double>(bad), s, cfg);
    FAIL("expected NonFinite");
  } catch (const NonFinite& e) {
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }

  // A learning rate that overflows the logits is reported with its step.
  cfg.learning_rate = 1e308;
  cfg.beta = 1e10;
  try {
    train(init, s, cfg);
    FAIL("expected NonFinite");
  } catch (const NonFinite& e) {
    REQUIRE(e.step().has_value());
    CHECK(*e.step() >= 1);
  }
}

TEST_CASE("shuffle_indices is a seeded permutation") {
  std::vector<std::size_t> a(20);
  std::iota(a.begin(), a.end(), 0);
  auto b = a;
  std::uint64_t sa = 5, sb = 5;
  shuffle_indices(a, sa);
  shuffle_indices(b, sb);
  CHECK(a == b);
  CHECK(sa == sb);
  CHECK(sa != 5);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> id(20);
  std::iota(id.begin(), id.end(), 0);
  CHECK(sorted == id);
  CHECK(a != id);
}

TEST_CASE("sequence table encodes previous-token contexts") {
  SequenceTable t(5);
  auto tr = t.encode(0, {2, 4});
  REQUIRE(tr.size() == 3);
  CHECK(t.cols() == 6);
  CHECK(t.rows() == 3);
  CHECK(t.contexts()[0] == std::pair<int, int>{0, 5});
  CHECK(tr[0].col == 2);
  CHECK(tr[1].col == 4);
  CHECK(tr[2].col == t.eos());
  auto again = t.encode(0, {2});
  CHECK(again[0].row == tr[0].row);
  CHECK(again[1].row == tr[1].row);
  CHECK(t.rows() == 3);
  CHECK(t.encode(1, {}).size() == 1);
  CHECK(t.rows() == 4);
  CHECK(SequenceTable::from_json(t.to_json()) == t);
}

TEST_CASE("policy files round-trip") {
  std::mt19937_64 rng(2);
  SequenceTable t(3);
  t.encode(0, {0, 1, 2});
  TabularPolicy<double> p(random_logits(t.rows(), t.cols(), rng));
  ComPOConfig cfg;
  cfg.beta = 0.25;
  cfg.seed = 9;
  auto j = policy_to_json(p, t, cfg);
  auto [back, table] = policy_from_json(json::parse(j.dump()));
  CHECK(back.logits() == p.logits());
  CHECK(table == t);
  CHECK(config_hash(cfg) == config_hash(compo_config_from_json(to_json(cfg))));
  ComPOConfig other = cfg;
  other.seed = 10;
  CHECK(config_hash(cfg) != config_hash(other));
}
