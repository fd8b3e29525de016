#include "cmdp/experiment.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <array>
#include <sstream>

using namespace cmdp;
using testing_support::random_policy;
using testing_support::small_cmdp;
using testing_support::SyntheticRegression;

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  double se() const { return std::sqrt(var / n); }
  double n = 0.0;
};

template <class F>
Moments moments(int n, F&& draw) {
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = draw(i);
    sum += x;
    sq += x * x;
  }
  Moments m;
  m.n = n;
  m.mean = sum / n;
  m.var = (sq - n * m.mean * m.mean) / (n - 1);
  return m;
}

Cmdp one_state(double gamma) {
  Cmdp m = Cmdp::zeros(1, 1, gamma, 0.5);
  m.transition(0, 0) = 1.0;
  m.reward(0, 0) = 1.0;
  m.utility(0, 0) = 1.0;
  m.initial_dist(0) = 1.0;
  return m;
}

}  // namespace

TEST(RngStream, ReplaysBitExactly) {
  RngStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
  bool differs_c = false, differs_d = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a();
    EXPECT_EQ(x, b());
    differs_c |= x != c();
    differs_d |= x != d();
  }
  EXPECT_TRUE(differs_c);
  EXPECT_TRUE(differs_d);
  EXPECT_EQ(a.counter(), 1000u);
}

TEST(RngStream, DeriveAndForkAreDeterministic) {
  auto s1 = RngStream::derive(5, {1, 2, 0});
  auto s2 = RngStream::derive(5, {1, 2, 0});
  auto s3 = RngStream::derive(5, {1, 2, 1});
  auto s4 = RngStream::derive(5, {2, 1, 0});
  EXPECT_EQ(s1.stream_id(), s2.stream_id());
  EXPECT_NE(s1.stream_id(), s3.stream_id());
  EXPECT_NE(s1.stream_id(), s4.stream_id());
  const auto before = s1.counter();
  RngStream f1 = s1.fork(1), f1b = s1.fork(1), f2 = s1.fork(2);
  EXPECT_EQ(s1.counter(), before);
  EXPECT_EQ(f1(), f1b());
  EXPECT_NE(f1.stream_id(), f2.stream_id());
}

TEST(RngStream, UniformAndCategoricalBehave) {
  RngStream rng(1, 1);
  Vector w(3);
  w << 0.2, 0.0, 0.8;
  std::array<int, 3> counts{};
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    ++counts[rng.categorical(w)];
  }
  EXPECT_GE(lo, 0.0);
  EXPECT_LT(hi, 1.0);
  EXPECT_EQ(counts[1], 0);
  EXPECT_NEAR(counts[0] / 1e5, 0.2, 0.005);
}

TEST(Rollout, ZeroDiscountTakesExactlyOneStep) {
  std::mt19937_64 gen(1);
  Cmdp m = small_cmdp(gen, 3, 2, 0.0);
  TabularPolicy pi = random_policy(gen, 3, 2);
  RngStream rng(3, 0);
  for (int i = 0; i < 200; ++i) {
    const int s = i % 3, a = (i / 3) % 2;
    auto est = rollout_geometric(m, pi, s, a, rng);
    EXPECT_EQ(est.length, 1);
    EXPECT_EQ(est.value_r, m.reward(s, a));
    EXPECT_EQ(est.value_g, m.utility(s, a));
  }
}

TEST(Rollout, ZeroChannelGivesZero) {
  std::mt19937_64 gen(2);
  Cmdp m = small_cmdp(gen, 3, 2, 0.9);
  m.utility.setZero();
  TabularPolicy pi = random_policy(gen, 3, 2);
  RngStream rng(4, 0);
  for (int i = 0; i < 500; ++i) {
    auto est = rollout_geometric(m, pi, i % 3, -1, rng);
    EXPECT_EQ(est.value_g, 0.0);
    EXPECT_GE(est.value_r, 0.0);
    EXPECT_LE(est.value_r, static_cast<double>(est.length));
  }
}

TEST(Rollout, MeanMatchesExactValue) {
  std::mt19937_64 gen(3);
  Cmdp m = small_cmdp(gen, 4, 3, 0.9);
  TabularPolicy pi = random_policy(gen, 4, 3);
  auto vals = evaluate_policy(m, pi);
  RngStream rng(5, 0);
  const int n = 20000;
  for (int s = 0; s < 4; ++s) {
    auto mo = moments(n, [&](int) { return rollout_geometric(m, pi, s, -1, rng).value_r; });
    EXPECT_NEAR(mo.mean, vals.v_r(s), 3.0 * (1.0 / (1.0 - m.discount)) / std::sqrt(n));
  }
}

TEST(Rollout, LengthIsGeometric) {
  std::mt19937_64 gen(4);
  Cmdp m = small_cmdp(gen, 3, 2, 0.9);
  TabularPolicy pi = random_policy(gen, 3, 2);
  RngStream rng(6, 0);
  auto mo = moments(50000, [&](int) { return static_cast<double>(rollout_geometric(m, pi, 0, -1, rng).length); });
  EXPECT_NEAR(mo.mean, 1.0 / (1.0 - m.discount), 0.05 / (1.0 - m.discount));
}

TEST(Rollout, CapTruncatesLength) {
  std::mt19937_64 gen(5);
  Cmdp m = small_cmdp(gen, 3, 2, 0.99);
  TabularPolicy pi = random_policy(gen, 3, 2);
  RngStream rng(7, 0);
  for (int i = 0; i < 200; ++i) EXPECT_LE(rollout_geometric(m, pi, 0, 1, rng, 5).length, 5);
}

TEST(UnbiasedEstimate, SingleStateQIsTwo) {
  Cmdp m = one_state(0.5);
  TabularPolicy pi(Matrix::Ones(1, 1));
  RngStream rng(8, 0);
  auto mo = moments(50000, [&](int) { return unbiased_estimate(EstimateKind::Q, m, pi, Matrix::Ones(1, 1), rng).value_r; });
  EXPECT_NEAR(mo.mean, 2.0, 3.0 * mo.se());
}

TEST(UnbiasedEstimate, SingleActionAdvantageHasMeanZero) {
  std::mt19937_64 gen(6);
  Cmdp m = small_cmdp(gen, 3, 1, 0.9);
  TabularPolicy pi(Matrix::Ones(3, 1));
  RngStream rng(9, 0);
  Matrix nu0 = Matrix::Constant(3, 1, 1.0 / 3.0);
  for (Channel c : {Channel::reward, Channel::utility}) {
    auto mo = moments(50000, [&](int) { return unbiased_estimate(EstimateKind::A, m, pi, nu0, rng).value(c); });
    EXPECT_NEAR(mo.mean, 0.0, 3.0 * mo.se());
  }
}

TEST(UnbiasedEstimate, KindsMatchExactValuesWithBoundedVariance) {
  std::mt19937_64 gen(7);
  Cmdp m = small_cmdp(gen, 3, 2, 0.9);
  TabularPolicy pi = random_policy(gen, 3, 2, 0.2);
  Matrix nu0 = uniform_pairs(m);
  auto vals = evaluate_policy(m, pi);
  RngStream rng(10, 0);
  const int n = 50000;

  auto v = moments(n, [&](int) { return unbiased_estimate(EstimateKind::V, m, pi, nu0, rng).value_g; });
  EXPECT_NEAR(v.mean, vals.at(Channel::utility, m.initial_dist), 3.0 * v.se());
  EXPECT_LE(v.var, 1.05 / std::pow(1.0 - m.discount, 2));

  // Q and A: importance-free check by conditioning on the sampled anchor.
  for (EstimateKind kind : {EstimateKind::Q, EstimateKind::A}) {
    auto mo = moments(n, [&](int) {
      auto e = unbiased_estimate(kind, m, pi, nu0, rng);
      const Matrix& ex = kind == EstimateKind::Q ? vals.q_r : vals.adv_r;
      return e.value_r - ex(e.state, e.action);
    });
    EXPECT_NEAR(mo.mean, 0.0, 3.0 * mo.se());
    if (kind == EstimateKind::Q) {
      EXPECT_LE(mo.var, 1.05 / std::pow(1.0 - m.discount, 2));
    }
  }
}

TEST(UnbiasedEstimate, AnchorFollowsDiscountedVisitation) {
  std::mt19937_64 gen(8);
  Cmdp m = small_cmdp(gen, 4, 3, 0.9);
  TabularPolicy pi = random_policy(gen, 4, 3);
  Matrix nu0 = random_policy(gen, 4, 3).prob / 4.0;
  Matrix exact = state_action_visitation(m, pi, nu0).nu;
  Matrix counts = Matrix::Zero(4, 3);
  RngStream rng(11, 0);
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    auto e = unbiased_estimate(EstimateKind::Q, m, pi, nu0, rng);
    counts(e.state, e.action) += 1.0;
  }
  EXPECT_LE(0.5 * (counts / n - exact).cwiseAbs().sum(), 0.02);
}

TEST(ProjectedSgd, SingleStepAverageIsFirstIterate) {
  SgdConfig cfg{1, 0.5, 2.0};
  ProjectedSgd sgd(2, cfg);
  Vector x(2);
  x << 1.0, 2.0;
  sgd.step(x, 3.0);
  Vector expected = project_ball(-cfg.alpha(0) * (2.0 * (0.0 - 3.0) * x), 0.5);
  EXPECT_EQ((sgd.average() - expected).norm(), 0.0);
  EXPECT_EQ((sgd.iterate() - expected).norm(), 0.0);
  EXPECT_NEAR(sgd.average().norm(), 0.5, 1e-15);
}

TEST(ProjectedSgd, ZeroTargetStaysNearZero) {
  auto reg = SyntheticRegression::standard();
  reg.w_star.setZero();
  reg.noise = 0.0;
  ProjectedSgd sgd(2, SgdConfig{5000, 2.0, reg.sigma_f()});
  std::mt19937_64 gen(9);
  for (int k = 0; k < 5000; ++k) {
    auto [x, y] = reg.draw(gen);
    sgd.step(x, y);
  }
  EXPECT_LE(sgd.average().norm(), 0.05);
}

TEST(ProjectedSgd, ExcessObjectiveWithinRate) {
  const auto reg = SyntheticRegression::standard();
  const double radius = 2.0;
  for (int K : {100, 1000}) {
    double mean_excess = 0.0;
    for (int seed = 0; seed < 50; ++seed) {
      std::mt19937_64 gen(1000 + seed);
      ProjectedSgd sgd(2, SgdConfig{K, radius, reg.sigma_f()});
      for (int k = 0; k < K; ++k) {
        auto [x, y] = reg.draw(gen);
        sgd.step(x, y);
      }
      mean_excess += reg.excess(sgd.average()) / 50.0;
    }
    EXPECT_LE(mean_excess, 2.0 * 2.0 * reg.g_squared(radius) / (reg.sigma_f() * (K + 1))) << "K " << K;
  }
}

TEST(ProjectedSgd, RejectsInvalidConfig) {
  EXPECT_THROW(ProjectedSgd(2, SgdConfig{0, 1.0, 1.0}), Error);
  EXPECT_THROW(ProjectedSgd(2, SgdConfig{1, 0.0, 1.0}), Error);
  EXPECT_THROW(ProjectedSgd(2, SgdConfig{1, 1.0, 0.0}), Error);
}

TEST(SampleNpgPd, ExactModeReproducesFunctionApproximationRun) {
  std::mt19937_64 gen(10);
  Cmdp m = small_cmdp(gen, 3, 2, 0.9, 3.0);
  LogLinearClass cls(FeatureMap::one_hot(3, 2));

  SampleConfig sc;
  sc.T = 30;
  sc.radius = 1e6;
  sc.sigma_f = 1.0;
  sc.exact_regression = true;
  auto sampled = sample_npgpd(m, cls, SampleMode::loglinear, sc, 0);

  FaRunConfig fc;
  fc.T = 30;
  fc.target_kind = TargetKind::q_value;
  fc.diagnostics_every = 0;
  auto exact = run_fa(m, cls, fc);
  for (int t = 0; t < 30; ++t) {
    const auto& a = sampled.log.records()[t];
    const auto& b = exact.log.records()[t];
    EXPECT_NEAR(a.v_r, b.v_r, 1e-8);
    EXPECT_NEAR(a.v_g, b.v_g, 1e-8);
    EXPECT_NEAR(a.lambda, b.lambda, 1e-8);
  }
}

TEST(SampleNpgPd, PrimalFactorDiffersByDiscount) {
  std::mt19937_64 gen(11);
  Cmdp m = small_cmdp(gen, 3, 2, 0.8, 2.0);
  LogLinearClass cls(FeatureMap::one_hot(3, 2));
  SampleConfig sc;
  sc.T = 1;
  sc.radius = 1e6;
  sc.sigma_f = 1.0;
  sc.exact_regression = true;
  auto alg1 = sample_npgpd(m, cls, SampleMode::general, sc, 0);
  sc.divide_primal_by_one_minus_gamma = true;
  auto alg4_factor = sample_npgpd(m, cls, SampleMode::general, sc, 0);
  ASSERT_GT(alg1.theta.norm(), 0.0);
  EXPECT_LE((alg4_factor.theta - alg1.theta / (1.0 - m.discount)).norm(), 1e-12 * alg4_factor.theta.norm());
}

TEST(SampleNpgPd, MultiplierStaysInItsInterval) {
  std::mt19937_64 gen(12);
  Cmdp m = small_cmdp(gen, 3, 2, 0.9, 4.5);
  LogLinearClass cls(FeatureMap::one_hot(3, 2));
  SampleConfig sc;
  sc.T = 40;
  sc.K = 30;
  sc.eta2 = 5.0;
  auto run = sample_npgpd(m, cls, SampleMode::loglinear, sc, 3);
  for (const auto& r : run.log.records()) {
    EXPECT_GE(r.lambda, 0.0);
    EXPECT_LE(r.lambda, run.lambda_cap);
  }
  EXPECT_GT(run.rollout_steps, 0);
  EXPECT_EQ(run.log.back().rollout_steps_total, run.rollout_steps);
}

TEST(SampleNpgPd, IdenticalSeedsGiveIdenticalLogs) {
  std::mt19937_64 gen(13);
  Cmdp m = small_cmdp(gen, 3, 2, 0.9, 3.0);
  LogLinearClass cls(FeatureMap::one_hot(3, 2));
  SampleConfig sc;
  sc.T = 15;
  sc.K = 20;
  sc.sigma_f = 0.1;  // one-hot scores are rank deficient
  for (SampleMode mode : {SampleMode::general, SampleMode::loglinear}) {
    auto a = sample_npgpd(m, cls, mode, sc, 77);
    auto b = sample_npgpd(m, cls, mode, sc, 77);
    auto c = sample_npgpd(m, cls, mode, sc, 78);
    std::ostringstream sa, sb, scsv;
    write_csv(sa, a.log);
    write_csv(sb, b.log);
    write_csv(scsv, c.log);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_NE(sa.str(), scsv.str());
    EXPECT_EQ(a.theta, b.theta);
  }
}

TEST(SampleNpgPd, CsvCarriesSampleColumns) {
  std::mt19937_64 gen(14);
  Cmdp m = small_cmdp(gen, 2, 2, 0.8, 2.0);
  LogLinearClass cls(FeatureMap::one_hot(2, 2));
  SampleConfig sc;
  sc.T = 3;
  sc.K = 5;
  auto run = sample_npgpd(m, cls, SampleMode::loglinear, sc, 9);
  std::ostringstream os;
  write_csv(os, run.log);
  std::istringstream is(os.str());
  auto table = read_csv(is);
  EXPECT_EQ(table.rows.size(), 3u);
  const int k = table.column("K"), seed = table.column("seed"), steps = table.column("rollout_steps_total");
  ASSERT_GE(std::min({k, seed, steps}), 0);
  EXPECT_EQ(table.rows[0][k], 5.0);
  EXPECT_EQ(table.rows[2][seed], 9.0);
  EXPECT_LE(table.rows[0][steps], table.rows[2][steps]);
}
