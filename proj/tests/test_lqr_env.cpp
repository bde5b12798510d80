#include <gtest/gtest.h>

#include <cmath>

#include "lqrlab/lqr_env.hpp"
#include "lqrlab/oracle.hpp"

using namespace lqrlab;
using systems::from_rows;

namespace {

// Sample-covariance accumulator with per-entry standard errors.
struct CovAccumulator {
  Matrix sum, sq;
  long n = 0;
  explicit CovAccumulator(Eigen::Index d) : sum(Matrix::Zero(d, d)), sq(Matrix::Zero(d, d)) {}
  void add(const Vector& v) {
    const Matrix o = v * v.transpose();
    sum += o;
    sq += o.cwiseProduct(o);
    ++n;
  }
  // max over entries of |mean - truth| / standard error
  double max_z(const Matrix& truth) const {
    double worst = 0;
    const double dn = static_cast<double>(n);
    for (Eigen::Index i = 0; i < sum.rows(); ++i) {
      for (Eigen::Index j = 0; j < sum.cols(); ++j) {
        const double mean = sum(i, j) / dn;
        const double se = std::sqrt((sq(i, j) / dn - mean * mean) / dn);
        worst = std::max(worst, std::abs(mean - truth(i, j)) / se);
      }
    }
    return worst;
  }
};

LqrSystem scalar_like(double sigma) {
  LqrSystem s;
  s.A = Matrix::Zero(2, 2);
  s.B = Matrix::Identity(2, 2);
  s.Q = s.R = s.D0 = Matrix::Identity(2, 2);
  s.sigma = sigma;
  return validate_system(s);
}

}  // namespace

TEST(ValidateSystem, ExampleOne) {
  const LqrSystem s = systems::example1();
  EXPECT_EQ(s.state_dim(), 2);
  EXPECT_EQ(s.action_dim(), 2);
  EXPECT_LE((s.D_sigma - 2 * Matrix::Identity(2, 2)).norm(), 1e-15);
}

TEST(ValidateSystem, ExampleTwo) {
  const LqrSystem s = systems::example2();
  EXPECT_EQ(s.state_dim(), 4);
  EXPECT_EQ(s.action_dim(), 3);
  EXPECT_LE((s.D_sigma - Matrix::Identity(4, 4) - s.B * s.B.transpose()).norm(), 1e-15);
}

TEST(ValidateSystem, RejectsIndefiniteCosts) {
  LqrSystem s = systems::example1();
  s.Q = from_rows({{1, 0}, {0, -1}});
  EXPECT_THROW(validate_system(s), ValidationError);
  s = systems::example1();
  s.R = from_rows({{1, 2}, {2, 1}});
  EXPECT_THROW(validate_system(s), ValidationError);
  s = systems::example1();
  s.D0 = Matrix::Zero(2, 2);
  EXPECT_THROW(validate_system(s), ValidationError);
}

TEST(ValidateSystem, RejectsAsymmetricAndMisshapen) {
  LqrSystem s = systems::example1();
  s.Q = from_rows({{9, 2}, {0, 1}});
  EXPECT_THROW(validate_system(s), ValidationError);
  s = systems::example1();
  s.B = Matrix::Identity(3, 2);
  EXPECT_THROW(validate_system(s), ValidationError);
  s = systems::example1();
  s.R = Matrix::Identity(3, 3);
  EXPECT_THROW(validate_system(s), ValidationError);
  s = systems::example1();
  s.sigma = -1;
  EXPECT_THROW(validate_system(s), ValidationError);
}

TEST(ValidateSystem, ZeroNoiseOnlyWhenAllowed) {
  LqrSystem s = systems::example1();
  s.D0 = Matrix::Zero(2, 2);
  s.sigma = 0;
  const LqrSystem ok = validate_system(s, {.allow_zero_noise = true});
  EXPECT_TRUE(ok.noise_factor.isZero(0.0));
}

TEST(Rng, SameSeedSameSequence) {
  RngStream a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
  EXPECT_NE(RngStream(42).normal(), c.normal());
}

TEST(Rng, SubstreamsAreDistinctAndStable) {
  const RngStream root(7);
  EXPECT_EQ(root.substream(1).seed(), RngStream(7).substream(1).seed());
  EXPECT_NE(root.substream(1).seed(), root.substream(2).seed());
  EXPECT_NE(root.substream(0).seed(), root.seed());
}

TEST(PolicyAction, NoiselessIsLinear) {
  RngStream rng(1);
  const Vector u = policy_action(Matrix::Identity(2, 2), Vector{{1, 2}}, 0.0, rng);
  EXPECT_EQ(u, (Vector{{-1, -2}}));
}

TEST(PolicyAction, ReproducibleForFixedSeed) {
  const Matrix K = from_rows({{0.5, 0.1}, {0.2, 0.3}});
  RngStream a(2), b(2);
  EXPECT_EQ(policy_action(K, Vector{{1, -1}}, 1.0, a), policy_action(K, Vector{{1, -1}}, 1.0, b));
}

TEST(PolicyAction, EmpiricalMeanMatchesGain) {
  const Matrix K = from_rows({{0.5, 0.1}, {0.2, 0.3}});
  const Vector x{{1.0, -2.0}};
  RngStream rng(3);
  constexpr int n = 100'000;
  Vector sum = Vector::Zero(2);
  for (int i = 0; i < n; ++i) sum += policy_action(K, x, 1.0, rng);
  const Vector mean = sum / n;
  const Vector expect = -K * x;
  for (int i = 0; i < 2; ++i) EXPECT_LE(std::abs(mean(i) - expect(i)), 4.0 / std::sqrt(n));
}

TEST(PolicyAction, DimensionMismatchThrows) {
  RngStream rng(4);
  EXPECT_THROW(policy_action(Matrix::Identity(2, 2), Vector::Zero(3), 1.0, rng), DimensionError);
}

TEST(Step, ExampleOneCost) {
  RngStream rng(5);
  EXPECT_DOUBLE_EQ(step(systems::example1(), Vector{{1, 0}}, Vector{{0, 1}}, rng).cost, 17.0);
}

TEST(Step, ZeroInputGivesZeroCost) {
  RngStream rng(6);
  const StepResult r = step(systems::example1(), Vector::Zero(2), Vector::Zero(2), rng);
  EXPECT_EQ(r.cost, 0.0);
  EXPECT_TRUE(r.x_next.allFinite());
}

TEST(Step, NoiseCovarianceMatchesD0) {
  LqrSystem s = systems::example2();
  s.D0 = from_rows({{2, 0.3, 0, 0}, {0.3, 1, 0.2, 0}, {0, 0.2, 1.5, 0}, {0, 0, 0, 0.5}});
  s = validate_system(s);
  const Vector x{{1, -1, 0.5, 2}}, u{{0.3, -0.2, 0.1}};
  const Vector mean = s.A * x + s.B * u;
  RngStream rng(7);
  CovAccumulator acc(4);
  for (int i = 0; i < 100'000; ++i) acc.add(step(s, x, u, rng).x_next - mean);
  EXPECT_LE(acc.max_z(s.D0), 3.0);
}

TEST(Step, DimensionMismatchThrows) {
  RngStream rng(8);
  EXPECT_THROW(step(systems::example1(), Vector::Zero(3), Vector::Zero(2), rng), DimensionError);
}

TEST(SampleStationary, DeadbeatExactDrawsHaveCovarianceDsigma) {
  const LqrSystem s = systems::example1();
  const Matrix K = Matrix::Identity(2, 2);  // A - BK = 0 because B is a permutation
  ASSERT_EQ(closed_loop(s, K), Matrix::Zero(2, 2));
  RngStream rng(9);
  CovAccumulator acc(2);
  for (int i = 0; i < 100'000; ++i) acc.add(sample_stationary(s, K, rng));
  EXPECT_LE(acc.max_z(2 * Matrix::Identity(2, 2)), 3.0);
}

TEST(SampleStationary, BurnInMatchesExactCovariance) {
  const LqrSystem s = systems::example2();
  const Matrix K = solve_are(s).K.K;
  const Matrix D = stationary_covariance(s, K);
  RngStream rng(10);
  CovAccumulator acc(4);
  for (int i = 0; i < 20'000; ++i) acc.add(sample_stationary(s, K, rng, BurnIn{200}));
  EXPECT_LE(acc.max_z(D), 3.0);
}

TEST(SampleStationary, NonStabilizingThrows) {
  RngStream rng(11);
  EXPECT_THROW(sample_stationary(systems::example1(), Matrix::Zero(2, 2), rng), InstabilityError);
}

TEST(SampleStationary, SuccessorStateIsStationary) {
  const LqrSystem s = systems::example1();
  const Matrix K = solve_are(s).K.K;
  const Matrix D = stationary_covariance(s, K);
  const Matrix factor = cholesky(D);
  RngStream rng(12);
  CovAccumulator acc(2);
  for (int i = 0; i < 100'000; ++i) acc.add(transition_from(s, K, sample_gaussian(factor, rng), rng).x_next);
  EXPECT_LE(acc.max_z(D), 3.0);
}

TEST(SampleStationary, JointCovarianceOfStateAndAction) {
  const LqrSystem s = systems::example2();
  const Matrix K = solve_are(s).K.K;
  const Matrix D = stationary_covariance(s, K);
  Matrix joint(7, 7);
  joint << D, -D * K.transpose(), -K * D, K * D * K.transpose() + Matrix::Identity(3, 3);
  RngStream rng(13);
  CovAccumulator acc(7);
  const Matrix factor = cholesky(D);
  for (int i = 0; i < 100'000; ++i) {
    const Vector x = sample_gaussian(factor, rng);
    Vector z(7);
    z << x, policy_action(K, x, s.sigma, rng);
    acc.add(z);
  }
  EXPECT_LE(acc.max_z(joint), 3.0);
}

TEST(Transition, CostsAreNonNegativeAndReproducible) {
  const LqrSystem s = systems::example2();
  const Matrix K = solve_are(s).K.K;
  RngStream a(14), b(14);
  for (int i = 0; i < 1000; ++i) {
    const Transition ta = transition_from(s, K, sample_stationary(s, K, a), a);
    const Transition tb = transition_from(s, K, sample_stationary(s, K, b), b);
    EXPECT_GE(ta.cost, 0.0);
    EXPECT_EQ(ta.x_next, tb.x_next);
    EXPECT_EQ(ta.u_next, tb.u_next);
  }
}

TEST(Rollout, LengthOneIsOneStep) {
  const LqrSystem s = systems::example1();
  const Matrix K = Matrix::Identity(2, 2);
  const Vector x0{{0.5, -1}};
  RngStream a(15), b(15);
  const Rollout r = rollout(s, K, x0, 1, a);
  const Vector u = policy_action(K, x0, s.sigma, b);
  const StepResult st = step(s, x0, u, b);
  ASSERT_EQ(r.costs.size(), 1u);
  EXPECT_EQ(r.costs[0], st.cost);
  EXPECT_EQ(r.states[0], x0);
}

TEST(Rollout, NoiselessDeadbeatCostsVanishAfterFirstStep) {
  LqrSystem s = systems::example1();
  s.D0 = Matrix::Zero(2, 2);
  s.sigma = 0;
  s = validate_system(s, {.allow_zero_noise = true});
  RngStream rng(16);
  const Rollout r = rollout(s, Matrix::Identity(2, 2), Vector{{1, 2}}, 10, rng);
  EXPECT_GT(r.costs[0], 0.0);
  for (std::size_t t = 1; t < r.costs.size(); ++t) EXPECT_EQ(r.costs[t], 0.0);
}

TEST(Rollout, ErgodicAverageMatchesAverageCost) {
  const LqrSystem s = systems::example1();
  const Matrix K = solve_are(s).K.K + 0.1 * Matrix::Ones(2, 2);
  const double J = average_cost(s, K);
  RngStream rng(17);
  const Matrix factor = cholesky(stationary_covariance(s, K));
  double total = 0;
  for (int i = 0; i < 200; ++i) {
    const Rollout r = rollout(s, K, sample_gaussian(factor, rng), 500, rng);
    for (double c : r.costs) total += c;
  }
  EXPECT_NEAR(total / (200.0 * 500.0), J, 0.05 * J);
}

TEST(Rollout, InvalidLengthThrows) {
  RngStream rng(18);
  EXPECT_THROW(rollout(systems::example1(), Matrix::Identity(2, 2), Vector::Zero(2), 0, rng), DimensionError);
}

TEST(Rollout, BlowUpIsReported) {
  const LqrSystem s = systems::example1();
  RngStream rng(19);
  // A - BK = 3 * swap: the state grows like 3^t
  EXPECT_THROW(rollout(s, -2 * Matrix::Identity(2, 2), Vector{{1, 1}}, 100, rng), DivergenceError);
}

TEST(PolicyGain, StabilizingPredicate) {
  const LqrSystem s = systems::example1();
  EXPECT_TRUE(PolicyGain::of(s, Matrix::Identity(2, 2)).stabilizing());
  EXPECT_FALSE(PolicyGain::of(s, Matrix::Zero(2, 2)).stabilizing());
  EXPECT_THROW(PolicyGain::of(s, Matrix::Zero(3, 2)), DimensionError);
}

TEST(WithSigma, UpdatesDsigma) {
  const LqrSystem s = with_sigma(systems::example1(), 0.2);
  EXPECT_LE((s.D_sigma - 1.04 * Matrix::Identity(2, 2)).norm(), 1e-15);
  EXPECT_EQ(scalar_like(0.5).sigma, 0.5);
}
