#pragma once

// Self-contained verification suite: oracle residuals, finite-difference
// gradients, exact identities, Monte-Carlo moment matching and the module
// invariants. Used by `lqrlab verify` and by the acceptance runner.

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "lqrlab/algorithms.hpp"
#include "lqrlab/harness/config.hpp"
#include "lqrlab/harness/experiment.hpp"
#include "lqrlab/harness/output.hpp"
#include "lqrlab/lqr_env.hpp"
#include "lqrlab/matlib.hpp"
#include "lqrlab/oracle.hpp"
#include "lqrlab/rng.hpp"

namespace lqrlab::harness {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

struct Outcome {
  bool ok;
  std::string detail;
};

inline CheckResult run_check(const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{name, false, "", 0};
  try {
    const Outcome o = body();
    r.passed = o.ok;
    r.detail = o.detail;
  } catch (const std::exception& e) {
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

namespace detail {

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline double rel(double err, double scale) { return err / std::max(scale, 1e-300); }

inline Matrix random_symmetric(Eigen::Index n, RngStream& rng) {
  const Matrix g = rng.normal_matrix(n, n);
  return 0.5 * (g + g.transpose());
}

inline Matrix random_spd(Eigen::Index n, RngStream& rng) {
  const Matrix g = rng.normal_matrix(n, n);
  return g * g.transpose() + static_cast<double>(n) * Matrix::Identity(n, n);
}

/// Random matrix rescaled to the requested spectral radius estimate.
inline Matrix random_with_radius(Eigen::Index n, double rho, RngStream& rng) {
  const Matrix g = rng.normal_matrix(n, n);
  return g * (rho / spectral_radius_estimate(g));
}

inline std::vector<Matrix> stabilizing_gains(const LqrSystem& sys, const Matrix& k_star, int count, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<Matrix> out;
  for (int i = 0; i < count; ++i) out.push_back(random_stabilizing_gain(sys, k_star, rng).K);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// acceptance-level checks

/// Lyapunov residuals of P_K, D_K and the TD fixed point A_K svec(Omega_K) = b_K
/// on 100 random stabilizing gains per bundled system.
inline Outcome check_oracle_residuals() {
  double worst_lyap = 0, worst_fixed = 0;
  for (const LqrSystem& sys : {systems::example1(), systems::example2()}) {
    const Matrix k_star = solve_are(sys).K.K;
    for (const Matrix& K : detail::stabilizing_gains(sys, k_star, 100, 11)) {
      const OracleReport r = analytic_report(sys, K);
      const Matrix loop = closed_loop(sys, K);
      const Matrix p_res = r.P_K - (sys.Q + K.transpose() * sys.R * K) - loop.transpose() * r.P_K * loop;
      const Matrix d_res = r.D_K - sys.D_sigma - loop * r.D_K * loop.transpose();
      worst_lyap = std::max({worst_lyap, detail::rel(p_res.norm(), r.P_K.norm()), detail::rel(d_res.norm(), r.D_K.norm())});
      worst_fixed = std::max(worst_fixed, detail::rel((r.A_K * r.omega_star - r.b_K).norm(), r.b_K.norm()));
    }
  }
  return {worst_lyap <= 1e-10 && worst_fixed <= 1e-9,
          "max Lyapunov residual " + detail::sci(worst_lyap) + " (<= 1e-10), max fixed-point residual " +
              detail::sci(worst_fixed) + " (<= 1e-9)"};
}

/// Central differences (h = 1e-5) of J against the closed-form gradient.
inline Outcome check_gradient_fd() {
  const LqrSystem sys = systems::example1();
  const Matrix k_star = solve_are(sys).K.K;
  constexpr double h = 1e-5;
  double worst = 0;
  for (const Matrix& K : detail::stabilizing_gains(sys, k_star, 20, 22)) {
    const Matrix g = policy_values(sys, K).grad;
    Matrix fd(K.rows(), K.cols());
    for (Eigen::Index i = 0; i < K.rows(); ++i) {
      for (Eigen::Index j = 0; j < K.cols(); ++j) {
        Matrix plus = K, minus = K;
        plus(i, j) += h;
        minus(i, j) -= h;
        fd(i, j) = (average_cost(sys, plus) - average_cost(sys, minus)) / (2 * h);
      }
    }
    worst = std::max(worst, detail::rel((fd - g).cwiseAbs().maxCoeff(), g.cwiseAbs().maxCoeff()));
  }
  return {worst <= 1e-5, "max relative error " + detail::sci(worst) + " over 20 gains (<= 1e-5)"};
}

/// Cost-difference identity, gradient domination and the vanishing natural gradient at K*.
inline Outcome check_exact_identities() {
  double worst_smooth = 0, worst_dom = -INFINITY, worst_e = 0;
  for (const LqrSystem& sys : {systems::example1(), systems::example2()}) {
    const AreSolution opt = solve_are(sys);
    worst_e = std::max(worst_e, policy_values(sys, opt.K.K).E.norm());
    const auto a = detail::stabilizing_gains(sys, opt.K.K, 100, 33);
    const auto b = detail::stabilizing_gains(sys, opt.K.K, 100, 44);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const SmoothnessGap s = almost_smoothness_gap(sys, a[i], b[i]);
      worst_smooth = std::max(worst_smooth, std::abs(s.lhs - s.rhs) / std::max(1.0, std::abs(s.lhs)));
      const DominationCheck d = gradient_domination_check(sys, a[i], opt);
      worst_dom = std::max(worst_dom, d.gap - d.bound);
    }
  }
  return {worst_smooth <= 1e-8 && worst_dom <= 1e-9 && worst_e <= 1e-8,
          "smoothness identity " + detail::sci(worst_smooth) + " (<= 1e-8), max(gap - bound) " +
              detail::sci(worst_dom) + " (<= 0), ||E_K*||_F " + detail::sci(worst_e) + " (<= 1e-8)"};
}

struct MomentMatch {
  long entries = 0;
  long outside = 0;
  double max_z = 0;
};

/// Monte-Carlo E[phi phi^T], A_K = E[phi (phi - phi')^T] and b_K = E[(c - J) phi]
/// from n stationary transitions, compared entrywise with the closed forms.
inline MomentMatch moment_match(const LqrSystem& sys, const Matrix& K, long n, std::uint64_t seed, double n_se) {
  const OracleReport r = analytic_report(sys, K);
  const Matrix gram = feature_gram_from_cov(r.Dtilde_K);
  const Eigen::Index m = r.omega_star.size();
  Matrix s_g = Matrix::Zero(m, m), q_g = Matrix::Zero(m, m);
  Matrix s_a = Matrix::Zero(m, m), q_a = Matrix::Zero(m, m);
  Vector s_b = Vector::Zero(m), q_b = Vector::Zero(m);
  RngStream rng(seed);
  const Matrix factor = cholesky(r.D_K);
  for (long t = 0; t < n; ++t) {
    const Transition tr = transition_from(sys, K, sample_gaussian(factor, rng), rng);
    const Vector phi = feature(tr.x, tr.u);
    const Vector diff = phi - feature(tr.x_next, tr.u_next);
    const Matrix g = phi * phi.transpose();
    const Matrix a = phi * diff.transpose();
    const Vector b = (tr.cost - r.J) * phi;
    s_g += g;
    q_g += g.cwiseProduct(g);
    s_a += a;
    q_a += a.cwiseProduct(a);
    s_b += b;
    q_b += b.cwiseProduct(b);
  }
  MomentMatch out;
  const double dn = static_cast<double>(n);
  auto compare = [&](double sum, double sq, double truth) {
    const double mean = sum / dn;
    const double var = std::max(0.0, (sq / dn - mean * mean) * dn / (dn - 1));
    const double se = std::sqrt(var / dn);
    ++out.entries;
    if (se == 0) {
      if (std::abs(mean - truth) > 1e-12 * (1 + std::abs(truth))) ++out.outside;
      return;
    }
    const double z = std::abs(mean - truth) / se;
    out.max_z = std::max(out.max_z, z);
    if (z > n_se) ++out.outside;
  };
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      compare(s_g(i, j), q_g(i, j), gram(i, j));
      compare(s_a(i, j), q_a(i, j), r.A_K(i, j));
    }
    compare(s_b(i), q_b(i), r.b_K(i));
  }
  return out;
}

/// Example 1 with the deadbeat gain K = I (B is a permutation, so A - BK = 0).
inline Outcome check_moment_matching(long n = 1'000'000) {
  const LqrSystem sys = systems::example1();
  const MomentMatch mm = moment_match(sys, Matrix::Identity(2, 2), n, 44, 4.0);
  return {mm.outside == 0, std::to_string(mm.outside) + " of " + std::to_string(mm.entries) +
                               " entries outside 4 standard errors (max |z| " + detail::sci(mm.max_z) + ", n = " +
                               std::to_string(n) + ")"};
}

// ---------------------------------------------------------------------------
// module invariants

inline std::vector<std::pair<std::string, std::function<Outcome()>>> invariant_checks() {
  using detail::sci;
  std::vector<std::pair<std::string, std::function<Outcome()>>> c;

  c.emplace_back("matlib: svec/smat examples and round trip", [] {
    Vector v = svec(systems::from_rows({{1, 2}, {2, 3}}));
    bool ok = (v - Vector{{1, 2 * M_SQRT2, 3}}).norm() <= 1e-15 && std::abs(v.squaredNorm() - 18) <= 1e-12;
    ok = ok && (svec(Matrix::Identity(3, 3)) - Vector{{1, 0, 1, 0, 0, 1}}).norm() == 0;
    RngStream rng(1);
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
      const Matrix m = detail::random_symmetric(1 + i % 6, rng);
      worst = std::max(worst, (smat(svec(m)) - m).cwiseAbs().maxCoeff());
    }
    return Outcome{ok && worst <= 1e-13, "max round-trip error " + sci(worst)};
  });

  c.emplace_back("matlib: svec isometry", [] {
    RngStream rng(2);
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
      const Matrix m = detail::random_symmetric(4, rng), n = detail::random_symmetric(4, rng);
      const double tr = (m * n).trace();
      worst = std::max(worst, std::abs(svec(m).dot(svec(n)) - tr) / std::max(1.0, std::abs(tr)));
    }
    return Outcome{worst <= 1e-11, "max relative error " + sci(worst)};
  });

  c.emplace_back("matlib: symmetric Kronecker action and product identity", [] {
    RngStream rng(3);
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
      const Eigen::Index n = 1 + i % 5;
      const Matrix a = rng.normal_matrix(n, n), b = rng.normal_matrix(n, n), s = detail::random_symmetric(n, rng);
      const Vector direct = svec(0.5 * (a * s * b.transpose() + b * s * a.transpose()));
      worst = std::max(worst, (sym_kron(a, b) * svec(s) - direct).norm() / std::max(1.0, direct.norm()));
    }
    double prod = 0;
    for (int i = 0; i < 50; ++i) {
      const Matrix a = rng.normal_matrix(2, 2), b = rng.normal_matrix(2, 2), cc = rng.normal_matrix(2, 2),
                   d = rng.normal_matrix(2, 2);
      const Matrix lhs = sym_kron(a, b) * sym_kron(cc, d);
      const Matrix rhs = 0.5 * (sym_kron(a * cc, b * d) + sym_kron(a * d, b * cc));
      prod = std::max(prod, (lhs - rhs).norm() / std::max(1.0, lhs.norm()));
    }
    const bool ident = (sym_kron(Matrix::Identity(3, 3), Matrix::Identity(3, 3)) - Matrix::Identity(6, 6)).norm() == 0;
    return Outcome{worst <= 1e-11 && prod <= 1e-12 && ident, "action " + sci(worst) + ", product " + sci(prod)};
  });

  c.emplace_back("matlib: Lyapunov residual and solver agreement", [] {
    RngStream rng(4);
    double res = 0, agree = 0;
    bool examples = (solve_discrete_lyapunov(Matrix::Zero(2, 2), Matrix::Identity(2, 2)) - Matrix::Identity(2, 2)).norm() <= 1e-15;
    examples = examples && (solve_discrete_lyapunov(0.5 * Matrix::Identity(2, 2), Matrix::Identity(2, 2)) -
                            (4.0 / 3.0) * Matrix::Identity(2, 2)).norm() <= 1e-13;
    for (int i = 0; i < 40; ++i) {
      const Eigen::Index n = 1 + i % 8;
      const Matrix l = detail::random_with_radius(n, 0.9, rng);
      const Matrix s = detail::random_spd(n, rng);
      const Matrix x = solve_discrete_lyapunov(l, s, LyapunovMethod::Direct);
      const Matrix y = solve_discrete_lyapunov(l, s, LyapunovMethod::FixedPoint);
      res = std::max(res, (x - s - l * x * l.transpose()).norm() / x.norm());
      agree = std::max(agree, (x - y).norm() / x.norm());
    }
    return Outcome{examples && res <= 1e-10 && agree <= 1e-9, "residual " + sci(res) + ", agreement " + sci(agree)};
  });

  c.emplace_back("matlib: spectral radius estimate and Cholesky", [] {
    const double a = spectral_radius_estimate(systems::from_rows({{0.3, 0}, {0, 0.7}}));
    const double b = spectral_radius_estimate(systems::from_rows({{0, 1}, {1, 0}}));
    const double z = spectral_radius_estimate(systems::from_rows({{0, 1}, {0, 0}}));
    RngStream rng(5);
    double rec = 0;
    for (int i = 0; i < 50; ++i) {
      const Matrix s = detail::random_spd(4, rng);
      const Matrix g = cholesky(s);
      rec = std::max(rec, (g * g.transpose() - s).norm() / s.norm());
    }
    const bool ok = std::abs(a - 0.7) <= 1e-6 && std::abs(b - 1) <= 1e-6 && z == 0 && rec <= 1e-12;
    return Outcome{ok, "rho(diag(.3,.7)) " + sci(a) + ", rho(swap) " + sci(b) + ", Cholesky " + sci(rec)};
  });

  c.emplace_back("lqr_env: system validation and cost", [] {
    const LqrSystem e1 = systems::example1();
    const LqrSystem e2 = systems::example2();
    bool ok = (e1.D_sigma - 2 * Matrix::Identity(2, 2)).norm() <= 1e-15 && e2.state_dim() == 4 && e2.action_dim() == 3;
    ok = ok && stage_cost(e1, Vector{{1, 0}}, Vector{{0, 1}}) == 17;
    LqrSystem bad = e1;
    bad.Q = systems::from_rows({{1, 0}, {0, -1}});
    try {
      validate_system(bad);
      ok = false;
    } catch (const ValidationError&) {
    }
    return Outcome{ok, "Example 1 D_sigma = 2I, cost(x=(1,0), u=(0,1)) = 17, indefinite Q rejected"};
  });

  c.emplace_back("lqr_env: reproducibility and stationary covariance", [] {
    const LqrSystem sys = systems::example1();
    const Matrix K = Matrix::Identity(2, 2);
    RngStream r1(6), r2(6);
    bool same = true;
    for (int i = 0; i < 100; ++i) {
      const Transition a = transition_from(sys, K, sample_stationary(sys, K, r1), r1);
      const Transition b = transition_from(sys, K, sample_stationary(sys, K, r2), r2);
      same = same && a.x == b.x && a.u == b.u && a.x_next == b.x_next && a.u_next == b.u_next && a.cost >= 0;
    }
    // stationarity: the successor state again has covariance D_K (3 standard errors)
    const LqrSystem e2 = systems::example2();
    const Matrix k2 = solve_are(e2).K.K;
    const Matrix dk = stationary_covariance(e2, k2);
    const Matrix factor = cholesky(dk);
    RngStream rng(7);
    constexpr int n = 100'000;
    Matrix s = Matrix::Zero(4, 4), q = Matrix::Zero(4, 4);
    for (int i = 0; i < n; ++i) {
      const Transition t = transition_from(e2, k2, sample_gaussian(factor, rng), rng);
      const Matrix o = t.x_next * t.x_next.transpose();
      s += o;
      q += o.cwiseProduct(o);
    }
    double worst = 0;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        const double mean = s(i, j) / n;
        const double se = std::sqrt((q(i, j) / n - mean * mean) / n);
        worst = std::max(worst, std::abs(mean - dk(i, j)) / se);
      }
    }
    return Outcome{same && worst <= 3.0, "bitwise reproducible; successor covariance max |z| " + sci(worst)};
  });

  c.emplace_back("oracle: deadbeat closed forms and ARE optimum", [] {
    const LqrSystem sys = systems::example1();
    const PolicyValues v = policy_values(sys, Matrix::Identity(2, 2));
    bool ok = (v.P - systems::from_rows({{10, 4}, {4, 9}})).norm() <= 1e-12 &&
              (v.D - 2 * Matrix::Identity(2, 2)).norm() <= 1e-12 && std::abs(v.J - 47) <= 1e-12 &&
              (v.E - sys.R).norm() <= 1e-12;
    const AreSolution opt = solve_are(sys);
    const double j_star = average_cost(sys, opt.K.K);
    double worst = INFINITY;
    for (const Matrix& K : detail::stabilizing_gains(sys, opt.K.K, 100, 8)) {
      worst = std::min(worst, average_cost(sys, K) - j_star);
    }
    ok = ok && worst >= 0;
    return Outcome{ok, "J(I) = 47, J* = " + sci(j_star) + ", min J(K) - J* over 100 gains " + sci(worst)};
  });

  c.emplace_back("oracle: natural gradient, Q-kernel blocks and mu", [] {
    double nat = 0, block = 0, mu_min = INFINITY, qtrace = 0;
    for (const LqrSystem& sys : {systems::example1(), systems::example2()}) {
      const Matrix k_star = solve_are(sys).K.K;
      for (const Matrix& K : detail::stabilizing_gains(sys, k_star, 20, 9)) {
        const OracleReport r = analytic_report(sys, K);
        const Eigen::Index d = sys.state_dim(), k = sys.action_dim();
        const Matrix e2 = 0.5 * r.grad_J * r.D_K.inverse();
        nat = std::max(nat, (e2 - r.E_K).norm() / std::max(1.0, r.E_K.norm()));
        const Matrix& w = r.Omega_K;
        const Matrix est = w.bottomRightCorner(k, k) * K - w.bottomLeftCorner(k, d);
        block = std::max({block, (est - r.E_K).norm() / std::max(1.0, r.E_K.norm()),
                          (smat(r.omega_star) - w).norm() / w.norm(),
                          (natural_gradient_estimate(r.omega_star, K) - r.E_K).norm()});
        mu_min = std::min(mu_min, r.mu);
        const PolicyValues v = policy_values(sys, K);
        const double lhs = (w * r.Dtilde_K).trace();
        const double rhs = (v.P * v.D).trace() + sys.sigma * sys.sigma * (sys.R.trace() + (v.P * sys.B * sys.B.transpose()).trace());
        qtrace = std::max(qtrace, std::abs(lhs - rhs) / rhs);
      }
    }
    return Outcome{nat <= 1e-9 && block <= 1e-10 && mu_min > 0 && qtrace <= 1e-9,
                   "E_K consistency " + sci(nat) + ", block identity " + sci(block) + ", min mu " + sci(mu_min) +
                       ", Q trace identity " + sci(qtrace)};
  });

  c.emplace_back("oracle: covariance grows toward the stability boundary", [] {
    const LqrSystem sys = systems::example1();
    const Matrix k_star = solve_are(sys).K.K;
    // walk from K* toward K = 0 (rho(A) = 1)
    double prev = 0;
    bool increasing = true;
    for (double s : {0.0, 0.5, 0.8, 0.9, 0.95, 0.99}) {
      const double n = stationary_covariance(sys, (1 - s) * k_star).norm();
      increasing = increasing && n > prev && std::isfinite(n);
      prev = n;
    }
    return Outcome{increasing, "||D_K|| at 99% of the way to K = 0: " + sci(prev)};
  });

  c.emplace_back("oracle: scalar feature Gram", [] {
    LqrSystem sys;
    sys.A = Matrix::Zero(1, 1);
    sys.B = sys.Q = sys.R = sys.D0 = Matrix::Identity(1, 1);
    sys = validate_system(sys);
    // x = u + noise has variance 2 here, so the stationary joint covariance is diag(2, 1)
    const Matrix g = expected_feature_gram(sys, Matrix::Zero(1, 1));
    const Matrix unit = feature_gram_from_cov(Matrix::Identity(2, 2));
    const bool ok = (g.diagonal() - Vector{{12, 4, 3}}).norm() <= 1e-12 && (g - g.transpose()).norm() == 0 &&
                    (unit.diagonal() - Vector{{3, 2, 3}}).norm() <= 1e-15;
    return Outcome{ok, "diagonal (" + sci(g(0, 0)) + ", " + sci(g(1, 1)) + ", " + sci(g(2, 2)) + ")"};
  });

  c.emplace_back("algorithms: feature norm, projection and actor fixed point", [] {
    RngStream rng(10);
    double fnorm = 0, expand = 0;
    for (int i = 0; i < 200; ++i) {
      const Vector x = rng.normal_vector(4), u = rng.normal_vector(3);
      const double expect = std::pow(x.squaredNorm() + u.squaredNorm(), 2);
      fnorm = std::max(fnorm, std::abs(feature(x, u).squaredNorm() - expect) / expect);
      const Vector a = 3 * rng.normal_vector(5), b = 3 * rng.normal_vector(5);
      const double radius = 0.1 + 5 * rng.uniform();
      expand = std::max(expand, (proj_ball(a, radius) - proj_ball(b, radius)).norm() - (a - b).norm());
    }
    double actor = 0;
    for (const LqrSystem& sys : {systems::example1(), systems::example2()}) {
      const Matrix k_star = solve_are(sys).K.K;
      actor = std::max(actor, natural_gradient_estimate(svec(policy_values(sys, k_star).Omega), k_star).norm());
    }
    return Outcome{fnorm <= 1e-10 && expand <= 1e-12 && actor <= 1e-8,
                   "feature norm " + sci(fnorm) + ", projection expansion " + sci(expand) + ", ||E_K*|| " + sci(actor)};
  });

  c.emplace_back("algorithms: sample accounting, prefix means and determinism", [] {
    const LqrSystem sys = systems::example1();
    const OracleRefs refs = OracleRefs::of(sys);
    RngStream k0_rng(11);
    const Matrix k0 = random_stabilizing_gain(sys, refs.K_star, k0_rng, {.unit_direction = true}).K;
    SsacHyper sh;
    sh.T = 2000;
    sh.K0 = k0;
    RngStream a(12), b(12);
    const RunTrace t1 = ssac_train(sys, sh, a, {}, refs);
    const RunTrace t2 = ssac_train(sys, sh, b, {}, refs);
    bool ok = t1.env_interactions == 2000 && t1.final_K == t2.final_K && t1.records.size() == t2.records.size();
    double sy = 0, sc = 0, se = 0, worst = 0;
    for (std::size_t i = 0; i < t1.records.size(); ++i) {
      const RunRecord& r = t1.records[i];
      ok = ok && r.y_sq == t2.records[i].y_sq && r.critic_err_sq == t2.records[i].critic_err_sq;
      sy += r.y_sq;
      sc += r.critic_err_sq;
      se += r.nat_grad_sq;
      const double n = static_cast<double>(i + 1);
      worst = std::max({worst, std::abs(sy / n - r.A_T), std::abs(sc / n - r.B_T), std::abs(se / n - r.C_T)});
    }
    ZeroOrderHyper zh;
    zh.z = 3;
    zh.l = 4;
    zh.J_outer = 5;
    zh.K0 = k0;
    RngStream c(13);
    ok = ok && zeroth_order_train(sys, zh, c, {}, refs).env_interactions == 2 * 3 * 4 * 5;
    DoubleLoopHyper dh;
    dh.T_inner = 50;
    dh.J_outer = 2;
    dh.K0 = k0;
    RngStream d(14);
    try {
      ok = ok && double_loop_train(sys, dh, d, {}, refs).env_interactions == 100;
    } catch (const TrainingDivergence& e) {
      ok = ok && e.trace().records.size() <= 2;
    }
    return Outcome{ok && worst <= 1e-9 * std::max(1.0, sy), "prefix-mean recomputation error " + sci(worst)};
  });

  c.emplace_back("harness: aggregation, rate fit and CSV round trip", [] {
    RunTrace a, b;
    a.algorithm = b.algorithm = "ssac";
    for (long i = 1; i <= 30; ++i) {
      a.records.push_back({i, i, 1.0 / i, 2.0, 3.0, 4.0, 5.0, std::pow(i, -0.5), 1, 1});
      b.records.push_back({i, i, 3.0 / i, 2.0, 3.0, 4.0, 5.0, std::pow(i, -0.5), 1, 1});
    }
    const AggregateSeries agg = aggregate({&a, &b});
    bool ok = true;
    for (std::size_t i = 0; i < agg.iterations.size(); ++i) {
      ok = ok && agg.metrics.at("y_sq").mean[i] == (a.records[i].y_sq + b.records[i].y_sq) / 2;
      ok = ok && agg.metrics.at("y_sq").lo[i] <= agg.metrics.at("y_sq").mean[i];
    }
    std::vector<std::pair<double, double>> pts, flat;
    for (int i = 1; i <= 1000; ++i) {
      pts.emplace_back(i, std::pow(i, -0.5));
      flat.emplace_back(i, 7.0);
    }
    const double s1 = fit_rate(pts), s0 = fit_rate(flat);
    ok = ok && std::abs(s1 + 0.5) <= 1e-9 && std::abs(s0) <= 1e-9;
    a.records[3].critic_err_sq = std::numeric_limits<double>::quiet_NaN();
    a.records[4].k_err = 1.0 / 3.0;
    const std::vector<RunRecord> back = parse_trace_csv(trace_csv(a, {"0", {1}, true, true, 1.0, {}}));
    ok = ok && back.size() == a.records.size();
    for (std::size_t i = 0; ok && i < back.size(); ++i) {
      ok = back[i].iteration == a.records[i].iteration && back[i].k_err == a.records[i].k_err &&
           back[i].y_sq == a.records[i].y_sq &&
           (back[i].critic_err_sq == a.records[i].critic_err_sq ||
            (std::isnan(back[i].critic_err_sq) && std::isnan(a.records[i].critic_err_sq)));
    }
    return Outcome{ok, "slopes " + sci(s1) + " and " + sci(s0)};
  });

  return c;
}

/// Every check, in order: the four oracle-level checks first, then the invariants.
inline std::vector<CheckResult> run_verify_suite(const std::function<void(const CheckResult&)>& on_result = {}) {
  std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"oracle residuals (100 gains x 2 systems)", check_oracle_residuals},
      {"gradient vs central differences (20 gains)", check_gradient_fd},
      {"cost-difference identity, gradient domination, E_K* = 0", check_exact_identities},
      {"Monte-Carlo moments at the deadbeat gain (1e6 transitions)", [] { return check_moment_matching(); }},
  };
  for (auto& c : invariant_checks()) checks.push_back(std::move(c));
  std::vector<CheckResult> out;
  for (const auto& [name, body] : checks) {
    out.push_back(run_check(name, body));
    if (on_result) on_result(out.back());
  }
  return out;
}

}  // namespace lqrlab::harness
