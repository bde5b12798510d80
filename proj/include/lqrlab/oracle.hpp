#pragma once

// Closed-form quantities for a fixed stabilizing gain: value and covariance
// matrices, average cost, gradient and natural gradient, the Q-function
// kernel, the expected TD(0) system and the Riccati optimum.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "lqrlab/lqr_env.hpp"
#include "lqrlab/matlib.hpp"
#include "lqrlab/rng.hpp"

namespace lqrlab {

/// Quantities that need only the two Lyapunov solves.
struct PolicyValues {
  Matrix P;      // Q + K^T R K + (A-BK)^T P (A-BK)
  Matrix D;      // D_sigma + (A-BK) D (A-BK)^T
  double J = 0;  // Tr(P D_sigma) + sigma^2 Tr(R)
  Matrix E;      // (R + B^T P B) K - B^T P A
  Matrix grad;   // 2 E D
  Matrix Omega;  // [[Q + A^T P A, A^T P B], [B^T P A, R + B^T P B]]
};

struct OracleReport {
  Matrix P_K;
  Matrix D_K;
  Matrix Dtilde_K;
  Matrix L;
  double J = 0;
  Matrix grad_J;
  Matrix E_K;
  Matrix Omega_K;
  Vector omega_star;
  Matrix A_K;
  Vector b_K;
  double mu = 0;
};

namespace detail {

inline void require_stabilizing(const LqrSystem& sys, const Matrix& gain, const char* what) {
  if (gain.rows() != sys.action_dim() || gain.cols() != sys.state_dim()) {
    throw DimensionError(std::string(what) + ": gain has shape " + shape(gain));
  }
  if (spectral_radius_estimate(closed_loop(sys, gain)) >= 1.0) {
    throw InstabilityError(std::string(what) + ": gain is not stabilizing");
  }
}

}  // namespace detail

inline Matrix q_kernel(const LqrSystem& sys, const Matrix& P) {
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index k = sys.action_dim();
  Matrix omega(d + k, d + k);
  omega.topLeftCorner(d, d) = sys.Q + sys.A.transpose() * P * sys.A;
  omega.topRightCorner(d, k) = sys.A.transpose() * P * sys.B;
  omega.bottomLeftCorner(k, d) = sys.B.transpose() * P * sys.A;
  omega.bottomRightCorner(k, k) = sys.R + sys.B.transpose() * P * sys.B;
  return 0.5 * (omega + omega.transpose());
}

inline PolicyValues policy_values(const LqrSystem& sys, const Matrix& gain) {
  detail::require_stabilizing(sys, gain, "policy_values");
  const Matrix loop = closed_loop(sys, gain);
  PolicyValues v;
  v.P = solve_discrete_lyapunov(loop.transpose(), sys.Q + gain.transpose() * sys.R * gain);
  v.D = solve_discrete_lyapunov(loop, sys.D_sigma);
  v.J = (v.P * sys.D_sigma).trace() + sys.sigma * sys.sigma * sys.R.trace();
  v.E = (sys.R + sys.B.transpose() * v.P * sys.B) * gain - sys.B.transpose() * v.P * sys.A;
  v.grad = 2.0 * v.E * v.D;
  v.Omega = q_kernel(sys, v.P);
  return v;
}

/// Average cost J(K).
inline double average_cost(const LqrSystem& sys, const Matrix& gain) {
  detail::require_stabilizing(sys, gain, "average_cost");
  const Matrix loop = closed_loop(sys, gain);
  const Matrix P = solve_discrete_lyapunov(loop.transpose(), sys.Q + gain.transpose() * sys.R * gain);
  return (P * sys.D_sigma).trace() + sys.sigma * sys.sigma * sys.R.trace();
}

/// Joint closed loop on (x, u): [I; -K] [A B].
inline Matrix joint_closed_loop(const LqrSystem& sys, const Matrix& gain) {
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index k = sys.action_dim();
  Matrix lift(d + k, d);
  lift << Matrix::Identity(d, d), -gain;
  Matrix ab(d, d + k);
  ab << sys.A, sys.B;
  return lift * ab;
}

/// Stationary covariance of the stacked (x, u) given the state covariance.
inline Matrix joint_covariance(const LqrSystem& sys, const Matrix& gain, const Matrix& state_cov) {
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index k = sys.action_dim();
  Matrix lift(d + k, d);
  lift << Matrix::Identity(d, d), -gain;
  Matrix out = lift * state_cov * lift.transpose();
  out.bottomRightCorner(k, k) += sys.sigma * sys.sigma * Matrix::Identity(k, k);
  return 0.5 * (out + out.transpose());
}

/// svec of the stage-cost kernel blkdiag(Q, R), so that c(x, u) = phi^T cost_vector.
inline Vector cost_vector(const LqrSystem& sys) {
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index k = sys.action_dim();
  Matrix c = Matrix::Zero(d + k, d + k);
  c.topLeftCorner(d, d) = sys.Q;
  c.bottomRightCorner(k, k) = sys.R;
  return svec(c);
}

/// E[phi phi^T] = 2 (Dt (x)s Dt) + svec(Dt) svec(Dt)^T for the stationary joint covariance Dt.
inline Matrix feature_gram_from_cov(const Matrix& joint_cov) {
  const Vector s = svec(joint_cov);
  return 2.0 * sym_kron(joint_cov, joint_cov) + s * s.transpose();
}

inline Matrix expected_feature_gram(const LqrSystem& sys, const Matrix& gain) {
  detail::require_stabilizing(sys, gain, "expected_feature_gram");
  const Matrix D = stationary_covariance(sys, gain);
  return feature_gram_from_cov(joint_covariance(sys, gain, D));
}

/// Exact report for a stabilizing gain.
///
/// A_K = 2 (Dt (x)s Dt)(I - L^T (x)s L^T). b_K is computed independently
/// from moments, b_K = E[phi phi^T] svec(blkdiag(Q, R)) - J svec(Dt), so the
/// fixed-point identity A_K svec(Omega_K) = b_K is a genuine check.
inline OracleReport analytic_report(const LqrSystem& sys, const Matrix& gain) {
  const PolicyValues v = policy_values(sys, gain);
  OracleReport r;
  r.P_K = v.P;
  r.D_K = v.D;
  r.J = v.J;
  r.E_K = v.E;
  r.grad_J = v.grad;
  r.Omega_K = v.Omega;
  r.omega_star = svec(v.Omega);
  r.L = joint_closed_loop(sys, gain);
  r.Dtilde_K = joint_covariance(sys, gain, v.D);
  const Eigen::Index m = svec_dim(r.L.rows());
  const Matrix lt = r.L.transpose();
  r.A_K = 2.0 * sym_kron(r.Dtilde_K, r.Dtilde_K) * (Matrix::Identity(m, m) - sym_kron(lt, lt));
  r.b_K = feature_gram_from_cov(r.Dtilde_K) * cost_vector(sys) - v.J * svec(r.Dtilde_K);
  r.mu = min_singular_value(r.A_K);
  return r;
}

/// Q-function of the gain at (x, u).
inline double q_value(const LqrSystem& sys, const PolicyValues& v, const Vector& x, const Vector& u) {
  Vector z(x.size() + u.size());
  z << x, u;
  const double s2 = sys.sigma * sys.sigma;
  return z.dot(v.Omega * z) - (v.P * v.D).trace() - s2 * (sys.R.trace() + (v.P * sys.B * sys.B.transpose()).trace());
}

inline double q_value(const LqrSystem& sys, const Matrix& gain, const Vector& x, const Vector& u) {
  return q_value(sys, policy_values(sys, gain), x, u);
}

struct AreSolution {
  Matrix P;
  PolicyGain K;
};

/// Optimal gain by Riccati value iteration from P = Q.
inline AreSolution solve_are(const LqrSystem& sys) {
  constexpr long kMaxIterations = 1'000'000;
  const Matrix& A = sys.A;
  const Matrix& B = sys.B;
  Matrix P = sys.Q;
  bool converged = false;
  for (long it = 0; it < kMaxIterations; ++it) {
    const Matrix btpa = B.transpose() * P * A;
    const Matrix gain = (sys.R + B.transpose() * P * B).ldlt().solve(btpa);
    Matrix next = sys.Q + A.transpose() * P * A - btpa.transpose() * gain;
    next = 0.5 * (next + next.transpose());
    const double change = (next - P).norm();
    P = std::move(next);
    if (!std::isfinite(change)) break;
    if (change <= 1e-13 * P.norm()) {
      converged = true;
      break;
    }
  }
  if (!converged) throw NotStabilizableError("solve_are: Riccati iteration did not converge");
  Matrix gain = (sys.R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
  PolicyGain opt = PolicyGain::of(sys, std::move(gain));
  if (!opt.stabilizing()) throw NotStabilizableError("solve_are: limit gain is not stabilizing");
  const PolicyValues v = policy_values(sys, opt.K);
  if (v.E.norm() > 1e-8) {
    throw NumericError("solve_are: natural gradient at the Riccati gain is " + std::to_string(v.E.norm()));
  }
  return {std::move(P), std::move(opt)};
}

struct SmoothnessGap {
  double lhs;  // J(K') - J(K)
  double rhs;  // -2 Tr(D_K' (K-K')^T E_K) + Tr(D_K' (K-K')^T (R + B^T P_K B)(K-K'))
};

/// Both sides of the exact cost-difference identity between two stabilizing gains.
inline SmoothnessGap almost_smoothness_gap(const LqrSystem& sys, const Matrix& gain, const Matrix& other) {
  const PolicyValues at = policy_values(sys, gain);
  const PolicyValues next = policy_values(sys, other);
  const Matrix delta = gain - other;
  const Matrix curvature = sys.R + sys.B.transpose() * at.P * sys.B;
  const double rhs = -2.0 * (next.D * delta.transpose() * at.E).trace() +
                     (next.D * delta.transpose() * curvature * delta).trace();
  return {next.J - at.J, rhs};
}

struct DominationCheck {
  double gap;    // J(K) - J(K*)
  double bound;  // ||D_K*|| Tr(E_K^T E_K) / sigma_min(R)
};

inline DominationCheck gradient_domination_check(const LqrSystem& sys, const Matrix& gain,
                                                 const AreSolution& opt) {
  const PolicyValues at = policy_values(sys, gain);
  const PolicyValues best = policy_values(sys, opt.K.K);
  const double r_min = symmetric_eigenvalues(sys.R)(0);
  const double d_norm = symmetric_eigenvalues(best.D).maxCoeff();
  return {at.J - best.J, d_norm * (at.E.transpose() * at.E).trace() / r_min};
}

inline DominationCheck gradient_domination_check(const LqrSystem& sys, const Matrix& gain) {
  return gradient_domination_check(sys, gain, solve_are(sys));
}

struct PerturbationOptions {
  double scale = 1.0;           // initial tau
  bool unit_direction = false;  // normalize G to unit Frobenius norm
  double rho_max = 0.95;
  int draws_per_scale = 20;
  double anneal = 0.8;
};

/// K = center + tau G, rejection-sampled until rho(A - BK) <= rho_max; tau is
/// shrunk by `anneal` after every `draws_per_scale` rejections.
inline PolicyGain random_stabilizing_gain(const LqrSystem& sys, const Matrix& center, RngStream& rng,
                                          PerturbationOptions opts = {}) {
  double tau = opts.scale;
  for (int round = 0; round < 200; ++round) {
    for (int draw = 0; draw < opts.draws_per_scale; ++draw) {
      Matrix g = rng.normal_matrix(center.rows(), center.cols());
      if (opts.unit_direction) g /= g.norm();
      PolicyGain cand = PolicyGain::of(sys, center + tau * g);
      if (cand.rho_estimate <= opts.rho_max) return cand;
    }
    tau *= opts.anneal;
  }
  throw InstabilityError("random_stabilizing_gain: no stabilizing perturbation found");
}

}  // namespace lqrlab
