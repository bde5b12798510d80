#pragma once

// Linear-Gaussian plant x' = A x + B u + eps, eps ~ N(0, D0), driven by the
// Gaussian policy u ~ N(-K x, sigma^2 I).

#include <cmath>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lqrlab/matlib.hpp"
#include "lqrlab/rng.hpp"

namespace lqrlab {

struct LqrSystem {
  Matrix A;
  Matrix B;
  Matrix Q;
  Matrix R;
  Matrix D0;
  double sigma = 1.0;

  // derived by validate_system
  Matrix D_sigma;       // D0 + sigma^2 B B^T
  Matrix noise_factor;  // cholesky(D0), or zero for a noiseless plant

  Eigen::Index state_dim() const { return A.rows(); }
  Eigen::Index action_dim() const { return B.cols(); }
};

struct ValidationOptions {
  /// Accept D0 == 0 exactly (noiseless plant). Used by limit tests only.
  bool allow_zero_noise = false;
};

namespace detail {

inline void require_spd(const Matrix& m, const char* name) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, m.cwiseAbs().maxCoeff())) {
    throw ValidationError(std::string(name) + " is not symmetric");
  }
  try {
    (void)cholesky(m);
  } catch (const NotPositiveDefiniteError&) {
    throw ValidationError(std::string(name) + " is not positive definite");
  }
}

}  // namespace detail

/// Checks shapes and definiteness and fills the derived fields.
inline LqrSystem validate_system(LqrSystem sys, ValidationOptions opts = {}) {
  const Eigen::Index d = sys.A.rows();
  const Eigen::Index k = sys.B.cols();
  auto expect = [](const Matrix& m, Eigen::Index r, Eigen::Index c, const char* name) {
    if (m.rows() != r || m.cols() != c) {
      throw ValidationError(std::string(name) + " has shape " + detail::shape(m) + ", expected " +
                            std::to_string(r) + "x" + std::to_string(c));
    }
  };
  if (d == 0 || k == 0) throw ValidationError("empty system");
  expect(sys.A, d, d, "A");
  expect(sys.B, d, k, "B");
  expect(sys.Q, d, d, "Q");
  expect(sys.R, k, k, "R");
  expect(sys.D0, d, d, "D0");
  if (!std::isfinite(sys.sigma) || sys.sigma < 0.0) throw ValidationError("sigma must be finite and >= 0");
  for (const Matrix* m : {&sys.A, &sys.B, &sys.Q, &sys.R, &sys.D0}) {
    if (!m->allFinite()) throw ValidationError("non-finite matrix entry");
  }
  detail::require_spd(sys.Q, "Q");
  detail::require_spd(sys.R, "R");
  if (opts.allow_zero_noise && sys.D0.isZero(0.0)) {
    sys.noise_factor = Matrix::Zero(d, d);
  } else {
    detail::require_spd(sys.D0, "D0");
    sys.noise_factor = cholesky(sys.D0);
  }
  sys.D_sigma = sys.D0 + sys.sigma * sys.sigma * sys.B * sys.B.transpose();
  if (sys.sigma > 0.0 || !opts.allow_zero_noise) detail::require_spd(sys.D_sigma, "D_sigma");
  return sys;
}

/// Same plant with a different exploration level.
inline LqrSystem with_sigma(const LqrSystem& sys, double sigma) {
  LqrSystem out = sys;
  out.sigma = sigma;
  const bool noiseless = sys.noise_factor.size() > 0 && sys.noise_factor.isZero(0.0);
  return validate_system(std::move(out), {.allow_zero_noise = noiseless});
}

/// Policy parameter with its closed-loop spectral-radius estimate.
struct PolicyGain {
  Matrix K;
  double rho_estimate = 0.0;

  static PolicyGain of(const LqrSystem& sys, Matrix gain) {
    if (gain.rows() != sys.action_dim() || gain.cols() != sys.state_dim()) {
      throw DimensionError("gain has shape " + detail::shape(gain) + ", expected " +
                           std::to_string(sys.action_dim()) + "x" + std::to_string(sys.state_dim()));
    }
    const double rho = spectral_radius_estimate(sys.A - sys.B * gain);
    return PolicyGain{std::move(gain), rho};
  }

  bool stabilizing(double margin = 1e-6) const { return rho_estimate < 1.0 - margin; }
};

inline Matrix closed_loop(const LqrSystem& sys, const Matrix& gain) { return sys.A - sys.B * gain; }

/// u = -K x + sigma * zeta, zeta ~ N(0, I_k).
inline Vector policy_action(const Matrix& gain, const Vector& x, double sigma, RngStream& rng) {
  if (gain.cols() != x.size()) throw DimensionError("policy_action: gain/state mismatch");
  Vector u = -gain * x;
  if (sigma != 0.0) {
    u += sigma * rng.normal_vector(gain.rows());
  } else {
    // keep stream consumption independent of sigma
    (void)rng.normal_vector(gain.rows());
  }
  return u;
}

inline Vector policy_action(const PolicyGain& gain, const Vector& x, double sigma, RngStream& rng) {
  return policy_action(gain.K, x, sigma, rng);
}

inline double stage_cost(const LqrSystem& sys, const Vector& x, const Vector& u) {
  return x.dot(sys.Q * x) + u.dot(sys.R * u);
}

struct StepResult {
  double cost;
  Vector x_next;
};

inline StepResult step(const LqrSystem& sys, const Vector& x, const Vector& u, RngStream& rng) {
  if (x.size() != sys.state_dim() || u.size() != sys.action_dim()) {
    throw DimensionError("step: state/action dimension mismatch");
  }
  Vector next = sys.A * x + sys.B * u + sys.noise_factor * rng.normal_vector(sys.state_dim());
  return {stage_cost(sys, x, u), std::move(next)};
}

/// One observed tuple (x, u, c, x', u') under a fixed gain.
struct Transition {
  Vector x;
  Vector u;
  double cost;
  Vector x_next;
  Vector u_next;
};

inline Transition transition_from(const LqrSystem& sys, const Matrix& gain, Vector x, RngStream& rng) {
  Vector u = policy_action(gain, x, sys.sigma, rng);
  auto [cost, next] = step(sys, x, u, rng);
  Vector u_next = policy_action(gain, next, sys.sigma, rng);
  return {std::move(x), std::move(u), cost, std::move(next), std::move(u_next)};
}

struct ExactStationary {};
struct BurnIn {
  long steps = 200;
};
using StationaryMode = std::variant<ExactStationary, BurnIn>;

/// Stationary state covariance D_K solving D = D_sigma + (A - BK) D (A - BK)^T.
inline Matrix stationary_covariance(const LqrSystem& sys, const Matrix& gain) {
  return solve_discrete_lyapunov(closed_loop(sys, gain), sys.D_sigma);
}

/// Draws from N(0, G G^T) given the factor G.
inline Vector sample_gaussian(const Matrix& factor, RngStream& rng) {
  return factor * rng.normal_vector(factor.cols());
}

/// Draws a state from the closed-loop stationary law (exactly, or by burn-in from x = 0).
inline Vector sample_stationary(const LqrSystem& sys, const Matrix& gain, RngStream& rng,
                                StationaryMode mode = ExactStationary{}) {
  const Matrix loop = closed_loop(sys, gain);
  if (spectral_radius_estimate(loop) >= 1.0) {
    throw InstabilityError("sample_stationary: gain is not stabilizing");
  }
  if (std::holds_alternative<ExactStationary>(mode)) {
    const Matrix cov = solve_discrete_lyapunov(loop, sys.D_sigma);
    return sample_gaussian(cholesky(cov), rng);
  }
  const long n = std::get<BurnIn>(mode).steps;
  Vector x = Vector::Zero(sys.state_dim());
  for (long t = 0; t < n; ++t) {
    const Vector u = policy_action(gain, x, sys.sigma, rng);
    x = step(sys, x, u, rng).x_next;
  }
  return x;
}

struct Rollout {
  std::vector<double> costs;
  std::vector<Vector> states;
};

inline constexpr double kDivergenceNorm = 1e12;

/// Simulates the stochastic closed loop for `length` steps from x0.
inline Rollout rollout(const LqrSystem& sys, const Matrix& gain, Vector x0, long length, RngStream& rng) {
  if (length < 1) throw DimensionError("rollout: length must be >= 1");
  Rollout out;
  out.costs.reserve(static_cast<std::size_t>(length));
  out.states.reserve(static_cast<std::size_t>(length));
  Vector x = std::move(x0);
  for (long t = 0; t < length; ++t) {
    if (!(x.norm() <= kDivergenceNorm)) {
      throw DivergenceError("rollout: state norm exceeded 1e12 at step " + std::to_string(t));
    }
    const Vector u = policy_action(gain, x, sys.sigma, rng);
    auto [cost, next] = step(sys, x, u, rng);
    out.costs.push_back(cost);
    out.states.push_back(std::move(x));
    x = std::move(next);
  }
  return out;
}

namespace systems {

inline Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = static_cast<Eigen::Index>(rows.begin()->size());
  Matrix m(r, c);
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

/// Two-state benchmark: A = B = [[0,1],[1,0]], Q = [[9,2],[2,1]], R = [[1,2],[2,8]].
inline LqrSystem example1(double sigma = 1.0) {
  LqrSystem s;
  s.A = from_rows({{0, 1}, {1, 0}});
  s.B = from_rows({{0, 1}, {1, 0}});
  s.Q = from_rows({{9, 2}, {2, 1}});
  s.R = from_rows({{1, 2}, {2, 8}});
  s.D0 = Matrix::Identity(2, 2);
  s.sigma = sigma;
  return validate_system(std::move(s));
}

/// Four-state, three-input benchmark.
inline LqrSystem example2(double sigma = 1.0) {
  LqrSystem s;
  s.A = from_rows({{0.2, 0.1, 1, 0}, {0.2, 0.1, 0.1, 0}, {0, 0.1, 0.5, 0}, {0, 0, 0, 0.5}});
  s.B = from_rows({{0.3, 0, 0}, {0.2, 0, 0.3}, {1, 1, 0.3}, {0.3, 0.1, 0.1}});
  s.Q = from_rows({{1, 0, 0.2, 0}, {0, 1, 0.1, 0}, {0.2, 0.1, 1, 0.1}, {0, 0, 0.1, 1}});
  s.R = from_rows({{1, 0.1, 1}, {0.1, 1, 0.5}, {1, 0.5, 2}});
  s.D0 = Matrix::Identity(4, 4);
  s.sigma = sigma;
  return validate_system(std::move(s));
}

}  // namespace systems

}  // namespace lqrlab
