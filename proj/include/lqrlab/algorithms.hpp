#pragma once

// Learners for the average-cost LQR problem:
//   * ssac_train         single-sample single-timescale actor-critic
//   * zeroth_order_train zeroth-order natural policy gradient (two-point rollouts)
//   * double_loop_train  double-loop natural actor-critic (primal-dual GTD critic)
// Every learner emits a RunTrace whose error columns are measured against the
// exact oracle.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lqrlab/lqr_env.hpp"
#include "lqrlab/matlib.hpp"
#include "lqrlab/oracle.hpp"
#include "lqrlab/rng.hpp"

namespace lqrlab {

/// phi(x, u) = svec([x; u][x; u]^T).
inline Vector feature(const Vector& x, const Vector& u) {
  const Eigen::Index d = x.size();
  const Eigen::Index n = d + u.size();
  auto at = [&](Eigen::Index i) { return i < d ? x(i) : u(i - d); };
  Vector phi(svec_dim(n));
  Eigen::Index pos = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double zj = at(j);
    for (Eigen::Index i = 0; i < j; ++i) phi(pos++) = M_SQRT2 * at(i) * zj;
    phi(pos++) = zj * zj;
  }
  return phi;
}

/// smat(omega)^{22} K - smat(omega)^{21}: the critic's natural-gradient estimate.
inline Matrix natural_gradient_estimate(const Vector& omega, const Matrix& gain) {
  const Eigen::Index k = gain.rows();
  const Eigen::Index d = gain.cols();
  if (svec_order(omega.size()) != d + k) {
    throw DimensionError("natural_gradient_estimate: critic length " + std::to_string(omega.size()) +
                         " does not match gain " + detail::shape(gain));
  }
  const Matrix theta = smat(omega);
  return theta.bottomRightCorner(k, k) * gain - theta.bottomLeftCorner(k, d);
}

/// Euclidean projection onto the ball of the given radius.
inline Vector proj_ball(const Vector& v, double radius) {
  const double n = v.norm();
  return n <= radius ? v : Vector(v * (radius / n));
}

inline double proj_ball(double v, double radius) {
  return std::abs(v) <= radius ? v : std::copysign(radius, v);
}

/// One recorded iteration. Squared errors are per-iteration values; A_T,
/// B_T and C_T are prefix means of y_sq, critic_err_sq and nat_grad_sq over
/// every iteration up to and including this one (not just recorded ones).
struct RunRecord {
  long iteration = 0;
  long samples = 0;  // environment interactions consumed before this iteration
  double y_sq = 0;
  double critic_err_sq = 0;
  double nat_grad_sq = 0;
  double actor_gap = 0;
  double k_err = 0;
  double A_T = 0;
  double B_T = 0;
  double C_T = 0;
};

struct RunTrace {
  std::string algorithm;
  std::vector<RunRecord> records;
  Matrix final_K;
  Vector final_omega;  // critic parameters at exit (actor-critic learners)
  double final_eta = 0;
  long env_interactions = 0;
  std::vector<std::string> warnings;
};

/// A learner left the stabilizing region; carries the trace so far.
class TrainingDivergence : public DivergenceError {
 public:
  TrainingDivergence(const std::string& what, RunTrace trace)
      : DivergenceError(what), trace_(std::move(trace)) {}
  const RunTrace& trace() const { return trace_; }

 private:
  RunTrace trace_;
};

/// Options shared by every learner.
struct TrainOptions {
  bool oracle_refs = true;
  long record_stride = 1;
  double lambda_max = 0.999;  // gains with rho estimate >= lambda_max abort the run
};

/// Incremental prefix means plus strided recording. NaN inputs (metrics a
/// learner does not define) are left out of their prefix mean.
class TraceBuilder {
 public:
  TraceBuilder(std::string algorithm, long stride) : stride_(stride < 1 ? 1 : stride) {
    trace_.algorithm = std::move(algorithm);
  }

  void observe(long iteration, long samples, double y_sq, double critic_sq, double grad_sq, double gap,
               double k_err, bool force_record = false) {
    y_.add(y_sq);
    z_.add(critic_sq);
    e_.add(grad_sq);
    if (!force_record && iteration % stride_ != 0) return;
    trace_.records.push_back({iteration, samples, y_sq, critic_sq, grad_sq, gap, k_err, y_.mean(), z_.mean(), e_.mean()});
  }

  RunTrace& trace() { return trace_; }
  RunTrace take() { return std::move(trace_); }

 private:
  struct PrefixMean {
    double sum = 0;
    long count = 0;
    void add(double v) {
      if (std::isnan(v)) return;
      sum += v;
      ++count;
    }
    double mean() const { return count == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(count); }
  };

  RunTrace trace_;
  long stride_;
  PrefixMean y_, z_, e_;
};

/// Reference values for error columns.
struct OracleRefs {
  Matrix K_star;
  double J_star = 0;

  static OracleRefs of(const LqrSystem& sys) {
    const AreSolution opt = solve_are(sys);
    return {opt.K.K, average_cost(sys, opt.K.K)};
  }
};

namespace detail {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline void check_stable(const LqrSystem& sys, const Matrix& gain, const TrainOptions& opts, TraceBuilder& tb,
                         long iteration) {
  const double rho = spectral_radius_estimate(closed_loop(sys, gain));
  if (!(rho < opts.lambda_max)) {
    tb.trace().final_K = gain;
    throw TrainingDivergence("gain left the stabilizing region at iteration " + std::to_string(iteration) +
                                 " (rho estimate " + std::to_string(rho) + ")",
                             tb.take());
  }
}

}  // namespace detail

// --------------------------------------------------------------------------
// Single-sample single-timescale actor-critic
// --------------------------------------------------------------------------

struct SsacHyper {
  long T = 1'000'000;
  double c_alpha = 0.005;  // alpha = c_alpha / sqrt(T)
  double c_beta = 0.01;    // beta  = c_beta / sqrt(T)
  double c_gamma = 0.1;    // gamma = c_gamma / sqrt(T)
  double sigma = 1.0;
  double omega_radius = 1e6;
  double eta_radius = 1e6;
  Matrix K0;
  Vector omega0;  // empty means zero
  double eta0 = 0.0;
  StationaryMode sampling = ExactStationary{};
  /// Reuse x'_t as the next state instead of a fresh stationary draw.
  bool chained = false;
};

/// Runs the actor-critic for hp.T iterations, one transition per iteration.
///
/// Per iteration: x ~ stationary(K_t), u ~ pi_K(x), (c, x') from the plant,
/// u' ~ pi_K(x'); then
///   delta = c - eta + phi(x', u')^T omega - phi(x, u)^T omega
///   eta   <- proj(eta + gamma (c - eta))
///   omega <- proj(omega + beta delta phi(x, u))
///   K     <- K - alpha (smat(omega_old)^{22} K - smat(omega_old)^{21})
/// The actor step uses the critic from before this iteration's update.
inline RunTrace ssac_train(const LqrSystem& plant, const SsacHyper& hp, RngStream& rng,
                           const TrainOptions& opts = {}, const std::optional<OracleRefs>& refs_in = {}) {
  if (hp.T < 0) throw DimensionError("ssac_train: T must be >= 0");
  if (!(hp.c_alpha > 0 && hp.c_beta > 0 && hp.c_gamma > 0)) {
    throw DimensionError("ssac_train: stepsize numerators must be positive");
  }
  const LqrSystem sys = with_sigma(plant, hp.sigma);
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index k = sys.action_dim();
  const Eigen::Index m = svec_dim(d + k);

  Matrix K = hp.K0;
  if (K.rows() != k || K.cols() != d) throw DimensionError("ssac_train: K0 has shape " + detail::shape(K));
  Vector omega = hp.omega0.size() == 0 ? Vector(Vector::Zero(m)) : hp.omega0;
  if (omega.size() != m) throw DimensionError("ssac_train: omega0 has wrong length");
  double eta = hp.eta0;

  std::optional<OracleRefs> refs = refs_in;
  if (opts.oracle_refs && !refs) refs = OracleRefs::of(sys);

  TraceBuilder tb("ssac", opts.record_stride);
  const double root_t = std::sqrt(static_cast<double>(std::max<long>(hp.T, 1)));
  const double alpha = hp.c_alpha / root_t;
  const double beta = hp.c_beta / root_t;
  const double gamma = hp.c_gamma / root_t;

  auto observe = [&](long t, bool final_record, const PolicyValues& v) {
    const double y = eta - v.J;
    const double z2 = (omega - svec(v.Omega)).squaredNorm();
    tb.observe(t, t, y * y, z2, v.E.squaredNorm(), v.J - refs->J_star, (K - refs->K_star).norm(), final_record);
  };

  Vector carried;
  for (long t = 0; t < hp.T; ++t) {
    detail::check_stable(sys, K, opts, tb, t);

    Matrix state_cov;
    if (opts.oracle_refs) {
      const PolicyValues v = policy_values(sys, K);
      observe(t, false, v);
      state_cov = v.D;
    } else if (std::holds_alternative<ExactStationary>(hp.sampling)) {
      state_cov = stationary_covariance(sys, K);
    }

    Vector x;
    if (hp.chained && carried.size() == d) {
      x = std::move(carried);
    } else if (std::holds_alternative<ExactStationary>(hp.sampling)) {
      x = sample_gaussian(cholesky(state_cov), rng);
    } else {
      x = sample_stationary(sys, K, rng, hp.sampling);
    }
    const Transition tr = transition_from(sys, K, std::move(x), rng);

    const Vector phi = feature(tr.x, tr.u);
    const Vector phi_next = feature(tr.x_next, tr.u_next);
    const double delta = tr.cost - eta + phi_next.dot(omega) - phi.dot(omega);
    if (!std::isfinite(delta)) throw NumericError("ssac_train: non-finite TD error at iteration " + std::to_string(t));

    const Matrix step_dir = natural_gradient_estimate(omega, K);
    eta = proj_ball(eta + gamma * (tr.cost - eta), hp.eta_radius);
    omega = proj_ball(Vector(omega + beta * delta * phi), hp.omega_radius);
    K -= alpha * step_dir;
    if (hp.chained) carried = tr.x_next;
  }

  detail::check_stable(sys, K, opts, tb, hp.T);
  if (opts.oracle_refs && hp.T > 0) observe(hp.T, true, policy_values(sys, K));
  RunTrace trace = tb.take();
  trace.final_K = K;
  trace.final_omega = omega;
  trace.final_eta = eta;
  trace.env_interactions = hp.T;
  return trace;
}

// --------------------------------------------------------------------------
// Zeroth-order natural policy gradient
// --------------------------------------------------------------------------

enum class InitialStateLaw { ProcessNoise, Stationary };

struct ZeroOrderHyper {
  long z = 5000;   // trajectories per outer step
  long l = 20;     // rollout length
  double r = 0.1;  // perturbation amplitude
  double eta = 0.01;
  long J_outer = 1000;
  Matrix K0;
  InitialStateLaw initial_state = InitialStateLaw::ProcessNoise;
};

/// Draws U with i.i.d. Gaussian entries scaled to unit Frobenius norm.
inline Matrix unit_sphere_matrix(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
  Matrix u = rng.normal_matrix(rows, cols);
  return u / u.norm();
}

/// Two-point rollout estimator: per outer step, z pairs of length-l rollouts
/// from a shared x0 (one at K, one at K + rU). Costs are per-rollout sums.
///   grad  = (1/z) sum (J_hat(K + rU_i) - J_hat_i(K)) / r * U_i
///   Sigma = (1/z) sum sum_t y_t y_t^T
///   K    <- K - eta grad Sigma^{-1}
inline RunTrace zeroth_order_train(const LqrSystem& sys, const ZeroOrderHyper& hp, RngStream& rng,
                                   const TrainOptions& opts = {}, const std::optional<OracleRefs>& refs_in = {}) {
  if (hp.z < 1 || hp.l < 1 || !(hp.r > 0)) throw DimensionError("zeroth_order_train: need z, l >= 1 and r > 0");
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index k = sys.action_dim();
  Matrix K = hp.K0;
  if (K.rows() != k || K.cols() != d) throw DimensionError("zeroth_order_train: K0 has shape " + detail::shape(K));

  std::optional<OracleRefs> refs = refs_in;
  if (opts.oracle_refs && !refs) refs = OracleRefs::of(sys);

  TraceBuilder tb("zeroth_order", opts.record_stride);
  const long per_step = 2 * hp.z * hp.l;
  long samples = 0;

  auto observe = [&](long j, bool final_record) {
    const PolicyValues v = policy_values(sys, K);
    tb.observe(j, samples, detail::kNaN, detail::kNaN, v.E.squaredNorm(), v.J - refs->J_star,
               (K - refs->K_star).norm(), final_record);
  };

  for (long j = 0; j < hp.J_outer; ++j) {
    detail::check_stable(sys, K, opts, tb, j);
    if (opts.oracle_refs) observe(j, false);

    Matrix grad = Matrix::Zero(k, d);
    Matrix gram = Matrix::Zero(d, d);
    Matrix state_factor;
    if (hp.initial_state == InitialStateLaw::Stationary) state_factor = cholesky(stationary_covariance(sys, K));
    for (long i = 0; i < hp.z; ++i) {
      const Vector x0 = hp.initial_state == InitialStateLaw::Stationary
                            ? sample_gaussian(state_factor, rng)
                            : sample_gaussian(sys.noise_factor, rng);
      const Matrix u_dir = unit_sphere_matrix(k, d, rng);
      double base = 0.0;
      double perturbed = 0.0;
      try {
        const Rollout nominal = rollout(sys, K, x0, hp.l, rng);
        for (double c : nominal.costs) base += c;
        for (const Vector& y : nominal.states) gram.noalias() += y * y.transpose();
        const Rollout moved = rollout(sys, K + hp.r * u_dir, x0, hp.l, rng);
        for (double c : moved.costs) perturbed += c;
      } catch (const DivergenceError& e) {
        tb.trace().final_K = K;
        throw TrainingDivergence(std::string("zeroth_order_train: ") + e.what(), tb.take());
      }
      grad += ((perturbed - base) / hp.r) * u_dir;
    }
    grad /= static_cast<double>(hp.z);
    gram /= static_cast<double>(hp.z);
    samples += per_step;

    try {
      (void)cholesky(gram);
    } catch (const NotPositiveDefiniteError&) {
      gram += 1e-9 * Matrix::Identity(d, d);
      tb.trace().warnings.push_back("outer step " + std::to_string(j) + ": singular state gram regularized");
    }
    // grad * Sigma^{-1} with Sigma symmetric
    const Matrix direction = gram.ldlt().solve(grad.transpose()).transpose();
    if (!direction.allFinite()) throw NumericError("zeroth_order_train: non-finite update");
    K -= hp.eta * direction;
  }

  detail::check_stable(sys, K, opts, tb, hp.J_outer);
  if (opts.oracle_refs && hp.J_outer > 0) observe(hp.J_outer, true);
  RunTrace trace = tb.take();
  trace.final_K = K;
  trace.env_interactions = samples;
  return trace;
}

// --------------------------------------------------------------------------
// Double-loop natural actor-critic
// --------------------------------------------------------------------------

struct DoubleLoopHyper {
  long T_inner = 500'000;
  long J_outer = 100;
  double eta = 0.05;
  double sigma = 0.2;
  double alpha_c = 0.01;  // inner stepsize alpha_t = alpha_c / sqrt(1 + t)
  double primal_radius = 1e6;
  double dual_radius = 1e6;
  Matrix K0;
  double v1_init = 0.0;
  Vector v2_init;  // empty means zero
};

struct InnerEstimate {
  Vector v2_avg;   // stepsize-weighted average of v2
  double v1 = 0;   // last average-cost iterate
};

namespace detail {

/// Primal-dual GTD critic for a fixed gain; consumes exactly T_inner plant steps.
inline InnerEstimate gtd_critic(const LqrSystem& sys, const Matrix& K, const DoubleLoopHyper& hp, RngStream& rng) {
  const Eigen::Index m = svec_dim(sys.state_dim() + sys.action_dim());
  double v1 = hp.v1_init;
  Vector v2 = hp.v2_init.size() == 0 ? Vector(Vector::Zero(m)) : hp.v2_init;
  if (v2.size() != m) throw DimensionError("double_loop_train: v2_init has wrong length");
  double w1 = 0.0;
  Vector w2 = Vector::Zero(m);

  Vector x_prev = sample_gaussian(cholesky(stationary_covariance(sys, K)), rng);
  Vector u_prev = policy_action(K, x_prev, sys.sigma, rng);
  auto first = step(sys, x_prev, u_prev, rng);
  double c_prev = first.cost;
  Vector x = std::move(first.x_next);
  Vector phi_prev = feature(x_prev, u_prev);

  Vector acc = Vector::Zero(m);
  double weight = 0.0;
  for (long t = 1; t <= hp.T_inner; ++t) {
    if (!(x.norm() <= kDivergenceNorm)) throw DivergenceError("double_loop_train: state diverged");
    const Vector u = policy_action(K, x, sys.sigma, rng);
    const Vector phi = feature(x, u);
    const double a = hp.alpha_c / std::sqrt(1.0 + static_cast<double>(t));
    const Vector diff = phi_prev - phi;
    const double delta = v1 - c_prev + diff.dot(v2);
    const double dual_proj = phi_prev.dot(w2);

    double v1_next = v1 - a * (w1 + dual_proj);
    Vector v2_next = v2 - a * dual_proj * diff;
    double w1_next = (1.0 - a) * w1 + a * (v1 - c_prev);
    Vector w2_next = (1.0 - a) * w2 + a * delta * phi_prev;
    if (!std::isfinite(delta)) throw NumericError("double_loop_train: non-finite TD error");

    // joint projection of (v1, v2) and (w1, w2)
    const double vn = std::sqrt(v1_next * v1_next + v2_next.squaredNorm());
    if (vn > hp.primal_radius) {
      v1_next *= hp.primal_radius / vn;
      v2_next *= hp.primal_radius / vn;
    }
    const double wn = std::sqrt(w1_next * w1_next + w2_next.squaredNorm());
    if (wn > hp.dual_radius) {
      w1_next *= hp.dual_radius / wn;
      w2_next *= hp.dual_radius / wn;
    }
    v1 = v1_next;
    v2 = std::move(v2_next);
    w1 = w1_next;
    w2 = std::move(w2_next);
    acc += a * v2;
    weight += a;

    if (t < hp.T_inner) {
      auto next = step(sys, x, u, rng);
      c_prev = next.cost;
      x_prev = std::move(x);
      x = std::move(next.x_next);
      phi_prev = phi;
    }
  }
  return {acc / weight, v1};
}

}  // namespace detail

/// Outer loop: K <- K - eta (Theta^{22} K - Theta^{21}), Theta = smat(v2_avg).
inline RunTrace double_loop_train(const LqrSystem& plant, const DoubleLoopHyper& hp, RngStream& rng,
                                  const TrainOptions& opts = {}, const std::optional<OracleRefs>& refs_in = {}) {
  if (hp.T_inner < 1) throw DimensionError("double_loop_train: T_inner must be >= 1");
  if (hp.J_outer < 0) throw DimensionError("double_loop_train: J_outer must be >= 0");
  const LqrSystem sys = with_sigma(plant, hp.sigma);
  Matrix K = hp.K0;
  if (K.rows() != sys.action_dim() || K.cols() != sys.state_dim()) {
    throw DimensionError("double_loop_train: K0 has shape " + detail::shape(K));
  }
  std::optional<OracleRefs> refs = refs_in;
  if (opts.oracle_refs && !refs) refs = OracleRefs::of(sys);

  TraceBuilder tb("double_loop", opts.record_stride);
  long samples = 0;
  InnerEstimate est;
  for (long j = 0; j < hp.J_outer; ++j) {
    detail::check_stable(sys, K, opts, tb, j);
    try {
      est = detail::gtd_critic(sys, K, hp, rng);
    } catch (const DivergenceError& e) {
      tb.trace().final_K = K;
      throw TrainingDivergence(e.what(), tb.take());
    }
    if (opts.oracle_refs) {
      const PolicyValues v = policy_values(sys, K);
      const double y = est.v1 - v.J;
      tb.observe(j, samples, y * y, (est.v2_avg - svec(v.Omega)).squaredNorm(), v.E.squaredNorm(),
                 v.J - refs->J_star, (K - refs->K_star).norm());
    }
    samples += hp.T_inner;
    K -= hp.eta * natural_gradient_estimate(est.v2_avg, K);
  }
  detail::check_stable(sys, K, opts, tb, hp.J_outer);
  if (opts.oracle_refs && hp.J_outer > 0) {
    const PolicyValues v = policy_values(sys, K);
    tb.observe(hp.J_outer, samples, detail::kNaN, detail::kNaN, v.E.squaredNorm(), v.J - refs->J_star,
               (K - refs->K_star).norm(), true);
  }
  RunTrace trace = tb.take();
  trace.final_K = K;
  trace.final_omega = est.v2_avg;
  trace.final_eta = est.v1;
  trace.env_interactions = samples;
  return trace;
}

}  // namespace lqrlab
