#pragma once

// Dense small-matrix kernel: symmetric vectorization, the symmetric
// Kronecker product, a discrete Lyapunov solver, a norm-power spectral
// radius estimate and Cholesky factorization.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "lqrlab/errors.hpp"

namespace lqrlab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace detail {

inline std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw DimensionError(std::string(what) + ": expected square matrix, got " + shape(m));
  }
}

}  // namespace detail

/// Length of the symmetric vectorization of an n x n matrix.
constexpr Eigen::Index svec_dim(Eigen::Index n) { return n * (n + 1) / 2; }

/// Inverse of svec_dim; returns -1 when len is not a triangular number.
inline Eigen::Index svec_order(Eigen::Index len) {
  if (len < 0) return -1;
  auto n = static_cast<Eigen::Index>(std::floor((std::sqrt(8.0 * static_cast<double>(len) + 1.0) - 1.0) / 2.0));
  // guard against rounding in the square root
  while (svec_dim(n) < len) ++n;
  while (n > 0 && svec_dim(n) > len) --n;
  return svec_dim(n) == len ? n : -1;
}

/// Position of entry (i, j), i <= j, inside svec: column-stacked upper triangle.
constexpr Eigen::Index svec_index(Eigen::Index i, Eigen::Index j) { return j * (j + 1) / 2 + i; }

/// Norm-preserving vectorization of a symmetric matrix.
///
/// Entries are taken column by column from the upper triangle (outer index
/// j, inner index i <= j). Off-diagonal entries are scaled by sqrt(2) so that
/// <svec(M), svec(N)> = Tr(MN). The input is symmetrized first.
inline Vector svec(const Matrix& m) {
  detail::require_square(m, "svec");
  const Eigen::Index n = m.rows();
  Vector v(svec_dim(n));
  Eigen::Index pos = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      v(pos++) = M_SQRT2 * 0.5 * (m(i, j) + m(j, i));
    }
    v(pos++) = m(j, j);
  }
  return v;
}

/// Inverse of svec.
inline Matrix smat(const Vector& v) {
  const Eigen::Index n = svec_order(v.size());
  if (n < 0) {
    throw DimensionError("smat: length " + std::to_string(v.size()) + " is not a triangular number");
  }
  Matrix m(n, n);
  Eigen::Index pos = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      const double x = v(pos++) / M_SQRT2;
      m(i, j) = x;
      m(j, i) = x;
    }
    m(j, j) = v(pos++);
  }
  return m;
}

/// Symmetric Kronecker product.
///
/// Returns the operator on svec space with
///   (a (x)s b) svec(S) = svec((a S b^T + b S a^T) / 2)
/// for every symmetric S, built column by column from the svec basis.
inline Matrix sym_kron(const Matrix& a, const Matrix& b) {
  detail::require_square(a, "sym_kron");
  detail::require_square(b, "sym_kron");
  if (a.rows() != b.rows()) {
    throw DimensionError("sym_kron: operands " + detail::shape(a) + " and " + detail::shape(b));
  }
  const Eigen::Index n = a.rows();
  const Eigen::Index m = svec_dim(n);
  Matrix out(m, m);
  Matrix basis = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) {
      // smat of the unit vector at svec_index(i, j)
      if (i == j) {
        basis(i, i) = 1.0;
      } else {
        basis(i, j) = basis(j, i) = 1.0 / M_SQRT2;
      }
      const Matrix image = 0.5 * (a * basis * b.transpose() + b * basis * a.transpose());
      out.col(svec_index(i, j)) = svec(image);
      basis(i, j) = basis(j, i) = 0.0;
    }
  }
  return out;
}

/// Largest singular value of m by power iteration on m^T m.
inline double spectral_norm_estimate(const Matrix& m, int iterations = 50, double tol = 1e-10) {
  if (m.size() == 0) return 0.0;
  const Matrix gram = m.transpose() * m;
  Eigen::Index best = 0;
  gram.colwise().norm().maxCoeff(&best);
  Vector x = gram.col(best);
  double norm = x.norm();
  if (norm == 0.0) return 0.0;
  x /= norm;
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Vector y = gram * x;
    const double next = y.norm();
    if (next == 0.0) return 0.0;
    x = y / next;
    const bool done = std::abs(next - lambda) <= tol * next;
    lambda = next;
    if (done) break;
  }
  return std::sqrt(lambda);
}

/// Spectral radius estimate rho ~ ||M^k||_2^(1/k) with k = 128.
///
/// M^128 is formed by seven squarings with the running power rescaled to unit
/// Frobenius norm, so large or tiny radii neither overflow nor underflow. The
/// result is an upper bound on rho(M) that tightens geometrically in k; it is
/// exact (to rounding) for normal matrices.
inline double spectral_radius_estimate(const Matrix& m) {
  detail::require_square(m, "spectral_radius_estimate");
  constexpr int kSquarings = 7;
  constexpr double kPower = 128.0;
  if (m.size() == 0) return 0.0;
  Matrix p = m;
  double log_scale = 0.0;
  for (int s = 0; s < kSquarings; ++s) {
    const double f = p.norm();
    if (f == 0.0 || !std::isfinite(f)) {
      if (f == 0.0) return 0.0;
      throw NumericError("spectral_radius_estimate: non-finite entries");
    }
    p /= f;
    log_scale += std::log(f) * std::pow(2.0, kSquarings - s);
    p = p * p;
  }
  const double top = spectral_norm_estimate(p);
  if (top == 0.0) return 0.0;
  return std::exp((log_scale + std::log(top)) / kPower);
}

enum class LyapunovMethod { Automatic, Direct, FixedPoint };

/// Solves X = S + L X L^T for X.
///
/// Automatic picks a direct solve of (I - L (x) L) vec(X) = vec(S) for
/// n <= 12 and fixed-point iteration otherwise. The result is symmetrized.
/// Throws InstabilityError when rho(L) >= 1 is detected.
inline Matrix solve_discrete_lyapunov(const Matrix& l, const Matrix& s,
                                      LyapunovMethod method = LyapunovMethod::Automatic) {
  detail::require_square(l, "solve_discrete_lyapunov");
  detail::require_square(s, "solve_discrete_lyapunov");
  if (l.rows() != s.rows()) {
    throw DimensionError("solve_discrete_lyapunov: L is " + detail::shape(l) + ", S is " + detail::shape(s));
  }
  const Eigen::Index n = l.rows();
  if (spectral_radius_estimate(l) >= 1.0) {
    throw InstabilityError("solve_discrete_lyapunov: spectral radius of L is not below 1");
  }
  if (method == LyapunovMethod::Automatic) {
    method = n <= 12 ? LyapunovMethod::Direct : LyapunovMethod::FixedPoint;
  }

  Matrix x(n, n);
  if (method == LyapunovMethod::Direct) {
    const Eigen::Index n2 = n * n;
    // column-major vec: vec(L X L^T) = (L (x) L) vec(X)
    Matrix op = Matrix::Identity(n2, n2);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        op.block(i * n, j * n, n, n) -= l(i, j) * l;
      }
    }
    Eigen::FullPivLU<Matrix> lu(op);
    if (!lu.isInvertible()) {
      throw InstabilityError("solve_discrete_lyapunov: singular vectorized system");
    }
    const Vector rhs = Eigen::Map<const Vector>(s.data(), n2);
    const Vector sol = lu.solve(rhs);
    x = Eigen::Map<const Matrix>(sol.data(), n, n);
  } else {
    constexpr long kMaxIterations = 1'000'000;
    x = s;
    bool converged = false;
    for (long it = 0; it < kMaxIterations; ++it) {
      Matrix next = s + l * x * l.transpose();
      const double change = (next - x).norm();
      const double size = x.norm();
      x = std::move(next);
      if (!std::isfinite(change)) break;
      if (change <= 1e-13 * size) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      throw InstabilityError("solve_discrete_lyapunov: fixed-point iteration did not converge");
    }
  }
  return 0.5 * (x + x.transpose());
}

/// Lower-triangular G with G G^T = S.
inline Matrix cholesky(const Matrix& s) {
  detail::require_square(s, "cholesky");
  const Eigen::Index n = s.rows();
  Matrix g = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = s(j, j) - g.row(j).head(j).squaredNorm();
    if (!(pivot > 1e-12)) {
      throw NotPositiveDefiniteError("cholesky: pivot " + std::to_string(pivot) + " at column " +
                                     std::to_string(j));
    }
    const double root = std::sqrt(pivot);
    g(j, j) = root;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double lower = 0.5 * (s(i, j) + s(j, i));
      g(i, j) = (lower - g.row(i).head(j).dot(g.row(j).head(j))) / root;
    }
  }
  return g;
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations; eigenvalues ascending.
inline Vector symmetric_eigenvalues(const Matrix& s) {
  detail::require_square(s, "symmetric_eigenvalues");
  Matrix a = 0.5 * (s + s.transpose());
  const Eigen::Index n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off <= 1e-30 * std::max(1.0, a.squaredNorm())) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
      }
    }
  }
  Vector ev = a.diagonal();
  std::sort(ev.data(), ev.data() + ev.size());
  return ev;
}

/// Smallest singular value via the Jacobi spectrum of m^T m.
inline double min_singular_value(const Matrix& m) {
  const Vector ev = symmetric_eigenvalues(m.transpose() * m);
  return ev.size() == 0 ? 0.0 : std::sqrt(std::max(0.0, ev(0)));
}

}  // namespace lqrlab
