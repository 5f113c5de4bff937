#pragma once

// Legendre polynomial algebra on the normalized horizon [-1, 1]: monomial
// coefficient matrices, Legendre-Gauss-Lobatto grids, and evaluation of
// truncated Legendre series ("splines") and their time derivatives.

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "resafe/error.hpp"

namespace resafe::basis {

/// Largest degree for which monomial coefficients are built exactly.
inline constexpr int kMaxDegree = 30;

/// Monomial coefficients of the Legendre polynomials L_0..L_M.
/// Row k holds the coefficients of L_k in the basis 1, tau, ..., tau^M.
struct LegendreBasis {
  int degree = 0;
  Eigen::MatrixXd coeffs;
};

/// LGL nodes and quadrature weights on [-1, 1].
struct CollocationGrid {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;

  [[nodiscard]] Eigen::Index size() const { return nodes.size(); }
};

/// Legendre-series coefficients of a multi-channel trajectory.
/// alpha is (M+1) x channels; horizon is t_f in seconds.
struct SplineCoefficients {
  Eigen::MatrixXd alpha;
  double horizon = 1.0;
};

namespace detail {

__extension__ typedef __int128 Wide;

inline Wide binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  Wide r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Values of L_n, L_n' and L_n'' at x via the three-term recurrence.
struct LegendreValue {
  double p = 0.0;
  double dp = 0.0;
  double ddp = 0.0;
};

inline LegendreValue legendre_eval(int n, double x) {
  if (n == 0) return {1.0, 0.0, 0.0};
  double p0 = 1.0, p1 = x;
  double d0 = 0.0, d1 = 1.0;
  double s0 = 0.0, s1 = 0.0;
  for (int k = 1; k < n; ++k) {
    const double p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
    const double d2 = d0 + (2.0 * k + 1.0) * p1;
    const double s2 = s0 + (2.0 * k + 1.0) * d1;
    p0 = p1;
    p1 = p2;
    d0 = d1;
    d1 = d2;
    s0 = s1;
    s1 = s2;
  }
  return {p1, d1, s1};
}

}  // namespace detail

/// Exact Rodrigues expansion of L_0..L_M, converted to double at the end.
inline LegendreBasis legendre_coefficients(int degree) {
  if (degree < 0) throw DomainError("legendre_coefficients: negative degree");
  if (degree > kMaxDegree) {
    throw DomainError("legendre_coefficients: degree overflow (M = " + std::to_string(degree) +
                      " exceeds cap " + std::to_string(kMaxDegree) + ")");
  }
  LegendreBasis basis{degree, Eigen::MatrixXd::Zero(degree + 1, degree + 1)};
  for (int k = 0; k <= degree; ++k) {
    // L_k = 2^-k sum_j (-1)^j C(k,j) C(2k-2j,k) tau^(k-2j)
    const long double scale = std::ldexp(1.0L, -k);
    for (int j = 0; 2 * j <= k; ++j) {
      detail::Wide num = detail::binomial(k, j) * detail::binomial(2 * k - 2 * j, k);
      if (j % 2 == 1) num = -num;
      basis.coeffs(k, k - 2 * j) = static_cast<double>(static_cast<long double>(num) * scale);
    }
  }
  return basis;
}

/// Coefficients of the i-th tau-derivative of each basis polynomial; same shape as basis.coeffs.
inline Eigen::MatrixXd derivative_coefficients(const LegendreBasis& basis, int order) {
  Eigen::MatrixXd d = basis.coeffs;
  const int n = basis.degree + 1;
  for (int o = 0; o < order; ++o) {
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(n, n);
    for (int j = 1; j < n; ++j) next.col(j - 1) = j * d.col(j);
    d = std::move(next);
  }
  return d;
}

/// d^k/dtau^k of v(tau) = [1, tau, ..., tau^M].
inline Eigen::VectorXd monomial_vector(double tau, int degree, int deriv_order = 0) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(degree + 1);
  for (int j = deriv_order; j <= degree; ++j) {
    double falling = 1.0;
    for (int q = 0; q < deriv_order; ++q) falling *= (j - q);
    v(j) = falling * std::pow(tau, j - deriv_order);
  }
  return v;
}

/// Legendre-Gauss-Lobatto nodes: -1, the roots of L'_{N-1}, +1.
inline Eigen::VectorXd lgl_nodes(int n) {
  if (n < 2) throw DomainError("lgl_nodes: need at least two nodes");
  Eigen::VectorXd nodes(n);
  nodes(0) = -1.0;
  nodes(n - 1) = 1.0;
  const int p = n - 1;
  for (int i = 1; i < p; ++i) {
    // Chebyshev-Gauss-Lobatto initial guess, ascending.
    double x = -std::cos(std::numbers::pi * i / p);
    bool converged = false;
    for (int it = 0; it < 100; ++it) {
      const auto v = detail::legendre_eval(p, x);
      double step = v.dp / v.ddp;
      // Damping keeps the iterate inside the bracket of the target root.
      const double max_step = 0.5 * std::numbers::pi / (p * p);
      if (std::abs(step) > max_step) step = std::copysign(max_step, step);
      x -= step;
      if (std::abs(step) < 1e-16 * (1.0 + std::abs(x))) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      // A last residual check covers iterations that stall at rounding level.
      if (std::abs(detail::legendre_eval(p, x).dp) > 1e-10) {
        throw SolverError("lgl_nodes: Newton iteration did not converge");
      }
    }
    nodes(i) = x;
  }
  // Enforce exact antisymmetry of the grid.
  for (int i = 0; i < n / 2; ++i) {
    const double m = 0.5 * (nodes(n - 1 - i) - nodes(i));
    nodes(i) = -m;
    nodes(n - 1 - i) = m;
  }
  if (n % 2 == 1) nodes(n / 2) = 0.0;
  return nodes;
}

/// Closed-form LGL weights w_i = 2 / (N (N-1) L_{N-1}(tau_i)^2).
inline Eigen::VectorXd lgl_weights(int n, const Eigen::VectorXd& nodes) {
  if (nodes.size() != n) throw DomainError("lgl_weights: node count mismatch");
  Eigen::VectorXd w(n);
  const int p = n - 1;
  for (int i = 0; i < n; ++i) {
    const double l = detail::legendre_eval(p, nodes(i)).p;
    w(i) = 2.0 / (n * p * l * l);
  }
  return w;
}

inline CollocationGrid lgl_grid(int n) {
  CollocationGrid grid;
  grid.nodes = lgl_nodes(n);
  grid.weights = lgl_weights(n, grid.nodes);
  return grid;
}

/// Row vector r such that channel value = r * alpha.col(c), including the (2/t_f)^k time scaling.
inline Eigen::RowVectorXd spline_row(const LegendreBasis& basis, double tau, int deriv_order,
                                     double horizon) {
  const Eigen::VectorXd dv = monomial_vector(tau, basis.degree, deriv_order);
  return std::pow(2.0 / horizon, deriv_order) * (basis.coeffs * dv).transpose();
}

/// Channel values (or k-th time derivatives) at normalized time tau.
inline Eigen::VectorXd eval_spline(const SplineCoefficients& spline, const LegendreBasis& basis,
                                   double tau, int deriv_order = 0) {
  if (!(tau >= -1.0 - 1e-12 && tau <= 1.0 + 1e-12)) {
    throw DomainError("eval_spline: tau outside [-1, 1]");
  }
  if (deriv_order < 0 || deriv_order > basis.degree) {
    throw DomainError("eval_spline: derivative order out of range");
  }
  if (spline.alpha.rows() != basis.degree + 1) {
    throw DomainError("eval_spline: coefficient rows do not match basis degree");
  }
  return (spline_row(basis, tau, deriv_order, spline.horizon) * spline.alpha).transpose();
}

/// Legendre coefficients of the degree-M interpolant through (tau_i, values_i), one column per channel.
inline Eigen::MatrixXd fit_spline(const LegendreBasis& basis, const Eigen::VectorXd& taus,
                                  const Eigen::MatrixXd& values) {
  const int n = basis.degree + 1;
  Eigen::MatrixXd design(taus.size(), n);
  for (Eigen::Index i = 0; i < taus.size(); ++i) {
    design.row(i) = (basis.coeffs * monomial_vector(taus(i), basis.degree)).transpose();
  }
  return design.colPivHouseholderQr().solve(values);
}

}  // namespace resafe::basis
