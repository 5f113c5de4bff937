#pragma once

// Range enclosure of Legendre splines through Bernstein control values.
//
// For a spline x(tau) = alpha^T L v(tau) restricted to [t_k, t_{k+1}], the
// monomial coefficients with respect to the local variable tau* in [0, 1]
// are E^T L^T alpha, and the Bernstein control values of that polynomial
// bracket x on the region. Stacking the three linear maps gives the hull
// matrix C^k = B E^T L^T, which is computed once per (degree, regions).

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "resafe/basis.hpp"
#include "resafe/error.hpp"

namespace resafe::envelope {

/// Derivative orders for which hull matrices are precomputed.
inline constexpr int kMaxHullDerivative = 2;

struct HullMatrixSet {
  int degree = 0;
  std::vector<double> region_bounds;
  /// matrices[i][k] maps Legendre coefficients to the hull of the i-th tau-derivative on region k.
  std::array<std::vector<Eigen::MatrixXd>, kMaxHullDerivative + 1> matrices;

  [[nodiscard]] int regions() const { return static_cast<int>(region_bounds.size()) - 1; }
  [[nodiscard]] const Eigen::MatrixXd& hull(int region, int deriv_order = 0) const {
    return matrices.at(static_cast<std::size_t>(deriv_order)).at(static_cast<std::size_t>(region));
  }
};

struct EnclosureBound {
  double lower = 0.0;
  double upper = 0.0;
  double slack_margin = 0.0;

  [[nodiscard]] double enlarged_lower() const { return lower - slack_margin; }
  [[nodiscard]] double enlarged_upper() const { return upper + slack_margin; }
};

namespace detail {
inline double binom(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}
}  // namespace detail

/// Maps monomial coefficients on [0, 1] to Bernstein control values.
inline Eigen::MatrixXd bernstein_matrix(int degree) {
  if (degree < 0) throw DomainError("bernstein_matrix: negative degree");
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(degree + 1, degree + 1);
  for (int j = 0; j <= degree; ++j) {
    for (int k = 0; k <= j; ++k) b(j, k) = detail::binom(j, k) / detail::binom(degree, k);
  }
  return b;
}

/// E with v(tau) = E v(tau*), tau = t0 + (t1 - t0) tau*.
inline Eigen::MatrixXd time_transform_matrix(double t0, double t1, int degree) {
  if (!(t1 > t0)) throw DomainError("time_transform_matrix: degenerate region");
  if (t0 < -1.0 - 1e-12 || t1 > 1.0 + 1e-12) {
    throw DomainError("time_transform_matrix: region outside [-1, 1]");
  }
  const double width = t1 - t0;
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(degree + 1, degree + 1);
  for (int i = 0; i <= degree; ++i) {
    for (int j = 0; j <= i; ++j) {
      e(i, j) = detail::binom(i, j) * std::pow(width, j) * std::pow(t0, i - j);
    }
  }
  return e;
}

/// Region bounds at the LGL nodes of order K, i.e. K+1 points and K regions.
inline std::vector<double> default_region_bounds(int regions) {
  if (regions < 1) throw DomainError("default_region_bounds: need at least one region");
  const Eigen::VectorXd nodes = basis::lgl_nodes(regions + 1);
  return {nodes.data(), nodes.data() + nodes.size()};
}

inline HullMatrixSet build_hull_matrices(const basis::LegendreBasis& basis,
                                         std::vector<double> region_bounds) {
  if (region_bounds.size() < 2) throw DomainError("build_hull_matrices: need at least one region");
  if (std::abs(region_bounds.front() + 1.0) > 1e-12 || std::abs(region_bounds.back() - 1.0) > 1e-12) {
    throw DomainError("build_hull_matrices: bounds must start at -1 and end at +1");
  }
  for (std::size_t k = 0; k + 1 < region_bounds.size(); ++k) {
    if (!(region_bounds[k + 1] > region_bounds[k])) {
      throw DomainError("build_hull_matrices: region bounds must be strictly increasing");
    }
  }
  HullMatrixSet set;
  set.degree = basis.degree;
  set.region_bounds = std::move(region_bounds);
  const Eigen::MatrixXd bern = bernstein_matrix(basis.degree);
  for (int order = 0; order <= kMaxHullDerivative; ++order) {
    const Eigen::MatrixXd lt = basis::derivative_coefficients(basis, order).transpose();
    auto& mats = set.matrices[static_cast<std::size_t>(order)];
    for (int k = 0; k < set.regions(); ++k) {
      const Eigen::MatrixXd e = time_transform_matrix(set.region_bounds[k], set.region_bounds[k + 1],
                                                      basis.degree);
      mats.push_back(bern * e.transpose() * lt);
    }
  }
  return set;
}

inline HullMatrixSet build_hull_matrices(const basis::LegendreBasis& basis, int regions) {
  return build_hull_matrices(basis, default_region_bounds(regions));
}

/// Hull entries of one channel's i-th time derivative on a region, time scaling applied.
inline Eigen::VectorXd hull_values(const HullMatrixSet& set, const basis::SplineCoefficients& spline,
                                   int region, int channel, int deriv_order = 0) {
  if (region < 0 || region >= set.regions()) throw DomainError("hull_values: region out of range");
  if (deriv_order < 0 || deriv_order > kMaxHullDerivative) {
    throw DomainError("hull_values: derivative order out of range");
  }
  const double scale = std::pow(2.0 / spline.horizon, deriv_order);
  return scale * (set.hull(region, deriv_order) * spline.alpha.col(channel));
}

struct Interval {
  double min = 0.0;
  double max = 0.0;
};

inline Interval hull_bounds(const HullMatrixSet& set, const basis::SplineCoefficients& spline,
                            int region, int channel, int deriv_order = 0) {
  const Eigen::VectorXd p = hull_values(set, spline, region, channel, deriv_order);
  return {p.minCoeff(), p.maxCoeff()};
}

/// Largest gap between consecutive sorted hull entries.
inline double max_sorted_gap(const Eigen::VectorXd& hull) {
  std::vector<double> v(hull.data(), hull.data() + hull.size());
  std::stable_sort(v.begin(), v.end());
  double gap = 0.0;
  for (std::size_t i = 1; i < v.size(); ++i) gap = std::max(gap, v[i] - v[i - 1]);
  return gap;
}

/// Squared gap for several channels sharing a region: the Euclidean norm of the per-channel gaps.
inline double combined_gap_squared(std::span<const Eigen::VectorXd> hulls) {
  double d2 = 0.0;
  for (const auto& h : hulls) {
    const double d = max_sorted_gap(h);
    d2 += d * d;
  }
  return d2;
}

using ScalarFunction = std::function<double(const Eigen::VectorXd&)>;

/// Enclosure of g over a region from the hull entries of its arguments.
///
/// `hulls[c]` holds the M+1 hull entries of argument channel c; g is evaluated
/// on the entry tuples (hulls[0](j), hulls[1](j), ...). `hessian_bound` must
/// bound the largest absolute Hessian eigenvalue of g over the region.
inline EnclosureBound enclose_nonlinear(const ScalarFunction& g, std::span<const Eigen::VectorXd> hulls,
                                        double hessian_bound) {
  if (hessian_bound < 0.0) throw DomainError("enclose_nonlinear: negative Hessian bound");
  if (hulls.empty() || hulls.front().size() == 0) throw DomainError("enclose_nonlinear: empty hull");
  const Eigen::Index n = hulls.front().size();
  for (const auto& h : hulls) {
    if (h.size() != n) throw DomainError("enclose_nonlinear: hull size mismatch between channels");
  }
  EnclosureBound bound{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                       0.0};
  Eigen::VectorXd arg(static_cast<Eigen::Index>(hulls.size()));
  for (Eigen::Index j = 0; j < n; ++j) {
    for (std::size_t c = 0; c < hulls.size(); ++c) arg(static_cast<Eigen::Index>(c)) = hulls[c](j);
    const double value = g(arg);
    bound.lower = std::min(bound.lower, value);
    bound.upper = std::max(bound.upper, value);
  }
  bound.slack_margin = 0.5 * combined_gap_squared(hulls) * hessian_bound;
  return bound;
}

inline EnclosureBound enclose_nonlinear(const std::function<double(double)>& g, const Eigen::VectorXd& hull,
                                        double hessian_bound) {
  const std::array<Eigen::VectorXd, 1> hulls{hull};
  return enclose_nonlinear([&](const Eigen::VectorXd& x) { return g(x(0)); }, hulls, hessian_bound);
}

}  // namespace resafe::envelope
