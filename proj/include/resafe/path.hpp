#pragma once

// Arc-length parameterized reference path with piecewise-linear curvature,
// and the Cartesian <-> curvilinear (Frenet) transforms built on it.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "resafe/error.hpp"

namespace resafe::vehicle {

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

struct FrenetPoint {
  double s = 0.0;
  double w = 0.0;
  double heading_error = 0.0;
};

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

namespace detail {
// 8-point Gauss-Legendre rule on [-1, 1].
inline constexpr std::array<double, 8> kGaussNodes = {
    -0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
    0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
inline constexpr std::array<double, 8> kGaussWeights = {
    0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
    0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};
}  // namespace detail

/// Centerline described by curvature breakpoints, plus a lateral corridor.
///
/// Curvature is linear between breakpoints and extrapolated with the end
/// values outside [s_0, s_end]. The corridor is -width_right <= w <= width_left.
class PathModel {
 public:
  PathModel() : PathModel({0.0, 1.0}, {0.0, 0.0}, {5.0, 5.0}, {5.0, 5.0}) {}

  PathModel(std::vector<double> breakpoints, std::vector<double> curvature,
            std::vector<double> width_left, std::vector<double> width_right, Pose origin = {})
      : s_(std::move(breakpoints)),
        kappa_(std::move(curvature)),
        left_(std::move(width_left)),
        right_(std::move(width_right)),
        origin_(origin) {
    validate();
    build_tables();
  }

  [[nodiscard]] const std::vector<double>& breakpoints() const { return s_; }
  [[nodiscard]] const std::vector<double>& curvature_values() const { return kappa_; }
  [[nodiscard]] const std::vector<double>& width_left_values() const { return left_; }
  [[nodiscard]] const std::vector<double>& width_right_values() const { return right_; }
  [[nodiscard]] const Pose& origin() const { return origin_; }
  [[nodiscard]] double start() const { return s_.front(); }
  [[nodiscard]] double end() const { return s_.back(); }
  [[nodiscard]] double length() const { return s_.back() - s_.front(); }

  [[nodiscard]] double curvature(double s) const {
    const auto [j, t] = locate(s);
    if (t <= 0.0) return kappa_[j];
    return kappa_[j] + slope(j) * t;
  }

  /// d kappa / ds; zero outside the breakpoint range.
  [[nodiscard]] double curvature_slope(double s) const {
    if (s < s_.front() || s > s_.back()) return 0.0;
    return slope(locate(s).first);
  }

  [[nodiscard]] double width_left(double s) const { return interp(left_, s); }
  [[nodiscard]] double width_right(double s) const { return interp(right_, s); }

  [[nodiscard]] double heading(double s) const {
    if (s < s_.front()) return heading_.front() + kappa_.front() * (s - s_.front());
    const auto [j, t] = locate(s);
    if (s > s_.back()) return heading_.back() + kappa_.back() * (s - s_.back());
    return heading_[j] + kappa_[j] * t + 0.5 * slope(j) * t * t;
  }

  /// Centerline point at arc length s.
  [[nodiscard]] Eigen::Vector2d position(double s) const {
    const double clamped = std::clamp(s, sample_s_.front(), sample_s_.back());
    auto it = std::upper_bound(sample_s_.begin(), sample_s_.end(), clamped);
    std::size_t i = it == sample_s_.begin() ? 0 : static_cast<std::size_t>(it - sample_s_.begin()) - 1;
    i = std::min(i, sample_s_.size() - 1);
    return sample_xy_[i] + integrate_tangent(sample_s_[i], s);
  }

  [[nodiscard]] Eigen::Vector2d tangent(double s) const {
    const double h = heading(s);
    return {std::cos(h), std::sin(h)};
  }

  /// Left-pointing unit normal.
  [[nodiscard]] Eigen::Vector2d normal(double s) const {
    const double h = heading(s);
    return {-std::sin(h), std::cos(h)};
  }

 private:
  void validate() const {
    const std::size_t n = s_.size();
    if (n < 2) throw DomainError("PathModel: need at least two breakpoints");
    if (kappa_.size() != n || left_.size() != n || right_.size() != n) {
      throw DomainError("PathModel: breakpoint, curvature and width arrays must have equal length");
    }
    for (std::size_t j = 1; j < n; ++j) {
      if (!(s_[j] > s_[j - 1])) throw DomainError("PathModel: breakpoints must be strictly increasing");
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (left_[j] < 0.0 || right_[j] < 0.0) throw DomainError("PathModel: corridor widths must be non-negative");
      if (std::abs(kappa_[j]) * std::max(left_[j], right_[j]) >= 1.0) {
        throw DomainError("PathModel: corridor crosses the curvature center (|kappa| * width >= 1) at s = " +
                          std::to_string(s_[j]));
      }
    }
  }

  void build_tables() {
    heading_.resize(s_.size());
    heading_[0] = origin_.heading;
    for (std::size_t j = 1; j < s_.size(); ++j) {
      const double l = s_[j] - s_[j - 1];
      heading_[j] = heading_[j - 1] + kappa_[j - 1] * l + 0.5 * slope(j - 1) * l * l;
    }
    // Dense samples (<= 1 m apart, aligned with breakpoints) anchor the position integral.
    sample_s_.clear();
    sample_xy_.clear();
    sample_s_.push_back(s_.front());
    sample_xy_.emplace_back(origin_.x, origin_.y);
    for (std::size_t j = 1; j < s_.size(); ++j) {
      const double l = s_[j] - s_[j - 1];
      const int pieces = std::max(1, static_cast<int>(std::ceil(l)));
      for (int p = 1; p <= pieces; ++p) {
        const double s = s_[j - 1] + l * p / pieces;
        sample_xy_.push_back(sample_xy_.back() + integrate_tangent(sample_s_.back(), s));
        sample_s_.push_back(s);
      }
    }
  }

  [[nodiscard]] Eigen::Vector2d integrate_tangent(double from, double to) const {
    Eigen::Vector2d acc = Eigen::Vector2d::Zero();
    if (to == from) return acc;
    // Split at breakpoints so the heading is a single quadratic per piece.
    double a = from;
    const double dir = to > from ? 1.0 : -1.0;
    while ((to - a) * dir > 0.0) {
      double b = to;
      for (double bp : s_) {
        if ((bp - a) * dir > 1e-12 && (to - bp) * dir > 0.0) {
          b = dir > 0 ? std::min(b, bp) : std::max(b, bp);
        }
      }
      const double half = 0.5 * (b - a);
      const double mid = 0.5 * (a + b);
      for (std::size_t q = 0; q < detail::kGaussNodes.size(); ++q) {
        const double h = heading(mid + half * detail::kGaussNodes[q]);
        acc += detail::kGaussWeights[q] * half * Eigen::Vector2d(std::cos(h), std::sin(h));
      }
      a = b;
    }
    return acc;
  }

  [[nodiscard]] double slope(std::size_t j) const {
    if (j + 1 >= s_.size()) return 0.0;
    return (kappa_[j + 1] - kappa_[j]) / (s_[j + 1] - s_[j]);
  }

  /// Segment index and offset into it; offset <= 0 before the first breakpoint.
  [[nodiscard]] std::pair<std::size_t, double> locate(double s) const {
    if (s <= s_.front()) return {0, std::min(0.0, s - s_.front())};
    if (s >= s_.back()) return {s_.size() - 1, 0.0};
    const auto it = std::upper_bound(s_.begin(), s_.end(), s);
    const auto j = static_cast<std::size_t>(it - s_.begin()) - 1;
    return {j, s - s_[j]};
  }

  [[nodiscard]] double interp(const std::vector<double>& v, double s) const {
    if (s <= s_.front()) return v.front();
    if (s >= s_.back()) return v.back();
    const auto [j, t] = locate(s);
    return v[j] + (v[j + 1] - v[j]) * t / (s_[j + 1] - s_[j]);
  }

  std::vector<double> s_;
  std::vector<double> kappa_;
  std::vector<double> left_;
  std::vector<double> right_;
  Pose origin_;
  std::vector<double> heading_;
  std::vector<double> sample_s_;
  std::vector<Eigen::Vector2d> sample_xy_;
};

inline Pose frenet_to_cartesian(const FrenetPoint& f, const PathModel& path) {
  const Eigen::Vector2d p = path.position(f.s) + f.w * path.normal(f.s);
  return {p.x(), p.y(), wrap_angle(path.heading(f.s) + f.heading_error)};
}

/// Closest-point projection onto the centerline.
/// Throws DomainError("off-path") when the pose is farther than max_offset or
/// the refinement does not converge.
inline FrenetPoint frenet_project(const Pose& pose, const PathModel& path, double max_offset = 50.0) {
  const Eigen::Vector2d p(pose.x, pose.y);
  // Coarse scan.
  const double step = 0.5;
  const int samples = static_cast<int>(std::ceil(path.length() / step)) + 1;
  double best_s = path.start();
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < samples; ++i) {
    const double s = std::min(path.end(), path.start() + i * step);
    const double d = (p - path.position(s)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best_s = s;
    }
  }
  // Newton on f(s) = (p - c(s)) . t(s); f'(s) = -1 + kappa (p - c(s)) . n(s).
  double s = best_s;
  bool converged = false;
  for (int it = 0; it < 50; ++it) {
    const Eigen::Vector2d r = p - path.position(s);
    const double f = r.dot(path.tangent(s));
    const double df = -1.0 + path.curvature(s) * r.dot(path.normal(s));
    if (df >= -1e-6) break;
    double ds = -f / df;
    ds = std::clamp(ds, -step, step);
    s += ds;
    if (std::abs(ds) < 1e-12) {
      converged = true;
      break;
    }
  }
  const Eigen::Vector2d r = p - path.position(s);
  const double w = r.dot(path.normal(s));
  if (!converged && std::abs(r.dot(path.tangent(s))) > 1e-9) {
    throw DomainError("frenet_project: off-path (projection did not converge)");
  }
  if (std::abs(w) > max_offset || s < path.start() - step || s > path.end() + step) {
    throw DomainError("frenet_project: off-path (pose outside the corridor neighborhood)");
  }
  return {s, w, wrap_angle(pose.heading - path.heading(s))};
}

}  // namespace resafe::vehicle
