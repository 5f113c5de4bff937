#pragma once

// Single-track vehicle in the curvilinear frame of a reference path.
//
// State x = [v_x, v_y, r, s, w, theta, delta, t_r], input u = [dt_r/dt, ddelta/dt].
// The dynamic model uses linear tires; the kinematic model replaces v_y and r
// by their no-slip values (in rate form), and the two are blended by speed.
// Every right-hand side is returned together with its hand-derived Jacobians.

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "resafe/error.hpp"
#include "resafe/path.hpp"

namespace resafe::vehicle {

inline constexpr int kStateDim = 8;
inline constexpr int kInputDim = 2;

using State = Eigen::Matrix<double, kStateDim, 1>;
using Input = Eigen::Matrix<double, kInputDim, 1>;
using StateJacobian = Eigen::Matrix<double, kStateDim, kStateDim>;
using InputJacobian = Eigen::Matrix<double, kStateDim, kInputDim>;

/// Indices into the curvilinear state vector.
enum StateIndex : int { kVx = 0, kVy, kYawRate, kS, kW, kHeadingError, kSteer, kThrottle };
/// Indices into the input (rate) vector.
enum InputIndex : int { kThrottleRate = 0, kSteerRate };

struct VehicleParams {
  double mass = 700.0;          // kg
  double yaw_inertia = 750.0;   // kg m^2
  double lf = 1.05;             // m
  double lr = 1.25;             // m
  double cf = 60000.0;          // N/rad
  double cr = 60000.0;          // N/rad
  double max_force = 4000.0;    // N, at |t_r| = 1
  double front_drive_share = 0.5;
  double c0 = 100.0;            // N
  double c2 = 0.4;              // N s^2/m^2
  double blend_low = 2.0;       // m/s
  double blend_high = 5.0;      // m/s
  double max_steer = 0.5;       // rad

  [[nodiscard]] double wheelbase() const { return lf + lr; }

  void validate() const {
    if (!(mass > 0 && yaw_inertia > 0 && lf > 0 && lr > 0 && cf > 0 && cr > 0 && max_force > 0 &&
          max_steer > 0)) {
      throw DomainError("VehicleParams: physical parameters must be positive");
    }
    if (c0 < 0 || c2 < 0) throw DomainError("VehicleParams: resistance coefficients must be non-negative");
    if (front_drive_share < 0 || front_drive_share > 1) {
      throw DomainError("VehicleParams: front drive share must lie in [0, 1]");
    }
    if (!(blend_high > blend_low && blend_low >= 0)) {
      throw DomainError("VehicleParams: blend speeds must satisfy 0 <= low < high");
    }
  }
};

struct RhsResult {
  State value = State::Zero();
  StateJacobian dx = StateJacobian::Zero();
  InputJacobian du = InputJacobian::Zero();
};

struct RhsOptions {
  /// Lower limit applied to 1 - kappa w instead of throwing; <= 0 means throw.
  double singularity_floor = 0.0;
};

namespace detail {

using Grad = Eigen::Matrix<double, 1, kStateDim + kInputDim>;

inline Grad unit(int i) {
  Grad g = Grad::Zero();
  g(i) = 1.0;
  return g;
}

/// Smooth-signed rolling resistance plus aerodynamic drag and its derivative.
inline std::pair<double, double> resistance(double vx, const VehicleParams& p) {
  constexpr double kEps = 0.5;
  const double th = std::tanh(vx / kEps);
  return {p.c0 * th + p.c2 * vx * std::abs(vx), p.c0 * (1.0 - th * th) / kEps + 2.0 * p.c2 * std::abs(vx)};
}

/// Rows s, w, theta shared by both models; v_y and r are taken from the state.
inline void curvilinear_rows(const State& x, const PathModel& path, const RhsOptions& opt, State& f,
                             Eigen::Matrix<double, kStateDim, kStateDim + kInputDim>& j) {
  const double vx = x(kVx), vy = x(kVy), r = x(kYawRate), s = x(kS), w = x(kW), th = x(kHeadingError);
  const double kappa = path.curvature(s);
  const double dkappa = path.curvature_slope(s);
  double denom = 1.0 - kappa * w;
  bool clamped = false;
  if (denom <= 0.0 || (opt.singularity_floor > 0.0 && denom < opt.singularity_floor)) {
    if (opt.singularity_floor <= 0.0) {
      throw SingularityError("vehicle: 1 - kappa w <= 0, vehicle at the curvature center");
    }
    denom = opt.singularity_floor;
    clamped = true;
  }
  const double c = std::cos(th), sn = std::sin(th);
  const double num = vx * c - vy * sn;
  const double sdot = num / denom;
  f(kS) = sdot;
  f(kW) = vx * sn + vy * c;
  f(kHeadingError) = r - kappa * sdot;

  Grad g_sdot = Grad::Zero();
  g_sdot(kVx) = c / denom;
  g_sdot(kVy) = -sn / denom;
  g_sdot(kHeadingError) = (-vx * sn - vy * c) / denom;
  if (!clamped) {
    g_sdot(kW) = num * kappa / (denom * denom);
    g_sdot(kS) = num * w * dkappa / (denom * denom);
  }
  j.row(kS) = g_sdot;
  Grad g_w = Grad::Zero();
  g_w(kVx) = sn;
  g_w(kVy) = c;
  g_w(kHeadingError) = vx * c - vy * sn;
  j.row(kW) = g_w;
  Grad g_th = -kappa * g_sdot;
  g_th(kYawRate) += 1.0;
  g_th(kS) -= dkappa * sdot;
  j.row(kHeadingError) = g_th;
}

inline RhsResult split(const State& f, const Eigen::Matrix<double, kStateDim, kStateDim + kInputDim>& j) {
  RhsResult out;
  out.value = f;
  out.dx = j.leftCols<kStateDim>();
  out.du = j.rightCols<kInputDim>();
  return out;
}

}  // namespace detail

/// Dynamic single-track model with linear tire forces.
inline RhsResult dynamic_rhs(const State& x, const Input& u, const VehicleParams& p, const PathModel& path,
                             const RhsOptions& opt = {}) {
  using detail::Grad;
  using detail::unit;
  State f = State::Zero();
  Eigen::Matrix<double, kStateDim, kStateDim + kInputDim> j =
      Eigen::Matrix<double, kStateDim, kStateDim + kInputDim>::Zero();

  const double vx = x(kVx), vy = x(kVy), r = x(kYawRate), delta = x(kSteer), tr = x(kThrottle);
  const double cd = std::cos(delta), sd = std::sin(delta);

  const double fx = tr * p.max_force;
  const Grad g_fx = p.max_force * unit(kThrottle);
  const double fxf = p.front_drive_share * fx, fxr = (1.0 - p.front_drive_share) * fx;
  const Grad g_fxf = p.front_drive_share * g_fx, g_fxr = (1.0 - p.front_drive_share) * g_fx;

  // Slip angles; atan2(y, x) has gradient (-y, x) / (x^2 + y^2).
  const double yf = vy + p.lf * r;
  const double nf = std::max(vx * vx + yf * yf, 1e-9);
  const double alpha_f = delta - std::atan2(yf, vx);
  Grad g_af = unit(kSteer);
  g_af(kVx) += yf / nf;
  g_af(kVy) += -vx / nf;
  g_af(kYawRate) += -p.lf * vx / nf;
  const double yr = vy - p.lr * r;
  const double nr = std::max(vx * vx + yr * yr, 1e-9);
  const double alpha_r = -std::atan2(yr, vx);
  Grad g_ar = Grad::Zero();
  g_ar(kVx) = yr / nr;
  g_ar(kVy) = -vx / nr;
  g_ar(kYawRate) = p.lr * vx / nr;

  const double fyf = p.cf * alpha_f, fyr = p.cr * alpha_r;
  const Grad g_fyf = p.cf * g_af, g_fyr = p.cr * g_ar;
  const auto [fres, dfres] = detail::resistance(vx, p);

  // Longitudinal.
  f(kVx) = (fxf * cd + fxr - fyf * sd - fres) / p.mass + r * vy;
  Grad g = (g_fxf * cd + g_fxr - g_fyf * sd) / p.mass;
  g(kSteer) += (-fxf * sd - fyf * cd) / p.mass;
  g(kVx) -= dfres / p.mass;
  g(kYawRate) += vy;
  g(kVy) += r;
  j.row(kVx) = g;

  // Lateral.
  f(kVy) = (fxf * sd + fyr + fyf * cd) / p.mass - r * vx;
  g = (g_fxf * sd + g_fyr + g_fyf * cd) / p.mass;
  g(kSteer) += (fxf * cd - fyf * sd) / p.mass;
  g(kYawRate) -= vx;
  g(kVx) -= r;
  j.row(kVy) = g;

  // Yaw.
  f(kYawRate) = (p.lf * (fyf * cd + fxf * sd) - p.lr * fyr) / p.yaw_inertia;
  g = (p.lf * (g_fyf * cd + g_fxf * sd) - p.lr * g_fyr) / p.yaw_inertia;
  g(kSteer) += p.lf * (-fyf * sd + fxf * cd) / p.yaw_inertia;
  j.row(kYawRate) = g;

  detail::curvilinear_rows(x, path, opt, f, j);

  f(kSteer) = u(kSteerRate);
  j(kSteer, kStateDim + kSteerRate) = 1.0;
  f(kThrottle) = u(kThrottleRate);
  j(kThrottle, kStateDim + kThrottleRate) = 1.0;
  return detail::split(f, j);
}

/// Kinematic single-track model: v_y and r follow their no-slip values
/// v_x tan(delta) l_r / L and v_x tan(delta) / L in rate form.
inline RhsResult kinematic_rhs(const State& x, const Input& u, const VehicleParams& p, const PathModel& path,
                               const RhsOptions& opt = {}) {
  using detail::Grad;
  using detail::unit;
  State f = State::Zero();
  Eigen::Matrix<double, kStateDim, kStateDim + kInputDim> j =
      Eigen::Matrix<double, kStateDim, kStateDim + kInputDim>::Zero();

  const double vx = x(kVx), delta = x(kSteer), tr = x(kThrottle);
  const double wheelbase = p.wheelbase();
  const auto [fres, dfres] = detail::resistance(vx, p);

  const double vxdot = (tr * p.max_force - fres) / p.mass;
  Grad g_vxdot = Grad::Zero();
  g_vxdot(kThrottle) = p.max_force / p.mass;
  g_vxdot(kVx) = -dfres / p.mass;
  f(kVx) = vxdot;
  j.row(kVx) = g_vxdot;

  // d/dt [v_x tan(delta)] = vxdot tan(delta) + v_x sec^2(delta) ddelta/dt
  const double t = std::tan(delta);
  const double sec2 = 1.0 + t * t;
  const double ddelta = u(kSteerRate);
  const double rate = vxdot * t + vx * sec2 * ddelta;
  Grad g_rate = g_vxdot * t;
  g_rate(kSteer) += vxdot * sec2 + vx * 2.0 * t * sec2 * ddelta;
  g_rate(kVx) += sec2 * ddelta;
  g_rate(kStateDim + kSteerRate) += vx * sec2;

  f(kVy) = rate * p.lr / wheelbase;
  j.row(kVy) = g_rate * p.lr / wheelbase;
  f(kYawRate) = rate / wheelbase;
  j.row(kYawRate) = g_rate / wheelbase;

  detail::curvilinear_rows(x, path, opt, f, j);

  f(kSteer) = u(kSteerRate);
  j(kSteer, kStateDim + kSteerRate) = 1.0;
  f(kThrottle) = u(kThrottleRate);
  j(kThrottle, kStateDim + kThrottleRate) = 1.0;
  return detail::split(f, j);
}

/// Smoothstep weight of the dynamic model and its derivative in v_x.
inline std::pair<double, double> blend_weight(double vx, const VehicleParams& p) {
  const double span = p.blend_high - p.blend_low;
  const double t = (vx - p.blend_low) / span;
  if (t <= 0.0) return {0.0, 0.0};
  if (t >= 1.0) return {1.0, 0.0};
  return {t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t) / span};
}

inline RhsResult blended_rhs(const State& x, const Input& u, const VehicleParams& p, const PathModel& path,
                             const RhsOptions& opt = {}) {
  const auto [lambda, dlambda] = blend_weight(x(kVx), p);
  if (lambda >= 1.0) return dynamic_rhs(x, u, p, path, opt);
  if (lambda <= 0.0) return kinematic_rhs(x, u, p, path, opt);
  const RhsResult dyn = dynamic_rhs(x, u, p, path, opt);
  const RhsResult kin = kinematic_rhs(x, u, p, path, opt);
  RhsResult out;
  out.value = lambda * dyn.value + (1.0 - lambda) * kin.value;
  out.dx = lambda * dyn.dx + (1.0 - lambda) * kin.dx;
  out.dx.col(kVx) += dlambda * (dyn.value - kin.value);
  out.du = lambda * dyn.du + (1.0 - lambda) * kin.du;
  return out;
}

/// No-slip yaw rate of the kinematic model at speed v_x and steering delta.
inline double kinematic_yaw_rate(double vx, double delta, const VehicleParams& p) {
  return vx * std::tan(delta) / p.wheelbase();
}

}  // namespace resafe::vehicle
