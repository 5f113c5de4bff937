#pragma once

// Elliptic barrier around an obstacle and its exponential CBF (relative degree 2),
// evaluated either pointwise or on regional hull entries of (s, w) splines.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "resafe/basis.hpp"
#include "resafe/envelope.hpp"
#include "resafe/error.hpp"

namespace resafe::safety {

/// Obstacle ellipse moving with constant velocity in (s, w) over horizon time t >= 0.
struct ObstacleEllipse {
  double s0 = 0.0;
  double w0 = 0.0;
  double vs = 0.0;
  double vw = 0.0;
  double a = 3.0;
  double b = 2.0;
  double detection_range = 30.0;

  [[nodiscard]] double s_at(double t) const { return s0 + vs * t; }
  [[nodiscard]] double w_at(double t) const { return w0 + vw * t; }

  void validate() const {
    if (!(a > 0.0 && b > 0.0)) throw DomainError("ObstacleEllipse: semi-axes must be positive");
    if (!(detection_range > 0.0)) throw DomainError("ObstacleEllipse: detection range must be positive");
  }
};

struct CbfGains {
  double k1 = 1.6;
  double k2 = 1.1;

  void validate() const {
    if (!(k1 > 0.0 && k2 > 0.0)) throw DomainError("CbfGains: gains must be positive");
  }
};

inline double barrier_h(double s, double w, const ObstacleEllipse& obs, double t = 0.0) {
  const double ds = s - obs.s_at(t), dw = w - obs.w_at(t);
  return ds * ds / (obs.a * obs.a) + dw * dw / (obs.b * obs.b) - 1.0;
}

inline double cbf_residual(double h, double hdot, double hddot, const CbfGains& gains) {
  return hddot + gains.k1 * hdot + gains.k2 * h;
}

struct BarrierDerivatives {
  double h = 0.0;
  double hdot = 0.0;
  double hddot = 0.0;
};

/// h and its first two time derivatives in relative coordinates
/// (ds, dw) = (s - s_obs, w - w_obs) and their rates.
inline BarrierDerivatives barrier_derivatives(double ds, double dw, double dsd, double dwd, double dsdd,
                                              double dwdd, double a, double b) {
  const double ia = 1.0 / (a * a), ib = 1.0 / (b * b);
  return {ds * ds * ia + dw * dw * ib - 1.0, 2.0 * (ds * dsd * ia + dw * dwd * ib),
          2.0 * ((ds * dsdd + dsd * dsd) * ia + (dw * dwdd + dwd * dwd) * ib)};
}

/// Same, from absolute vehicle quantities at horizon time t.
inline BarrierDerivatives barrier_derivatives(double s, double w, double sd, double wd, double sdd, double wdd,
                                              const ObstacleEllipse& obs, double t) {
  return barrier_derivatives(s - obs.s_at(t), w - obs.w_at(t), sd - obs.vs, wd - obs.vw, sdd, wdd, obs.a,
                             obs.b);
}

/// Upper bound on |Hessian eigenvalues| of h in (ds, dw).
inline double barrier_hessian_bound(const ObstacleEllipse& obs) {
  return std::max(2.0 / (obs.a * obs.a), 2.0 / (obs.b * obs.b));
}

/// Upper bound on |Hessian eigenvalues| of h_CBF in (ds, dw, dsd, dwd, dsdd, dwdd).
/// The Hessian is constant and block diagonal with one 3x3 block per axis.
inline double cbf_hessian_bound(const ObstacleEllipse& obs, const CbfGains& g) {
  Eigen::Matrix3d block;
  block << g.k2, g.k1, 1.0, g.k1, 2.0, 0.0, 1.0, 0.0, 0.0;
  const double rho = block.selfadjointView<Eigen::Lower>().eigenvalues().cwiseAbs().maxCoeff();
  return rho * std::max(2.0 / (obs.a * obs.a), 2.0 / (obs.b * obs.b));
}

/// Legendre coefficients of the obstacle center over the horizon, as a spline in tau.
/// Column 0 is s_obs, column 1 is w_obs; only the first two rows are non-zero.
inline Eigen::MatrixXd obstacle_coefficients(const ObstacleEllipse& obs, int degree, double horizon) {
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(degree + 1, 2);
  // t = horizon (tau + 1) / 2, and L_0 = 1, L_1 = tau.
  beta(0, 0) = obs.s0 + 0.5 * obs.vs * horizon;
  beta(0, 1) = obs.w0 + 0.5 * obs.vw * horizon;
  if (degree >= 1) {
    beta(1, 0) = 0.5 * obs.vs * horizon;
    beta(1, 1) = 0.5 * obs.vw * horizon;
  }
  return beta;
}

enum class ConstraintKind { kBarrier, kCbf };

/// Values of h (or h_CBF) at the M+1 hull entry tuples of one region, their
/// gradients with respect to the s and w coefficient columns, and the
/// second-order enclosure margin of the region.
struct HullConstraintRows {
  ConstraintKind kind = ConstraintKind::kBarrier;
  int region = 0;
  Eigen::VectorXd values;
  Eigen::MatrixXd d_alpha_s;
  Eigen::MatrixXd d_alpha_w;
  double margin = 0.0;

  [[nodiscard]] double min_value() const { return values.minCoeff(); }
};

/// Hull rows of h >= 0 or h_CBF >= 0 for region k.
/// `alpha_s` and `alpha_w` are the vehicle's s and w coefficient columns.
inline HullConstraintRows hull_constraint_rows(const ObstacleEllipse& obs, const CbfGains& gains,
                                               const envelope::HullMatrixSet& hulls,
                                               const Eigen::VectorXd& alpha_s, const Eigen::VectorXd& alpha_w,
                                               double horizon, int region, ConstraintKind kind) {
  if (region < 0 || region >= hulls.regions()) throw DomainError("hull_constraint_rows: region out of range");
  const int n = hulls.degree + 1;
  if (alpha_s.size() != n || alpha_w.size() != n) {
    throw DomainError("hull_constraint_rows: coefficient size does not match hull degree");
  }
  const Eigen::MatrixXd beta = obstacle_coefficients(obs, hulls.degree, horizon);
  const Eigen::VectorXd rel_s = alpha_s - beta.col(0);
  const Eigen::VectorXd rel_w = alpha_w - beta.col(1);
  const double ia = 1.0 / (obs.a * obs.a), ib = 1.0 / (obs.b * obs.b);

  HullConstraintRows rows;
  rows.kind = kind;
  rows.region = region;

  const Eigen::MatrixXd& c0 = hulls.hull(region, 0);
  const Eigen::VectorXd ps = c0 * rel_s, pw = c0 * rel_w;

  if (kind == ConstraintKind::kBarrier) {
    rows.values = (ps.array().square() * ia + pw.array().square() * ib - 1.0).matrix();
    rows.d_alpha_s = (2.0 * ia * ps).asDiagonal() * c0;
    rows.d_alpha_w = (2.0 * ib * pw).asDiagonal() * c0;
    const std::array<Eigen::VectorXd, 2> args{ps, pw};
    rows.margin = 0.5 * envelope::combined_gap_squared(args) * barrier_hessian_bound(obs);
    return rows;
  }

  const double sc1 = 2.0 / horizon, sc2 = sc1 * sc1;
  const Eigen::MatrixXd c1 = sc1 * hulls.hull(region, 1);
  const Eigen::MatrixXd c2 = sc2 * hulls.hull(region, 2);
  const Eigen::VectorXd vs = c1 * rel_s, vw = c1 * rel_w;
  const Eigen::VectorXd as = c2 * rel_s, aw = c2 * rel_w;

  rows.values.resize(n);
  rows.d_alpha_s.resize(n, n);
  rows.d_alpha_w.resize(n, n);
  for (int j = 0; j < n; ++j) {
    const auto d = barrier_derivatives(ps(j), pw(j), vs(j), vw(j), as(j), aw(j), obs.a, obs.b);
    rows.values(j) = cbf_residual(d.h, d.hdot, d.hddot, gains);
    // d h_CBF / d(ds) = 2/a^2 (dsdd + k1 dsd + k2 ds), d/d(dsd) = 2/a^2 (2 dsd + k1 ds), d/d(dsdd) = 2/a^2 ds.
    const double g_ps = 2.0 * ia * (as(j) + gains.k1 * vs(j) + gains.k2 * ps(j));
    const double g_vs = 2.0 * ia * (2.0 * vs(j) + gains.k1 * ps(j));
    const double g_as = 2.0 * ia * ps(j);
    const double g_pw = 2.0 * ib * (aw(j) + gains.k1 * vw(j) + gains.k2 * pw(j));
    const double g_vw = 2.0 * ib * (2.0 * vw(j) + gains.k1 * pw(j));
    const double g_aw = 2.0 * ib * pw(j);
    rows.d_alpha_s.row(j) = g_ps * c0.row(j) + g_vs * c1.row(j) + g_as * c2.row(j);
    rows.d_alpha_w.row(j) = g_pw * c0.row(j) + g_vw * c1.row(j) + g_aw * c2.row(j);
  }
  const std::array<Eigen::VectorXd, 6> args{ps, pw, vs, vw, as, aw};
  rows.margin = 0.5 * envelope::combined_gap_squared(args) * cbf_hessian_bound(obs, gains);
  return rows;
}

/// Obstacles whose current center lies within detection range of (s, w).
inline std::vector<ObstacleEllipse> detected(const std::vector<ObstacleEllipse>& obstacles, double s, double w) {
  std::vector<ObstacleEllipse> out;
  for (const auto& o : obstacles) {
    if (std::hypot(o.s0 - s, o.w0 - w) < o.detection_range) out.push_back(o);
  }
  return out;
}

}  // namespace resafe::safety
