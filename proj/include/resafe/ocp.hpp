#pragma once

// Continuous-time optimal control problem shared by all transcriptions:
// dynamics with Jacobians, diagonal quadratic stage and terminal cost,
// box bounds, terminal bounds, and obstacle descriptors.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "resafe/error.hpp"
#include "resafe/path.hpp"
#include "resafe/safety.hpp"
#include "resafe/vehicle.hpp"

namespace resafe::ocp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct DynamicsEval {
  Eigen::VectorXd f;
  Eigen::MatrixXd fx;
  Eigen::MatrixXd fu;
};

using Dynamics = std::function<DynamicsEval(const Eigen::VectorXd& x, const Eigen::VectorXd& u)>;

struct OcpSpec {
  int nx = 0;
  int nu = 0;
  Dynamics dynamics;
  double horizon = 3.0;

  Eigen::VectorXd q_diag;
  Eigen::VectorXd r_diag;
  Eigen::VectorXd terminal_diag;  // zero by default
  Eigen::VectorXd x_ref;          // constant reference

  Eigen::VectorXd x0;
  Eigen::VectorXd x_lower, x_upper;
  Eigen::VectorXd u_lower, u_upper;
  Eigen::VectorXd terminal_lower, terminal_upper;

  std::vector<safety::ObstacleEllipse> obstacles;
  safety::CbfGains gains;
  bool use_cbf = false;
  int s_channel = -1;
  int w_channel = -1;

  /// integrated_state[i] = state index whose time derivative is input i, or -1.
  std::vector<int> integrated_state;

  double margin_slack_weight = 1e3;
  // CBF margins mix position, velocity and acceleration hull gaps and reach
  // 1e2..1e3; a stiff penalty on them drives the plan toward large closing
  // speeds, where h_CBF grows, instead of around the obstacle.
  double cbf_margin_slack_weight = 1e-3;
  double soft_l1_weight = 1e6;
  double soft_quadratic_weight = 1e4;

  void validate() const {
    if (nx <= 0 || nu <= 0) throw DomainError("OcpSpec: dimensions must be positive");
    if (!dynamics) throw DomainError("OcpSpec: dynamics handle is empty");
    if (!(horizon > 0.0)) throw DomainError("OcpSpec: horizon must be positive");
    auto check = [](const Eigen::VectorXd& v, int n, const char* what) {
      if (v.size() != n) throw DomainError(std::string("OcpSpec: ") + what + " has wrong dimension");
    };
    check(q_diag, nx, "Q");
    check(r_diag, nu, "R");
    check(terminal_diag, nx, "terminal weight");
    check(x_ref, nx, "reference");
    check(x0, nx, "initial state");
    check(x_lower, nx, "state lower bound");
    check(x_upper, nx, "state upper bound");
    check(u_lower, nu, "input lower bound");
    check(u_upper, nu, "input upper bound");
    check(terminal_lower, nx, "terminal lower bound");
    check(terminal_upper, nx, "terminal upper bound");
    if ((q_diag.array() < 0.0).any()) throw DomainError("OcpSpec: Q must be positive semidefinite");
    if ((r_diag.array() <= 0.0).any()) throw DomainError("OcpSpec: R must be positive definite");
    if ((terminal_diag.array() < 0.0).any()) throw DomainError("OcpSpec: terminal weight must be PSD");
    if ((x_lower.array() > x_upper.array()).any() || (u_lower.array() > u_upper.array()).any() ||
        (terminal_lower.array() > terminal_upper.array()).any()) {
      throw DomainError("OcpSpec: lower bound exceeds upper bound");
    }
    if (!obstacles.empty() && (s_channel < 0 || s_channel >= nx || w_channel < 0 || w_channel >= nx)) {
      throw DomainError("OcpSpec: obstacles require valid s and w channels");
    }
    if (!(margin_slack_weight >= 0.0 && cbf_margin_slack_weight >= 0.0 && soft_l1_weight >= 0.0 &&
          soft_quadratic_weight >= 0.0)) {
      throw DomainError("OcpSpec: slack weights must be non-negative");
    }
    for (const auto& o : obstacles) o.validate();
    if (use_cbf) gains.validate();
    if (!integrated_state.empty() && static_cast<int>(integrated_state.size()) != nu) {
      throw DomainError("OcpSpec: integrated-state map must have one entry per input");
    }
  }
};

/// Unconstrained problem skeleton with free bounds and zero weights.
inline OcpSpec make_ocp(int nx, int nu, Dynamics dynamics, double horizon) {
  OcpSpec o;
  o.nx = nx;
  o.nu = nu;
  o.dynamics = std::move(dynamics);
  o.horizon = horizon;
  o.q_diag = Eigen::VectorXd::Zero(nx);
  o.r_diag = Eigen::VectorXd::Ones(nu);
  o.terminal_diag = Eigen::VectorXd::Zero(nx);
  o.x_ref = Eigen::VectorXd::Zero(nx);
  o.x0 = Eigen::VectorXd::Zero(nx);
  o.x_lower = Eigen::VectorXd::Constant(nx, -kInf);
  o.x_upper = Eigen::VectorXd::Constant(nx, kInf);
  o.u_lower = Eigen::VectorXd::Constant(nu, -kInf);
  o.u_upper = Eigen::VectorXd::Constant(nu, kInf);
  o.terminal_lower = Eigen::VectorXd::Constant(nx, -kInf);
  o.terminal_upper = Eigen::VectorXd::Constant(nx, kInf);
  return o;
}

/// ||x - x_ref||_Q^2 + ||u||_R^2 with diagonal weights.
inline double stage_cost(const Eigen::VectorXd& x, const Eigen::VectorXd& u, const Eigen::VectorXd& x_ref,
                         const Eigen::VectorXd& q_diag, const Eigen::VectorXd& r_diag) {
  if (x.size() != x_ref.size() || x.size() != q_diag.size() || u.size() != r_diag.size()) {
    throw DomainError("stage_cost: dimension mismatch");
  }
  const Eigen::VectorXd e = x - x_ref;
  return e.dot(q_diag.cwiseProduct(e)) + u.dot(r_diag.cwiseProduct(u));
}

/// Stage weights used for the vehicle, in state order [vx, vy, r, s, w, theta, delta, tr].
inline Eigen::VectorXd vehicle_q_diag() {
  Eigen::VectorXd q(vehicle::kStateDim);
  q << 3.1, 10.0, 10.0, 0.0, 5.2, 48.0, 0.9, 1.5;
  return q;
}

inline Eigen::VectorXd vehicle_r_diag() { return Eigen::VectorXd::Ones(vehicle::kInputDim); }

struct VehicleOcpOptions {
  double target_speed = 20.0;
  double horizon = 3.0;
  double max_steer_rate = 0.5;      // rad/s
  double max_throttle_rate = 2.0;   // 1/s
  double max_speed = 40.0;
  /// Added to 1 - kappa w in NLP evaluations so trial points never throw.
  double singularity_floor = 0.05;
  double terminal_weight_scale = 0.0;
};

/// Vehicle OCP in path coordinates with s measured from `s_offset`.
/// Obstacles are expected relative to the same offset.
inline OcpSpec make_vehicle_ocp(const vehicle::VehicleParams& params, const vehicle::PathModel& path,
                                const Eigen::VectorXd& x0, double s_offset, const VehicleOcpOptions& opt) {
  using namespace vehicle;
  params.validate();
  auto dyn = [params, path, s_offset, floor = opt.singularity_floor](const Eigen::VectorXd& x,
                                                                       const Eigen::VectorXd& u) {
    State xs = x;
    xs(kS) += s_offset;
    const RhsResult r = blended_rhs(xs, Input(u), params, path, RhsOptions{floor});
    return DynamicsEval{r.value, r.dx, r.du};
  };
  OcpSpec o = make_ocp(kStateDim, kInputDim, dyn, opt.horizon);
  o.q_diag = vehicle_q_diag();
  o.r_diag = vehicle_r_diag();
  o.terminal_diag = opt.terminal_weight_scale * o.q_diag;
  o.x_ref = Eigen::VectorXd::Zero(kStateDim);
  o.x_ref(kVx) = opt.target_speed;
  o.x0 = x0;

  // Corridor: the tightest width over the look-ahead.
  const double lookahead = std::max(0.0, x0(kVx)) * opt.horizon + 5.0;
  double wl = kInf, wr = kInf;
  for (double d = 0.0; d <= lookahead; d += 1.0) {
    wl = std::min(wl, path.width_left(s_offset + x0(kS) + d));
    wr = std::min(wr, path.width_right(s_offset + x0(kS) + d));
  }
  o.x_lower(kVx) = 0.0;
  o.x_upper(kVx) = opt.max_speed;
  o.x_lower(kW) = -wr;
  o.x_upper(kW) = wl;
  o.x_lower(kSteer) = -params.max_steer;
  o.x_upper(kSteer) = params.max_steer;
  o.x_lower(kThrottle) = -1.0;
  o.x_upper(kThrottle) = 1.0;
  // The measured state must lie inside its own bounds.
  for (int i = 0; i < kStateDim; ++i) {
    o.x_lower(i) = std::min(o.x_lower(i), x0(i));
    o.x_upper(i) = std::max(o.x_upper(i), x0(i));
  }
  o.u_lower << -opt.max_throttle_rate, -opt.max_steer_rate;
  o.u_upper << opt.max_throttle_rate, opt.max_steer_rate;
  o.s_channel = kS;
  o.w_channel = kW;
  o.integrated_state = {kThrottle, kSteer};
  return o;
}

}  // namespace resafe::ocp
