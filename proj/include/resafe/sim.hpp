#pragma once

// Closed-loop simulation: a single-track plant with perturbed parameters,
// scripted obstacles, and the NMPC re-solved every control cycle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "resafe/error.hpp"
#include "resafe/ocp.hpp"
#include "resafe/path.hpp"
#include "resafe/safety.hpp"
#include "resafe/sqp.hpp"
#include "resafe/transcription.hpp"
#include "resafe/vehicle.hpp"

namespace resafe::sim {

inline constexpr double kControlPeriod = 0.05;  // s
inline constexpr double kMaxSubstep = 0.005;    // s

/// The plant left the region where its model is defined.
class SimulationError : public Error {
 public:
  using Error::Error;
};

enum class MotionKind { kStatic, kConstantVelocity, kTriggered };

inline const char* to_string(MotionKind k) {
  switch (k) {
    case MotionKind::kStatic: return "static";
    case MotionKind::kConstantVelocity: return "constant_velocity";
    case MotionKind::kTriggered: return "triggered";
  }
  return "unknown";
}

inline MotionKind parse_motion(const std::string& s) {
  if (s == "static") return MotionKind::kStatic;
  if (s == "constant_velocity") return MotionKind::kConstantVelocity;
  if (s == "triggered") return MotionKind::kTriggered;
  throw DomainError("unknown obstacle motion '" + s + "' (expected static, constant_velocity or triggered)");
}

/// Obstacle in absolute path coordinates. A triggered obstacle is invisible
/// before `appear_time` and stands still until `move_time`.
struct ObstacleScript {
  MotionKind kind = MotionKind::kStatic;
  double s0 = 0.0;
  double w0 = 0.0;
  double vs = 0.0;
  double vw = 0.0;
  double a = 3.0;
  double b = 2.0;
  double appear_time = 0.0;
  double move_time = 0.0;
  /// Half-widths of the seeded uniform perturbation of (s0, w0).
  double jitter_s = 0.0;
  double jitter_w = 0.0;
  double detection_range = 30.0;

  void validate() const {
    if (!(a > 0.0 && b > 0.0)) throw DomainError("obstacle: semi-axes must be positive");
    if (!(detection_range > 0.0)) throw DomainError("obstacle: detection range must be positive");
    if (jitter_s < 0.0 || jitter_w < 0.0) throw DomainError("obstacle: jitter must be non-negative");
    if (kind == MotionKind::kStatic && (vs != 0.0 || vw != 0.0)) {
      throw DomainError("obstacle: a static obstacle must have zero velocity");
    }
    if (kind != MotionKind::kTriggered && (appear_time != 0.0 || move_time != 0.0)) {
      throw DomainError("obstacle: appear_time and move_time apply to triggered obstacles only");
    }
    if (appear_time < 0.0 || move_time < 0.0) throw DomainError("obstacle: trigger times must be non-negative");
  }

  [[nodiscard]] bool present(double t) const { return t >= appear_time; }

  /// Center and velocity at simulation time t.
  [[nodiscard]] safety::ObstacleEllipse at(double t) const {
    const double moving = std::max(0.0, t - move_time);
    const bool moves = t >= move_time;
    return {s0 + vs * moving, w0 + vw * moving, moves ? vs : 0.0, moves ? vw : 0.0, a, b, detection_range};
  }
};

struct PlantMismatch {
  double mass = 1.15;
  double stiffness = 0.8;
  double inertia = 1.1;

  void validate() const {
    if (!(mass > 0.0 && stiffness > 0.0 && inertia > 0.0)) {
      throw DomainError("plant mismatch multipliers must be positive");
    }
  }

  [[nodiscard]] vehicle::VehicleParams apply(vehicle::VehicleParams p) const {
    p.mass *= mass;
    p.cf *= stiffness;
    p.cr *= stiffness;
    p.yaw_inertia *= inertia;
    return p;
  }
};

struct Scenario {
  std::string name = "scenario";
  vehicle::PathModel path;
  vehicle::State x0 = vehicle::State::Zero();  // absolute s
  double target_speed = 20.0;
  std::vector<ObstacleScript> obstacles;
  double horizon = 3.0;
  transcription::Method method = transcription::Method::kResafeCol;
  bool cbf = false;
  int regions = 3;
  int degree = 5;
  int nodes = 6;
  int shooting_nodes = 60;
  int sqp_iterations = 3;
  PlantMismatch mismatch;
  vehicle::VehicleParams model;
  safety::CbfGains gains;
  double duration = 10.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(duration > 0.0)) throw DomainError("scenario: duration must be positive");
    if (!(horizon > 0.0)) throw DomainError("scenario: horizon must be positive");
    if (!(target_speed >= 0.0)) throw DomainError("scenario: target speed must be non-negative");
    if (regions < 1 || degree < 1 || nodes < degree + 1 || shooting_nodes < 1 || sqp_iterations < 1) {
      throw DomainError("scenario: invalid transcription settings");
    }
    if (cbf && method == transcription::Method::kDms) {
      throw DomainError("scenario: the CBF constraint requires a spline transcription (psc or resafecol)");
    }
    if (!x0.allFinite()) throw DomainError("scenario: initial state must be finite");
    model.validate();
    mismatch.validate();
    gains.validate();
    for (const auto& o : obstacles) {
      o.validate();
      if (o.s0 < path.start() || o.s0 > path.end()) throw DomainError("scenario: obstacle lies outside the path");
      if (o.w0 < -path.width_right(o.s0) || o.w0 > path.width_left(o.s0)) {
        throw DomainError("scenario: obstacle lies outside the corridor");
      }
    }
  }
};

struct CycleRecord {
  double time = 0.0;
  vehicle::State x = vehicle::State::Zero();
  vehicle::Pose pose;
  vehicle::Input u = vehicle::Input::Zero();
  solver::SolveStats stats;
  std::vector<double> h;  // one per present obstacle slot; NaN when absent
  bool detection = false;
  bool crash = false;
  bool solver_failed = false;
};

struct ClosedLoopLog {
  std::string scenario;
  transcription::Method method = transcription::Method::kResafeCol;
  bool cbf = false;
  int regions = 0;
  int num_variables = 0;  // last NLP size, slacks included
  int num_primal = 0;
  std::vector<CycleRecord> records;
  bool aborted = false;
  std::string abort_reason;
};

/// One plant step of length dt with input rates held constant, RK4 with substeps of at most 5 ms.
/// Steering and throttle saturate and braking never reverses the vehicle.
inline vehicle::State step_plant(const vehicle::State& x, const vehicle::Input& u, double dt,
                                 const vehicle::VehicleParams& plant, const vehicle::PathModel& path) {
  using namespace vehicle;
  if (!(dt > 0.0)) throw DomainError("step_plant: dt must be positive");
  const int steps = std::max(1, static_cast<int>(std::ceil(dt / kMaxSubstep - 1e-9)));
  const double h = dt / steps;
  auto f = [&](const State& s) { return blended_rhs(s, u, plant, path).value; };
  State s = x;
  for (int i = 0; i < steps; ++i) {
    const State k1 = f(s);
    const State k2 = f(s + 0.5 * h * k1);
    const State k3 = f(s + 0.5 * h * k2);
    const State k4 = f(s + h * k3);
    s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    s(kSteer) = std::clamp(s(kSteer), -plant.max_steer, plant.max_steer);
    s(kThrottle) = std::clamp(s(kThrottle), -1.0, 1.0);
    if (s(kVx) < 0.0) {
      s(kVx) = 0.0;
      s(kVy) = 0.0;
      s(kYawRate) = 0.0;
    }
    if (!s.allFinite()) throw SimulationError("step_plant: state became non-finite");
  }
  return s;
}

/// Percentage of detection cycles with every obstacle outside its ellipse; 100 without detections.
inline double crash_avoidance_metric(const ClosedLoopLog& log) {
  if (log.records.empty()) throw DomainError("crash_avoidance_metric: empty log");
  int detect = 0, safe = 0;
  for (const auto& r : log.records) {
    if (!r.detection) continue;
    ++detect;
    if (!r.crash) ++safe;
  }
  return detect == 0 ? 100.0 : 100.0 * safe / detect;
}

namespace detail {

/// Uniform in [-1, 1] from the raw generator, independent of the standard library's distributions.
inline double symmetric_unit(std::mt19937_64& rng) {
  return 2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53 - 1.0;
}

struct Plan {
  std::unique_ptr<transcription::NlpProblem> nlp;
  Eigen::VectorXd z;
  double s_offset = 0.0;
};

}  // namespace detail

/// Obstacle scripts with the seeded jitter applied.
inline std::vector<ObstacleScript> realize_obstacles(const Scenario& sc) {
  std::mt19937_64 rng(sc.seed);
  std::vector<ObstacleScript> out = sc.obstacles;
  for (auto& o : out) {
    const double js = detail::symmetric_unit(rng), jw = detail::symmetric_unit(rng);
    o.s0 += o.jitter_s * js;
    o.w0 += o.jitter_w * jw;
  }
  return out;
}

inline ocp::VehicleOcpOptions controller_options(const Scenario& sc) {
  ocp::VehicleOcpOptions o;
  o.target_speed = sc.target_speed;
  o.horizon = sc.horizon;
  return o;
}

inline transcription::TranscriptionConfig transcription_config(const Scenario& sc) {
  transcription::TranscriptionConfig c;
  c.degree = sc.degree;
  c.nodes = sc.nodes;
  c.regions = sc.regions;
  c.shooting_nodes = sc.shooting_nodes;
  return c;
}

/// Runs the NMPC against the mismatched plant for the scenario duration.
/// The controller sees the measured state and the current obstacle positions
/// and velocities; it never reads the plant parameters.
inline ClosedLoopLog run_closed_loop(const Scenario& sc) {
  using namespace vehicle;
  sc.validate();
  const std::vector<ObstacleScript> scripts = realize_obstacles(sc);
  const VehicleParams plant = sc.mismatch.apply(sc.model);
  const ocp::VehicleOcpOptions ctrl = controller_options(sc);
  const transcription::TranscriptionConfig cfg = transcription_config(sc);
  solver::SolveOptions sopt;
  sopt.max_iterations = sc.sqp_iterations;

  ClosedLoopLog log;
  log.scenario = sc.name;
  log.method = sc.method;
  log.cbf = sc.cbf;
  log.regions = sc.regions;

  const int cycles = std::max(1, static_cast<int>(std::llround(sc.duration / kControlPeriod)));
  State x = sc.x0;
  Input u_prev = Input::Zero();
  detail::Plan plan;
  Eigen::VectorXd dual;
  bool keep_soft = false;

  for (int k = 0; k < cycles; ++k) {
    const double t = k * kControlPeriod;
    CycleRecord rec;
    rec.time = t;
    rec.x = x;
    rec.pose = frenet_to_cartesian({x(kS), x(kW), x(kHeadingError)}, sc.path);

    std::vector<safety::ObstacleEllipse> seen;
    rec.h.assign(scripts.size(), std::nan(""));
    for (std::size_t i = 0; i < scripts.size(); ++i) {
      if (!scripts[i].present(t)) continue;
      const safety::ObstacleEllipse o = scripts[i].at(t);
      rec.h[i] = safety::barrier_h(x(kS), x(kW), o);
      if (rec.h[i] < 0.0) rec.crash = true;
      if (std::hypot(o.s0 - x(kS), o.w0 - x(kW)) < o.detection_range) {
        rec.detection = true;
        safety::ObstacleEllipse rel = o;
        rel.s0 -= x(kS);
        seen.push_back(rel);
      }
    }

    Input u = u_prev;
    try {
      State x_rel = x;
      x_rel(kS) = 0.0;
      ocp::OcpSpec spec = ocp::make_vehicle_ocp(sc.model, sc.path, x_rel, x(kS), ctrl);
      spec.obstacles = seen;
      spec.use_cbf = sc.cbf;
      spec.gains = sc.gains;
      auto nlp = transcription::transcribe(sc.method, spec, cfg);
      // Once softened, stay soft while obstacles remain in view; re-discovering
      // infeasibility every cycle costs a full failed QP.
      if (keep_soft && !seen.empty()) nlp->soften();

      Eigen::VectorXd z0;
      if (plan.nlp) {
        const double shift = plan.s_offset - x(kS);
        const double tf = plan.nlp->ocp().horizon;
        z0 = nlp->initial_guess([&](double tau) {
          const double tp = tau + kControlPeriod;
          transcription::StateInput si = plan.nlp->trajectory(plan.z, std::min(tp, tf));
          si.x(kS) += shift + std::max(0.0, tp - tf) * si.x(kVx);
          return si;
        });
      } else {
        z0 = nlp->initial_guess([&](double tau) {
          State xs = x_rel;
          xs(kS) += std::max(0.0, x(kVx)) * tau;
          return transcription::StateInput{xs, Eigen::VectorXd::Zero(kInputDim)};
        });
      }
      const solver::SqpResult res = solver::sqp_solve(*nlp, z0, sopt, dual.size() > 0 ? &dual : nullptr);
      if (!res.z.allFinite()) throw SolverError("closed loop: non-finite iterate");
      rec.stats = res.stats;
      Eigen::VectorXd ua = nlp->applied_input(res.z, kControlPeriod);
      ua = ua.cwiseMax(spec.u_lower).cwiseMin(spec.u_upper);
      u = ua;
      log.num_variables = nlp->num_variables();
      log.num_primal = nlp->num_primal();
      dual = res.y;
      keep_soft = nlp->softened();
      plan.z = res.z;
      plan.s_offset = x(kS);
      plan.nlp = std::move(nlp);
    } catch (const SolverError&) {
      rec.solver_failed = true;
      keep_soft = false;
      plan = {};
      dual.resize(0);
    }
    rec.u = u;
    u_prev = u;
    log.records.push_back(rec);

    try {
      x = step_plant(x, u, kControlPeriod, plant, sc.path);
    } catch (const Error& e) {
      log.aborted = true;
      log.abort_reason = e.what();
      break;
    }
  }
  return log;
}

}  // namespace resafe::sim
