#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "resafe/harness.hpp"
#include "resafe/sim.hpp"

namespace rs = resafe::sim;
namespace rv = resafe::vehicle;
namespace rh = resafe::harness;

namespace {

rv::PathModel straight(double width = 3.5) { return rv::PathModel({0.0, 500.0}, {0.0, 0.0}, {width, width}, {width, width}); }

rv::State cruising(double vx) {
  rv::State x = rv::State::Zero();
  x(rv::kVx) = vx;
  return x;
}

rv::State integrate(rv::State x, const rv::Input& u, double h, int steps, const rv::VehicleParams& p,
                    const rv::PathModel& path) {
  for (int i = 0; i < steps; ++i) x = rs::step_plant(x, u, h, p, path);
  return x;
}

std::string scenario_file(const std::string& name) { return std::string(RESAFE_SCENARIO_DIR) + "/" + name; }

rs::CycleRecord record(bool detection, bool crash) {
  rs::CycleRecord r;
  r.detection = detection;
  r.crash = crash;
  return r;
}

}  // namespace

TEST(Plant, CoastingAdvancesAlongPath) {
  const rv::PathModel path = straight();
  const rv::State x = rs::step_plant(cruising(20.0), rv::Input::Zero(), rs::kControlPeriod, rv::VehicleParams{}, path);
  // Resistance slows the car slightly; s advances by almost vx dt.
  EXPECT_NEAR(x(rv::kS), 20.0 * rs::kControlPeriod, 1e-2);
  EXPECT_LE(x(rv::kVx), 20.0);
  EXPECT_NEAR(x(rv::kW), 0.0, 1e-12);
}

TEST(Plant, MirroredSteeringMirrorsLateralMotion) {
  const rv::PathModel path = straight();
  rv::Input left = rv::Input::Zero(), right = rv::Input::Zero();
  left(rv::kSteerRate) = 0.3;
  right(rv::kSteerRate) = -0.3;
  const rv::State a = integrate(cruising(15.0), left, 0.05, 20, rv::VehicleParams{}, path);
  const rv::State b = integrate(cruising(15.0), right, 0.05, 20, rv::VehicleParams{}, path);
  EXPECT_GT(std::abs(a(rv::kW)), 0.1);
  EXPECT_NEAR(a(rv::kW), -b(rv::kW), 1e-9);
  EXPECT_NEAR(a(rv::kHeadingError), -b(rv::kHeadingError), 1e-9);
  EXPECT_NEAR(a(rv::kS), b(rv::kS), 1e-9);
}

TEST(Plant, Rk4FourthOrderByRichardson) {
  // Substeps are capped at 5 ms, so stay below the cap to control h directly.
  const rv::PathModel path(std::vector<double>{0.0, 500.0}, {0.02, 0.02}, {3.5, 3.5}, {3.5, 3.5});
  rv::State x0 = cruising(12.0);
  x0(rv::kSteer) = 0.05;
  x0(rv::kThrottle) = 0.3;
  rv::Input u;
  u << -0.5, 0.4;
  const rv::VehicleParams p;
  // 0.4 s at h, h/2 and h/16.
  const rv::State ref = integrate(x0, u, 0.005 / 16, 1280, p, path);
  const double e1 = (integrate(x0, u, 0.005, 80, p, path) - ref).norm();
  const double e2 = (integrate(x0, u, 0.0025, 160, p, path) - ref).norm();
  ASSERT_GT(e2, 0.0);
  EXPECT_NEAR(e1 / e2, 16.0, 3.0) << "e1 " << e1 << " e2 " << e2;
}

TEST(Plant, BrakingNeverReverses) {
  rv::State x = cruising(1.0);
  x(rv::kThrottle) = -1.0;
  const rv::State y = integrate(x, rv::Input::Zero(), 0.05, 40, rv::VehicleParams{}, straight());
  EXPECT_GE(y(rv::kVx), 0.0);
  EXPECT_NEAR(y(rv::kVx), 0.0, 1e-12);
}

TEST(Plant, RejectsNonPositiveStep) {
  EXPECT_THROW(rs::step_plant(cruising(5.0), rv::Input::Zero(), 0.0, rv::VehicleParams{}, straight()),
               resafe::DomainError);
}

TEST(Metric, DirectRatios) {
  rs::ClosedLoopLog log;
  log.records = {record(true, false), record(true, false), record(false, true)};
  EXPECT_DOUBLE_EQ(rs::crash_avoidance_metric(log), 100.0);
  log.records = {record(true, true), record(true, false), record(true, true), record(true, false), record(false, false)};
  EXPECT_DOUBLE_EQ(rs::crash_avoidance_metric(log), 50.0);
  log.records = {record(false, false), record(false, false)};
  EXPECT_DOUBLE_EQ(rs::crash_avoidance_metric(log), 100.0);
  log.records.clear();
  EXPECT_THROW(rs::crash_avoidance_metric(log), resafe::DomainError);
}

TEST(Obstacles, TriggeredScript) {
  rs::ObstacleScript o;
  o.kind = rs::MotionKind::kTriggered;
  o.s0 = 50.0;
  o.vw = -1.5;
  o.appear_time = 1.0;
  o.move_time = 3.0;
  EXPECT_FALSE(o.present(0.5));
  EXPECT_TRUE(o.present(1.0));
  EXPECT_DOUBLE_EQ(o.at(2.0).w0, 0.0);
  EXPECT_DOUBLE_EQ(o.at(2.0).vw, 0.0);
  EXPECT_DOUBLE_EQ(o.at(5.0).w0, -3.0);
  EXPECT_DOUBLE_EQ(o.at(5.0).vw, -1.5);
}

TEST(Obstacles, JitterIsSeededAndBounded) {
  rs::Scenario sc;
  sc.path = straight();
  rs::ObstacleScript o;
  o.s0 = 60.0;
  o.jitter_s = 5.0;
  o.jitter_w = 0.3;
  sc.obstacles = {o, o};
  sc.seed = 11;
  const auto a = rs::realize_obstacles(sc), b = rs::realize_obstacles(sc);
  sc.seed = 12;
  const auto c = rs::realize_obstacles(sc);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].s0, b[i].s0);
    EXPECT_EQ(a[i].w0, b[i].w0);
    EXPECT_LE(std::abs(a[i].s0 - 60.0), 5.0);
    EXPECT_LE(std::abs(a[i].w0), 0.3);
  }
  EXPECT_NE(a[0].s0, c[0].s0);
}

TEST(ClosedLoop, ClearRoadTracksTargetSpeed) {
  const rs::Scenario sc = rh::parse_scenario(scenario_file("straight_clear.yaml"));
  const rs::ClosedLoopLog log = rs::run_closed_loop(sc);
  ASSERT_FALSE(log.aborted) << log.abort_reason;
  ASSERT_FALSE(log.records.empty());
  for (const auto& r : log.records) {
    EXPECT_FALSE(r.solver_failed);
    EXPECT_LT(std::abs(r.x(rv::kW)), 0.1);
  }
  EXPECT_NEAR(log.records.back().x(rv::kVx), sc.target_speed, 0.5);
  EXPECT_DOUBLE_EQ(rs::crash_avoidance_metric(log), 100.0);
  EXPECT_EQ(log.num_primal, 60);
}

TEST(ClosedLoop, DeterministicApartFromTiming) {
  rs::Scenario sc = rh::parse_scenario(scenario_file("straight_static_right.yaml"));
  sc.duration = 3.0;
  const rs::ClosedLoopLog a = rs::run_closed_loop(sc), b = rs::run_closed_loop(sc);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].x, b.records[i].x) << "cycle " << i;
    EXPECT_EQ(a.records[i].u, b.records[i].u) << "cycle " << i;
    EXPECT_EQ(a.records[i].stats.qp_iterations, b.records[i].stats.qp_iterations);
    EXPECT_EQ(a.records[i].crash, b.records[i].crash);
  }
}

TEST(ClosedLoop, ObstaclesOutsideRangeAreNotDetected) {
  rs::Scenario sc;
  sc.path = straight();
  sc.x0 = cruising(10.0);
  sc.target_speed = 10.0;
  sc.duration = 1.0;
  rs::ObstacleScript o;
  o.s0 = 200.0;
  sc.obstacles = {o};
  const rs::ClosedLoopLog log = rs::run_closed_loop(sc);
  for (const auto& r : log.records) {
    EXPECT_FALSE(r.detection);
    EXPECT_GT(r.h[0], 0.0);
  }
  EXPECT_DOUBLE_EQ(rs::crash_avoidance_metric(log), 100.0);
}

TEST(Scenario, Validation) {
  rs::Scenario sc;
  sc.path = straight(2.0);
  rs::ObstacleScript o;
  o.s0 = 10.0;
  o.w0 = 3.0;
  sc.obstacles = {o};
  EXPECT_THROW(sc.validate(), resafe::DomainError);
  sc.obstacles[0].w0 = 0.0;
  sc.obstacles[0].vs = 1.0;
  EXPECT_THROW(sc.validate(), resafe::DomainError);
  sc.obstacles.clear();
  sc.method = resafe::transcription::Method::kDms;
  sc.cbf = true;
  EXPECT_THROW(sc.validate(), resafe::DomainError);
}
