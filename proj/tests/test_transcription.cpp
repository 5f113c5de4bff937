#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "resafe/sqp.hpp"
#include "resafe/transcription.hpp"

namespace ro = resafe::ocp;
namespace rt = resafe::transcription;
namespace rsv = resafe::solver;
namespace rv = resafe::vehicle;

namespace {

ro::OcpSpec double_integrator(double horizon = 1.0) {
  auto dyn = [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    ro::DynamicsEval e;
    e.f = Eigen::Vector2d(x(1), u(0));
    e.fx = Eigen::Matrix2d::Zero();
    e.fx(0, 1) = 1.0;
    e.fu = Eigen::Vector2d(0.0, 1.0);
    return e;
  };
  auto o = ro::make_ocp(2, 1, dyn, horizon);
  o.terminal_lower = Eigen::Vector2d(1.0, 0.0);
  o.terminal_upper = o.terminal_lower;
  return o;
}

rv::PathModel test_path() {
  return rv::PathModel({0.0, 60.0, 120.0, 400.0}, {0.0, 0.01, -0.005, 0.0}, {4, 4, 4, 4}, {4, 4, 4, 4});
}

ro::OcpSpec vehicle_problem(bool cbf) {
  Eigen::VectorXd x0(8);
  x0 << 15.0, 0.1, 0.02, 0.0, 0.3, 0.01, 0.02, 0.1;
  ro::VehicleOcpOptions opt;
  opt.horizon = 1.75;
  auto o = ro::make_vehicle_ocp(rv::VehicleParams{}, test_path(), x0, 10.0, opt);
  o.obstacles.push_back({20.0, 0.5, 0.0, 0.0, 3.0, 2.0, 30.0});
  o.obstacles.push_back({12.0, -2.0, 4.0, 0.5, 3.0, 2.0, 30.0});
  o.use_cbf = cbf;
  return o;
}

Eigen::VectorXd random_point(const rt::NlpProblem& nlp, std::mt19937& rng) {
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  auto guess = nlp.initial_guess([&](double t) {
    Eigen::VectorXd x = nlp.ocp().x0;
    x(rv::kS) += x(rv::kVx) * t;
    return rt::StateInput{x, Eigen::VectorXd::Zero(nlp.ocp().nu)};
  });
  for (int i = 0; i < nlp.num_variables(); ++i) guess(i) += 0.05 * ud(rng) * (1.0 + std::abs(guess(i)));
  return guess;
}

}  // namespace

TEST(Transcription, DoubleIntegratorMatchesAnalyticSolution) {
  const auto spec = double_integrator();
  rt::TranscriptionConfig cfg;
  cfg.degree = 5;
  cfg.nodes = 7;
  cfg.regions = 3;
  for (auto m : {rt::Method::kResafeCol, rt::Method::kPsc, rt::Method::kDms}) {
    auto nlp = rt::transcribe(m, spec, cfg);
    const auto res = rsv::sqp_solve(*nlp, Eigen::VectorXd::Zero(nlp->num_variables()), rsv::converged_options());
    EXPECT_NEAR(res.stats.cost, 12.0, 1e-6) << rt::to_string(m);
    const double tol = m == rt::Method::kDms ? 1e-5 : 1e-6;
    // Node times of the 60-interval shooting grid, interior points for the splines.
    for (double t : {6.0 / 60.0, 22.0 / 60.0, 0.5, 49.0 / 60.0}) {
      const auto si = nlp->trajectory(res.z, t);
      EXPECT_NEAR(si.x(0), 3 * t * t - 2 * t * t * t, tol) << rt::to_string(m);
      EXPECT_NEAR(si.x(1), 6 * t - 6 * t * t, tol) << rt::to_string(m);
      EXPECT_NEAR(si.u(0), 6 - 12 * t, m == rt::Method::kDms ? 1e-4 : 1e-6) << rt::to_string(m);
    }
  }
}

TEST(Transcription, ZeroDynamicsGapsVanish) {
  auto dyn = [](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return ro::DynamicsEval{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 1)};
  };
  auto spec = ro::make_ocp(2, 1, dyn, 2.0);
  spec.x0 << 0.3, -0.7;
  spec.q_diag << 1.0, 1.0;
  auto nlp = rt::transcribe_dms(spec, 20);
  const auto res = rsv::sqp_solve(*nlp, Eigen::VectorXd::Zero(nlp->num_variables()), rsv::converged_options());
  Eigen::VectorXd g;
  nlp->constraints(res.z, g, nullptr);
  for (int r = 0; r < nlp->num_constraints(); ++r) {
    if (nlp->row_kinds()[r] == rt::RowKind::kDynamics) {
      EXPECT_NEAR(g(r), 0.0, 1e-9);
    }
  }
}

TEST(Transcription, ProblemSizes) {
  const auto spec = vehicle_problem(false);
  const auto col = rt::transcribe_resafecol(spec, 5, 6, 3);
  const auto psc = rt::transcribe_psc(spec, 5, 6);
  const auto dms = rt::transcribe_dms(spec, 60);
  EXPECT_EQ(col->num_primal(), 60);
  EXPECT_EQ(psc->num_primal(), 60);
  EXPECT_EQ(dms->num_primal(), 61 * 10);
  EXPECT_LE(5 * col->num_primal(), dms->num_primal());
  EXPECT_LT(psc->num_constraints(), col->num_constraints());
  EXPECT_THROW(rt::transcribe_resafecol(spec, 5, 5, 3), resafe::DomainError);
  auto cbf = vehicle_problem(true);
  EXPECT_THROW(rt::transcribe_dms(cbf, 60), resafe::DomainError);
}

TEST(Transcription, MonotoneSingleRegionHullIsTight) {
  auto dyn = [](const Eigen::VectorXd&, const Eigen::VectorXd& u) {
    return ro::DynamicsEval{u, Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Ones(1, 1)};
  };
  auto spec = ro::make_ocp(1, 1, dyn, 2.0);
  spec.q_diag << 1.0;
  spec.x_ref << 3.0;
  spec.x_upper << 1.0;
  spec.r_diag << 0.1;
  auto nlp = rt::transcribe_resafecol(spec, 4, 5, 1);
  const auto res = rsv::sqp_solve(*nlp, Eigen::VectorXd::Zero(nlp->num_variables()), rsv::converged_options());
  auto& sp = dynamic_cast<rt::SplineNlp&>(*nlp);
  const Eigen::VectorXd hull = sp.hulls().hull(0) * res.z.head(5);
  const double x_start = nlp->trajectory(res.z, 0.0).x(0), x_end = nlp->trajectory(res.z, 2.0).x(0);
  ASSERT_LT(x_start, x_end);
  EXPECT_NEAR(hull.minCoeff(), x_start, 1e-9);
  EXPECT_NEAR(hull.maxCoeff(), x_end, 1e-9);
  EXPECT_NEAR(x_end, 1.0, 1e-6);
}

TEST(Transcription, JacobiansMatchFiniteDifferences) {
  std::mt19937 rng(31);
  for (bool cbf : {false, true}) {
    const auto spec = vehicle_problem(cbf);
    std::vector<std::unique_ptr<rt::NlpProblem>> nlps;
    nlps.push_back(rt::transcribe_resafecol(spec, 5, 6, 3));
    nlps.push_back(rt::transcribe_psc(spec, 5, 6));
    if (!cbf) nlps.push_back(rt::transcribe_dms(spec, 12, 2));
    for (auto& nlp : nlps) {
      for (int trial = 0; trial < 5; ++trial) {
        const Eigen::VectorXd z = random_point(*nlp, rng);
        Eigen::VectorXd g;
        rt::SpMat jac;
        nlp->constraints(z, g, &jac);
        const Eigen::MatrixXd dense = jac;
        const Eigen::VectorXd grad = nlp->cost_gradient(z);
        for (int j = 0; j < nlp->num_variables(); ++j) {
          const double h = 1e-6 * std::max(1.0, std::abs(z(j)));
          Eigen::VectorXd zp = z, zm = z;
          zp(j) += h;
          zm(j) -= h;
          Eigen::VectorXd gp, gm;
          nlp->constraints(zp, gp, nullptr);
          nlp->constraints(zm, gm, nullptr);
          const Eigen::VectorXd fd = (gp - gm) / (2 * h);
          const double scale = std::max(1.0, dense.col(j).cwiseAbs().maxCoeff());
          EXPECT_LT((dense.col(j) - fd).cwiseAbs().maxCoeff(), 1e-5 * scale)
              << rt::to_string(nlp->method()) << " column " << j;
          // The cost is quadratic, so the central difference is exact for any
          // step; a wide one keeps roundoff from the slack weights out of it.
          const double hc = 1e-2 * std::max(1.0, std::abs(z(j)));
          Eigen::VectorXd cp = z, cm = z;
          cp(j) += hc;
          cm(j) -= hc;
          const double cfd = (nlp->cost(cp) - nlp->cost(cm)) / (2 * hc);
          EXPECT_NEAR(grad(j), cfd, 1e-5 * std::max(1.0, std::abs(cfd)));
        }
      }
    }
  }
}

TEST(Transcription, ResafeFeasibleImpliesPscFeasible) {
  auto spec = vehicle_problem(true);
  spec.obstacles[0].w0 = -3.5;
  spec.obstacles[1].w0 = 3.0;
  spec.obstacles[1].vw = 0.0;
  const auto col = rt::transcribe_resafecol(spec, 5, 6, 3);
  const auto psc = rt::transcribe_psc(spec, 5, 6);
  std::mt19937 rng(5);
  int feasible = 0;
  for (int trial = 0; trial < 400; ++trial) {
    Eigen::VectorXd z = random_point(*col, rng);
    col->update_margins(z);
    // Take the margin slacks at their hard-constraint setting.
    for (const auto& grp : col->obstacle_groups()) z(grp.sigma_margin) = grp.margin;
    Eigen::VectorXd g;
    col->constraints(z, g, nullptr);
    bool ok = true;
    for (int r = 0; r < col->num_constraints() && ok; ++r) {
      const auto kind = col->row_kinds()[r];
      if (kind != rt::RowKind::kBox && kind != rt::RowKind::kObstacle) continue;
      ok = g(r) >= col->lower()(r) - 1e-12 && g(r) <= col->upper()(r) + 1e-12;
    }
    if (!ok) continue;
    ++feasible;
    Eigen::VectorXd zp = Eigen::VectorXd::Zero(psc->num_variables());
    zp.head(60) = z.head(60);
    Eigen::VectorXd gp;
    psc->constraints(zp, gp, nullptr);
    for (int r = 0; r < psc->num_constraints(); ++r) {
      const auto kind = psc->row_kinds()[r];
      if (kind != rt::RowKind::kBox && kind != rt::RowKind::kObstacle) continue;
      EXPECT_GE(gp(r), psc->lower()(r) - 1e-9);
      EXPECT_LE(gp(r), psc->upper()(r) + 1e-9);
    }
  }
  EXPECT_GT(feasible, 10);
}

TEST(Sqp, OptimalStartConvergesImmediately) {
  const auto spec = double_integrator();
  auto nlp = rt::transcribe_psc(spec, 5, 7);
  const auto first = rsv::sqp_solve(*nlp, Eigen::VectorXd::Zero(nlp->num_variables()), rsv::converged_options());
  ASSERT_TRUE(first.stats.converged);
  const auto again = rsv::sqp_solve(*nlp, first.z, rsv::converged_options(), &first.y);
  EXPECT_EQ(again.stats.iterations, 1);
  EXPECT_TRUE(again.stats.converged);
  EXPECT_LT(again.stats.step_norm, 1e-8);
}

TEST(Sqp, VehicleRealTimeIterationRuns) {
  for (auto m : {rt::Method::kResafeCol, rt::Method::kPsc, rt::Method::kDms}) {
    auto nlp = rt::transcribe(m, vehicle_problem(false));
    const auto z0 = nlp->initial_guess([&](double t) {
      Eigen::VectorXd x = nlp->ocp().x0;
      x(rv::kS) += x(rv::kVx) * t;
      return rt::StateInput{x, Eigen::VectorXd::Zero(2)};
    });
    const auto res = rsv::sqp_solve(*nlp, z0);
    EXPECT_EQ(res.stats.iterations, 3);
    EXPECT_TRUE(res.z.allFinite());
    EXPECT_GE(res.stats.wall_time_ms, 0.0);
    EXPECT_EQ(res.stats.last_qp_status, rsv::QpStatus::kSolved) << rt::to_string(m);
  }
}
