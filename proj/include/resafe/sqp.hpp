#pragma once

// Sequential quadratic programming over an NlpProblem.
//
// The cost is exactly quadratic, so the QP Hessian is the cost Hessian plus
// a small regularization; constraints are linearized at the iterate. With
// the default iteration cap this is a real-time iteration scheme; raise the
// cap and tighten the tolerances to solve to convergence.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "resafe/error.hpp"
#include "resafe/qp.hpp"
#include "resafe/transcription.hpp"

namespace resafe::solver {

enum class LineSearch { kNone, kMerit };

struct SolveOptions {
  int max_iterations = 3;
  double tolerance = 1e-4;
  double hessian_regularization = 1e-6;
  LineSearch line_search = LineSearch::kNone;
  bool warm_start = true;
  bool allow_soften = true;
  QpSettings qp;

  void validate() const {
    if (max_iterations < 1) throw DomainError("SolveOptions: max_iterations must be positive");
    if (!(tolerance > 0.0) || !(qp.eps_abs > 0.0) || !(qp.eps_rel >= 0.0)) {
      throw DomainError("SolveOptions: tolerances must be positive");
    }
    if (hessian_regularization < 0.0) throw DomainError("SolveOptions: regularization must be non-negative");
  }
};

/// Options for solving open-loop problems to convergence.
inline SolveOptions converged_options() {
  SolveOptions o;
  o.max_iterations = 100;
  o.tolerance = 1e-9;
  o.hessian_regularization = 1e-9;
  o.line_search = LineSearch::kMerit;
  o.qp.eps_abs = 1e-10;
  o.qp.eps_rel = 1e-10;
  o.qp.max_iter = 200000;
  return o;
}

struct SolveStats {
  int iterations = 0;
  int qp_iterations = 0;
  double wall_time_ms = 0.0;
  double max_violation = 0.0;
  double cost = 0.0;
  double step_norm = 0.0;
  bool converged = false;
  bool softened = false;
  QpStatus last_qp_status = QpStatus::kSolved;
};

struct SqpResult {
  Eigen::VectorXd z;
  Eigen::VectorXd y;
  SolveStats stats;
};

namespace detail {

inline double l1_violation(const transcription::NlpProblem& nlp, const Eigen::VectorXd& z) {
  Eigen::VectorXd g;
  nlp.constraints(z, g, nullptr);
  return ((nlp.lower() - g).cwiseMax(g - nlp.upper())).cwiseMax(0.0).sum();
}

}  // namespace detail

/// Runs SQP from `init`. `dual_init` optionally seeds the QP multipliers.
inline SqpResult sqp_solve(transcription::NlpProblem& nlp, const Eigen::VectorXd& init, const SolveOptions& opt = {},
                           const Eigen::VectorXd* dual_init = nullptr) {
  opt.validate();
  const int n = nlp.num_variables();
  if (init.size() != n) throw DomainError("sqp_solve: initial point has wrong dimension");
  const auto t0 = std::chrono::steady_clock::now();

  SqpResult res;
  res.z = init;
  res.y = Eigen::VectorXd::Zero(nlp.num_constraints());
  if (dual_init != nullptr && opt.warm_start && dual_init->size() == nlp.num_constraints()) res.y = *dual_init;

  SpMat reg(n, n);
  reg.setIdentity();
  const SpMat p = nlp.cost_hessian() + opt.hessian_regularization * reg;

  Eigen::VectorXd g;
  SpMat jac;
  for (int it = 0; it < opt.max_iterations; ++it) {
    nlp.update_margins(res.z);
    nlp.constraints(res.z, g, &jac);
    const Eigen::VectorXd qv = nlp.cost_gradient(res.z);

    QpResult qp;
    for (int attempt = 0; attempt < 2; ++attempt) {
      const Eigen::VectorXd lo = nlp.lower() - g, hi = nlp.upper() - g;
      QpWarmStart ws;
      ws.y = res.y;
      qp = qp_solve(p, qv, jac, lo, hi, opt.qp, opt.warm_start ? &ws : nullptr);
      res.stats.qp_iterations += qp.iterations;
      // Interior-point iterates on an infeasible QP tend to stall rather than
      // certify, so an unconverged subproblem also triggers the softened retry.
      if (qp.status == QpStatus::kSolved) break;
      if (!opt.allow_soften || !nlp.soften()) break;
      res.y.setZero();
      res.stats.softened = true;
    }
    res.stats.last_qp_status = qp.status;
    if (qp.status == QpStatus::kPrimalInfeasible) {
      std::ostringstream msg;
      msg << "sqp_solve: QP subproblem infeasible after softening (iteration " << it << ", "
          << nlp.num_variables() << " variables, " << nlp.num_constraints() << " rows, max violation "
          << nlp.max_violation(res.z) << ")";
      throw SolverError(msg.str());
    }
    // An unconverged subproblem gives no trustworthy step; keep the iterate.
    if (qp.status != QpStatus::kSolved) break;

    Eigen::VectorXd step = qp.x;
    double t = 1.0;
    if (opt.line_search == LineSearch::kMerit) {
      const double mu = std::max(1.0, 1.1 * qp.y.cwiseAbs().maxCoeff());
      const double merit0 = nlp.cost(res.z) + mu * detail::l1_violation(nlp, res.z);
      const double slope = qv.dot(step) - mu * detail::l1_violation(nlp, res.z);
      for (int ls = 0; ls < 30; ++ls) {
        const Eigen::VectorXd trial = res.z + t * step;
        const double merit = nlp.cost(trial) + mu * detail::l1_violation(nlp, trial);
        if (merit <= merit0 + 1e-4 * t * std::min(slope, 0.0) + 1e-12 * std::abs(merit0)) break;
        t *= 0.5;
      }
    }
    res.z += t * step;
    res.y = (1.0 - t) * res.y + t * qp.y;
    res.stats.iterations = it + 1;
    res.stats.step_norm = (t * step).cwiseAbs().maxCoeff();
    if (res.stats.step_norm <= opt.tolerance * (1.0 + res.z.cwiseAbs().maxCoeff())) {
      nlp.update_margins(res.z);
      if (nlp.max_violation(res.z) <= std::max(opt.tolerance, 10.0 * opt.qp.eps_abs)) {
        res.stats.converged = true;
        break;
      }
    }
  }
  nlp.update_margins(res.z);
  res.stats.max_violation = nlp.max_violation(res.z);
  res.stats.cost = nlp.cost(res.z);
  res.stats.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace resafe::solver
