#pragma once

// Convex QP  min 1/2 x'Px + q'x  s.t.  l <= Ax <= u  by operator splitting (ADMM).
//
// Iterates on the equilibrated problem with per-row penalties (equality rows
// stiffer), over-relaxation, and residual-balancing penalty updates. The
// reduced system P + sigma I + A' diag(rho) A is factored by sparse LDL'.
// Sign convention: P x + q + A' y = 0 at optimality, so rows active at their
// lower bound carry y <= 0 and rows active at their upper bound y >= 0.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "resafe/error.hpp"

namespace resafe::solver {

using SpMat = Eigen::SparseMatrix<double>;

enum class QpMethod { kAdmm, kInteriorPoint };

struct QpSettings {
  QpMethod method = QpMethod::kInteriorPoint;
  double rho = 1.0;
  double sigma = 1e-6;
  double alpha = 1.6;
  double eps_abs = 1e-4;
  double eps_rel = 1e-4;
  double eps_prim_inf = 1e-4;
  int max_iter = 4000;
  bool adaptive_rho = true;
  int adaptive_rho_interval = 10;  // a multiple of check_interval
  int check_interval = 5;
  double adaptive_rho_tolerance = 5.0;
  int scaling_iterations = 10;
  bool polish = true;
  double polish_delta = 1e-6;
  int polish_refine_iter = 3;
  /// Iteration cap of the interior-point method (max_iter applies to ADMM).
  int ipm_max_iter = 100;
};

enum class QpStatus { kSolved, kMaxIterations, kPrimalInfeasible };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::kSolved: return "solved";
    case QpStatus::kMaxIterations: return "max_iterations";
    case QpStatus::kPrimalInfeasible: return "primal_infeasible";
  }
  return "unknown";
}

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  QpStatus status = QpStatus::kMaxIterations;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double objective = 0.0;
  bool polished = false;
};

struct QpWarmStart {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

namespace detail {

inline constexpr double kBig = 1e30;

inline double inf_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

inline Eigen::VectorXd col_inf_norms(const SpMat& m) {
  Eigen::VectorXd n = Eigen::VectorXd::Zero(m.cols());
  for (int k = 0; k < m.outerSize(); ++k) {
    for (SpMat::InnerIterator it(m, k); it; ++it) n(k) = std::max(n(k), std::abs(it.value()));
  }
  return n;
}

inline Eigen::VectorXd row_inf_norms(const SpMat& m) {
  Eigen::VectorXd n = Eigen::VectorXd::Zero(m.rows());
  for (int k = 0; k < m.outerSize(); ++k) {
    for (SpMat::InnerIterator it(m, k); it; ++it) n(it.row()) = std::max(n(it.row()), std::abs(it.value()));
  }
  return n;
}

inline double clamp_norm(double v) {
  if (v < 1e-4) return 1.0;
  return std::min(v, 1e4);
}

/// Scaled copy of a QP with P_s = c D P D, q_s = c D q, A_s = E A D.
struct ScaledQp {
  SpMat p, a;
  Eigen::VectorXd q, l, u;
  Eigen::VectorXd d, e;
  double c = 1.0;
};

inline ScaledQp equilibrate(const SpMat& p, const Eigen::VectorXd& q, const SpMat& a, const Eigen::VectorXd& l,
                            const Eigen::VectorXd& u, int iterations) {
  const Eigen::Index n = p.cols(), m = a.rows();
  ScaledQp s{p, a, q, l, u, Eigen::VectorXd::Ones(n), Eigen::VectorXd::Ones(m), 1.0};
  for (int it = 0; it < iterations; ++it) {
    const Eigen::VectorXd pc = col_inf_norms(s.p);
    const Eigen::VectorXd ac = col_inf_norms(s.a);
    const Eigen::VectorXd ar = row_inf_norms(s.a);
    Eigen::VectorXd dd(n), ee(m);
    for (Eigen::Index j = 0; j < n; ++j) dd(j) = 1.0 / std::sqrt(clamp_norm(std::max(pc(j), ac(j))));
    for (Eigen::Index i = 0; i < m; ++i) ee(i) = 1.0 / std::sqrt(clamp_norm(ar(i)));
    s.p = dd.asDiagonal() * s.p * dd.asDiagonal();
    s.a = ee.asDiagonal() * s.a * dd.asDiagonal();
    s.d = s.d.cwiseProduct(dd);
    s.e = s.e.cwiseProduct(ee);
  }
  s.q = s.d.cwiseProduct(q);
  if (iterations > 0) {
    const Eigen::VectorXd pc = col_inf_norms(s.p);
    const double mean = n > 0 ? pc.mean() : 1.0;
    s.c = 1.0 / clamp_norm(std::max(mean, inf_norm(s.q)));
    s.p *= s.c;
    s.q *= s.c;
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    s.l(i) = l(i) <= -kBig ? -kBig : s.e(i) * l(i);
    s.u(i) = u(i) >= kBig ? kBig : s.e(i) * u(i);
  }
  return s;
}

inline bool is_equality(double l, double u) { return l > -kBig && u < kBig && std::abs(u - l) < 1e-8; }

}  // namespace detail

inline double qp_objective(const SpMat& p, const Eigen::VectorXd& q, const Eigen::VectorXd& x) {
  return 0.5 * x.dot(p * x) + q.dot(x);
}

namespace detail {

/// Mehrotra predictor-corrector on the equilibrated problem. Equality rows
/// stay in a quasi-definite KKT system; each finite one-sided bound gets its
/// own slack and multiplier. Returns in the same sign convention as ADMM.
inline QpResult interior_point(const SpMat& p_in, const Eigen::VectorXd& q_in, const ScaledQp& s,
                               const Eigen::VectorXd& l, const Eigen::VectorXd& u, const QpSettings& st) {
  const Eigen::Index n = s.p.cols(), m = s.a.rows();
  const SpMat at = s.a.transpose();
  std::vector<char> eq(static_cast<std::size_t>(m), 0), lo(static_cast<std::size_t>(m), 0),
      up(static_cast<std::size_t>(m), 0);
  std::vector<int> eq_index(static_cast<std::size_t>(m), -1);
  int ne = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (is_equality(s.l(i), s.u(i))) {
      eq[k] = 1;
      eq_index[k] = ne++;
    } else {
      lo[k] = s.l(i) > -kBig;
      up[k] = s.u(i) < kBig;
    }
  }
  // Distinct primal and dual regularization so pivots cannot cancel exactly.
  double reg_p = 1e-8, reg_d = 3e-8;
  const Eigen::VectorXd d_inv = s.d.cwiseInverse(), e_inv = s.e.cwiseInverse();

  // Augmented quasi-definite KKT [P + reg I, A'; A, -W^-1 - reg I], lower
  // triangle only. W holds the barrier weights of inequality rows and is zero
  // on equality rows. The pattern is fixed, so values are refreshed in place.
  const Eigen::Index nk = n + m;
  SpMat kkt(nk, nk);
  {
    std::vector<Eigen::Triplet<double>> trip;
    for (int k = 0; k < s.p.outerSize(); ++k) {
      for (SpMat::InnerIterator it(s.p, k); it; ++it) {
        if (it.row() >= it.col()) trip.emplace_back(it.row(), it.col(), it.value());
      }
    }
    for (int k = 0; k < s.a.outerSize(); ++k) {
      for (SpMat::InnerIterator it(s.a, k); it; ++it) trip.emplace_back(n + it.row(), it.col(), it.value());
    }
    for (Eigen::Index j = 0; j < nk; ++j) trip.emplace_back(j, j, 0.0);
    kkt.setFromTriplets(trip.begin(), trip.end());
    kkt.makeCompressed();
  }
  std::vector<double> base(kkt.valuePtr(), kkt.valuePtr() + kkt.nonZeros());
  std::vector<std::size_t> diag_slots(static_cast<std::size_t>(nk));
  for (Eigen::Index j = 0; j < nk; ++j) {
    const int* inner = kkt.innerIndexPtr();
    const int* first = inner + kkt.outerIndexPtr()[j];
    const int* last = inner + kkt.outerIndexPtr()[j + 1];
    diag_slots[static_cast<std::size_t>(j)] = static_cast<std::size_t>(std::lower_bound(first, last, static_cast<int>(j)) - inner);
  }

  Eigen::SimplicialLDLT<SpMat> ldlt;
  ldlt.analyzePattern(kkt);
  // Unregularized dual-block diagonal; rows with no finite bound pin dy to 0.
  Eigen::VectorXd neg_winv(m);
  auto assemble = [&](const Eigen::VectorXd& dw) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto k = static_cast<std::size_t>(i);
      neg_winv(i) = eq[k] ? 0.0 : (dw(i) > 0.0 ? -1.0 / dw(i) : -1.0);
    }
    for (int attempt = 0; attempt < 6; ++attempt) {
      double* v = kkt.valuePtr();
      std::copy(base.begin(), base.end(), v);
      for (Eigen::Index j = 0; j < n; ++j) v[diag_slots[static_cast<std::size_t>(j)]] += reg_p;
      for (Eigen::Index i = 0; i < m; ++i) v[diag_slots[static_cast<std::size_t>(n + i)]] += neg_winv(i) - reg_d;
      ldlt.factorize(kkt);
      if (ldlt.info() == Eigen::Success) return;
      reg_p *= 10.0;
      reg_d *= 10.0;
    }
    throw SolverError("qp_solve: interior-point KKT factorization failed");
  };
  // Iterative refinement against the unregularized system.
  auto kkt_solve = [&](const Eigen::VectorXd& rhs) {
    Eigen::VectorXd sol = ldlt.solve(rhs);
    for (int k = 0; k < 2; ++k) {
      Eigen::VectorXd r = rhs - kkt.selfadjointView<Eigen::Lower>() * sol;
      r.head(n) += reg_p * sol.head(n);
      r.tail(m) -= reg_d * sol.tail(m);
      sol += ldlt.solve(r);
    }
    return sol;
  };

  Eigen::VectorXd x(n), ye = Eigen::VectorXd::Zero(ne);
  Eigen::VectorXd sl = Eigen::VectorXd::Ones(m), zl = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd su = Eigen::VectorXd::Ones(m), zu = Eigen::VectorXd::Zero(m);
  int n_ineq = 0;
  {
    // Start from the minimizer with unit barrier weights, then push slacks inside.
    Eigen::VectorXd dw = Eigen::VectorXd::Zero(m), rhs = Eigen::VectorXd::Zero(n + m);
    rhs.head(n) = -s.q;
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (eq[k]) rhs(n + i) = s.l(i);
      double target = 0.0;
      if (lo[k]) {
        dw(i) += 1.0;
        target += s.l(i);
        ++n_ineq;
      }
      if (up[k]) {
        dw(i) += 1.0;
        target += s.u(i);
        ++n_ineq;
      }
      if (dw(i) > 0.0) rhs(n + i) = target / dw(i);
    }
    assemble(dw);
    x = kkt_solve(rhs).head(n);
    const Eigen::VectorXd ax = s.a * x;
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (lo[k]) {
        sl(i) = std::max(ax(i) - s.l(i), 1.0);
        zl(i) = 1.0;
      }
      if (up[k]) {
        su(i) = std::max(s.u(i) - ax(i), 1.0);
        zu(i) = 1.0;
      }
    }
  }

  QpResult res;
  double prim = 0.0, dual = 0.0;
  Eigen::VectorXd y(m);
  auto full_dual = [&]() {
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto k = static_cast<std::size_t>(i);
      y(i) = eq[k] ? ye(eq_index[k]) : zu(i) - zl(i);
    }
  };

  int iter = 0;
  for (iter = 1; iter <= st.ipm_max_iter; ++iter) {
    full_dual();
    const Eigen::VectorXd ax = s.a * x;
    const Eigen::VectorXd px = s.p * x;
    const Eigen::VectorXd aty = at * y;
    const Eigen::VectorXd rd = px + s.q + aty;
    Eigen::VectorXd re(ne), rl = Eigen::VectorXd::Zero(m), ru = Eigen::VectorXd::Zero(m);
    double mu = 0.0;
    prim = 0.0;
    double pn = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (eq[k]) {
        re(eq_index[k]) = ax(i) - s.l(i);
        prim = std::max(prim, e_inv(i) * std::abs(re(eq_index[k])));
      } else {
        const double viol = std::max({s.l(i) - ax(i), ax(i) - s.u(i), 0.0});
        prim = std::max(prim, e_inv(i) * viol);
      }
      if (lo[k]) {
        rl(i) = -ax(i) + sl(i) + s.l(i);
        mu += sl(i) * zl(i);
      }
      if (up[k]) {
        ru(i) = ax(i) + su(i) - s.u(i);
        mu += su(i) * zu(i);
      }
      pn = std::max(pn, e_inv(i) * std::abs(ax(i)));
    }
    mu = n_ineq > 0 ? mu / n_ineq : 0.0;
    dual = inf_norm(d_inv.cwiseProduct(rd)) / s.c;
    const double eps_p = st.eps_abs + st.eps_rel * pn;
    const double eps_d = st.eps_abs + st.eps_rel * std::max({inf_norm(d_inv.cwiseProduct(px)),
                                                             inf_norm(d_inv.cwiseProduct(aty)),
                                                             inf_norm(d_inv.cwiseProduct(s.q))}) / s.c;
    if (prim <= eps_p && dual <= eps_d && mu / s.c <= st.eps_abs) {
      res.status = QpStatus::kSolved;
      break;
    }

    // Diverging multipliers: test their direction as an infeasibility certificate.
    const Eigen::VectorXd y_u = s.e.cwiseProduct(y) / s.c;
    const double y_norm = inf_norm(y_u);
    if (y_norm > 1e3 * (1.0 + inf_norm(q_in))) {
      const Eigen::VectorXd dir = y_u / y_norm;
      const double at_dir = inf_norm(d_inv.cwiseProduct(aty)) / s.c / y_norm;
      double support = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (dir(i) > 0.0) support += (u(i) >= kBig ? kBig : u(i)) * dir(i);
        if (dir(i) < 0.0) support += (l(i) <= -kBig ? -kBig : l(i)) * dir(i);
      }
      if (at_dir <= st.eps_prim_inf && support < -st.eps_prim_inf) {
        res.status = QpStatus::kPrimalInfeasible;
        break;
      }
    }

    Eigen::VectorXd dw = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (lo[k]) dw(i) += zl(i) / sl(i);
      if (up[k]) dw(i) += zu(i) / su(i);
    }
    assemble(dw);

    Eigen::VectorXd dx, dye(ne), dsl(m), dzl(m), dsu(m), dzu(m);
    auto direction = [&](const Eigen::VectorXd& rcl, const Eigen::VectorXd& rcu) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (lo[k]) v(i) += (zl(i) * rl(i) - rcl(i)) / sl(i);
        if (up[k]) v(i) -= (zu(i) * ru(i) - rcu(i)) / su(i);
      }
      Eigen::VectorXd rhs(n + m);
      rhs.head(n) = -rd;
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto k = static_cast<std::size_t>(i);
        rhs(n + i) = eq[k] ? -re(eq_index[k]) : v(i) * -neg_winv(i);
      }
      const Eigen::VectorXd sol = kkt_solve(rhs);
      dx = sol.head(n);
      for (Eigen::Index i = 0; i < m; ++i) {
        if (eq[static_cast<std::size_t>(i)]) dye(eq_index[static_cast<std::size_t>(i)]) = sol(n + i);
      }
      const Eigen::VectorXd adx = s.a * dx;
      dsl.setZero();
      dzl.setZero();
      dsu.setZero();
      dzu.setZero();
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (lo[k]) {
          dsl(i) = -rl(i) + adx(i);
          dzl(i) = -zl(i) / sl(i) * adx(i) + (zl(i) * rl(i) - rcl(i)) / sl(i);
        }
        if (up[k]) {
          dsu(i) = -ru(i) - adx(i);
          dzu(i) = zu(i) / su(i) * adx(i) + (zu(i) * ru(i) - rcu(i)) / su(i);
        }
        if (eq[k]) continue;
        // On the heavier side z/s is large and the formulas above cancel
        // badly; take dz from the solved dy and ds from complementarity.
        const double dy = sol(n + i);
        const double wl = lo[k] ? zl(i) / sl(i) : 0.0, wu = up[k] ? zu(i) / su(i) : 0.0;
        if (wl > 1.0 && wl >= wu) {
          dzl(i) = dzu(i) - dy;
          dsl(i) = (-rcl(i) - sl(i) * dzl(i)) / zl(i);
        } else if (wu > 1.0) {
          dzu(i) = dzl(i) + dy;
          dsu(i) = (-rcu(i) - su(i) * dzu(i)) / zu(i);
        }
      }
    };
    auto max_step = [&]() {
      double a = 1.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (lo[k]) {
          if (dsl(i) < 0.0) a = std::min(a, -sl(i) / dsl(i));
          if (dzl(i) < 0.0) a = std::min(a, -zl(i) / dzl(i));
        }
        if (up[k]) {
          if (dsu(i) < 0.0) a = std::min(a, -su(i) / dsu(i));
          if (dzu(i) < 0.0) a = std::min(a, -zu(i) / dzu(i));
        }
      }
      return a;
    };

    // Predictor.
    const Eigen::VectorXd rcl_aff = sl.cwiseProduct(zl), rcu_aff = su.cwiseProduct(zu);
    direction(rcl_aff, rcu_aff);
    const double a_aff = max_step();
    double mu_aff = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (lo[k]) mu_aff += (sl(i) + a_aff * dsl(i)) * (zl(i) + a_aff * dzl(i));
      if (up[k]) mu_aff += (su(i) + a_aff * dsu(i)) * (zu(i) + a_aff * dzu(i));
    }
    mu_aff = n_ineq > 0 ? mu_aff / n_ineq : 0.0;
    const double sigma = mu > 0.0 ? std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3) : 0.0;

    // Corrector with centering.
    const Eigen::VectorXd rcl = rcl_aff + dsl.cwiseProduct(dzl) - Eigen::VectorXd::Constant(m, sigma * mu);
    const Eigen::VectorXd rcu = rcu_aff + dsu.cwiseProduct(dzu) - Eigen::VectorXd::Constant(m, sigma * mu);
    direction(rcl, rcu);
    const double a = std::min(1.0, 0.99 * max_step());
    x += a * dx;
    ye += a * dye;
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (lo[k]) {
        sl(i) += a * dsl(i);
        zl(i) += a * dzl(i);
      }
      if (up[k]) {
        su(i) += a * dsu(i);
        zu(i) += a * dzu(i);
      }
    }
  }
  full_dual();
  res.iterations = std::min(iter, st.ipm_max_iter);
  res.x = s.d.cwiseProduct(x);
  res.y = s.e.cwiseProduct(y) / s.c;
  res.primal_residual = prim;
  res.dual_residual = dual;
  res.objective = qp_objective(p_in, q_in, res.x);
  return res;
}

}  // namespace detail

/// P must hold both triangles. Infinite bounds are allowed.
inline QpResult qp_solve(const SpMat& p_in, const Eigen::VectorXd& q_in, const SpMat& a_in, const Eigen::VectorXd& l_in,
                         const Eigen::VectorXd& u_in, const QpSettings& st = {},
                         const QpWarmStart* warm = nullptr) {
  using detail::kBig;
  const Eigen::Index n = p_in.cols(), m = a_in.rows();
  if (p_in.rows() != n || q_in.size() != n || a_in.cols() != n || l_in.size() != m || u_in.size() != m) {
    throw DomainError("qp_solve: dimension mismatch");
  }
  if (st.check_interval < 1 || st.adaptive_rho_interval < 1 || st.max_iter < 1 || st.ipm_max_iter < 1 ||
      !(st.rho > 0.0)) {
    throw DomainError("qp_solve: invalid settings");
  }
  Eigen::VectorXd l = l_in.cwiseMax(-kBig), u = u_in.cwiseMin(kBig);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (l(i) > u(i)) throw DomainError("qp_solve: lower bound exceeds upper bound");
  }
  const detail::ScaledQp s = detail::equilibrate(p_in, q_in, a_in, l, u, st.scaling_iterations);
  if (st.method == QpMethod::kInteriorPoint) return detail::interior_point(p_in, q_in, s, l, u, st);
  const SpMat at = s.a.transpose();

  Eigen::VectorXd rho_vec(m);
  double rho = st.rho;
  auto set_rho = [&](double r) {
    for (Eigen::Index i = 0; i < m; ++i) {
      if (s.l(i) <= -kBig && s.u(i) >= kBig) {
        rho_vec(i) = 1e-6;
      } else if (detail::is_equality(s.l(i), s.u(i))) {
        rho_vec(i) = 1e3 * r;
      } else {
        rho_vec(i) = r;
      }
    }
  };
  set_rho(rho);

  SpMat identity(n, n);
  identity.setIdentity();
  Eigen::SimplicialLDLT<SpMat> ldlt;
  auto factor = [&]() {
    SpMat k = s.p + st.sigma * identity + SpMat(at * rho_vec.asDiagonal() * s.a);
    ldlt.compute(k);
    if (ldlt.info() != Eigen::Success) throw SolverError("qp_solve: KKT factorization failed");
  };
  factor();

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n), y = Eigen::VectorXd::Zero(m);
  if (warm != nullptr) {
    if (warm->x.size() == n) x = warm->x.cwiseQuotient(s.d);
    if (warm->y.size() == m) y = s.c * warm->y.cwiseQuotient(s.e);
  }
  Eigen::VectorXd z = (s.a * x).cwiseMax(s.l).cwiseMin(s.u);

  QpResult res;
  const Eigen::VectorXd d_inv = s.d.cwiseInverse(), e_inv = s.e.cwiseInverse();

  auto residuals = [&](const Eigen::VectorXd& xs, const Eigen::VectorXd& zs, const Eigen::VectorXd& ys,
                       double& prim, double& dual, double& eps_p, double& eps_d) {
    const Eigen::VectorXd ax = s.a * xs;
    const Eigen::VectorXd px = s.p * xs;
    const Eigen::VectorXd aty = at * ys;
    prim = detail::inf_norm(e_inv.cwiseProduct(ax - zs));
    dual = detail::inf_norm(d_inv.cwiseProduct(px + s.q + aty)) / s.c;
    eps_p = st.eps_abs +
            st.eps_rel * std::max(detail::inf_norm(e_inv.cwiseProduct(ax)), detail::inf_norm(e_inv.cwiseProduct(zs)));
    eps_d = st.eps_abs + st.eps_rel *
                             std::max({detail::inf_norm(d_inv.cwiseProduct(px)),
                                       detail::inf_norm(d_inv.cwiseProduct(aty)), detail::inf_norm(d_inv.cwiseProduct(s.q))}) /
                             s.c;
  };

  double prim = 0, dual = 0, eps_p = 0, eps_d = 0;
  Eigen::VectorXd rhs(n), xt(n), zt(m), z_relax(m), z_new(m), dy(m), dy_u(m), aty(n);
  int iter = 0;
  for (iter = 1; iter <= st.max_iter; ++iter) {
    dy = rho_vec.cwiseProduct(z) - y;
    rhs.noalias() = at * dy;
    rhs += st.sigma * x - s.q;
    xt = ldlt.solve(rhs);
    zt.noalias() = s.a * xt;
    x = st.alpha * xt + (1.0 - st.alpha) * x;
    z_relax = st.alpha * zt + (1.0 - st.alpha) * z;
    z_new = (z_relax + y.cwiseQuotient(rho_vec)).cwiseMax(s.l).cwiseMin(s.u);
    dy = rho_vec.cwiseProduct(z_relax - z_new);
    y += dy;
    z.swap(z_new);

    const bool check = iter % st.check_interval == 0 || iter == st.max_iter;
    if (!check) continue;
    residuals(x, z, y, prim, dual, eps_p, eps_d);
    if (prim <= eps_p && dual <= eps_d) {
      res.status = QpStatus::kSolved;
      break;
    }

    // Primal infeasibility certificate on the unscaled multiplier increment.
    dy_u = s.e.cwiseProduct(dy) / s.c;
    const double dy_norm = detail::inf_norm(dy_u);
    if (dy_norm > 1e-12) {
      aty.noalias() = at * dy;
      const double at_dy = detail::inf_norm(d_inv.cwiseProduct(aty)) / s.c;
      double support = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (dy_u(i) > 0.0) support += (u(i) >= kBig ? kBig : u(i)) * dy_u(i);
        if (dy_u(i) < 0.0) support += (l(i) <= -kBig ? -kBig : l(i)) * dy_u(i);
      }
      if (at_dy <= st.eps_prim_inf * dy_norm && support < -st.eps_prim_inf * dy_norm) {
        res.status = QpStatus::kPrimalInfeasible;
        break;
      }
    }

    if (st.adaptive_rho && iter % st.adaptive_rho_interval == 0) {
      const Eigen::VectorXd ax = s.a * x;
      const Eigen::VectorXd px = s.p * x;
      aty.noalias() = at * y;
      const double pn = std::max(detail::inf_norm(ax), detail::inf_norm(z));
      const double dn = std::max({detail::inf_norm(px), detail::inf_norm(aty), detail::inf_norm(s.q)});
      const double pr = detail::inf_norm(ax - z) / (pn + 1e-30);
      const double dr = detail::inf_norm(px + s.q + aty) / (dn + 1e-30);
      const double rho_new = std::clamp(rho * std::sqrt(pr / (dr + 1e-30)), 1e-6, 1e6);
      if (rho_new > st.adaptive_rho_tolerance * rho || rho_new < rho / st.adaptive_rho_tolerance) {
        rho = rho_new;
        set_rho(rho);
        factor();
      }
    }
  }
  res.iterations = std::min(iter, st.max_iter);

  if (st.polish && res.status == QpStatus::kSolved) {
    // Guess the active set and solve the equality-constrained QP it defines.
    std::vector<int> active;
    std::vector<double> target;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (z(i) - s.l(i) < -y(i) && s.l(i) > -kBig) {
        active.push_back(static_cast<int>(i));
        target.push_back(s.l(i));
      } else if (s.u(i) - z(i) < y(i) && s.u(i) < kBig) {
        active.push_back(static_cast<int>(i));
        target.push_back(s.u(i));
      }
    }
    const auto na = static_cast<Eigen::Index>(active.size());
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<Eigen::Triplet<double>> trip_exact;
    for (int k = 0; k < s.p.outerSize(); ++k) {
      for (SpMat::InnerIterator it(s.p, k); it; ++it) {
        trip.emplace_back(it.row(), it.col(), it.value());
        trip_exact.emplace_back(it.row(), it.col(), it.value());
      }
    }
    for (Eigen::Index j = 0; j < n; ++j) trip.emplace_back(j, j, st.polish_delta);
    SpMat a_act(na, n);
    {
      std::vector<Eigen::Triplet<double>> at_trip;
      std::vector<int> pos(static_cast<std::size_t>(m), -1);
      for (Eigen::Index r = 0; r < na; ++r) pos[static_cast<std::size_t>(active[static_cast<std::size_t>(r)])] = static_cast<int>(r);
      for (int k = 0; k < s.a.outerSize(); ++k) {
        for (SpMat::InnerIterator it(s.a, k); it; ++it) {
          const int r = pos[static_cast<std::size_t>(it.row())];
          if (r >= 0) at_trip.emplace_back(r, it.col(), it.value());
        }
      }
      a_act.setFromTriplets(at_trip.begin(), at_trip.end());
    }
    for (int k = 0; k < a_act.outerSize(); ++k) {
      for (SpMat::InnerIterator it(a_act, k); it; ++it) {
        trip.emplace_back(n + it.row(), it.col(), it.value());
        trip.emplace_back(it.col(), n + it.row(), it.value());
        trip_exact.emplace_back(n + it.row(), it.col(), it.value());
        trip_exact.emplace_back(it.col(), n + it.row(), it.value());
      }
    }
    for (Eigen::Index r = 0; r < na; ++r) trip.emplace_back(n + r, n + r, -st.polish_delta);
    SpMat kkt(n + na, n + na), kkt_exact(n + na, n + na);
    kkt.setFromTriplets(trip.begin(), trip.end());
    kkt_exact.setFromTriplets(trip_exact.begin(), trip_exact.end());
    Eigen::SparseLU<SpMat> lu;
    lu.compute(kkt);
    if (lu.info() == Eigen::Success) {
      Eigen::VectorXd rhs(n + na);
      rhs.head(n) = -s.q;
      for (Eigen::Index r = 0; r < na; ++r) rhs(n + r) = target[static_cast<std::size_t>(r)];
      Eigen::VectorXd sol = lu.solve(rhs);
      for (int k = 0; k < st.polish_refine_iter && lu.info() == Eigen::Success; ++k) {
        sol += lu.solve(rhs - kkt_exact * sol);
      }
      if (lu.info() == Eigen::Success && sol.allFinite()) {
        const Eigen::VectorXd xp = sol.head(n);
        Eigen::VectorXd yp = Eigen::VectorXd::Zero(m);
        for (Eigen::Index r = 0; r < na; ++r) yp(active[static_cast<std::size_t>(r)]) = sol(n + r);
        const Eigen::VectorXd zp = (s.a * xp).cwiseMax(s.l).cwiseMin(s.u);
        double pp = 0, dp = 0, ep = 0, ed = 0;
        residuals(xp, zp, yp, pp, dp, ep, ed);
        // Multipliers must have the sign of the bound they hold.
        bool signs_ok = true;
        for (Eigen::Index r = 0; r < na; ++r) {
          const auto i = active[static_cast<std::size_t>(r)];
          const bool at_lower = target[static_cast<std::size_t>(r)] == s.l(i);
          const bool at_upper = target[static_cast<std::size_t>(r)] == s.u(i);
          if (at_lower && !at_upper && yp(i) > 1e-9) signs_ok = false;
          if (at_upper && !at_lower && yp(i) < -1e-9) signs_ok = false;
        }
        if (signs_ok && pp <= std::max(prim, 1e-9) && dp <= std::max(dual, 1e-9)) {
          x = xp;
          y = yp;
          z = zp;
          prim = pp;
          dual = dp;
          res.polished = true;
        }
      }
    }
  }

  res.x = s.d.cwiseProduct(x);
  res.y = s.e.cwiseProduct(y) / s.c;
  res.primal_residual = prim;
  res.dual_residual = dual;
  res.objective = qp_objective(p_in, q_in, res.x);
  return res;
}

}  // namespace resafe::solver
