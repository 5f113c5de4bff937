#pragma once

// Finite-dimensional NLPs from an OcpSpec.
//
//   resafecol  Legendre splines, collocation defects, regional hull rows for
//              every inequality, second-order enclosure margins as slacks.
//   psc        same splines and defects, inequalities at the collocation nodes.
//   dms        node states and first-order-hold inputs, RK4 shooting gaps,
//              inequalities at the shooting nodes.
//
// All three share the form  min 1/2 z'Pz + q'z + c  s.t.  l <= g(z) <= u,
// where simple bounds (including slack bounds) are rows of g.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "resafe/basis.hpp"
#include "resafe/envelope.hpp"
#include "resafe/error.hpp"
#include "resafe/ocp.hpp"
#include "resafe/safety.hpp"

namespace resafe::transcription {

using SpMat = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

enum class Method { kResafeCol, kPsc, kDms };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::kResafeCol: return "resafecol";
    case Method::kPsc: return "psc";
    case Method::kDms: return "dms";
  }
  return "unknown";
}

inline Method parse_method(const std::string& s) {
  if (s == "resafecol") return Method::kResafeCol;
  if (s == "psc") return Method::kPsc;
  if (s == "dms") return Method::kDms;
  throw DomainError("unknown method '" + s + "' (expected dms, psc or resafecol)");
}

struct TranscriptionConfig {
  int degree = 5;
  int nodes = 6;
  int regions = 3;
  int shooting_nodes = 60;
  int integrator_substeps = 1;
  /// Explicit region bounds; empty means LGL placement.
  std::vector<double> region_bounds;
};

struct Block {
  std::string name;
  int offset = 0;
  int size = 0;
};

enum class RowKind { kInitial, kDynamics, kTerminal, kBox, kObstacle, kSlackBound };

/// Rows of one obstacle constraint group sharing a pair of slacks.
struct ObstacleGroup {
  int obstacle = 0;
  safety::ConstraintKind kind = safety::ConstraintKind::kBarrier;
  int index = 0;  // region (hull rows) or node
  int first_row = 0;
  int rows = 0;
  int sigma_margin = -1;  // variable index, -1 if absent
  int sigma_margin_row = -1;
  int sigma_soft = -1;
  int sigma_soft_row = -1;
  double margin = 0.0;
};

struct StateInput {
  Eigen::VectorXd x;
  Eigen::VectorXd u;
};

using TrajectoryFn = std::function<StateInput(double t)>;

class NlpProblem {
 public:
  virtual ~NlpProblem() = default;

  [[nodiscard]] Method method() const { return method_; }
  [[nodiscard]] const ocp::OcpSpec& ocp() const { return ocp_; }
  [[nodiscard]] int num_variables() const { return n_; }
  /// Variables excluding slacks.
  [[nodiscard]] int num_primal() const { return n_primal_; }
  [[nodiscard]] int num_constraints() const { return static_cast<int>(lower_.size()); }
  [[nodiscard]] int num_equalities() const {
    int c = 0;
    for (Eigen::Index i = 0; i < lower_.size(); ++i) c += (lower_(i) == upper_(i)) ? 1 : 0;
    return c;
  }
  [[nodiscard]] const std::vector<Block>& layout() const { return layout_; }
  [[nodiscard]] const std::vector<RowKind>& row_kinds() const { return row_kind_; }
  [[nodiscard]] const std::vector<ObstacleGroup>& obstacle_groups() const { return groups_; }

  [[nodiscard]] const SpMat& cost_hessian() const { return p_; }
  [[nodiscard]] const Eigen::VectorXd& cost_linear() const { return q_; }
  [[nodiscard]] double cost(const Eigen::VectorXd& z) const { return 0.5 * z.dot(p_ * z) + q_.dot(z) + c_; }
  [[nodiscard]] Eigen::VectorXd cost_gradient(const Eigen::VectorXd& z) const { return p_ * z + q_; }

  [[nodiscard]] const Eigen::VectorXd& lower() const { return lower_; }
  [[nodiscard]] const Eigen::VectorXd& upper() const { return upper_; }

  /// g(z) and, if requested, its Jacobian.
  void constraints(const Eigen::VectorXd& z, Eigen::VectorXd& g, SpMat* jac) const {
    if (z.size() != n_) throw DomainError("NlpProblem: decision vector has wrong dimension");
    g.setZero(num_constraints());
    Triplets trip;
    evaluate(z, g, jac != nullptr ? &trip : nullptr);
    for (const auto& grp : groups_) {
      for (int r = 0; r < grp.rows; ++r) {
        const int row = grp.first_row + r;
        if (grp.sigma_margin >= 0) {
          g(row) += z(grp.sigma_margin);
          if (jac) trip.emplace_back(row, grp.sigma_margin, 1.0);
        }
        g(row) += z(grp.sigma_soft);
        if (jac) trip.emplace_back(row, grp.sigma_soft, 1.0);
      }
      if (grp.sigma_margin >= 0) {
        g(grp.sigma_margin_row) = z(grp.sigma_margin);
        if (jac) trip.emplace_back(grp.sigma_margin_row, grp.sigma_margin, 1.0);
      }
      g(grp.sigma_soft_row) = z(grp.sigma_soft);
      if (jac) trip.emplace_back(grp.sigma_soft_row, grp.sigma_soft, 1.0);
    }
    if (jac) {
      jac->resize(num_constraints(), n_);
      jac->setFromTriplets(trip.begin(), trip.end());
    }
  }

  /// Largest bound violation of g(z).
  [[nodiscard]] double max_violation(const Eigen::VectorXd& z) const {
    Eigen::VectorXd g;
    constraints(z, g, nullptr);
    return ((lower_ - g).cwiseMax(g - upper_)).cwiseMax(0.0).maxCoeff();
  }

  /// Recomputes the second-order enclosure margins at z (lagged into the bounds).
  virtual void update_margins(const Eigen::VectorXd& z) { (void)z; }

  /// Opens the softening slacks; false if already open or there are none.
  bool soften() {
    if (softened_ || groups_.empty()) return false;
    for (const auto& grp : groups_) upper_(grp.sigma_soft_row) = ocp::kInf;
    softened_ = true;
    return true;
  }
  [[nodiscard]] bool softened() const { return softened_; }

  /// State and input of the transcribed trajectory at horizon time t.
  [[nodiscard]] virtual StateInput trajectory(const Eigen::VectorXd& z, double t) const = 0;

  /// Decision vector reproducing traj(t) as closely as the parameterization allows; slacks zero.
  [[nodiscard]] virtual Eigen::VectorXd initial_guess(const TrajectoryFn& traj) const = 0;

  /// Input rates that carry the integrated states from x0 to the plan at time dt.
  [[nodiscard]] Eigen::VectorXd applied_input(const Eigen::VectorXd& z, double dt) const {
    const StateInput si = trajectory(z, dt);
    Eigen::VectorXd u = trajectory(z, 0.0).u;
    for (int i = 0; i < ocp_.nu && i < static_cast<int>(ocp_.integrated_state.size()); ++i) {
      const int c = ocp_.integrated_state[static_cast<std::size_t>(i)];
      if (c >= 0) u(i) = (si.x(c) - ocp_.x0(c)) / dt;
    }
    return u;
  }

  /// Values of the slacks (margin and soft) summed per group, for reporting.
  [[nodiscard]] double slack_total(const Eigen::VectorXd& z) const {
    double s = 0.0;
    for (const auto& grp : groups_) {
      s += z(grp.sigma_soft);
      if (grp.sigma_margin >= 0) s += grp.margin - z(grp.sigma_margin);
    }
    return s;
  }

 protected:
  NlpProblem(Method m, ocp::OcpSpec spec) : method_(m), ocp_(std::move(spec)) { ocp_.validate(); }

  virtual void evaluate(const Eigen::VectorXd& z, Eigen::VectorXd& g, Triplets* trip) const = 0;

  int add_rows(RowKind kind, int count, double lo, double hi) {
    const int first = static_cast<int>(lower_.size());
    lower_.conservativeResize(first + count);
    upper_.conservativeResize(first + count);
    lower_.segment(first, count).setConstant(lo);
    upper_.segment(first, count).setConstant(hi);
    row_kind_.insert(row_kind_.end(), static_cast<std::size_t>(count), kind);
    return first;
  }

  /// Appends an obstacle group with `rows` rows (lower bound 0) and its slacks.
  void add_group(int obstacle, safety::ConstraintKind kind, int index, int rows, bool with_margin) {
    ObstacleGroup grp;
    grp.obstacle = obstacle;
    grp.kind = kind;
    grp.index = index;
    grp.rows = rows;
    grp.first_row = add_rows(RowKind::kObstacle, rows, 0.0, ocp::kInf);
    pending_groups_.push_back(grp);
    pending_margin_.push_back(with_margin);
  }

  /// Allocates slack variables and their bound rows; call once after all rows are declared.
  void finalize_slacks() {
    int next = n_primal_;
    for (std::size_t i = 0; i < pending_groups_.size(); ++i) {
      ObstacleGroup grp = pending_groups_[i];
      if (pending_margin_[i]) {
        grp.sigma_margin = next++;
        grp.sigma_margin_row = add_rows(RowKind::kSlackBound, 1, 0.0, 0.0);
      }
      grp.sigma_soft = next++;
      grp.sigma_soft_row = add_rows(RowKind::kSlackBound, 1, 0.0, 0.0);
      groups_.push_back(grp);
    }
    pending_groups_.clear();
    pending_margin_.clear();
    n_ = next;
    if (n_ > n_primal_) layout_.push_back({"slack", n_primal_, n_ - n_primal_});
  }

  /// Assembles P, q, c from a dense primal block plus slack penalties.
  void set_cost(const Eigen::MatrixXd& p_primal, const Eigen::VectorXd& q_primal, double c) {
    Triplets trip;
    for (int j = 0; j < n_primal_; ++j) {
      for (int i = 0; i < n_primal_; ++i) {
        if (p_primal(i, j) != 0.0) trip.emplace_back(i, j, p_primal(i, j));
      }
    }
    q_ = Eigen::VectorXd::Zero(n_);
    q_.head(n_primal_) = q_primal;
    for (const auto& grp : groups_) {
      const double mw =
          grp.kind == safety::ConstraintKind::kCbf ? ocp_.cbf_margin_slack_weight : ocp_.margin_slack_weight;
      if (grp.sigma_margin >= 0) trip.emplace_back(grp.sigma_margin, grp.sigma_margin, 2.0 * mw);
      trip.emplace_back(grp.sigma_soft, grp.sigma_soft, 2.0 * ocp_.soft_quadratic_weight);
      q_(grp.sigma_soft) = ocp_.soft_l1_weight;
    }
    p_.resize(n_, n_);
    p_.setFromTriplets(trip.begin(), trip.end());
    c_ = c;
  }

  /// Sets a group's margin: rows need value + sigma_m + sigma_f >= margin, sigma_m in [0, margin].
  void set_margin(ObstacleGroup& grp, double margin) {
    grp.margin = margin;
    lower_.segment(grp.first_row, grp.rows).setConstant(margin);
    upper_(grp.sigma_margin_row) = margin;
  }

  Method method_;
  ocp::OcpSpec ocp_;
  int n_ = 0;
  int n_primal_ = 0;
  std::vector<Block> layout_;
  std::vector<RowKind> row_kind_;
  Eigen::VectorXd lower_, upper_;
  std::vector<ObstacleGroup> groups_;
  SpMat p_;
  Eigen::VectorXd q_;
  double c_ = 0.0;
  bool softened_ = false;

 private:
  std::vector<ObstacleGroup> pending_groups_;
  std::vector<bool> pending_margin_;
};

namespace detail {

inline bool bounded(double lo, double hi) { return std::isfinite(lo) || std::isfinite(hi); }

/// Diagonal quadratic (x - r)' W (x - r) scaled by `scale`, added on the coefficient rows `rows`
/// (one row vector per channel entry): P += 2 scale w row' row, q += -2 scale w r row.
inline void add_quadratic(Eigen::MatrixXd& p, Eigen::VectorXd& q, double& c, int offset,
                          const Eigen::RowVectorXd& row, double weight, double ref) {
  if (weight == 0.0) return;
  const Eigen::Index m = row.size();
  p.block(offset, offset, m, m) += 2.0 * weight * row.transpose() * row;
  q.segment(offset, m) += -2.0 * weight * ref * row.transpose();
  c += weight * ref * ref;
}

}  // namespace detail

/// Spline transcription shared by resafecol and psc.
class SplineNlp final : public NlpProblem {
 public:
  SplineNlp(Method method, const ocp::OcpSpec& spec, const TranscriptionConfig& cfg)
      : NlpProblem(method, spec), m_(cfg.degree), nodes_(cfg.nodes) {
    if (method == Method::kDms) throw DomainError("SplineNlp: dms is not a spline transcription");
    if (m_ < 1) throw DomainError("transcription: degree must be at least 1");
    if (nodes_ < m_ + 1) throw DomainError("transcription: need N >= M + 1 collocation nodes");
    const int nx = ocp_.nx, nu = ocp_.nu, w = m_ + 1;
    basis_ = basis::legendre_coefficients(m_);
    grid_ = basis::lgl_grid(nodes_);
    if (method == Method::kResafeCol) {
      if (!cfg.region_bounds.empty()) {
        hulls_ = envelope::build_hull_matrices(basis_, cfg.region_bounds);
      } else {
        if (cfg.regions < 1) throw DomainError("transcription: need at least one region");
        hulls_ = envelope::build_hull_matrices(basis_, cfg.regions);
      }
    }
    const double tf = ocp_.horizon;
    for (int i = 0; i < nodes_; ++i) {
      r0_.push_back(basis::spline_row(basis_, grid_.nodes(i), 0, tf));
      r1_.push_back(basis::spline_row(basis_, grid_.nodes(i), 1, tf));
      r2_.push_back(basis::spline_row(basis_, grid_.nodes(i), 2, tf));
    }

    n_primal_ = w * (nx + nu);
    layout_ = {{"alpha_x", 0, w * nx}, {"alpha_u", w * nx, w * nu}};

    // Equalities.
    ic_row_ = add_rows(RowKind::kInitial, nx, 0.0, 0.0);
    lower_.segment(ic_row_, nx) = ocp_.x0;
    upper_.segment(ic_row_, nx) = ocp_.x0;
    defect_row_ = add_rows(RowKind::kDynamics, (nodes_ - 1) * nx, 0.0, 0.0);
    for (int c = 0; c < nx; ++c) {
      if (!detail::bounded(ocp_.terminal_lower(c), ocp_.terminal_upper(c))) continue;
      const int r = add_rows(RowKind::kTerminal, 1, ocp_.terminal_lower(c), ocp_.terminal_upper(c));
      terminal_rows_.push_back({r, c});
    }

    // Box rows on every bounded channel.
    for (int c = 0; c < nx + nu; ++c) {
      const double lo = c < nx ? ocp_.x_lower(c) : ocp_.u_lower(c - nx);
      const double hi = c < nx ? ocp_.x_upper(c) : ocp_.u_upper(c - nx);
      if (!detail::bounded(lo, hi)) continue;
      if (method == Method::kResafeCol) {
        for (int k = 0; k < hulls_.regions(); ++k) box_rows_.push_back({add_rows(RowKind::kBox, w, lo, hi), c, k});
      } else {
        for (int i = 0; i < nodes_; ++i) box_rows_.push_back({add_rows(RowKind::kBox, 1, lo, hi), c, i});
      }
    }

    // Obstacle rows.
    std::vector<safety::ConstraintKind> kinds{safety::ConstraintKind::kBarrier};
    if (ocp_.use_cbf) kinds.push_back(safety::ConstraintKind::kCbf);
    for (int o = 0; o < static_cast<int>(ocp_.obstacles.size()); ++o) {
      for (auto kind : kinds) {
        if (method == Method::kResafeCol) {
          for (int k = 0; k < hulls_.regions(); ++k) add_group(o, kind, k, w, true);
        } else {
          for (int i = 1; i < nodes_; ++i) add_group(o, kind, i, 1, false);
        }
      }
    }
    finalize_slacks();
    build_cost();
  }

  [[nodiscard]] int degree() const { return m_; }
  [[nodiscard]] int nodes() const { return nodes_; }
  [[nodiscard]] const basis::LegendreBasis& basis() const { return basis_; }
  [[nodiscard]] const basis::CollocationGrid& grid() const { return grid_; }
  [[nodiscard]] const envelope::HullMatrixSet& hulls() const { return hulls_; }

  /// Coefficient matrix (M+1) x (nx + nu) of z.
  [[nodiscard]] basis::SplineCoefficients spline(const Eigen::VectorXd& z) const {
    const int w = m_ + 1, ch = ocp_.nx + ocp_.nu;
    return {Eigen::Map<const Eigen::MatrixXd>(z.data(), w, ch), ocp_.horizon};
  }

  [[nodiscard]] StateInput trajectory(const Eigen::VectorXd& z, double t) const override {
    const double tau = std::clamp(2.0 * t / ocp_.horizon - 1.0, -1.0, 1.0);
    const Eigen::VectorXd v = basis::eval_spline(spline(z), basis_, tau);
    return {v.head(ocp_.nx), v.tail(ocp_.nu)};
  }

  [[nodiscard]] Eigen::VectorXd initial_guess(const TrajectoryFn& traj) const override {
    const int w = m_ + 1, nx = ocp_.nx, nu = ocp_.nu;
    const Eigen::VectorXd taus = basis::lgl_nodes(w);
    Eigen::MatrixXd samples(w, nx + nu);
    for (int i = 0; i < w; ++i) {
      const StateInput si = traj(ocp_.horizon * (taus(i) + 1.0) / 2.0);
      samples.row(i).head(nx) = si.x.transpose();
      samples.row(i).tail(nu) = si.u.transpose();
    }
    const Eigen::MatrixXd alpha = basis::fit_spline(basis_, taus, samples);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n_);
    z.head(n_primal_) = Eigen::Map<const Eigen::VectorXd>(alpha.data(), alpha.size());
    return z;
  }

  void update_margins(const Eigen::VectorXd& z) override {
    if (method_ != Method::kResafeCol) return;
    for (auto& grp : groups_) {
      const auto rows = hull_rows(z, grp);
      set_margin(grp, rows.margin);
    }
  }

 protected:
  void evaluate(const Eigen::VectorXd& z, Eigen::VectorXd& g, Triplets* trip) const override {
    const int nx = ocp_.nx, nu = ocp_.nu, w = m_ + 1;
    auto coeffs = [&](int c) { return z.segment(c * w, w); };

    // Initial condition.
    const Eigen::RowVectorXd& first = r0_[0];
    for (int c = 0; c < nx; ++c) {
      g(ic_row_ + c) = first.dot(coeffs(c));
      if (trip) add_row(*trip, ic_row_ + c, c, first);
    }
    // Defects at nodes 2..N: dx/dt - f(x, u).
    for (int i = 1; i < nodes_; ++i) {
      Eigen::VectorXd x(nx), u(nu);
      for (int c = 0; c < nx; ++c) x(c) = r0_[i].dot(coeffs(c));
      for (int j = 0; j < nu; ++j) u(j) = r0_[i].dot(coeffs(nx + j));
      const ocp::DynamicsEval f = ocp_.dynamics(x, u);
      const int base = defect_row_ + (i - 1) * nx;
      for (int c = 0; c < nx; ++c) {
        g(base + c) = r1_[i].dot(coeffs(c)) - f.f(c);
        if (!trip) continue;
        add_row(*trip, base + c, c, r1_[i]);
        for (int cc = 0; cc < nx; ++cc) {
          if (f.fx(c, cc) != 0.0) add_row(*trip, base + c, cc, -f.fx(c, cc) * r0_[i]);
        }
        for (int j = 0; j < nu; ++j) {
          if (f.fu(c, j) != 0.0) add_row(*trip, base + c, nx + j, -f.fu(c, j) * r0_[i]);
        }
      }
    }
    const Eigen::RowVectorXd& last = r0_.back();
    for (const auto& [row, c] : terminal_rows_) {
      g(row) = last.dot(coeffs(c));
      if (trip) add_row(*trip, row, c, last);
    }
    for (const auto& br : box_rows_) {
      if (method_ == Method::kResafeCol) {
        const Eigen::MatrixXd& h = hulls_.hull(br.index, 0);
        g.segment(br.row, w) = h * coeffs(br.channel);
        if (trip) {
          for (int j = 0; j < w; ++j) add_row(*trip, br.row + j, br.channel, h.row(j));
        }
      } else {
        g(br.row) = r0_[br.index].dot(coeffs(br.channel));
        if (trip) add_row(*trip, br.row, br.channel, r0_[br.index]);
      }
    }
    for (const auto& grp : groups_) {
      if (method_ == Method::kResafeCol) {
        const auto rows = hull_rows(z, grp);
        g.segment(grp.first_row, w) = rows.values;
        if (trip) {
          for (int j = 0; j < w; ++j) {
            add_row(*trip, grp.first_row + j, ocp_.s_channel, rows.d_alpha_s.row(j));
            add_row(*trip, grp.first_row + j, ocp_.w_channel, rows.d_alpha_w.row(j));
          }
        }
      } else {
        node_obstacle_row(z, grp, g, trip);
      }
    }
  }

 private:
  struct BoxRow {
    int row;
    int channel;
    int index;
  };

  void add_row(Triplets& trip, int row, int channel, const Eigen::RowVectorXd& v) const {
    const int w = m_ + 1;
    for (int j = 0; j < w; ++j) {
      if (v(j) != 0.0) trip.emplace_back(row, channel * w + j, v(j));
    }
  }

  [[nodiscard]] safety::HullConstraintRows hull_rows(const Eigen::VectorXd& z, const ObstacleGroup& grp) const {
    const int w = m_ + 1;
    return safety::hull_constraint_rows(ocp_.obstacles[static_cast<std::size_t>(grp.obstacle)], ocp_.gains, hulls_,
                                        z.segment(ocp_.s_channel * w, w), z.segment(ocp_.w_channel * w, w),
                                        ocp_.horizon, grp.index, grp.kind);
  }

  void node_obstacle_row(const Eigen::VectorXd& z, const ObstacleGroup& grp, Eigen::VectorXd& g,
                         Triplets* trip) const {
    const int w = m_ + 1, i = grp.index;
    const auto& obs = ocp_.obstacles[static_cast<std::size_t>(grp.obstacle)];
    const auto as = z.segment(ocp_.s_channel * w, w), aw = z.segment(ocp_.w_channel * w, w);
    const double t = ocp_.horizon * (grp_tau(i) + 1.0) / 2.0;
    const double ds = r0_[i].dot(as) - obs.s_at(t), dw = r0_[i].dot(aw) - obs.w_at(t);
    const double ia = 1.0 / (obs.a * obs.a), ib = 1.0 / (obs.b * obs.b);
    if (grp.kind == safety::ConstraintKind::kBarrier) {
      g(grp.first_row) = ds * ds * ia + dw * dw * ib - 1.0;
      if (trip) {
        add_row(*trip, grp.first_row, ocp_.s_channel, 2.0 * ia * ds * r0_[i]);
        add_row(*trip, grp.first_row, ocp_.w_channel, 2.0 * ib * dw * r0_[i]);
      }
      return;
    }
    const double vs = r1_[i].dot(as) - obs.vs, vw = r1_[i].dot(aw) - obs.vw;
    const double acs = r2_[i].dot(as), acw = r2_[i].dot(aw);
    const auto d = safety::barrier_derivatives(ds, dw, vs, vw, acs, acw, obs.a, obs.b);
    const auto& k = ocp_.gains;
    g(grp.first_row) = safety::cbf_residual(d.h, d.hdot, d.hddot, k);
    if (trip) {
      add_row(*trip, grp.first_row, ocp_.s_channel,
              2.0 * ia * ((acs + k.k1 * vs + k.k2 * ds) * r0_[i] + (2.0 * vs + k.k1 * ds) * r1_[i] + ds * r2_[i]));
      add_row(*trip, grp.first_row, ocp_.w_channel,
              2.0 * ib * ((acw + k.k1 * vw + k.k2 * dw) * r0_[i] + (2.0 * vw + k.k1 * dw) * r1_[i] + dw * r2_[i]));
    }
  }

  [[nodiscard]] double grp_tau(int i) const { return grid_.nodes(i); }

  void build_cost() {
    const int nx = ocp_.nx, nu = ocp_.nu, w = m_ + 1;
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n_primal_, n_primal_);
    Eigen::VectorXd q = Eigen::VectorXd::Zero(n_primal_);
    double c = 0.0;
    const double half = 0.5 * ocp_.horizon;
    for (int i = 0; i < nodes_; ++i) {
      const double wi = half * grid_.weights(i);
      for (int ch = 0; ch < nx; ++ch) detail::add_quadratic(p, q, c, ch * w, r0_[i], wi * ocp_.q_diag(ch), ocp_.x_ref(ch));
      for (int j = 0; j < nu; ++j) detail::add_quadratic(p, q, c, (nx + j) * w, r0_[i], wi * ocp_.r_diag(j), 0.0);
    }
    for (int ch = 0; ch < nx; ++ch) {
      detail::add_quadratic(p, q, c, ch * w, r0_.back(), ocp_.terminal_diag(ch), ocp_.x_ref(ch));
    }
    set_cost(p, q, c);
  }

  int m_;
  int nodes_;
  basis::LegendreBasis basis_;
  basis::CollocationGrid grid_;
  envelope::HullMatrixSet hulls_;
  std::vector<Eigen::RowVectorXd> r0_, r1_, r2_;
  int ic_row_ = 0;
  int defect_row_ = 0;
  std::vector<std::pair<int, int>> terminal_rows_;
  std::vector<BoxRow> box_rows_;
};

/// Direct multiple shooting with first-order-hold inputs and RK4 gaps.
class DmsNlp final : public NlpProblem {
 public:
  DmsNlp(const ocp::OcpSpec& spec, const TranscriptionConfig& cfg)
      : NlpProblem(Method::kDms, spec), intervals_(cfg.shooting_nodes), substeps_(cfg.integrator_substeps) {
    if (intervals_ < 1) throw DomainError("transcription: need at least one shooting interval");
    if (substeps_ < 1) throw DomainError("transcription: need at least one integrator substep");
    if (ocp_.use_cbf) throw DomainError("transcription: the CBF constraint requires a spline transcription");
    const int nx = ocp_.nx, nu = ocp_.nu, nn = intervals_ + 1;
    dt_ = ocp_.horizon / intervals_;
    n_primal_ = nn * (nx + nu);
    layout_ = {{"x", 0, nn * nx}, {"u", nn * nx, nn * nu}};

    ic_row_ = add_rows(RowKind::kInitial, nx, 0.0, 0.0);
    lower_.segment(ic_row_, nx) = ocp_.x0;
    upper_.segment(ic_row_, nx) = ocp_.x0;
    gap_row_ = add_rows(RowKind::kDynamics, intervals_ * nx, 0.0, 0.0);
    for (int c = 0; c < nx; ++c) {
      if (!detail::bounded(ocp_.terminal_lower(c), ocp_.terminal_upper(c))) continue;
      terminal_rows_.push_back({add_rows(RowKind::kTerminal, 1, ocp_.terminal_lower(c), ocp_.terminal_upper(c)), c});
    }
    for (int i = 0; i < nn; ++i) {
      for (int c = 0; c < nx; ++c) {
        if (!detail::bounded(ocp_.x_lower(c), ocp_.x_upper(c))) continue;
        box_rows_.push_back({add_rows(RowKind::kBox, 1, ocp_.x_lower(c), ocp_.x_upper(c)), xi(i) + c});
      }
      for (int j = 0; j < nu; ++j) {
        if (!detail::bounded(ocp_.u_lower(j), ocp_.u_upper(j))) continue;
        box_rows_.push_back({add_rows(RowKind::kBox, 1, ocp_.u_lower(j), ocp_.u_upper(j)), ui(i) + j});
      }
    }
    for (int o = 0; o < static_cast<int>(ocp_.obstacles.size()); ++o) {
      for (int i = 1; i < nn; ++i) add_group(o, safety::ConstraintKind::kBarrier, i, 1, false);
    }
    finalize_slacks();
    build_cost();
  }

  [[nodiscard]] int intervals() const { return intervals_; }
  [[nodiscard]] double interval_length() const { return dt_; }
  [[nodiscard]] int xi(int node) const { return node * ocp_.nx; }
  [[nodiscard]] int ui(int node) const { return (intervals_ + 1) * ocp_.nx + node * ocp_.nu; }

  [[nodiscard]] StateInput trajectory(const Eigen::VectorXd& z, double t) const override {
    const int nx = ocp_.nx, nu = ocp_.nu;
    t = std::clamp(t, 0.0, ocp_.horizon);
    const int i = std::min(intervals_ - 1, static_cast<int>(t / dt_));
    const double th = std::clamp((t - i * dt_) / dt_, 0.0, 1.0);
    const Eigen::VectorXd u0 = z.segment(ui(i), nu), u1 = z.segment(ui(i + 1), nu);
    StateInput si;
    si.u = (1.0 - th) * u0 + th * u1;
    si.x = (1.0 - th) * z.segment(xi(i), nx) + th * z.segment(xi(i + 1), nx);
    // Integrated channels follow the first-order-hold input exactly.
    for (int j = 0; j < nu && j < static_cast<int>(ocp_.integrated_state.size()); ++j) {
      const int c = ocp_.integrated_state[static_cast<std::size_t>(j)];
      if (c >= 0) si.x(c) = z(xi(i) + c) + dt_ * (th * u0(j) + 0.5 * th * th * (u1(j) - u0(j)));
    }
    return si;
  }

  [[nodiscard]] Eigen::VectorXd initial_guess(const TrajectoryFn& traj) const override {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n_);
    for (int i = 0; i <= intervals_; ++i) {
      const StateInput si = traj(i * dt_);
      z.segment(xi(i), ocp_.nx) = si.x;
      z.segment(ui(i), ocp_.nu) = si.u;
    }
    return z;
  }

  /// RK4 over one interval with linearly interpolated input; sensitivities w.r.t. (x_i, u_i, u_{i+1}).
  void shoot(const Eigen::VectorXd& x0, const Eigen::VectorXd& ua, const Eigen::VectorXd& ub, Eigen::VectorXd& x1,
             Eigen::MatrixXd* sens) const {
    const int nx = ocp_.nx, nu = ocp_.nu, np = nx + 2 * nu;
    const double h = dt_ / substeps_;
    Eigen::VectorXd x = x0;
    Eigen::MatrixXd s;
    if (sens) s = Eigen::MatrixXd::Identity(nx, np);
    auto input = [&](double th) { return Eigen::VectorXd((1.0 - th) * ua + th * ub); };
    auto du = [&](double th) {
      Eigen::MatrixXd d = Eigen::MatrixXd::Zero(nu, np);
      d.block(0, nx, nu, nu).diagonal().setConstant(1.0 - th);
      d.block(0, nx + nu, nu, nu).diagonal().setConstant(th);
      return d;
    };
    for (int k = 0; k < substeps_; ++k) {
      const double ta = static_cast<double>(k) / substeps_;
      const double tm = (k + 0.5) / substeps_;
      const double tb = (k + 1.0) / substeps_;
      const auto f1 = ocp_.dynamics(x, input(ta));
      const Eigen::VectorXd y2 = x + 0.5 * h * f1.f;
      const auto f2 = ocp_.dynamics(y2, input(tm));
      const Eigen::VectorXd y3 = x + 0.5 * h * f2.f;
      const auto f3 = ocp_.dynamics(y3, input(tm));
      const Eigen::VectorXd y4 = x + h * f3.f;
      const auto f4 = ocp_.dynamics(y4, input(tb));
      if (sens) {
        const Eigen::MatrixXd dua = du(ta), dum = du(tm), dub = du(tb);
        const Eigen::MatrixXd k1 = f1.fx * s + f1.fu * dua;
        const Eigen::MatrixXd k2 = f2.fx * (s + 0.5 * h * k1) + f2.fu * dum;
        const Eigen::MatrixXd k3 = f3.fx * (s + 0.5 * h * k2) + f3.fu * dum;
        const Eigen::MatrixXd k4 = f4.fx * (s + h * k3) + f4.fu * dub;
        s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      x += h / 6.0 * (f1.f + 2.0 * f2.f + 2.0 * f3.f + f4.f);
    }
    x1 = x;
    if (sens) *sens = s;
  }

 protected:
  void evaluate(const Eigen::VectorXd& z, Eigen::VectorXd& g, Triplets* trip) const override {
    const int nx = ocp_.nx, nu = ocp_.nu;
    for (int c = 0; c < nx; ++c) {
      g(ic_row_ + c) = z(xi(0) + c);
      if (trip) trip->emplace_back(ic_row_ + c, xi(0) + c, 1.0);
    }
    Eigen::VectorXd x1;
    Eigen::MatrixXd sens;
    for (int i = 0; i < intervals_; ++i) {
      shoot(z.segment(xi(i), nx), z.segment(ui(i), nu), z.segment(ui(i + 1), nu), x1, trip ? &sens : nullptr);
      const int base = gap_row_ + i * nx;
      g.segment(base, nx) = z.segment(xi(i + 1), nx) - x1;
      if (!trip) continue;
      for (int r = 0; r < nx; ++r) {
        trip->emplace_back(base + r, xi(i + 1) + r, 1.0);
        for (int c = 0; c < nx; ++c) {
          if (sens(r, c) != 0.0) trip->emplace_back(base + r, xi(i) + c, -sens(r, c));
        }
        for (int j = 0; j < nu; ++j) {
          if (sens(r, nx + j) != 0.0) trip->emplace_back(base + r, ui(i) + j, -sens(r, nx + j));
          if (sens(r, nx + nu + j) != 0.0) trip->emplace_back(base + r, ui(i + 1) + j, -sens(r, nx + nu + j));
        }
      }
    }
    for (const auto& [row, c] : terminal_rows_) {
      g(row) = z(xi(intervals_) + c);
      if (trip) trip->emplace_back(row, xi(intervals_) + c, 1.0);
    }
    for (const auto& [row, var] : box_rows_) {
      g(row) = z(var);
      if (trip) trip->emplace_back(row, var, 1.0);
    }
    for (const auto& grp : groups_) {
      const auto& obs = ocp_.obstacles[static_cast<std::size_t>(grp.obstacle)];
      const int i = grp.index;
      const double t = i * dt_;
      const int is = xi(i) + ocp_.s_channel, iw = xi(i) + ocp_.w_channel;
      const double ds = z(is) - obs.s_at(t), dw = z(iw) - obs.w_at(t);
      g(grp.first_row) = ds * ds / (obs.a * obs.a) + dw * dw / (obs.b * obs.b) - 1.0;
      if (trip) {
        trip->emplace_back(grp.first_row, is, 2.0 * ds / (obs.a * obs.a));
        trip->emplace_back(grp.first_row, iw, 2.0 * dw / (obs.b * obs.b));
      }
    }
  }

 private:
  void build_cost() {
    const int nx = ocp_.nx, nu = ocp_.nu;
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n_primal_, n_primal_);
    Eigen::VectorXd q = Eigen::VectorXd::Zero(n_primal_);
    double c = 0.0;
    for (int i = 0; i <= intervals_; ++i) {
      const double wt = (i == 0 || i == intervals_) ? 0.5 * dt_ : dt_;
      for (int ch = 0; ch < nx; ++ch) {
        double weight = wt * ocp_.q_diag(ch);
        if (i == intervals_) weight += ocp_.terminal_diag(ch);
        const double ref = ocp_.x_ref(ch);
        p(xi(i) + ch, xi(i) + ch) += 2.0 * weight;
        q(xi(i) + ch) += -2.0 * weight * ref;
        c += weight * ref * ref;
      }
    }
    // Exact integral of a linear input: dt/3 (a'Ra + a'Rb + b'Rb).
    for (int i = 0; i < intervals_; ++i) {
      for (int j = 0; j < nu; ++j) {
        const double r = ocp_.r_diag(j) * dt_ / 3.0;
        const int a = ui(i) + j, b = ui(i + 1) + j;
        p(a, a) += 2.0 * r;
        p(b, b) += 2.0 * r;
        p(a, b) += r;
        p(b, a) += r;
      }
    }
    set_cost(p, q, c);
  }

  int intervals_;
  int substeps_;
  double dt_ = 0.0;
  int ic_row_ = 0;
  int gap_row_ = 0;
  std::vector<std::pair<int, int>> terminal_rows_;
  std::vector<std::pair<int, int>> box_rows_;
};

inline std::unique_ptr<NlpProblem> transcribe(Method method, const ocp::OcpSpec& spec,
                                              const TranscriptionConfig& cfg = {}) {
  if (method == Method::kDms) return std::make_unique<DmsNlp>(spec, cfg);
  return std::make_unique<SplineNlp>(method, spec, cfg);
}

inline std::unique_ptr<NlpProblem> transcribe_resafecol(const ocp::OcpSpec& spec, int degree, int nodes, int regions) {
  TranscriptionConfig cfg;
  cfg.degree = degree;
  cfg.nodes = nodes;
  cfg.regions = regions;
  return transcribe(Method::kResafeCol, spec, cfg);
}

inline std::unique_ptr<NlpProblem> transcribe_psc(const ocp::OcpSpec& spec, int degree, int nodes) {
  TranscriptionConfig cfg;
  cfg.degree = degree;
  cfg.nodes = nodes;
  return transcribe(Method::kPsc, spec, cfg);
}

inline std::unique_ptr<NlpProblem> transcribe_dms(const ocp::OcpSpec& spec, int shooting_nodes,
                                                  int integrator_substeps = 1) {
  TranscriptionConfig cfg;
  cfg.shooting_nodes = shooting_nodes;
  cfg.integrator_substeps = integrator_substeps;
  return transcribe(Method::kDms, spec, cfg);
}

}  // namespace resafe::transcription
