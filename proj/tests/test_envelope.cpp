#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "resafe/envelope.hpp"

namespace rb = resafe::basis;
namespace re = resafe::envelope;

namespace {

double binom(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Bernstein control values by explicit de Casteljau-free evaluation of the
// polynomial in Bernstein form: solve the (M+1)x(M+1) interpolation system.
Eigen::VectorXd bernstein_by_interpolation(const Eigen::VectorXd& mono_on_unit) {
  const int m = static_cast<int>(mono_on_unit.size()) - 1;
  Eigen::MatrixXd sys(m + 1, m + 1);
  Eigen::VectorXd rhs(m + 1);
  for (int i = 0; i <= m; ++i) {
    const double t = m == 0 ? 0.5 : static_cast<double>(i) / m;
    for (int j = 0; j <= m; ++j) sys(i, j) = binom(m, j) * std::pow(t, j) * std::pow(1.0 - t, m - j);
    double p = 0.0;
    for (int j = m; j >= 0; --j) p = p * t + mono_on_unit(j);
    rhs(i) = p;
  }
  return sys.fullPivLu().solve(rhs);
}

}  // namespace

TEST(Bernstein, SmallMatrices) {
  Eigen::MatrixXd b1(2, 2);
  b1 << 1, 0, 1, 1;
  EXPECT_TRUE(re::bernstein_matrix(1).isApprox(b1));
  Eigen::MatrixXd b2(3, 3);
  b2 << 1, 0, 0, 1, 0.5, 0, 1, 1, 1;
  EXPECT_TRUE(re::bernstein_matrix(2).isApprox(b2));
  const Eigen::VectorXd c = re::bernstein_matrix(4) * (Eigen::VectorXd(5) << 2.5, 0, 0, 0, 0).finished();
  EXPECT_TRUE(c.isApprox(Eigen::VectorXd::Constant(5, 2.5)));
}

TEST(Bernstein, MatchesInterpolationOracle) {
  std::mt19937 rng(1);
  std::normal_distribution<double> nd;
  for (int m = 1; m <= 8; ++m) {
    Eigen::VectorXd a(m + 1);
    for (int i = 0; i <= m; ++i) a(i) = nd(rng);
    EXPECT_LT((re::bernstein_matrix(m) * a - bernstein_by_interpolation(a)).norm(), 1e-9);
  }
}

TEST(TimeTransform, KnownCases) {
  EXPECT_TRUE(re::time_transform_matrix(0.0, 1.0, 4).isApprox(Eigen::MatrixXd::Identity(5, 5)));
  Eigen::MatrixXd e(2, 2);
  e << 1, 0, -1, 2;
  EXPECT_TRUE(re::time_transform_matrix(-1.0, 1.0, 1).isApprox(e));
  const Eigen::MatrixXd t = re::time_transform_matrix(-0.3, 0.6, 5);
  EXPECT_TRUE((t * rb::monomial_vector(0.0, 5)).isApprox(rb::monomial_vector(-0.3, 5)));
  EXPECT_TRUE((t * rb::monomial_vector(1.0, 5)).isApprox(rb::monomial_vector(0.6, 5)));
  EXPECT_TRUE((t * rb::monomial_vector(0.4, 5)).isApprox(rb::monomial_vector(-0.3 + 0.9 * 0.4, 5)));
  EXPECT_THROW(re::time_transform_matrix(0.5, 0.5, 3), resafe::DomainError);
  EXPECT_THROW(re::time_transform_matrix(-1.5, 0.5, 3), resafe::DomainError);
}

TEST(HullMatrices, CompositionAndDefaults) {
  const auto basis = rb::legendre_coefficients(5);
  const auto set = re::build_hull_matrices(basis, 4);
  ASSERT_EQ(set.regions(), 4);
  const Eigen::VectorXd lgl = rb::lgl_nodes(5);
  for (int k = 0; k <= 4; ++k) EXPECT_DOUBLE_EQ(set.region_bounds[k], lgl(k));
  const Eigen::MatrixXd expected = re::bernstein_matrix(5) *
                                   re::time_transform_matrix(lgl(1), lgl(2), 5).transpose() *
                                   basis.coeffs.transpose();
  EXPECT_TRUE(set.hull(1).isApprox(expected));
  // Single region reduces to the whole-horizon envelope.
  const auto one = re::build_hull_matrices(basis, 1);
  EXPECT_TRUE(one.hull(0).isApprox(re::bernstein_matrix(5) * re::time_transform_matrix(-1, 1, 5).transpose() *
                                   basis.coeffs.transpose()));
  // Constant spline.
  rb::SplineCoefficients c{Eigen::MatrixXd::Zero(6, 1), 2.0};
  c.alpha(0, 0) = -1.25;
  for (int k = 0; k < 4; ++k) {
    EXPECT_TRUE(re::hull_values(set, c, k, 0).isApprox(Eigen::VectorXd::Constant(6, -1.25)));
    EXPECT_LT(re::hull_values(set, c, k, 0, 1).cwiseAbs().maxCoeff(), 1e-14);
  }
  EXPECT_THROW(re::build_hull_matrices(basis, std::vector<double>{-1.0, 0.2, 0.1, 1.0}), resafe::DomainError);
  EXPECT_THROW(re::build_hull_matrices(basis, std::vector<double>{-0.9, 1.0}), resafe::DomainError);
}

TEST(HullBounds, HandComputedCases) {
  const auto b1 = rb::legendre_coefficients(1);
  const auto s1 = re::build_hull_matrices(b1, 1);
  rb::SplineCoefficients lin{Eigen::MatrixXd::Zero(2, 1), 1.0};
  lin.alpha(1, 0) = 1.0;
  auto bnd = re::hull_bounds(s1, lin, 0, 0);
  EXPECT_NEAR(bnd.min, -1.0, 1e-14);
  EXPECT_NEAR(bnd.max, 1.0, 1e-14);

  // tau^2 = (1 + 2 L_2) / 3; single hull [1, -1, 1].
  const auto b2 = rb::legendre_coefficients(2);
  rb::SplineCoefficients sq{Eigen::MatrixXd::Zero(3, 1), 1.0};
  sq.alpha(0, 0) = 1.0 / 3.0;
  sq.alpha(2, 0) = 2.0 / 3.0;
  const auto s_one = re::build_hull_matrices(b2, 1);
  const Eigen::VectorXd p = re::hull_values(s_one, sq, 0, 0);
  EXPECT_NEAR(p(0), 1.0, 1e-14);
  EXPECT_NEAR(p(1), -1.0, 1e-14);
  EXPECT_NEAR(p(2), 1.0, 1e-14);
  // Two regions [-1, 0], [0, 1]: the lower bound tightens to 0.
  const auto s_two = re::build_hull_matrices(b2, 2);
  double lower = std::min(re::hull_bounds(s_two, sq, 0, 0).min, re::hull_bounds(s_two, sq, 1, 0).min);
  EXPECT_GT(lower, -1.0);
  EXPECT_NEAR(lower, 0.0, 1e-14);
}

TEST(HullBounds, ContainmentAndDerivativeHulls) {
  std::mt19937 rng(9);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> mdist(1, 8), kdist(1, 6);
  for (int trial = 0; trial < 300; ++trial) {
    const int m = mdist(rng), kr = kdist(rng);
    const auto basis = rb::legendre_coefficients(m);
    const auto set = re::build_hull_matrices(basis, kr);
    rb::SplineCoefficients sp{Eigen::MatrixXd(m + 1, 1), 0.5 + std::abs(nd(rng))};
    for (int i = 0; i <= m; ++i) sp.alpha(i, 0) = nd(rng);
    for (int k = 0; k < kr; ++k) {
      for (int order = 0; order <= std::min(2, m); ++order) {
        const auto bnd = re::hull_bounds(set, sp, k, 0, order);
        const double t0 = set.region_bounds[k], t1 = set.region_bounds[k + 1];
        for (int i = 0; i <= 100; ++i) {
          const double v = rb::eval_spline(sp, basis, t0 + (t1 - t0) * i / 100.0, order)(0);
          const double tol = 1e-9 * (1.0 + std::abs(v));
          EXPECT_GE(v, bnd.min - tol);
          EXPECT_LE(v, bnd.max + tol);
        }
      }
    }
  }
}

TEST(HullBounds, TightOnMonotoneRegions) {
  std::mt19937 rng(21);
  std::normal_distribution<double> nd;
  const int m = 5;
  const auto basis = rb::legendre_coefficients(m);
  const auto set = re::build_hull_matrices(basis, 4);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    rb::SplineCoefficients sp{Eigen::MatrixXd(m + 1, 1), 1.0};
    for (int i = 0; i <= m; ++i) sp.alpha(i, 0) = nd(rng);
    for (int k = 0; k < 4; ++k) {
      const auto d = re::hull_bounds(set, sp, k, 0, 1);
      if (d.min * d.max <= 0.0) continue;
      ++checked;
      const double a = rb::eval_spline(sp, basis, set.region_bounds[k])(0);
      const double b = rb::eval_spline(sp, basis, set.region_bounds[k + 1])(0);
      const auto h = re::hull_bounds(set, sp, k, 0);
      EXPECT_NEAR(h.min, std::min(a, b), 1e-9);
      EXPECT_NEAR(h.max, std::max(a, b), 1e-9);
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Enclosure, HandEvaluatedQuadratic) {
  const Eigen::VectorXd hull = (Eigen::VectorXd(3) << -1.0, 0.5, 1.0).finished();
  const auto e = re::enclose_nonlinear([](double x) { return x * x; }, hull, 2.0);
  EXPECT_NEAR(re::max_sorted_gap(hull), 1.5, 1e-15);
  EXPECT_NEAR(e.slack_margin, 2.25, 1e-14);
  EXPECT_NEAR(e.enlarged_upper(), 3.25, 1e-14);
  EXPECT_NEAR(e.enlarged_lower(), -2.0, 1e-14);
  EXPECT_LE(e.enlarged_lower(), e.enlarged_upper());
}

TEST(Enclosure, AffineIsTight) {
  const Eigen::VectorXd hull = (Eigen::VectorXd(4) << 0.3, -2.0, 1.0, 0.7).finished();
  const auto e = re::enclose_nonlinear([](double x) { return 3.0 * x - 1.0; }, hull, 0.0);
  EXPECT_EQ(e.slack_margin, 0.0);
  EXPECT_NEAR(e.lower, -7.0, 1e-15);
  EXPECT_NEAR(e.upper, 2.0, 1e-15);
  EXPECT_THROW(re::enclose_nonlinear([](double x) { return x; }, hull, -1.0), resafe::DomainError);
}

TEST(Enclosure, QuadraticSoundnessBySampling) {
  std::mt19937 rng(4);
  std::normal_distribution<double> nd;
  const int m = 5;
  const auto basis = rb::legendre_coefficients(m);
  const auto set = re::build_hull_matrices(basis, 3);
  for (int trial = 0; trial < 200; ++trial) {
    rb::SplineCoefficients sp{Eigen::MatrixXd(m + 1, 1), 1.0};
    for (int i = 0; i <= m; ++i) sp.alpha(i, 0) = nd(rng);
    const double c = nd(rng);
    auto g = [c](double x) { return (x - c) * (x - c) - 0.5; };
    for (int k = 0; k < 3; ++k) {
      const auto e = re::enclose_nonlinear(g, re::hull_values(set, sp, k, 0), 2.0);
      const double t0 = set.region_bounds[k], t1 = set.region_bounds[k + 1];
      for (int i = 0; i <= 1000; ++i) {
        const double v = g(rb::eval_spline(sp, basis, t0 + (t1 - t0) * i / 1000.0)(0));
        EXPECT_GE(v, e.enlarged_lower() - 1e-9);
        EXPECT_LE(v, e.enlarged_upper() + 1e-9);
      }
    }
  }
}
