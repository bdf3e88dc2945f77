#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bbm/barrier.hpp"
#include "bbm/testbed.hpp"
#include "fixtures.hpp"

namespace bbm {
namespace {

using test::scalar;
using test::vec;

SmoothnessConstants unit_constants() {
  SmoothnessConstants c;
  c.R = 1;
  c.L_g = 1;
  c.T = 1;
  c.k = 1;
  c.L_h = 1;
  return c;
}

/// Points y in the y hull with max_i h_i(x, y) <= -margin.
std::vector<Vector> sample_shrunk(const BilevelProblem& p, const Vector& x, double margin,
                                  int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0, 1);
  std::vector<Vector> out;
  for (int attempt = 0; attempt < 200000 && static_cast<int>(out.size()) < count; ++attempt) {
    Vector y(p.m);
    for (int j = 0; j < p.m; ++j) {
      y[j] = p.y_hull.lower[j] + unit(rng) * (p.y_hull.upper[j] - p.y_hull.lower[j]);
    }
    if (max_constraint(p, x, y) <= -margin) out.push_back(y);
  }
  return out;
}

TEST(BarrierContext, RejectsOutOfRangeT) {
  const auto p = toy_qp_problem();
  EXPECT_THROW(BarrierContext(p, 0.0), Error);
  EXPECT_THROW(BarrierContext(p, 0.6), Error);
  EXPECT_NO_THROW(BarrierContext(p, 0.5));
}

TEST(BarrierValue, NoConstraintsIsPlainG) {
  const auto p = test::quadratic_k0();
  BarrierContext ctx(p, 0.3);
  const Vector x = vec({0.2, -0.1}), y = vec({0.5, 0.7});
  EXPECT_EQ(barrier_value(ctx, x, y), p.oracles.g(x, y));
  EXPECT_EQ(barrier_grad_y(ctx, x, y), p.oracles.grad_g_y(x, y));
  EXPECT_EQ(barrier_hess_yy(ctx, x, y), p.oracles.hess_g_yy(x, y));
  EXPECT_EQ(barrier_hess_xy(ctx, x, y), p.oracles.hess_g_xy(x, y));
}

TEST(BarrierValue, ExampleOneHandValue) {
  const auto p = example1_problem();
  BarrierContext ctx(p, 0.1);
  const double expected = 0.1 - 0.1 * (std::log(0.1) + std::log(1.0) + std::log(1.0));
  EXPECT_NEAR(barrier_value(ctx, scalar(0), vec({0, 0.1})), expected, 1e-15);
  EXPECT_NEAR(barrier_value(ctx, scalar(0), vec({0, 0.1})), 0.330259, 1e-6);
}

TEST(BarrierValue, BoundaryViolation) {
  const auto p = example1_problem();
  BarrierContext ctx(p, 0.1);
  for (const Vector& y : {vec({0, 0}), vec({1, 0.5}), vec({-1, 0.5}), vec({0, -1})}) {
    try {
      barrier_value(ctx, scalar(0), y);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::BoundaryViolation);
    }
    EXPECT_THROW(barrier_grad_y(ctx, scalar(0), y), Error);
    EXPECT_THROW(barrier_hess_yy(ctx, scalar(0), y), Error);
  }
}

TEST(BarrierGrad, ZeroAtExampleOneClosedForm) {
  const auto p = example1_problem();
  for (double t : {0.1, 0.05, 0.3}) {
    for (double x : {1.0, 0.5, -0.5, 0.0}) {
      BarrierContext ctx(p, t);
      const auto cf = example1_closed_form(t, x);
      EXPECT_LE(barrier_grad_y(ctx, scalar(x), vec({cf.y1, cf.y2})).norm(), 1e-10)
          << "t=" << t << " x=" << x;
    }
  }
}

TEST(BarrierHess, ExampleOneDiagonal) {
  const auto p = example1_problem();
  const double t = 0.2;
  BarrierContext ctx(p, t);
  const Vector y = vec({0.3, 0.4});
  const Matrix H = barrier_hess_yy(ctx, scalar(0.7), y);
  Matrix expected = Matrix::Zero(2, 2);
  expected(0, 0) = t * (1 / std::pow(1 + y[0], 2) + 1 / std::pow(1 - y[0], 2));
  expected(1, 1) = t / (y[1] * y[1]);
  EXPECT_LE((H - expected).norm(), 1e-13);
}

TEST(BarrierDerivatives, FiniteDifferencesOnTestbed) {
  for (const auto& p : test::testbed_problems()) {
    const double t = std::min(0.1, p.constants.T);
    BarrierContext ctx(p, t);
    for (const auto& [x, y] : sample_interior(p, 5, 0.1, 17)) {
      const double step = 1e-5;
      const Vector g = barrier_grad_y(ctx, x, y);
      const Matrix H = barrier_hess_yy(ctx, x, y);
      const Matrix M = barrier_hess_xy(ctx, x, y);
      EXPECT_LE((H - H.transpose()).norm(), 0.0);
      Vector fd_g(p.m);
      Matrix fd_H(p.m, p.m), fd_M(p.n, p.m);
      for (int j = 0; j < p.m; ++j) {
        Vector yp = y, ym = y;
        yp[j] += step;
        ym[j] -= step;
        fd_g[j] = (barrier_value(ctx, x, yp) - barrier_value(ctx, x, ym)) / (2 * step);
        fd_H.col(j) = (barrier_grad_y(ctx, x, yp) - barrier_grad_y(ctx, x, ym)) / (2 * step);
      }
      for (int i = 0; i < p.n; ++i) {
        Vector xp = x, xm = x;
        xp[i] += step;
        xm[i] -= step;
        fd_M.row(i) =
            ((barrier_grad_y(ctx, xp, y) - barrier_grad_y(ctx, xm, y)) / (2 * step)).transpose();
      }
      const double sg = std::max(1.0, g.norm());
      const double sH = std::max(1.0, H.norm());
      const double sM = std::max(1.0, M.norm());
      EXPECT_LE((g - fd_g).norm(), 1e-6 * sg) << p.name;
      EXPECT_LE((H - fd_H).norm(), 1e-5 * sH) << p.name;
      EXPECT_LE((M - fd_M).norm(), 1e-5 * sM) << p.name;
    }
  }
}

TEST(ComputeMargin, Examples) {
  const auto c = unit_constants();
  EXPECT_DOUBLE_EQ(compute_margin(0.1, 1, c), 0.0125);
  EXPECT_DOUBLE_EQ(compute_margin(0.1, 2, c), 0.05);
  // t d^2 / 8 >= d / 2 once d >= 4 / t: second branch.
  EXPECT_DOUBLE_EQ(compute_margin(1.0, 10, c), 5);
}

TEST(ComputeMargin, MonotoneAndCapped) {
  const auto c = example1_problem().constants;
  double prev_d = 0;
  for (double d = 1e-6; d <= 10; d *= 1.7) {
    double prev_t = 0;
    for (double t = 1e-4; t <= c.T; t *= 1.9) {
      const double m = compute_margin(t, d, c);
      EXPECT_LE(m, d / 2);
      EXPECT_GE(m, prev_t);
      prev_t = m;
    }
    const double m = compute_margin(0.1, d, c);
    EXPECT_GE(m, prev_d);
    prev_d = m;
  }
}

TEST(SmoothBound, Examples) {
  SmoothnessConstants c;
  c.Lbar_g = 2;
  c.k = 2;
  c.Lbar_h = 1;
  c.L_h = 1;
  EXPECT_DOUBLE_EQ(lipschitz_smooth_bound(0.1, 0.1, c), 24);
  EXPECT_NEAR(lipschitz_smooth_bound(1e-300, 0.1, c), 2, 1e-12);
  EXPECT_GT(lipschitz_smooth_bound(0.1, 0.05, c), 24);
}

TEST(HessianLipschitzBound, Examples) {
  SmoothnessConstants c;
  c.k = 1;
  c.Lbar_h = 1;
  c.L_h = 1;
  EXPECT_NEAR(hessian_lipschitz_bound(0.1, 0.5, c), 2.8, 1e-14);
  c.Lbarbar_g = 3;
  EXPECT_NEAR(hessian_lipschitz_bound(1e-300, 0.5, c), 3, 1e-12);
  SmoothnessConstants z;
  z.Lbarbar_g = 1.5;
  z.k = 3;
  for (double m : {1e-3, 0.1, 1.0}) EXPECT_EQ(hessian_lipschitz_bound(0.1, m, z), 1.5);
}

TEST(StrongConvexityBound, Examples) {
  SmoothnessConstants c;
  c.mu_g = 0.7;
  EXPECT_EQ(strong_convexity_bound(Setting::StronglyConvex, 0.3, c), 0.7);
  SmoothnessConstants lp;
  lp.sigma = 4;
  lp.H = 2;
  EXPECT_DOUBLE_EQ(strong_convexity_bound(Setting::LinearLP, 0.1, lp), 0.1);
  SmoothnessConstants ball;
  ball.R = 1;
  EXPECT_DOUBLE_EQ(strong_convexity_bound(Setting::LinearLP, 0.1, ball, true), 0.2);
  ball.R = 2;
  EXPECT_DOUBLE_EQ(strong_convexity_bound(Setting::LinearLP, 0.1, ball, true), 0.05);
  EXPECT_DOUBLE_EQ(
      strong_convexity_bound(Setting::LinearLP, 0.1, ball, true, BallRate::Unsquared), 0.1);
}

TEST(StrongConvexityBound, MissingConstant) {
  try {
    strong_convexity_bound(Setting::LinearLP, 0.1, SmoothnessConstants{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingConstant);
  }
}

TEST(BarrierProperties, HessianDominatesStrongConvexity) {
  auto problems = test::testbed_problems();
  problems.push_back(augment_with_norm_ball(example1_problem()));
  for (const auto& p : problems) {
    for (double t : {p.constants.T, 0.25 * p.constants.T}) {
      BarrierContext ctx(p, t);
      const double mu = strong_convexity_bound(ctx);
      for (const auto& [x, y] : sample_interior(p, 30, 0.0, 21)) {
        EXPECT_TRUE(min_eig_lower_bound(barrier_hess_yy(ctx, x, y), mu)) << p.name;
      }
    }
  }
}

TEST(BarrierProperties, LipschitzBoundsOnShrunkSet) {
  for (const auto& p : test::testbed_problems()) {
    const double t = std::min(0.1, p.constants.T);
    BarrierContext ctx(p, t);
    const Vector x = p.upper_set.center();
    const double d = find_initial_margin(p, x).d;
    const double m = compute_margin(t, d, p.constants);
    const double L = lipschitz_smooth_bound(t, m, p.constants);
    const double Lbb = hessian_lipschitz_bound(t, m, p.constants);
    const auto ys = sample_shrunk(p, x, m, 100, 23);
    ASSERT_GE(ys.size(), 20u) << p.name;
    for (std::size_t i = 0; i + 1 < ys.size(); i += 2) {
      const Vector& a = ys[i];
      const Vector& b = ys[i + 1];
      const double dist = (a - b).norm();
      EXPECT_LE((barrier_grad_y(ctx, x, a) - barrier_grad_y(ctx, x, b)).norm(),
                L * dist * (1 + 1e-12))
          << p.name;
      const Matrix dH = barrier_hess_yy(ctx, x, a) - barrier_hess_yy(ctx, x, b);
      EXPECT_LE(dH.selfadjointView<Eigen::Lower>().operatorNorm(),
                Lbb * dist * (1 + 1e-12))
          << p.name;
    }
  }
}

}  // namespace
}  // namespace bbm
