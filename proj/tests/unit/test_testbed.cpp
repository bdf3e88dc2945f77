#include <gtest/gtest.h>

#include <cmath>

#include "bbm/testbed.hpp"
#include "fixtures.hpp"

namespace bbm {
namespace {

using test::scalar;
using test::vec;

/// LP over the unit square with g = y1 + y2.
BilevelProblem unit_square_lp() {
  BilevelProblem p = test::interval_problem(1.0);
  p.name = "square";
  p.m = 2;
  p.k = 4;
  p.setting = Setting::LinearLP;
  p.constants.k = 4;
  p.constants.sigma = 2;
  p.constants.H = 1;
  auto& o = p.oracles;
  o.f = [](const Vector&, const Vector& y) { return y[0]; };
  o.grad_f_y = [](const Vector&, const Vector&) { return Vector(Vector::Unit(2, 0)); };
  o.g = [](const Vector&, const Vector& y) { return y[0] + y[1]; };
  o.grad_g_y = [](const Vector&, const Vector&) { return Vector(Vector::Ones(2)); };
  o.hess_g_yy = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(2, 2)); };
  o.hess_g_xy = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(1, 2)); };
  o.h = [](const Vector&, const Vector& y) {
    Vector h(4);
    h << -y[0], y[0] - 1, -y[1], y[1] - 1;
    return h;
  };
  o.jac_h_x = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(4, 1)); };
  o.jac_h_y = [](const Vector&, const Vector&) {
    Matrix J(4, 2);
    J << -1, 0, 1, 0, 0, -1, 0, 1;
    return J;
  };
  o.hess_h_yy = [](const Vector&, const Vector&, int) { return Matrix(Matrix::Zero(2, 2)); };
  o.hess_h_xy = [](const Vector&, const Vector&, int) { return Matrix(Matrix::Zero(1, 2)); };
  p.y_hull = Box{Vector::Zero(2), Vector::Ones(2)};
  p.affine_in_y.assign(4, true);
  validate(p);
  return p;
}

TEST(ExampleOne, Oracles) {
  const auto p = example1_problem();
  EXPECT_EQ(p.setting, Setting::LinearLP);
  EXPECT_EQ(p.n, 1);
  EXPECT_EQ(p.m, 2);
  EXPECT_EQ(p.k, 3);
  EXPECT_EQ(p.oracles.g(scalar(1), vec({-1, 0})), -1);
  EXPECT_EQ(eval_constraints(p, scalar(0), vec({0, 1})), vec({-1, -1, -1}));
}

TEST(ExampleOne, Hyperfunction) {
  const auto p = example1_problem();
  for (double x : {0.0, 0.3, 1.0}) EXPECT_NEAR(brute_force_hyperfunction(p, scalar(x)), -1, 1e-12);
  for (double x : {-0.3, -1.0}) EXPECT_NEAR(brute_force_hyperfunction(p, scalar(x)), 1, 1e-12);
}

TEST(ExampleOne, ClosedForm) {
  const auto a = example1_closed_form(0.3, 0);
  EXPECT_EQ(a.y1, 0);
  EXPECT_EQ(a.y2, 0.3);
  EXPECT_EQ(a.phi_tilde, 0);
  const auto b = example1_closed_form(0.1, 1);
  EXPECT_NEAR(b.y1, -0.904988, 1e-6);
  EXPECT_EQ(b.y2, 0.1);
  EXPECT_EQ(b.phi_tilde, b.y1);
  const auto c = example1_closed_form(0.05, -0.5);
  EXPECT_NEAR(c.y1, 0.904988, 1e-6);
  EXPECT_EQ(c.y2, 0.05);
  // Agrees with the unrationalized expression.
  for (double x : {-1.0, -0.5, 0.25, 1.0}) {
    const double t = 0.1;
    EXPECT_NEAR(example1_closed_form(t, x).y1, (t - std::sqrt(t * t + x * x)) / x, 1e-15);
  }
}

TEST(ExampleOne, NewtonReferenceMatchesClosedForm) {
  const auto p = example1_problem();
  for (double t : {0.3, 0.1, 0.01}) {
    BarrierContext ctx(p, t);
    const auto cf = example1_closed_form(t, 0.7);
    const Vector y = barrier_minimizer_newton(ctx, scalar(0.7));
    EXPECT_NEAR(y[0], cf.y1, 1e-12);
    EXPECT_NEAR(y[1], cf.y2, 1e-12);
  }
}

TEST(PriceSetting, FeasibleAtEveryVertexOfX) {
  const auto p = price_setting_problem({2, 1, 2}, 3);
  const Box b = p.upper_set.as_box();
  for (int mask = 0; mask < (1 << p.n); ++mask) {
    Vector x(p.n);
    for (int i = 0; i < p.n; ++i) x[i] = (mask >> i) & 1 ? b.upper[i] : b.lower[i];
    EXPECT_TRUE(feasibility_probe(ShrunkSet(p, x, 0.0), 1000).has_value());
  }
}

TEST(PriceSetting, ZeroTaxGivesZeroLeaderObjective) {
  const auto p = price_setting_problem();
  EXPECT_EQ(p.oracles.f(Vector::Zero(p.n), vec({1.3, 0.4})), 0);
}

TEST(PriceSetting, VertexOracleMatchesGrid) {
  const auto p = price_setting_problem();
  ASSERT_EQ(p.m, 2);
  for (double x : {0.0, 0.35, 0.8, 1.0}) {
    const auto v = brute_force_lower(p, scalar(x), VertexMode{});
    const auto g = brute_force_lower(p, scalar(x), GridMode{201});
    EXPECT_NEAR(v.g_value, g.g_value, 1e-6);
  }
}

TEST(PriceSetting, GeneratorDeterministic) {
  const auto a = price_setting_problem({2, 2, 3}, 5);
  const auto b = price_setting_problem({2, 2, 3}, 5);
  const Vector x = vec({0.3, 0.6}), y = vec({0.5, 0.7, 0.2, 1.1});
  EXPECT_EQ(eval_constraints(a, x, y), eval_constraints(b, x, y));
  EXPECT_EQ(a.constants.H, b.constants.H);
}

TEST(Svm, ZeroCapForcesNonpositiveSlack) {
  const auto p = svm_problem();
  const auto cert = brute_force_lower(p, Vector::Zero(p.n), ActiveSetMode{});
  const int d = SvmDims{}.dim;
  EXPECT_LE(cert.y_star.tail(p.n).maxCoeff(), 1e-9);
  EXPECT_GE(cert.y_star.size(), d + 1);
}

TEST(Svm, DataInUnitBallAndDeterministic) {
  const auto a = svm_data({10, 6, 3}, 4);
  const auto b = svm_data({10, 6, 3}, 4);
  EXPECT_EQ(a.z_train, b.z_train);
  EXPECT_EQ(a.l_val, b.l_val);
  EXPECT_LE(a.z_train.rowwise().norm().maxCoeff(), 1 + 1e-15);
  EXPECT_TRUE((a.l_train.array().abs() == 1).all());
}

TEST(ToyQp, InteriorOptimum) {
  const auto p = toy_qp_problem();
  const auto cert = brute_force_lower(p, scalar(1), ActiveSetMode{});
  EXPECT_LE(cert.y_star.norm(), 1e-12);
  EXPECT_TRUE(cert.active.empty());
  EXPECT_EQ(cert.lambdas, Vector::Zero(2));
  EXPECT_NEAR(brute_force_hyperfunction(p, scalar(1)), 3, 1e-12);
}

TEST(ToyQp, ActivatedCoupledConstraint) {
  const auto p = toy_qp_problem();
  const double x = -0.5;
  const auto cert = brute_force_lower(p, scalar(x), ActiveSetMode{});
  EXPECT_NEAR(cert.y_star[0], x / 2, 1e-12);
  EXPECT_NEAR(cert.y_star[1], x / 2, 1e-12);
  EXPECT_NEAR(cert.lambdas[0], -x / 2, 1e-12);
  const auto km = kkt_multipliers(p, scalar(x), vec({x / 2, x / 2}), 1e-10);
  EXPECT_NEAR(km.lambdas[0], 0.25, 1e-12);
  EXPECT_EQ(km.lambdas[1], 0);
}

TEST(ToyQp, GridAgreesWithActiveSet) {
  const auto p = toy_qp_problem();
  for (double x : {0.2, 0.7, 1.5, -0.5, -1.0}) {
    const auto a = brute_force_lower(p, scalar(x), ActiveSetMode{});
    const auto g = brute_force_lower(p, scalar(x), GridMode{201});
    EXPECT_LE((a.y_star - g.y_star).norm(), 4.0 / 200) << "x=" << x;
  }
}

TEST(BruteForceLower, ExampleOneVertices) {
  const auto p = example1_problem();
  const auto a = brute_force_lower(p, scalar(1), VertexMode{});
  EXPECT_EQ(a.y_star, vec({-1, 0}));
  EXPECT_LE((a.lambdas - vec({1, 1, 0})).norm(), 1e-12);
  EXPECT_LE(a.stationarity_residual, 1e-8);
  const auto b = brute_force_lower(p, scalar(-1), VertexMode{});
  EXPECT_EQ(b.y_star, vec({1, 0}));
}

TEST(BruteForceLower, CertificateInvariants) {
  for (const auto& p : test::testbed_problems()) {
    const OracleMode mode =
        p.setting == Setting::LinearLP ? OracleMode{VertexMode{}} : OracleMode{ActiveSetMode{}};
    for (const auto& [x, y] : sample_interior(p, 5, 0.0, 12)) {
      const auto cert = brute_force_lower(p, x, mode);
      EXPECT_GE(cert.lambdas.minCoeff(), 0) << p.name;
      EXPECT_LE(cert.stationarity_residual, 1e-8) << p.name;
      const Vector h = eval_constraints(p, x, cert.y_star);
      EXPECT_LE(h.maxCoeff(), 1e-9) << p.name;
      EXPECT_LE((cert.lambdas.array() * h.array()).abs().maxCoeff(), 1e-8) << p.name;
    }
  }
}

TEST(BruteForceLower, Deterministic) {
  const auto p = svm_problem();
  const Vector x = p.upper_set.center();
  EXPECT_EQ(brute_force_lower(p, x).y_star, brute_force_lower(p, x).y_star);
}

TEST(KktMultipliers, Examples) {
  const auto p = example1_problem();
  const auto cert = kkt_multipliers(p, scalar(1), vec({-1, 0}), 1e-12);
  EXPECT_LE((cert.lambdas - vec({1, 1, 0})).norm(), 1e-12);
  const auto toy = toy_qp_problem();
  EXPECT_EQ(kkt_multipliers(toy, scalar(1), vec({0, 0}), 1e-12).lambdas, Vector::Zero(2));
}

TEST(KktMultipliers, NonOptimalPointRejected) {
  try {
    kkt_multipliers(example1_problem(), scalar(1), vec({1, 0}), 1e-12);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ResidualTooLarge);
  }
}

TEST(Nnls, ActiveBound) {
  const Matrix A{{1, 0}, {0, 1}};
  EXPECT_TRUE(nnls(A, vec({2, -3})).isApprox(vec({2, 0})));
  const Matrix B{{1, 1}, {0, 1}, {1, 0}};
  const Vector z = nnls(B, vec({2, 1, 1}));
  EXPECT_LE((z - vec({1, 1})).norm(), 1e-12);
}

TEST(EstimateTau, ExampleOne) {
  EXPECT_NEAR(estimate_tau(example1_problem(), scalar(1)), 1 / std::sqrt(2.0), 1e-12);
  ExampleOneOptions o;
  o.augment_ball = true;
  const auto p = example1_problem(o);
  const double tau = estimate_tau(p, scalar(1));
  EXPECT_GE(tau, 0.31);
  EXPECT_LE(tau, 1 / std::sqrt(2.0) + 1e-12);
}

TEST(EstimateTau, SquareWithDiagonalGradient) {
  EXPECT_NEAR(estimate_tau(unit_square_lp(), scalar(0)), 1 / std::sqrt(2.0), 1e-12);
}

TEST(EstimateTau, NonUniqueOptimum) {
  try {
    estimate_tau(example1_problem(), scalar(0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonUniqueOptimum);
  }
}

}  // namespace
}  // namespace bbm
