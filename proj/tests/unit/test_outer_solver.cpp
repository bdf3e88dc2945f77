#include <gtest/gtest.h>

#include <cmath>

#include "bbm/outer_solver.hpp"
#include "bbm/testbed.hpp"
#include "fixtures.hpp"

namespace bbm {
namespace {

using test::scalar;
using test::vec;

SmoothnessConstants product_constants() {
  SmoothnessConstants c;
  c.L_f = 1;
  c.Lbar_f = 1;
  c.Lbar_g = 1;
  c.k = 1;
  c.Lbar_h = 1;
  c.L_h = 1;
  c.L_g = 1;
  c.T = 1;
  // Small R makes the first margin branch large, so m_loc = d_s / 4.
  c.R = 0.01;
  return c;
}

TEST(LocalPhiLipschitz, CollapsesToLbarF) {
  SmoothnessConstants c;
  c.Lbar_f = 1;
  c.R = 1;
  c.T = 1;
  EXPECT_DOUBLE_EQ(local_phi_lipschitz(0.1, 1, c, 1), 1);
}

TEST(LocalPhiLipschitz, ProductFormula) {
  const auto c = product_constants();
  ASSERT_DOUBLE_EQ(compute_margin(0.1, 1.0, c), 0.5);
  EXPECT_NEAR(local_phi_lipschitz(0.1, 2.0, c, 1), 25.688, 1e-12);
}

TEST(LocalPhiLipschitz, NondecreasingAsSlackShrinks) {
  const auto c = toy_qp_problem().constants;
  double prev = 0;
  for (double d = 1; d > 1e-4; d *= 0.5) {
    const double v = local_phi_lipschitz(0.1, d, c, 1);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(Stepsize, Examples) {
  SmoothnessConstants c;
  c.L_h = 2;
  EXPECT_DOUBLE_EQ(stepsize(1, 10, 50, c), 0.02);
  EXPECT_DOUBLE_EQ(stepsize(1, 0, 50, c), 0.02);
  EXPECT_DOUBLE_EQ(stepsize(1, 0, 0.5, c), 1);
  EXPECT_DOUBLE_EQ(stepsize(1, 1e-9, 0.9, c), 1);
}

TEST(Stationarity, Examples) {
  EXPECT_EQ(stationarity(vec({0.3, 0.1}), vec({0.3, 0.1}), 0.5), 0);
  EXPECT_NEAR(stationarity(scalar(0.5), scalar(0.52), 0.01), 2, 1e-12);
}

TEST(RunBfbm, ZeroBudget) {
  const auto p = toy_qp_problem();
  BarrierContext ctx(p, 0.1);
  const auto r = run_bfbm(ctx, scalar(0.7), 1e-3, 0);
  EXPECT_EQ(r.status, RunStatus::BudgetExhausted);
  EXPECT_TRUE(r.trace.rows.empty());
  EXPECT_EQ(r.x_out, scalar(0.7));
}

TEST(RunBfbm, StationaryStartExitsImmediately) {
  // At the upper bound x = 1 the step points out of X, so the projected
  // displacement and the stationarity are zero.
  const auto p = example1_problem();
  BarrierContext ctx(p, 0.1);
  const auto r = run_bfbm(ctx, scalar(1), 1e-3, 50);
  EXPECT_EQ(r.status, RunStatus::Converged);
  EXPECT_LE(r.trace.rows.size(), 2u);
  EXPECT_EQ(r.best_stationarity, 0);
  EXPECT_EQ(r.x_out, scalar(1));
}

TEST(RunBfbm, RejectsStartOutsideUpperSet) {
  const auto p = toy_qp_problem();
  BarrierContext ctx(p, 0.1);
  EXPECT_THROW(run_bfbm(ctx, scalar(2), 1e-3, 5), Error);
}

TEST(RunBfbm, SolverErrorsBecomeFailedStatus) {
  const auto p = price_setting_problem();
  BarrierContext ctx(p, 1e-4);
  const auto r = run_bfbm(ctx, p.upper_set.center(), 1e-3, 3);
  EXPECT_EQ(r.status, RunStatus::Failed);
  EXPECT_NE(r.failure_reason.find("BudgetExhausted"), std::string::npos);
}

class OuterTraceProperties : public ::testing::TestWithParam<int> {};

TEST_P(OuterTraceProperties, TraceInvariants) {
  const auto problems = test::testbed_problems();
  const auto& p = problems[GetParam()];
  BarrierContext ctx(p, p.constants.T);
  const Vector x0 = p.upper_set.center();
  const auto r = run_bfbm(ctx, x0, 1e-3, 6);
  ASSERT_NE(r.status, RunStatus::Failed) << r.failure_reason;
  ASSERT_FALSE(r.trace.rows.empty());
  double best = std::numeric_limits<double>::infinity();
  Vector x = x0;
  for (std::size_t s = 0; s < r.trace.rows.size(); ++s) {
    const auto& row = r.trace.rows[s];
    EXPECT_EQ(row.s, static_cast<int>(s));
    EXPECT_GT(row.eta_s, 0);
    EXPECT_LE(row.eta_s, 1);
    EXPECT_GE(row.stationarity, 0);
    EXPECT_EQ(row.x, x);
    // Step localization.
    EXPECT_LE((row.x_next - row.x).norm(), row.d_s / (2 * p.constants.L_h) + 1e-12);
    // The trace reconstructs the next iterate.
    EXPECT_LE((row.x_next - project_upper(p.upper_set, row.x - row.eta_s * row.grad)).norm(),
              1e-15 * (1 + row.x.norm()));
    EXPECT_TRUE(p.upper_set.contains(row.x_next));
    best = std::min(best, row.stationarity);
    x = row.x_next;
  }
  EXPECT_EQ(r.best_stationarity, best);
  EXPECT_TRUE(p.upper_set.contains(r.x_out));
}

TEST_P(OuterTraceProperties, Deterministic) {
  const auto problems = test::testbed_problems();
  const auto& p = problems[GetParam()];
  BarrierContext ctx(p, p.constants.T);
  const auto a = run_bfbm(ctx, p.upper_set.center(), 1e-3, 3);
  const auto b = run_bfbm(ctx, p.upper_set.center(), 1e-3, 3);
  ASSERT_EQ(a.trace.rows.size(), b.trace.rows.size());
  for (std::size_t s = 0; s < a.trace.rows.size(); ++s) {
    EXPECT_EQ(a.trace.rows[s].x_next, b.trace.rows[s].x_next);
    EXPECT_EQ(a.trace.rows[s].grad, b.trace.rows[s].grad);
    EXPECT_EQ(a.trace.rows[s].inner_iters, b.trace.rows[s].inner_iters);
  }
}

INSTANTIATE_TEST_SUITE_P(Testbed, OuterTraceProperties, ::testing::Range(0, 4));

TEST(RunBfbm, NearDescentOnToyQp) {
  const auto p = toy_qp_problem();
  const double t = 0.1, eps = 1e-3;
  BarrierContext ctx(p, t);
  const auto r = run_bfbm(ctx, scalar(0.7), eps, 5);
  ASSERT_FALSE(r.trace.rows.empty());
  for (const auto& row : r.trace.rows) {
    const double before = hyperfunction_value(ctx, row.x, 1e-10);
    const double after = hyperfunction_value(ctx, row.x_next, 1e-10);
    const double dx = (row.x_next - row.x).squaredNorm();
    EXPECT_LE(after - before,
              -dx / (4 * row.eta_s) + row.eta_s * (eps / 4) * (eps / 4) + 1e-8);
  }
}

}  // namespace
}  // namespace bbm
