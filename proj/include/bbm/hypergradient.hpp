#pragma once

#include <cmath>
#include <optional>

#include "bbm/barrier.hpp"
#include "bbm/error.hpp"
#include "bbm/linalg.hpp"
#include "bbm/lower_solver.hpp"
#include "bbm/problem.hpp"

namespace bbm {

struct HypergradPieces {
  Vector grad_f_x;
  Vector grad_f_y;
  Matrix hess_xy;
  /// (hess_yy)^{-1} grad_y f
  Vector solve;
};

struct HypergradResult {
  Vector grad;
  double error_bound = 0;
  HypergradPieces pieces;
};

/// Lipschitz factor relating lower-level error to hypergradient error.
inline double hypergradient_error_bound(double t, double m_s,
                                        const SmoothnessConstants& c, double mu) {
  const double P = c.Lbar_g + t * c.k * c.Lbar_h / m_s +
                   t * c.k * c.L_h * c.L_h / (m_s * m_s);
  const double Lbb = hessian_lipschitz_bound(t, m_s, c);
  return c.Lbar_f + c.Lbar_f * P / mu + c.L_f * Lbb * P / (mu * mu) +
         c.L_f * Lbb / mu;
}

/// grad_x f - hess_xy (hess_yy)^{-1} grad_y f at (x, y_tilde).
inline HypergradResult approx_hypergradient(const BarrierContext& ctx,
                                            const Vector& x,
                                            const LowerSolution& sol) {
  const auto& p = *ctx.prob;
  const Vector& y = sol.y_tilde;
  HypergradResult r;
  r.pieces.grad_f_x = p.oracles.grad_f_x(x, y);
  r.pieces.grad_f_y = p.oracles.grad_f_y(x, y);
  r.pieces.hess_xy = barrier_hess_xy(ctx, x, y);
  r.pieces.solve = solve_spd(barrier_hess_yy(ctx, x, y), r.pieces.grad_f_y);
  r.grad = r.pieces.grad_f_x - r.pieces.hess_xy * r.pieces.solve;
  if (!r.grad.allFinite()) {
    throw Error(ErrorCode::OracleFailure, "hypergradient is not finite");
  }
  r.error_bound =
      sol.residual_bound * hypergradient_error_bound(ctx.t, sol.m_s, p.constants, sol.mu);
  return r;
}

/// f(x, y_tilde) with y_tilde from a lower solve at accuracy eps.
inline double hyperfunction_value(const BarrierContext& ctx, const Vector& x,
                                  double eps,
                                  const std::optional<Vector>& warm = std::nullopt,
                                  const LowerOptions& opts = {},
                                  LowerSolution* out = nullptr) {
  LowerSolution sol = solve_lower(ctx, x, eps, warm, opts);
  const double v = ctx.prob->oracles.f(x, sol.y_tilde);
  if (out) *out = std::move(sol);
  return v;
}

/// Central differences of the barrier hyperfunction, each evaluation solved
/// to accuracy min(inner_eps, step^3).
inline Vector fd_hyperfunction_grad(const BarrierContext& ctx, const Vector& x,
                                    double step, double inner_eps,
                                    const LowerOptions& opts = {}) {
  const auto& p = *ctx.prob;
  if (!(step > 0)) throw Error(ErrorCode::InvalidArgument, "step must be positive");
  const double eps = std::min(inner_eps, step * step * step);
  LowerSolution center;
  hyperfunction_value(ctx, x, eps, std::nullopt, opts, &center);
  Vector grad(p.n);
  for (int i = 0; i < p.n; ++i) {
    Vector xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    if (!p.upper_set.contains(xp) || !p.upper_set.contains(xm)) {
      throw Error(ErrorCode::InvalidArgument,
                  "finite-difference stencil leaves the upper set");
    }
    const double fp = hyperfunction_value(ctx, xp, eps, center.y_tilde, opts);
    const double fm = hyperfunction_value(ctx, xm, eps, center.y_tilde, opts);
    grad[i] = (fp - fm) / (2 * step);
  }
  return grad;
}

}  // namespace bbm
