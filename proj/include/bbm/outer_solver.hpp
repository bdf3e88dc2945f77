#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bbm/barrier.hpp"
#include "bbm/error.hpp"
#include "bbm/hypergradient.hpp"
#include "bbm/linalg.hpp"
#include "bbm/lower_solver.hpp"
#include "bbm/problem.hpp"
#include "bbm/projection.hpp"

namespace bbm {

struct OuterRow {
  int s = 0;
  double t = 0;
  double d_s = 0;
  double m_s = 0;
  double eta_s = 0;
  double grad_norm = 0;
  double stationarity = 0;
  double phi_tilde = 0;
  long inner_iters = 0;
  double wall_ms = 0;
  // Audit data, not serialized.
  double eps_s = 0;
  Vector x;
  Vector grad;
  Vector x_next;
};

struct OuterTrace {
  std::vector<OuterRow> rows;
};

enum class RunStatus { Converged, BudgetExhausted, Failed };

constexpr std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return "Converged";
    case RunStatus::BudgetExhausted: return "BudgetExhausted";
    case RunStatus::Failed: return "Failed";
  }
  return "Unknown";
}

struct RunResult {
  Vector x_out;
  double best_stationarity = std::numeric_limits<double>::infinity();
  OuterTrace trace;
  RunStatus status = RunStatus::BudgetExhausted;
  std::string failure_reason;
  /// Last lower-level solution, for warm starts.
  std::optional<Vector> last_y;
};

struct OuterOptions {
  LowerOptions lower;
  bool warm_start = true;
  std::optional<Vector> warm_y;
};

/// Local smoothness of the barrier hyperfunction around a point with slack d_s.
inline double local_phi_lipschitz(double t, double d_s, const SmoothnessConstants& c,
                                  double mu) {
  const double m_loc = compute_margin(t, d_s / 2, c);
  const double P = c.Lbar_g + t * c.k * c.Lbar_h / m_loc +
                   t * c.k * c.L_h * c.L_h / (m_loc * m_loc);
  const double Lbb = hessian_lipschitz_bound(t, m_loc, c);
  return (c.Lbar_f + c.Lbar_f * P / mu + c.L_f * Lbb * P / (mu * mu) +
          c.L_f * Lbb / mu) *
         (1 + P / mu);
}

/// min{1, d_s / (2 L_h |grad|), 1 / L_phi}.
inline double stepsize(double d_s, double grad_norm, double L_phi_s,
                       const SmoothnessConstants& c) {
  double eta = 1.0;
  if (grad_norm > 0 && c.L_h > 0) eta = std::min(eta, d_s / (2 * c.L_h * grad_norm));
  if (L_phi_s > 0) eta = std::min(eta, 1 / L_phi_s);
  return eta;
}

inline double stationarity(const Vector& x_s, const Vector& x_next, double eta_s) {
  return (x_s - x_next).norm() / eta_s;
}

/// Projected hypergradient descent on the barrier hyperfunction.
inline RunResult run_bfbm(const BarrierContext& ctx, const Vector& x0, double eps,
                          int max_outer, const OuterOptions& opts = {}) {
  const auto& p = *ctx.prob;
  const auto& c = p.constants;
  if (!p.upper_set.contains(x0)) {
    throw Error(ErrorCode::InvalidArgument, "x0 lies outside the upper set");
  }
  if (!(eps > 0)) throw Error(ErrorCode::InvalidArgument, "eps must be positive");

  using Clock = std::chrono::steady_clock;
  RunResult res;
  res.x_out = x0;
  Vector x = x0;
  std::optional<Vector> warm = opts.warm_y;
  // The lower problem depends only on x; an unchanged iterate reuses it.
  std::optional<LowerSolution> cached;
  Vector cached_x;

  try {
    for (int s = 0; s < max_outer; ++s) {
      const auto start = Clock::now();
      OuterRow row;
      row.s = s;
      row.t = ctx.t;
      row.x = x;

      const bool reuse = cached && cached_x.size() == x.size() && cached_x == x;
      if (!reuse) {
        const MarginProbe probe = find_initial_margin(p, x, opts.lower.probe_budget);
        const double m_s = compute_margin(ctx.t, probe.d, c);
        const double mu = strong_convexity_bound(ctx);
        const double Lp = hypergradient_error_bound(ctx.t, m_s, c, mu);
        const double eps_s = Lp > 0 ? eps / (4 * Lp) : eps;
        cached = solve_lower_at_margin(ctx, x, eps_s, opts.warm_start ? warm : std::nullopt,
                                       probe, opts.lower);
        cached_x = x;
        row.eps_s = eps_s;
        row.inner_iters = cached->inner_iters;
      } else {
        row.eps_s = res.trace.rows.back().eps_s;
      }
      const LowerSolution& sol = *cached;
      const HypergradResult hg = approx_hypergradient(ctx, x, sol);

      row.d_s = sol.d_s;
      row.m_s = sol.m_s;
      row.grad = hg.grad;
      row.grad_norm = hg.grad.norm();
      const double L_phi = local_phi_lipschitz(ctx.t, sol.d_s, c, sol.mu);
      row.eta_s = stepsize(sol.d_s, row.grad_norm, L_phi, c);
      const Vector delta = projected_displacement(p.upper_set, x, row.eta_s * hg.grad);
      row.x_next = project_upper(p.upper_set, x + delta);
      row.stationarity = delta.norm() / row.eta_s;
      row.phi_tilde = p.oracles.f(x, sol.y_tilde);
      row.wall_ms =
          std::chrono::duration<double, std::milli>(Clock::now() - start).count();

      if (row.stationarity < res.best_stationarity) {
        res.best_stationarity = row.stationarity;
        res.x_out = x;
      }
      warm = sol.y_tilde;
      res.last_y = sol.y_tilde;
      x = row.x_next;
      const bool done = row.stationarity <= eps;
      res.trace.rows.push_back(std::move(row));
      if (done) break;
    }
    res.status = res.best_stationarity <= eps ? RunStatus::Converged
                                              : RunStatus::BudgetExhausted;
  } catch (const Error& e) {
    res.status = RunStatus::Failed;
    res.failure_reason = e.what();
  }
  return res;
}

}  // namespace bbm
