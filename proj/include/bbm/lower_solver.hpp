#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string_view>
#include <vector>

#include "bbm/barrier.hpp"
#include "bbm/error.hpp"
#include "bbm/linalg.hpp"
#include "bbm/problem.hpp"
#include "bbm/projection.hpp"

namespace bbm {

/// Standard: y_{j+1} = P(w - grad(w)/L) with w the extrapolated point.
/// Verbatim: y_{j+1} = P(y_j - grad(w)/L), gradient at w but base y_j.
enum class InnerVariant { Standard, Verbatim };

constexpr std::string_view to_string(InnerVariant v) {
  return v == InnerVariant::Standard ? "standard" : "verbatim";
}

inline constexpr long kMaxInnerIterations = 1'000'000;

struct LowerOptions {
  InnerVariant variant = InnerVariant::Standard;
  int probe_budget = 1000;
  /// Called with (j, y_j) for every iterate, starting at j = 0.
  std::function<void(long, const Vector&)> observer;
};

struct LowerSolution {
  Vector y_tilde;
  double d_s = 0;
  double m_s = 0;
  double L_smooth = 0;
  double mu = 0;
  long inner_iters = 0;
  long budget = 0;
  /// Certified distance bound to the barrier minimizer.
  double residual_bound = 0;
  bool early_exit = false;
  Vector y0;
  /// Iterations j at which momentum was dropped because omega left the set.
  std::vector<long> restarts;
};

/// Unclamped ceil(sqrt(L/mu) * ln(2 gap0 / (mu eps^2))).
inline double inner_iteration_budget_raw(double L, double mu, double eps,
                                         double gap0) {
  const double raw = std::sqrt(L / mu) * std::log(2 * gap0 / (mu * eps * eps));
  if (!(raw > 0)) return 1;
  // Guard against ln() landing one ulp above an integer.
  return std::ceil(raw * (1 - 1e-12));
}

/// Accelerated-gradient iteration count guaranteeing |y_J - y*| <= eps,
/// clamped to [1, 1e6].
inline long inner_iteration_budget(double L, double mu, double eps, double gap0) {
  if (!(L >= mu && mu > 0 && eps > 0 && gap0 > 0)) {
    throw Error(ErrorCode::InvalidArgument,
                "inner budget needs L >= mu > 0, eps > 0, gap0 > 0");
  }
  const double raw = inner_iteration_budget_raw(L, mu, eps, gap0);
  return static_cast<long>(std::clamp(raw, 1.0, double(kMaxInnerIterations)));
}

namespace detail {

inline double projection_tolerance(double eps_s) {
  return std::clamp(eps_s * 1e-2, 1e-14, 1e-10);
}

}  // namespace detail

/// Accelerated projected gradient on Y_{m_s}(x) with the margin already
/// established by a feasibility probe.
inline LowerSolution solve_lower_at_margin(const BarrierContext& ctx,
                                           const Vector& x, double eps_s,
                                           const std::optional<Vector>& warm,
                                           const MarginProbe& probe,
                                           const LowerOptions& opts = {}) {
  if (!(eps_s > 0)) throw Error(ErrorCode::InvalidArgument, "eps_s must be positive");
  const auto& p = *ctx.prob;
  const auto& c = p.constants;

  LowerSolution sol;
  sol.d_s = probe.d;
  sol.y0 = probe.y0;
  sol.m_s = compute_margin(ctx.t, probe.d, c);
  sol.L_smooth = lipschitz_smooth_bound(ctx.t, sol.m_s, c);
  sol.mu = strong_convexity_bound(ctx);
  const double L = std::max(sol.L_smooth, sol.mu);
  const double mu = sol.mu;

  ShrunkSet set(p, x, sol.m_s);
  set.set_anchor(probe.y0);
  const double ptol = detail::projection_tolerance(eps_s);
  const auto grad = [&](const Vector& y) { return barrier_grad_y(ctx, x, y); };
  const auto prox_step = [&](const Vector& base, const Vector& g) {
    return project_shrunk(set, base - g / L, ptol);
  };

  const bool use_warm = warm && warm->size() == p.m && set.contains(*warm);
  Vector y = use_warm ? *warm : probe.y0;

  double gap0 = 0;
  if (use_warm) {
    // F* >= F(y+) + |G|^2/(2L) - |G|^2/(2mu) with G = L (y - y+).
    const Vector yp = prox_step(y, grad(y));
    const double gsq = L * L * (y - yp).squaredNorm();
    gap0 = barrier_value(ctx, x, y) - barrier_value(ctx, x, yp) + gsq / (2 * mu) -
           gsq / (2 * L);
  } else {
    gap0 = L * 4 * c.R * c.R / 2;
  }
  gap0 = std::max(gap0, std::numeric_limits<double>::min());
  const double raw = inner_iteration_budget_raw(L, mu, eps_s, gap0);
  sol.budget = inner_iteration_budget(L, mu, eps_s, gap0);
  const bool clamped = raw > double(kMaxInnerIterations);

  const double q = std::sqrt(mu / L);
  const double beta = (1 - q) / (1 + q);
  const double ratio = L / mu;

  // (L/mu) |y - P(y - grad(y)/L)| bounds |y - y*| for a mu-strongly convex,
  // L-smooth objective. When the gradient step stays in the set the mapping
  // is the gradient itself; otherwise pad for rounding in y - grad/L.
  const double unit = std::numeric_limits<double>::epsilon();
  const auto certificate = [&](const Vector& v) {
    const Vector g = grad(v);
    const Vector u = v - g / L;
    if (set.contains(u)) return g.norm() / mu;
    const double rounding = 4 * unit * (v.cwiseAbs().maxCoeff() + 1) * std::sqrt(double(v.size()));
    return ratio * ((v - project_shrunk(set, u, ptol)).norm() + rounding);
  };

  Vector y_prev = y;
  if (opts.observer) opts.observer(0, y);
  long j = 0;
  for (; j < sol.budget; ++j) {
    Vector omega = y + beta * (y - y_prev);
    if (j > 0 && !set.contains(omega)) sol.restarts.push_back(j);
    if (j == 0 || !set.contains(omega)) omega = y;
    const Vector g = grad(omega);
    Vector y_next = prox_step(opts.variant == InnerVariant::Standard ? omega : y, g);
    const double step = (y_next - y).norm();
    y_prev = std::move(y);
    y = std::move(y_next);
    if (opts.observer) opts.observer(j + 1, y);
    if (step * (1 + ratio) <= eps_s / 2) {
      const double cert = certificate(y);
      if (cert <= eps_s / 2) {
        sol.early_exit = true;
        sol.residual_bound = cert;
        ++j;
        break;
      }
    }
  }
  sol.inner_iters = j;
  if (!sol.early_exit) {
    if (clamped) {
      throw Error(ErrorCode::BudgetExhausted,
                  "inner iteration budget clamped at 1e6 without certificate");
    }
    // The budget guarantee only covers the accelerated scheme.
    const double cert = certificate(y);
    sol.residual_bound =
        opts.variant == InnerVariant::Standard ? std::min(eps_s, cert) : cert;
  }
  sol.y_tilde = std::move(y);
  return sol;
}

/// Approximately minimizes the barrier objective over y at fixed x.
inline LowerSolution solve_lower(const BarrierContext& ctx, const Vector& x,
                                 double eps_s,
                                 const std::optional<Vector>& warm = std::nullopt,
                                 const LowerOptions& opts = {}) {
  const MarginProbe probe = find_initial_margin(*ctx.prob, x, opts.probe_budget);
  return solve_lower_at_margin(ctx, x, eps_s, warm, probe, opts);
}

}  // namespace bbm
