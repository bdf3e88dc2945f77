#pragma once

#include <algorithm>
#include <cmath>

#include "bbm/error.hpp"
#include "bbm/linalg.hpp"
#include "bbm/problem.hpp"

namespace bbm {

/// Which strong-convexity constant to use for the norm-ball barrier term.
/// Conservative: 2t/R^2, the Hessian lower bound of -t log(R^2 - |y|^2).
/// Unsquared: 2t/R, larger than the bound when R > 1.
enum class BallRate { Conservative, Unsquared };

struct BarrierContext {
  const BilevelProblem* prob = nullptr;
  double t = 0;
  BallRate ball_rate = BallRate::Conservative;

  BarrierContext(const BilevelProblem& p, double t_, BallRate rate = BallRate::Conservative)
      : prob(&p), t(t_), ball_rate(rate) {
    if (!(t > 0) || t > p.constants.T * (1 + 1e-12)) {
      throw Error(ErrorCode::InvalidArgument,
                  "barrier parameter must lie in (0, T]");
    }
  }

  const SmoothnessConstants& constants() const { return prob->constants; }
};

inline constexpr double kBoundaryThreshold = -1e-14;

namespace detail {

inline Vector interior_slacks(const BarrierContext& ctx, const Vector& x,
                              const Vector& y) {
  Vector h = eval_constraints(*ctx.prob, x, y);
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    if (h[i] >= kBoundaryThreshold) {
      throw Error(ErrorCode::BoundaryViolation,
                  "constraint " + std::to_string(i) + " is not strictly negative");
    }
  }
  return h;
}

}  // namespace detail

/// g(x,y) - t * sum log(-h_i(x,y)).
inline double barrier_value(const BarrierContext& ctx, const Vector& x,
                            const Vector& y) {
  const Vector h = detail::interior_slacks(ctx, x, y);
  const double g = ctx.prob->oracles.g(x, y);
  if (!std::isfinite(g)) throw Error(ErrorCode::OracleFailure, "g not finite");
  return g - ctx.t * (-h.array()).log().sum();
}

/// grad_y g + t * sum grad_y h_i / (-h_i).
inline Vector barrier_grad_y(const BarrierContext& ctx, const Vector& x,
                             const Vector& y) {
  const auto& p = *ctx.prob;
  const Vector h = detail::interior_slacks(ctx, x, y);
  Vector grad = p.oracles.grad_g_y(x, y);
  if (p.k > 0) {
    const Matrix J = p.oracles.jac_h_y(x, y);
    grad += J.transpose() * (ctx.t * (-h.array()).inverse()).matrix();
  }
  return grad;
}

/// hess_yy g + t * sum (hess_yy h_i / (-h_i) + grad_y h_i grad_y h_i^T / h_i^2).
inline Matrix barrier_hess_yy(const BarrierContext& ctx, const Vector& x,
                              const Vector& y) {
  const auto& p = *ctx.prob;
  const Vector h = detail::interior_slacks(ctx, x, y);
  Matrix H = p.oracles.hess_g_yy(x, y);
  if (p.k > 0) {
    const Matrix J = p.oracles.jac_h_y(x, y);
    const Vector w = (1.0 / h.array().square()).matrix();
    H += ctx.t * J.transpose() * w.asDiagonal() * J;
    for (int i = 0; i < p.k; ++i) {
      if (p.affine_in_y[i]) continue;
      H += (ctx.t / -h[i]) * p.oracles.hess_h_yy(x, y, i);
    }
  }
  return 0.5 * (H + H.transpose());
}

/// hess_xy g + t * sum (hess_xy h_i / (-h_i) + grad_x h_i grad_y h_i^T / h_i^2),
/// an n x m matrix.
inline Matrix barrier_hess_xy(const BarrierContext& ctx, const Vector& x,
                              const Vector& y) {
  const auto& p = *ctx.prob;
  const Vector h = detail::interior_slacks(ctx, x, y);
  Matrix M = p.oracles.hess_g_xy(x, y);
  if (p.k > 0) {
    const Matrix Jx = p.oracles.jac_h_x(x, y);
    const Matrix Jy = p.oracles.jac_h_y(x, y);
    const Vector w = (1.0 / h.array().square()).matrix();
    M += ctx.t * Jx.transpose() * w.asDiagonal() * Jy;
    for (int i = 0; i < p.k; ++i) {
      M += (ctx.t / -h[i]) * p.oracles.hess_h_xy(x, y, i);
    }
  }
  return M;
}

/// Certified margin: min{ t d^2 / (4 R L_g + 4 R T k L_h), d/2 }.
inline double compute_margin(double t, double d, const SmoothnessConstants& c) {
  const double denom = 4 * c.R * c.L_g + 4 * c.R * c.T * c.k * c.L_h;
  if (!(denom > 0)) return d / 2;
  return std::min(t * d * d / denom, d / 2);
}

/// Gradient Lipschitz constant of the barrier objective on Y_m(x).
inline double lipschitz_smooth_bound(double t, double m,
                                     const SmoothnessConstants& c) {
  return c.Lbar_g + t * c.k * c.Lbar_h / m + t * c.k * c.L_h * c.L_h / (m * m);
}

/// Hessian Lipschitz constant of the barrier objective on Y_m(x).
inline double hessian_lipschitz_bound(double t, double m,
                                      const SmoothnessConstants& c) {
  return c.Lbarbar_g +
         t * c.k *
             (c.Lbarbar_h / m + c.Lbar_h * c.L_h / (m * m) +
              2 * c.L_h * c.L_h * c.L_h / (m * m * m) +
              2 * c.L_h * c.Lbar_h / (m * m));
}

/// Strong convexity modulus of the barrier objective in y.
inline double strong_convexity_bound(Setting setting, double t,
                                     const SmoothnessConstants& c,
                                     bool ball_augmented = false,
                                     BallRate rate = BallRate::Conservative) {
  if (setting == Setting::StronglyConvex) {
    if (!(c.mu_g > 0)) throw Error(ErrorCode::MissingConstant, "mu_g unset");
    return c.mu_g;
  }
  double mu = 0;
  if (c.sigma > 0 && c.H > 0) mu = t * c.sigma / (c.H * c.H);
  if (ball_augmented) {
    const double ball = rate == BallRate::Conservative ? 2 * t / (c.R * c.R)
                                                       : 2 * t / c.R;
    mu = std::max(mu, ball);
  }
  if (!(mu > 0)) {
    throw Error(ErrorCode::MissingConstant,
                "linear lower level needs sigma and H or norm-ball augmentation");
  }
  return mu;
}

inline double strong_convexity_bound(const BarrierContext& ctx) {
  return strong_convexity_bound(ctx.prob->setting, ctx.t, ctx.constants(),
                                ctx.prob->ball_augmented, ctx.ball_rate);
}

}  // namespace bbm
