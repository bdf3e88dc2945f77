#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "bbm/error.hpp"
#include "bbm/linalg.hpp"
#include "bbm/problem.hpp"

namespace bbm {

inline constexpr double kMembershipTol = 1e-12;

/// Y_margin(x) = { y : h_i(x, y) <= -margin for all i }.
///
/// Constraints flagged affine in y are cached as halfspaces a_i^T y <= b_i
/// (with the margin folded into b_i) so membership and projection avoid
/// oracle calls for them.
class ShrunkSet {
 public:
  ShrunkSet(const BilevelProblem& p, Vector x, double margin)
      : prob_(&p), x_(std::move(x)), margin_(margin) {
    if (!(margin >= 0)) {
      throw Error(ErrorCode::InvalidArgument, "margin must be nonnegative");
    }
    if (x_.size() != p.n) {
      throw Error(ErrorCode::DimensionMismatch, "x has wrong dimension");
    }
    for (int i = 0; i < p.k; ++i) {
      (p.affine_in_y[i] ? affine_idx_ : nonaffine_idx_).push_back(i);
    }
    if (!affine_idx_.empty()) {
      const Vector y_ref = 0.5 * (p.y_hull.lower + p.y_hull.upper);
      const Vector h = eval_constraints(p, x_, y_ref);
      const Matrix J = p.oracles.jac_h_y(x_, y_ref);
      const auto na = static_cast<Eigen::Index>(affine_idx_.size());
      A_.resize(na, p.m);
      b_.resize(na);
      for (Eigen::Index r = 0; r < na; ++r) {
        const int i = affine_idx_[r];
        A_.row(r) = J.row(i);
        b_[r] = J.row(i).dot(y_ref) - h[i] - margin_;
      }
      row_sq_ = A_.rowwise().squaredNorm();
    }
  }

  const BilevelProblem& problem() const { return *prob_; }
  const Vector& x() const { return x_; }
  double margin() const { return margin_; }
  bool all_affine() const { return nonaffine_idx_.empty(); }

  const std::optional<Vector>& anchor() const { return anchor_; }
  /// A point known to lie in the set; used to restore strict membership.
  void set_anchor(Vector y) { anchor_ = std::move(y); }

  /// max_i (h_i(x, y) + margin).
  double violation(const Vector& y) const {
    double v = -std::numeric_limits<double>::infinity();
    if (A_.rows() > 0) v = (A_ * y - b_).maxCoeff();
    if (!nonaffine_idx_.empty()) {
      const Vector h = eval_constraints(*prob_, x_, y);
      for (int i : nonaffine_idx_) v = std::max(v, h[i] + margin_);
    }
    return v;
  }

  bool contains(const Vector& y, double tol = kMembershipTol) const {
    return violation(y) <= tol;
  }

  const Matrix& halfspace_normals() const { return A_; }
  const Vector& halfspace_offsets() const { return b_; }
  const Vector& halfspace_sq_norms() const { return row_sq_; }
  const std::vector<int>& nonaffine_indices() const { return nonaffine_idx_; }

 private:
  const BilevelProblem* prob_;
  Vector x_;
  double margin_;
  std::vector<int> affine_idx_, nonaffine_idx_;
  Matrix A_;
  Vector b_;
  Vector row_sq_;
  std::optional<Vector> anchor_;
};

/// Searches for a point of the set, starting from the centre of the y hull.
/// Affine constraints use cyclic halfspace projections; otherwise a Polyak
/// subgradient step is taken on the most violated constraint. Each unit of
/// budget is one sweep or step.
inline std::optional<Vector> feasibility_probe(const ShrunkSet& set, int budget) {
  if (budget < 1) throw Error(ErrorCode::InvalidArgument, "budget must be >= 1");
  const auto& p = set.problem();
  Vector y = 0.5 * (p.y_hull.lower + p.y_hull.upper);
  if (p.k == 0) return y;
  const Matrix& A = set.halfspace_normals();
  const Vector& b = set.halfspace_offsets();
  const Vector& sq = set.halfspace_sq_norms();
  const double overshoot = 1e-9 * (1 + set.margin());

  for (int it = 0; it < budget; ++it) {
    if (set.contains(y)) return y;
    if (set.all_affine()) {
      for (Eigen::Index r = 0; r < A.rows(); ++r) {
        const double v = A.row(r).dot(y) - b[r];
        if (v > 0 && sq[r] > 0) y -= (v / sq[r]) * A.row(r).transpose();
      }
    } else {
      const Vector h = eval_constraints(p, set.x(), y);
      int worst = 0;
      for (int i = 1; i < p.k; ++i) {
        if (h[i] > h[worst]) worst = i;
      }
      const Vector grad = p.oracles.jac_h_y(set.x(), y).row(worst).transpose();
      const double gsq = grad.squaredNorm();
      if (!(gsq > 0)) return std::nullopt;
      const double shift = p.affine_in_y[worst] ? 0.0 : overshoot;
      y -= ((h[worst] + set.margin() + shift) / gsq) * grad;
    }
    if (!y.allFinite()) throw Error(ErrorCode::OracleFailure, "probe diverged");
  }
  if (set.contains(y)) return y;
  return std::nullopt;
}

struct MarginProbe {
  double d = 0;
  Vector y0;
};

/// First d in 1, 1/2, 1/4, ... for which Y_d(x) is found nonempty.
inline MarginProbe find_initial_margin(const BilevelProblem& p, const Vector& x,
                                       int budget = 1000) {
  for (double d = 1.0; d >= 1e-12; d *= 0.5) {
    ShrunkSet set(p, x, d);
    if (auto y0 = feasibility_probe(set, budget)) return {d, std::move(*y0)};
  }
  throw Error(ErrorCode::SlaterViolation,
              p.name + ": no strictly feasible lower-level point found");
}

namespace detail {

inline int projection_cap(const ShrunkSet& set, double tol) {
  const double k = std::max(1, set.problem().k);
  const double dim = set.problem().m;
  return static_cast<int>(
      std::ceil(10 * k * dim * std::log(1 / std::min(tol, 0.5))));
}

/// Dykstra's alternating projections onto the cached halfspaces.
inline Vector dykstra(const ShrunkSet& set, const Vector& y, double tol,
                      int cap, bool& converged) {
  const Matrix& A = set.halfspace_normals();
  const Vector& b = set.halfspace_offsets();
  const Vector& sq = set.halfspace_sq_norms();
  const Eigen::Index nh = A.rows();
  Vector z = y;
  Matrix incr = Matrix::Zero(y.size(), nh);
  converged = false;
  for (int sweep = 0; sweep < cap; ++sweep) {
    double moved = 0;
    for (Eigen::Index r = 0; r < nh; ++r) {
      const Vector u = z + incr.col(r);
      const double v = A.row(r).dot(u) - b[r];
      Vector znew = u;
      if (v > 0 && sq[r] > 0) znew -= (v / sq[r]) * A.row(r).transpose();
      incr.col(r) = u - znew;
      moved = std::max(moved, (znew - z).norm());
      z = std::move(znew);
    }
    if (moved < tol / 10) {
      converged = true;
      break;
    }
  }
  return z;
}

/// Largest step from the anchor toward z that stays in the set.
inline Vector pull_toward_anchor(const ShrunkSet& set, const Vector& z) {
  const Vector& a = *set.anchor();
  if (set.contains(z, 0.0)) return z;
  double lo = 0, hi = 1;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (set.contains(a + mid * (z - a), 0.0)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return a + lo * (z - a);
}

/// Quadratic-penalty projection for sets with curved constraints, followed
/// by a Newton polish on the KKT system of the constraints the penalty
/// solution violates.
inline Vector penalty_projection(const ShrunkSet& set, const Vector& y,
                                 double tol, int cap, bool& converged) {
  const auto& p = set.problem();
  const Vector& x = set.x();
  const double margin = set.margin();
  const int m = p.m;
  Vector z = y;
  int iters = 0;
  converged = false;

  Vector plus;
  double rho = 1e4;
  for (int round = 0; round < 5; ++round, rho *= 10) {
    const auto objective = [&](const Vector& v) {
      const Vector h = eval_constraints(p, x, v);
      return 0.5 * (v - y).squaredNorm() +
             0.5 * rho * (h.array() + margin).max(0.0).square().sum();
    };
    for (int it = 0; it < 100 && iters < cap; ++it, ++iters) {
      const Vector h = eval_constraints(p, x, z);
      plus = (h.array() + margin).max(0.0).matrix();
      const Matrix J = p.oracles.jac_h_y(x, z);
      Vector grad = z - y + rho * J.transpose() * plus;
      if (grad.norm() <= 1e-15 * (1 + z.norm())) break;
      Matrix Hs = Matrix::Identity(m, m);
      for (int i = 0; i < p.k; ++i) {
        if (plus[i] <= 0) continue;
        Hs += rho * J.row(i).transpose() * J.row(i);
        if (!p.affine_in_y[i]) Hs += rho * plus[i] * p.oracles.hess_h_yy(x, z, i);
      }
      const Vector dir = -solve_spd(0.5 * (Hs + Hs.transpose()), grad);
      const double f0 = objective(z);
      double step = 1;
      Vector trial = z + dir;
      while (objective(trial) > f0 + 1e-4 * step * grad.dot(dir) && step > 1e-12) {
        step *= 0.5;
        trial = z + step * dir;
      }
      const double moved = (trial - z).norm();
      z = std::move(trial);
      if (moved < tol / 10) break;
    }
  }

  // Newton polish on the KKT system of the violated constraints.
  const Vector h_pen = eval_constraints(p, x, z);
  std::vector<int> act;
  for (int i = 0; i < p.k; ++i) {
    if (h_pen[i] + margin > 0) act.push_back(i);
  }
  const auto na = static_cast<int>(act.size());
  if (na > 0 && na <= m) {
    Vector w = z;
    Vector nu(na);
    for (int r = 0; r < na; ++r) nu[r] = rho / 10 * (h_pen[act[r]] + margin);
    bool ok = false;
    for (int it = 0; it < 30 && iters < cap; ++it, ++iters) {
      const Vector h = eval_constraints(p, x, w);
      const Matrix J = p.oracles.jac_h_y(x, w);
      Matrix K = Matrix::Zero(m + na, m + na);
      Vector rhs(m + na);
      Vector stat = w - y;
      K.topLeftCorner(m, m).setIdentity();
      for (int r = 0; r < na; ++r) {
        const int i = act[r];
        stat += nu[r] * J.row(i).transpose();
        if (!p.affine_in_y[i]) {
          K.topLeftCorner(m, m) += nu[r] * p.oracles.hess_h_yy(x, w, i);
        }
        K.block(0, m + r, m, 1) = J.row(i).transpose();
        K.block(m + r, 0, 1, m) = J.row(i);
        rhs[m + r] = -(h[i] + margin);
      }
      rhs.head(m) = -stat;
      if (rhs.norm() <= 1e-14 * (1 + w.norm())) {
        ok = true;
        break;
      }
      const Vector delta = K.fullPivLu().solve(rhs);
      if (!delta.allFinite()) break;
      w += delta.head(m);
      nu += delta.tail(na);
    }
    if (ok && (nu.array() >= 0).all() && set.contains(w)) {
      converged = true;
      return w;
    }
  }
  converged = iters < cap;
  return z;
}

}  // namespace detail

/// Euclidean projection of y onto the set, to accuracy tol.
inline Vector project_shrunk(const ShrunkSet& set, const Vector& y, double tol) {
  if (!(tol > 0)) throw Error(ErrorCode::InvalidArgument, "tol must be positive");
  if (set.contains(y)) return y;
  const int cap = detail::projection_cap(set, tol);
  bool converged = false;
  Vector z = y;
  if (set.halfspace_normals().rows() > 0) {
    z = detail::dykstra(set, y, tol, cap, converged);
    // Projection onto the affine superset that lands in the set is exact.
    if (set.all_affine() || set.contains(z)) {
      if (!set.contains(z, 1e-9 - 1e-12)) {
        if (!set.anchor()) {
          throw Error(converged ? ErrorCode::EmptySet : ErrorCode::Stalled,
                      "halfspace projection did not reach the set");
        }
        z = detail::pull_toward_anchor(set, z);
      }
      if (!converged && !set.anchor()) {
        throw Error(ErrorCode::Stalled, "Dykstra iteration cap reached");
      }
      return z;
    }
  }
  z = detail::penalty_projection(set, y, tol, cap, converged);
  if (!set.contains(z)) {
    if (!set.anchor()) {
      throw Error(ErrorCode::Stalled, "penalty projection left the set");
    }
    z = detail::pull_toward_anchor(set, z);
  }
  if (!converged && !set.anchor()) {
    throw Error(ErrorCode::Stalled, "projection iteration cap reached");
  }
  return z;
}

}  // namespace bbm
