#pragma once

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "bbm/error.hpp"
#include "bbm/linalg.hpp"

namespace bbm {

struct Box {
  Vector lower;
  Vector upper;
};

struct Ball {
  Vector center;
  double radius = 1.0;
};

/// Convex compact upper-level feasible set with a closed-form projection.
class UpperSet {
 public:
  UpperSet() = default;

  static UpperSet box(Vector lower, Vector upper) {
    if (lower.size() != upper.size()) {
      throw Error(ErrorCode::DimensionMismatch, "box bounds differ in size");
    }
    if ((lower.array() > upper.array()).any()) {
      throw Error(ErrorCode::InvalidArgument, "box lower bound exceeds upper");
    }
    UpperSet s;
    s.kind_ = Box{std::move(lower), std::move(upper)};
    return s;
  }

  static UpperSet ball(Vector center, double radius) {
    if (!(radius > 0)) {
      throw Error(ErrorCode::InvalidArgument, "ball radius must be positive");
    }
    UpperSet s;
    s.kind_ = Ball{std::move(center), radius};
    return s;
  }

  bool is_box() const { return std::holds_alternative<Box>(kind_); }
  const Box& as_box() const { return std::get<Box>(kind_); }
  const Ball& as_ball() const { return std::get<Ball>(kind_); }

  Eigen::Index dim() const {
    return is_box() ? as_box().lower.size() : as_ball().center.size();
  }

  bool contains(const Vector& x, double tol = 1e-12) const {
    if (x.size() != dim()) return false;
    if (is_box()) {
      const auto& b = as_box();
      return ((x - b.lower).array() >= -tol).all() &&
             ((b.upper - x).array() >= -tol).all();
    }
    const auto& b = as_ball();
    return (x - b.center).norm() <= b.radius + tol;
  }

  /// Bounding box of the set.
  Box hull() const {
    if (is_box()) return as_box();
    const auto& b = as_ball();
    return Box{b.center.array() - b.radius, b.center.array() + b.radius};
  }

  Vector center() const {
    if (is_box()) return 0.5 * (as_box().lower + as_box().upper);
    return as_ball().center;
  }

 private:
  std::variant<Box, Ball> kind_ = Box{};
};

/// Euclidean projection onto the upper set.
inline Vector project_upper(const UpperSet& set, const Vector& x) {
  if (x.size() != set.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "point and set dimensions differ");
  }
  if (set.is_box()) {
    const auto& b = set.as_box();
    return x.cwiseMax(b.lower).cwiseMin(b.upper);
  }
  const auto& b = set.as_ball();
  const Vector d = x - b.center;
  const double r = d.norm();
  if (r <= b.radius) return x;
  return b.center + (b.radius / r) * d;
}

/// Displacement P(x - step) - x, computed from distances to the boundary so
/// steps far below the scale of x are neither lost to rounding nor allowed
/// to leave the set.
inline Vector projected_displacement(const UpperSet& set, const Vector& x,
                                     const Vector& step) {
  if (x.size() != set.dim() || step.size() != set.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "point and set dimensions differ");
  }
  if (set.is_box()) {
    const auto& b = set.as_box();
    Vector delta(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (step[i] > 0 && x[i] - b.lower[i] <= step[i]) {
        delta[i] = b.lower[i] - x[i];
      } else if (step[i] < 0 && b.upper[i] - x[i] <= -step[i]) {
        delta[i] = b.upper[i] - x[i];
      } else {
        delta[i] = -step[i];
      }
    }
    return delta;
  }
  const auto& b = set.as_ball();
  const Vector off = x - b.center;
  // |off - step|^2 <= r^2, rearranged to compare small quantities.
  const double lhs = step.squaredNorm() - 2 * step.dot(off);
  const double rhs = b.radius * b.radius - off.squaredNorm();
  if (lhs <= rhs) return -step;
  return project_upper(set, x - step) - x;
}

enum class Setting { StronglyConvex, LinearLP };

constexpr std::string_view to_string(Setting s) {
  return s == Setting::StronglyConvex ? "StronglyConvex" : "LinearLP";
}

/// Registry of Lipschitz, smoothness and curvature constants.
struct SmoothnessConstants {
  double L_f = 0, Lbar_f = 0;
  double L_g = 0, Lbar_g = 0, Lbarbar_g = 0;
  double L_h = 0, Lbar_h = 0, Lbarbar_h = 0;
  double mu_g = 0;
  double R = 1;
  int k = 0;
  double T = 1;
  double sigma = 0;
  double H = 0;
};

/// Derivative oracles. Conventions: x has n entries, y has m, there are k
/// constraints. Mixed Hessians are n x m with entry (i, j) = d2/dx_i dy_j.
struct Oracles {
  using Scalar2 = std::function<double(const Vector&, const Vector&)>;
  using Vector2 = std::function<Vector(const Vector&, const Vector&)>;
  using Matrix2 = std::function<Matrix(const Vector&, const Vector&)>;
  using IndexedMatrix =
      std::function<Matrix(const Vector&, const Vector&, int)>;

  Scalar2 f;
  Vector2 grad_f_x, grad_f_y;
  Scalar2 g;
  Vector2 grad_g_x, grad_g_y;
  Matrix2 hess_g_yy, hess_g_xy;
  Vector2 h;                  // k values
  Matrix2 jac_h_x, jac_h_y;   // k x n, k x m
  IndexedMatrix hess_h_yy;    // m x m for constraint i
  IndexedMatrix hess_h_xy;    // n x m for constraint i
};

struct BilevelProblem {
  std::string name;
  int n = 0;
  int m = 0;
  int k = 0;
  UpperSet upper_set;
  Setting setting = Setting::StronglyConvex;
  SmoothnessConstants constants;
  Oracles oracles;
  /// Box containing every lower-level point of interest; used for probe
  /// starts and sampling.
  Box y_hull;
  /// Constraint i is affine in y for every fixed x.
  std::vector<bool> affine_in_y;
  /// True after the norm-ball constraint has been appended.
  bool ball_augmented = false;
};

inline void validate(const BilevelProblem& p) {
  const auto fail = [&](const std::string& msg) {
    throw Error(ErrorCode::InvalidArgument, p.name + ": " + msg);
  };
  if (p.n <= 0 || p.m <= 0 || p.k < 0) fail("bad dimensions");
  if (p.upper_set.dim() != p.n) fail("upper set dimension differs from n");
  if (p.constants.k != p.k) fail("constants.k differs from constraint count");
  if (static_cast<int>(p.affine_in_y.size()) != p.k) fail("affine flags size");
  if (p.y_hull.lower.size() != p.m || p.y_hull.upper.size() != p.m) {
    fail("y hull dimension differs from m");
  }
  if (!(p.constants.R > 0) || !(p.constants.T > 0)) fail("R and T must be positive");
  if (p.setting == Setting::StronglyConvex && !(p.constants.mu_g > 0)) {
    fail("strongly convex setting requires mu_g > 0");
  }
  const auto& o = p.oracles;
  if (!o.f || !o.grad_f_x || !o.grad_f_y || !o.g || !o.grad_g_x ||
      !o.grad_g_y || !o.hess_g_yy || !o.hess_g_xy) {
    fail("missing objective oracle");
  }
  if (p.k > 0 &&
      (!o.h || !o.jac_h_x || !o.jac_h_y || !o.hess_h_yy || !o.hess_h_xy)) {
    fail("missing constraint oracle");
  }
}

namespace detail {

inline void require_dims(const BilevelProblem& p, const Vector& x,
                         const Vector& y) {
  if (x.size() != p.n || y.size() != p.m) {
    throw Error(ErrorCode::DimensionMismatch,
                p.name + ": expected x in R^" + std::to_string(p.n) +
                    " and y in R^" + std::to_string(p.m));
  }
}

}  // namespace detail

/// Returns (h_1(x,y), ..., h_k(x,y)).
inline Vector eval_constraints(const BilevelProblem& p, const Vector& x,
                               const Vector& y) {
  detail::require_dims(p, x, y);
  if (p.k == 0) return Vector(0);
  Vector h = p.oracles.h(x, y);
  if (h.size() != p.k || !h.allFinite()) {
    throw Error(ErrorCode::OracleFailure, p.name + ": constraint oracle");
  }
  return h;
}

inline double max_constraint(const BilevelProblem& p, const Vector& x,
                             const Vector& y) {
  if (p.k == 0) return -std::numeric_limits<double>::infinity();
  return eval_constraints(p, x, y).maxCoeff();
}

/// Appends h_{k+1}(x, y) = |y|^2 - R^2 and updates the constants it touches.
inline BilevelProblem augment_with_norm_ball(BilevelProblem p) {
  if (p.ball_augmented) return p;
  const double R = p.constants.R;
  const int k0 = p.k;
  const int n = p.n;
  const int m = p.m;
  auto base = p.oracles;
  auto& o = p.oracles;

  o.h = [base, k0, R](const Vector& x, const Vector& y) {
    Vector out(k0 + 1);
    if (k0 > 0) out.head(k0) = base.h(x, y);
    out[k0] = y.squaredNorm() - R * R;
    return out;
  };
  o.jac_h_x = [base, k0, n](const Vector& x, const Vector& y) {
    Matrix out = Matrix::Zero(k0 + 1, n);
    if (k0 > 0) out.topRows(k0) = base.jac_h_x(x, y);
    return out;
  };
  o.jac_h_y = [base, k0, m](const Vector& x, const Vector& y) {
    Matrix out(k0 + 1, m);
    if (k0 > 0) out.topRows(k0) = base.jac_h_y(x, y);
    out.row(k0) = 2.0 * y.transpose();
    return out;
  };
  o.hess_h_yy = [base, k0, m](const Vector& x, const Vector& y, int i) {
    if (i < k0) return base.hess_h_yy(x, y, i);
    return Matrix(2.0 * Matrix::Identity(m, m));
  };
  o.hess_h_xy = [base, k0, n, m](const Vector& x, const Vector& y, int i) {
    if (i < k0) return base.hess_h_xy(x, y, i);
    return Matrix(Matrix::Zero(n, m));
  };

  p.k = k0 + 1;
  p.constants.k = p.k;
  p.constants.L_h = std::max(p.constants.L_h, 2 * R);
  p.constants.Lbar_h = std::max(p.constants.Lbar_h, 2.0);
  if (p.constants.H > 0) p.constants.H = std::max(p.constants.H, R * R);
  p.affine_in_y.push_back(false);
  p.ball_augmented = true;
  p.name += "+ball";
  return p;
}

struct ConsistencyEntry {
  std::string name;
  double max_rel_error = 0;
  double threshold = 0;
  bool flagged = false;
};

struct ConsistencyReport {
  std::vector<ConsistencyEntry> entries;
  int samples = 0;

  bool ok() const {
    return std::none_of(entries.begin(), entries.end(),
                        [](const auto& e) { return e.flagged; });
  }
  std::vector<std::string> flagged_names() const {
    std::vector<std::string> out;
    for (const auto& e : entries) {
      if (e.flagged) out.push_back(e.name);
    }
    return out;
  }
};

/// Draws (x, y) uniformly from the hull boxes until x lies in X and every
/// constraint satisfies h_i <= -margin.
inline std::vector<std::pair<Vector, Vector>> sample_interior(
    const BilevelProblem& p, int samples, double margin, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Box xb = p.upper_set.hull();
  const auto draw = [&](const Box& b) {
    Vector v(b.lower.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      v[i] = b.lower[i] + unit(rng) * (b.upper[i] - b.lower[i]);
    }
    return v;
  };
  std::vector<std::pair<Vector, Vector>> out;
  const long max_attempts = 2000L * std::max(samples, 1);
  for (long a = 0; a < max_attempts && static_cast<int>(out.size()) < samples;
       ++a) {
    Vector x = draw(xb);
    if (!p.upper_set.contains(x)) continue;
    Vector y = draw(p.y_hull);
    if (max_constraint(p, x, y) <= -margin) out.emplace_back(std::move(x), std::move(y));
  }
  if (static_cast<int>(out.size()) < samples) {
    throw Error(ErrorCode::NoInteriorPoint,
                p.name + ": could not sample interior points");
  }
  return out;
}

namespace detail {

struct ErrorAccumulator {
  ConsistencyEntry entry;
  explicit ErrorAccumulator(std::string name, double threshold) {
    entry.name = std::move(name);
    entry.threshold = threshold;
  }
  void add(const Matrix& analytic, const Matrix& fd) {
    if (analytic.rows() != fd.rows() || analytic.cols() != fd.cols()) {
      throw Error(ErrorCode::DimensionMismatch,
                  entry.name + ": oracle output has wrong shape");
    }
    if (!analytic.allFinite()) {
      throw Error(ErrorCode::OracleFailure, entry.name + " returned non-finite");
    }
    if (analytic.size() == 0) return;
    const double scale = std::max({1.0, fd.cwiseAbs().maxCoeff(),
                                   analytic.cwiseAbs().maxCoeff()});
    const double err = (analytic - fd).cwiseAbs().maxCoeff() / scale;
    entry.max_rel_error = std::max(entry.max_rel_error, err);
    entry.flagged = entry.max_rel_error > entry.threshold;
  }
};

/// Central differences of a vector-valued map; column j is d/dv_j.
template <class F>
Matrix central_jacobian(F&& fn, const Vector& v, double step) {
  Matrix J;
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    Vector vp = v, vm = v;
    vp[j] += step;
    vm[j] -= step;
    Vector d = (fn(vp) - fn(vm)) / (2 * step);
    if (j == 0) J.resize(d.size(), v.size());
    J.col(j) = d;
  }
  return J;
}

}  // namespace detail

/// Compares every analytic derivative oracle with central finite differences
/// at interior sample points. Entries whose relative error exceeds
/// 100 * step^2 are flagged.
inline ConsistencyReport check_derivative_consistency(const BilevelProblem& p,
                                                      int samples, double step,
                                                      std::uint64_t seed) {
  if (!(step > 0 && step <= 1e-2)) {
    throw Error(ErrorCode::InvalidArgument, "step must lie in (0, 1e-2]");
  }
  const auto pts = sample_interior(p, samples, 0.1, seed);
  const double thr = 100 * step * step;
  const auto& o = p.oracles;
  using detail::ErrorAccumulator;
  ErrorAccumulator gfx("grad_f_x", thr), gfy("grad_f_y", thr),
      ggx("grad_g_x", thr), ggy("grad_g_y", thr), hgyy("hess_g_yy", thr),
      hgxy("hess_g_xy", thr), jhx("jac_h_x", thr), jhy("jac_h_y", thr),
      hhyy("hess_h_yy", thr), hhxy("hess_h_xy", thr);

  const auto scalar_as_vec = [](double v) {
    Vector out(1);
    out[0] = v;
    return out;
  };
  for (const auto& [x, y] : pts) {
    const auto in_x = [&](auto&& fn) {
      return detail::central_jacobian([&](const Vector& xv) { return fn(xv, y); },
                                      x, step);
    };
    const auto in_y = [&](auto&& fn) {
      return detail::central_jacobian([&](const Vector& yv) { return fn(x, yv); },
                                      y, step);
    };
    const auto f_vec = [&](const Vector& a, const Vector& b) {
      return scalar_as_vec(o.f(a, b));
    };
    const auto g_vec = [&](const Vector& a, const Vector& b) {
      return scalar_as_vec(o.g(a, b));
    };
    gfx.add(o.grad_f_x(x, y), in_x(f_vec).transpose());
    gfy.add(o.grad_f_y(x, y), in_y(f_vec).transpose());
    ggx.add(o.grad_g_x(x, y), in_x(g_vec).transpose());
    ggy.add(o.grad_g_y(x, y), in_y(g_vec).transpose());
    // Jacobian of grad_y g in y is the yy Hessian; in x it is (xy Hessian)^T.
    hgyy.add(o.hess_g_yy(x, y), in_y(o.grad_g_y));
    hgxy.add(o.hess_g_xy(x, y), in_x(o.grad_g_y).transpose());
    if (p.k > 0) {
      jhx.add(o.jac_h_x(x, y), in_x(o.h));
      jhy.add(o.jac_h_y(x, y), in_y(o.h));
      for (int i = 0; i < p.k; ++i) {
        const auto row_i = [&](const Vector& a, const Vector& b) {
          return Vector(o.jac_h_y(a, b).row(i).transpose());
        };
        hhyy.add(o.hess_h_yy(x, y, i), in_y(row_i));
        hhxy.add(o.hess_h_xy(x, y, i), in_x(row_i).transpose());
      }
    }
  }
  ConsistencyReport rep;
  rep.samples = samples;
  for (auto* acc : {&gfx, &gfy, &ggx, &ggy, &hgyy, &hgxy, &jhx, &jhy, &hhyy, &hhxy}) {
    rep.entries.push_back(acc->entry);
  }
  return rep;
}

struct ConstantCheck {
  std::string name;
  double observed = 0;
  double registered = 0;
  bool ok() const { return observed <= registered * (1 + 1e-9) + 1e-12; }
};

/// Largest sampled value of each first- and second-order quantity the
/// registry bounds, for comparison with the registered constants.
inline std::vector<ConstantCheck> check_constants(const BilevelProblem& p,
                                                  int samples,
                                                  std::uint64_t seed) {
  const auto pts = sample_interior(p, samples, 0.0, seed);
  const auto& o = p.oracles;
  const auto& c = p.constants;
  ConstantCheck Lf{"L_f", 0, c.L_f}, Lg{"L_g", 0, c.L_g},
      Lbg{"Lbar_g", 0, c.Lbar_g}, Lh{"L_h", 0, c.L_h}, Lbh{"Lbar_h", 0, c.Lbar_h};
  const auto op_norm = [](const Matrix& A) {
    if (A.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(A);
    return svd.singularValues()(0);
  };
  for (const auto& [x, y] : pts) {
    Lf.observed = std::max(
        Lf.observed,
        std::sqrt(o.grad_f_x(x, y).squaredNorm() + o.grad_f_y(x, y).squaredNorm()));
    Lg.observed = std::max(
        Lg.observed,
        std::sqrt(o.grad_g_x(x, y).squaredNorm() + o.grad_g_y(x, y).squaredNorm()));
    Lbg.observed = std::max({Lbg.observed, op_norm(o.hess_g_yy(x, y)),
                             op_norm(o.hess_g_xy(x, y))});
    if (p.k > 0) {
      const Matrix jx = o.jac_h_x(x, y);
      const Matrix jy = o.jac_h_y(x, y);
      for (int i = 0; i < p.k; ++i) {
        Lh.observed = std::max(
            Lh.observed, std::sqrt(jx.row(i).squaredNorm() + jy.row(i).squaredNorm()));
        Lbh.observed = std::max({Lbh.observed, op_norm(o.hess_h_yy(x, y, i)),
                                 op_norm(o.hess_h_xy(x, y, i))});
      }
    }
  }
  return {Lf, Lg, Lbg, Lh, Lbh};
}

}  // namespace bbm
