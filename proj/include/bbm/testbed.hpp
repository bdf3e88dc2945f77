#pragma once

#include <Eigen/LU>
#include <Eigen/SVD>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "bbm/barrier.hpp"
#include "bbm/error.hpp"
#include "bbm/linalg.hpp"
#include "bbm/problem.hpp"
#include "bbm/projection.hpp"

namespace bbm {

// ---------------------------------------------------------------------------
// Problem instances
// ---------------------------------------------------------------------------

struct ExampleOneOptions {
  double x_lower = -1;
  double x_upper = 1;
  /// Radius of the region {|y| <= R} the registered constants cover. The
  /// lower-level feasible set is unbounded in y_2.
  double R = 2;
  double T = 0.5;
  bool augment_ball = false;
};

/// f = y1, g = x y1 + y2, constraints y2 >= 0, -1 <= y1 <= 1.
inline BilevelProblem example1_problem(const ExampleOneOptions& o = {}) {
  BilevelProblem p;
  p.name = "example1";
  p.n = 1;
  p.m = 2;
  p.k = 3;
  p.upper_set = UpperSet::box(Vector::Constant(1, o.x_lower),
                              Vector::Constant(1, o.x_upper));
  p.setting = Setting::LinearLP;
  const double xmax = std::max(std::abs(o.x_lower), std::abs(o.x_upper));

  auto& c = p.constants;
  c.L_f = 1;
  c.Lbar_f = 0;
  c.L_g = std::sqrt(2 + xmax * xmax);
  c.Lbar_g = 1;
  c.L_h = 1;
  c.R = o.R;
  c.k = 3;
  c.T = o.T;
  c.sigma = 1;  // A^T A = diag(2, 1)
  c.H = o.R;    // -h_1 = y2 <= R on the covered region; the others are <= 2
  c.H = std::max(c.H, 2.0);

  auto& f = p.oracles;
  f.f = [](const Vector&, const Vector& y) { return y[0]; };
  f.grad_f_x = [](const Vector&, const Vector&) { return Vector(Vector::Zero(1)); };
  f.grad_f_y = [](const Vector&, const Vector&) { return Vector(Vector::Unit(2, 0)); };
  f.g = [](const Vector& x, const Vector& y) { return x[0] * y[0] + y[1]; };
  f.grad_g_x = [](const Vector&, const Vector& y) { return Vector(Vector::Constant(1, y[0])); };
  f.grad_g_y = [](const Vector& x, const Vector&) {
    Vector v(2);
    v << x[0], 1;
    return v;
  };
  f.hess_g_yy = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(2, 2)); };
  f.hess_g_xy = [](const Vector&, const Vector&) {
    Matrix M(1, 2);
    M << 1, 0;
    return M;
  };
  f.h = [](const Vector&, const Vector& y) {
    Vector v(3);
    v << -y[1], -y[0] - 1, y[0] - 1;
    return v;
  };
  f.jac_h_x = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(3, 1)); };
  f.jac_h_y = [](const Vector&, const Vector&) {
    Matrix J(3, 2);
    J << 0, -1, -1, 0, 1, 0;
    return J;
  };
  f.hess_h_yy = [](const Vector&, const Vector&, int) { return Matrix(Matrix::Zero(2, 2)); };
  f.hess_h_xy = [](const Vector&, const Vector&, int) { return Matrix(Matrix::Zero(1, 2)); };

  p.y_hull = Box{Vector::Constant(2, -1), Vector::Constant(2, 1)};
  p.y_hull.lower[1] = 0;
  p.y_hull.upper[1] = 2;
  p.affine_in_y = {true, true, true};
  validate(p);
  return o.augment_ball ? augment_with_norm_ball(std::move(p)) : p;
}

struct ExampleOneClosedForm {
  double y1 = 0;
  double y2 = 0;
  double phi_tilde = 0;
};

/// Barrier minimizer of the first example: y1 = (t - sqrt(t^2 + x^2)) / x
/// (0 at x = 0), y2 = t.
inline ExampleOneClosedForm example1_closed_form(double t, double x) {
  ExampleOneClosedForm r;
  // Rationalized form avoids cancellation for small |x|.
  r.y1 = x == 0 ? 0.0 : -x / (t + std::sqrt(t * t + x * x));
  r.y2 = t;
  r.phi_tilde = r.y1;
  return r;
}

struct PriceSettingDims {
  int n_tax = 1;     // taxed activities (leader variables)
  int n_free = 1;    // untaxed activities
  int n_demand = 1;  // demand rows
};

/// Leader sets taxes T on n_tax activities; the follower buys activities u
/// (taxed) and v (untaxed) at minimum cost subject to demand rows whose
/// coefficients depend affinely on T, and box bounds 0 <= u, v <= U.
inline BilevelProblem price_setting_problem(const PriceSettingDims& dims = {},
                                            std::uint64_t seed = 7) {
  const int nt = dims.n_tax, nf = dims.n_free, nd = dims.n_demand;
  if (nt < 1 || nf < 0 || nd < 1 || nt + nf > 6 || nd + 2 * (nt + nf) > 14) {
    throw Error(ErrorCode::InvalidArgument, "price setting dimensions too large");
  }
  const int m = nt + nf;
  const int k = nd + 2 * m;
  const double U = 2.0;
  const double Tmax = 1.0;

  std::mt19937_64 rng(seed);
  const auto uni = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  Matrix a1(nd, nt), g1(nd, nt), a2(nd, std::max(nf, 0));
  Vector b(nd);
  Matrix beta(nd, nt);
  for (int r = 0; r < nd; ++r) {
    for (int j = 0; j < nt; ++j) {
      a1(r, j) = uni(0.8, 1.2);
      g1(r, j) = uni(0.0, 0.2);
      beta(r, j) = uni(0.0, 0.1);
    }
    for (int j = 0; j < nf; ++j) a2(r, j) = uni(0.8, 1.2);
    b[r] = uni(0.2, 0.5);
  }
  Vector c1(nt), c2(std::max(nf, 0));
  for (int j = 0; j < nt; ++j) c1[j] = uni(0.5, 1.0);
  for (int j = 0; j < nf; ++j) c2[j] = uni(1.0, 2.0);

  BilevelProblem p;
  p.name = "price_setting";
  p.n = nt;
  p.m = m;
  p.k = k;
  p.upper_set = UpperSet::box(Vector::Zero(nt), Vector::Constant(nt, Tmax));
  p.setting = Setting::LinearLP;

  auto& c = p.constants;
  c.L_f = std::sqrt(nt * (U * U + Tmax * Tmax));
  c.Lbar_f = 1;
  c.L_g = std::sqrt(nt * U * U + (c1.array() + Tmax).square().sum() + c2.squaredNorm());
  c.Lbar_g = 1;
  double Lh = 1, Lbh = 0, H = U, sigma = 2;
  for (int r = 0; r < nd; ++r) {
    double sq = 0, neg_h = -b[r];
    for (int j = 0; j < nt; ++j) {
      const double gx = std::max(beta(r, j), g1(r, j) * U - beta(r, j));
      sq += gx * gx + std::pow(a1(r, j) + g1(r, j) * Tmax, 2);
      neg_h += (a1(r, j) + g1(r, j) * Tmax) * U;
      Lbh = std::max(Lbh, g1(r, j));
    }
    for (int j = 0; j < nf; ++j) {
      sq += a2(r, j) * a2(r, j);
      neg_h += a2(r, j) * U;
    }
    Lh = std::max(Lh, std::sqrt(sq));
    H = std::max(H, neg_h);
  }
  c.L_h = Lh;
  c.Lbar_h = Lbh;
  c.R = U * std::sqrt(double(m));
  c.k = k;
  c.T = 0.1;
  c.sigma = sigma;  // box rows alone give A^T A >= 2 I
  c.H = H;

  auto& f = p.oracles;
  f.f = [nt](const Vector& x, const Vector& y) { return -x.dot(y.head(nt)); };
  f.grad_f_x = [nt](const Vector&, const Vector& y) { return Vector(-y.head(nt)); };
  f.grad_f_y = [nt, m](const Vector& x, const Vector&) {
    Vector v = Vector::Zero(m);
    v.head(nt) = -x;
    return v;
  };
  f.g = [c1, c2, nt, nf](const Vector& x, const Vector& y) {
    return (c1 + x).dot(y.head(nt)) + (nf > 0 ? c2.dot(y.tail(nf)) : 0.0);
  };
  f.grad_g_x = [nt](const Vector&, const Vector& y) { return Vector(y.head(nt)); };
  f.grad_g_y = [c1, c2, nt, nf, m](const Vector& x, const Vector&) {
    Vector v(m);
    v.head(nt) = c1 + x;
    if (nf > 0) v.tail(nf) = c2;
    return v;
  };
  f.hess_g_yy = [m](const Vector&, const Vector&) { return Matrix(Matrix::Zero(m, m)); };
  f.hess_g_xy = [nt, m](const Vector&, const Vector&) {
    Matrix M = Matrix::Zero(nt, m);
    M.leftCols(nt).setIdentity();
    return M;
  };
  f.h = [=](const Vector& x, const Vector& y) {
    Vector h(k);
    for (int r = 0; r < nd; ++r) {
      double v = b[r] + beta.row(r).dot(x);
      for (int j = 0; j < nt; ++j) v -= (a1(r, j) + g1(r, j) * x[j]) * y[j];
      for (int j = 0; j < nf; ++j) v -= a2(r, j) * y[nt + j];
      h[r] = v;
    }
    for (int j = 0; j < m; ++j) {
      h[nd + 2 * j] = -y[j];
      h[nd + 2 * j + 1] = y[j] - U;
    }
    return h;
  };
  f.jac_h_x = [=](const Vector&, const Vector& y) {
    Matrix J = Matrix::Zero(k, nt);
    for (int r = 0; r < nd; ++r) {
      for (int j = 0; j < nt; ++j) J(r, j) = beta(r, j) - g1(r, j) * y[j];
    }
    return J;
  };
  f.jac_h_y = [=](const Vector& x, const Vector&) {
    Matrix J = Matrix::Zero(k, m);
    for (int r = 0; r < nd; ++r) {
      for (int j = 0; j < nt; ++j) J(r, j) = -(a1(r, j) + g1(r, j) * x[j]);
      for (int j = 0; j < nf; ++j) J(r, nt + j) = -a2(r, j);
    }
    for (int j = 0; j < m; ++j) {
      J(nd + 2 * j, j) = -1;
      J(nd + 2 * j + 1, j) = 1;
    }
    return J;
  };
  f.hess_h_yy = [m](const Vector&, const Vector&, int) { return Matrix(Matrix::Zero(m, m)); };
  f.hess_h_xy = [=](const Vector&, const Vector&, int i) {
    Matrix M = Matrix::Zero(nt, m);
    if (i < nd) {
      for (int j = 0; j < nt; ++j) M(j, j) = -g1(i, j);
    }
    return M;
  };

  p.y_hull = Box{Vector::Zero(m), Vector::Constant(m, U)};
  p.affine_in_y.assign(k, true);
  validate(p);
  return p;
}

struct SvmDims {
  int n_train = 2;
  int n_val = 4;
  int dim = 2;
};

struct SvmOptions {
  double mu0 = 1e-2;
  double c_lower = 3;
  double c_upper = 3.5;
  /// Radius of the region the registered constants cover; the feasible set
  /// is unbounded in the slack variables.
  double R = 3.2;
  double T = 0.1;
};

struct SvmData {
  Matrix z_train, z_val;  // one sample per row, |z| <= 1
  Vector l_train, l_val;  // labels in {-1, +1}
};

/// Two Gaussian clusters with 5% label flips, rescaled into the unit ball.
inline SvmData svm_data(const SvmDims& dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int total = dims.n_train + dims.n_val;
  Matrix z(total, dims.dim);
  Vector l(total);
  const double centre = 0.6 / std::sqrt(double(dims.dim));
  for (int i = 0; i < total; ++i) {
    const double label = i % 2 == 0 ? 1.0 : -1.0;
    for (int j = 0; j < dims.dim; ++j) z(i, j) = label * centre + 0.3 * normal(rng);
    l[i] = unit(rng) < 0.05 ? -label : label;
  }
  const double scale = std::max(1.0, z.rowwise().norm().maxCoeff());
  z /= scale;
  return SvmData{z.topRows(dims.n_train), z.bottomRows(dims.n_val),
                 l.head(dims.n_train), l.tail(dims.n_val)};
}

/// Soft-margin SVM whose per-sample slack caps c are the upper variables.
/// Lower variables y = (w, b, xi); lower objective 1/2|w|^2 plus a small
/// regularizer 1/2 mu0 (b^2 + |xi|^2); constraints
/// 1 - xi_i - l_i (z_i^T w + b) <= 0 and xi_i - c_i <= 0. Upper objective is
/// the mean exponential validation loss plus 1/2|c|^2.
inline BilevelProblem svm_problem(const SvmDims& dims = {}, std::uint64_t seed = 11,
                                  const SvmOptions& opt = {}) {
  if (dims.n_train < 1 || dims.n_train > 30 || dims.dim < 1 || dims.dim > 5 ||
      dims.n_val < 1) {
    throw Error(ErrorCode::InvalidArgument, "svm dimensions out of range");
  }
  const SvmData data = svm_data(dims, seed);
  const int nt = dims.n_train, d = dims.dim, nv = dims.n_val;
  const int m = d + 1 + nt;
  const int k = 2 * nt;
  const double mu0 = opt.mu0;
  const Matrix& zt = data.z_train;
  const Vector& lt = data.l_train;
  const Matrix& zv = data.z_val;
  const Vector& lv = data.l_val;

  BilevelProblem p;
  p.name = "svm";
  p.n = nt;
  p.m = m;
  p.k = k;
  p.upper_set = UpperSet::box(Vector::Constant(nt, opt.c_lower),
                              Vector::Constant(nt, opt.c_upper));
  p.setting = Setting::StronglyConvex;

  auto& c = p.constants;
  // exp(1 - l (z^T w + b)) <= exp(1 + sqrt(2) R) when |(w, b)| <= R, |z| <= 1.
  const double emax = std::exp(1 + std::sqrt(2.0) * opt.R);
  const double cmax = opt.c_upper * std::sqrt(double(nt));
  c.L_f = std::sqrt(2 * emax * emax + cmax * cmax);
  c.Lbar_f = 2 * emax + 1;
  c.L_g = opt.R;
  c.Lbar_g = 1;
  c.mu_g = std::min(1.0, mu0);
  c.L_h = std::sqrt(3.0);
  c.R = opt.R;
  c.k = k;
  c.T = opt.T;

  const auto val_terms = [=](const Vector& y) {
    const Vector w = y.head(d);
    const double bias = y[d];
    Vector e(nv);
    for (int v = 0; v < nv; ++v) e[v] = std::exp(1 - lv[v] * (zv.row(v).dot(w) + bias));
    return e;
  };
  auto& f = p.oracles;
  f.f = [=](const Vector& x, const Vector& y) {
    return val_terms(y).sum() / nv + 0.5 * x.squaredNorm();
  };
  f.grad_f_x = [](const Vector& x, const Vector&) { return x; };
  f.grad_f_y = [=](const Vector&, const Vector& y) {
    const Vector e = val_terms(y);
    Vector gr = Vector::Zero(m);
    for (int v = 0; v < nv; ++v) {
      gr.head(d) -= (e[v] * lv[v] / nv) * zv.row(v).transpose();
      gr[d] -= e[v] * lv[v] / nv;
    }
    return gr;
  };
  f.g = [=](const Vector&, const Vector& y) {
    return 0.5 * y.head(d).squaredNorm() + 0.5 * mu0 * y.tail(nt + 1).squaredNorm();
  };
  f.grad_g_x = [nt](const Vector&, const Vector&) { return Vector(Vector::Zero(nt)); };
  f.grad_g_y = [=](const Vector&, const Vector& y) {
    Vector gr = mu0 * y;
    gr.head(d) = y.head(d);
    return gr;
  };
  f.hess_g_yy = [=](const Vector&, const Vector&) {
    Vector diag = Vector::Constant(m, mu0);
    diag.head(d).setOnes();
    return Matrix(diag.asDiagonal());
  };
  f.hess_g_xy = [=](const Vector&, const Vector&) { return Matrix(Matrix::Zero(nt, m)); };
  f.h = [=](const Vector& x, const Vector& y) {
    Vector h(k);
    const Vector w = y.head(d);
    for (int i = 0; i < nt; ++i) {
      const double xi = y[d + 1 + i];
      h[i] = 1 - xi - lt[i] * (zt.row(i).dot(w) + y[d]);
      h[nt + i] = xi - x[i];
    }
    return h;
  };
  f.jac_h_x = [=](const Vector&, const Vector&) {
    Matrix J = Matrix::Zero(k, nt);
    for (int i = 0; i < nt; ++i) J(nt + i, i) = -1;
    return J;
  };
  f.jac_h_y = [=](const Vector&, const Vector&) {
    Matrix J = Matrix::Zero(k, m);
    for (int i = 0; i < nt; ++i) {
      J.block(i, 0, 1, d) = -lt[i] * zt.row(i);
      J(i, d) = -lt[i];
      J(i, d + 1 + i) = -1;
      J(nt + i, d + 1 + i) = 1;
    }
    return J;
  };
  f.hess_h_yy = [m](const Vector&, const Vector&, int) { return Matrix(Matrix::Zero(m, m)); };
  f.hess_h_xy = [nt, m](const Vector&, const Vector&, int) {
    return Matrix(Matrix::Zero(nt, m));
  };

  p.y_hull = Box{Vector::Constant(m, -2), Vector::Constant(m, 2)};
  p.y_hull.lower.tail(nt).setConstant(-1);
  p.y_hull.upper.tail(nt).setConstant(opt.c_upper);
  p.affine_in_y.assign(k, true);
  validate(p);
  return p;
}

/// f = (y1-1)^2 + (y2-1)^2 + x^2, g = 1/2|y|^2, h1 = y1 + y2 - x,
/// h2 = |y|^2 - 4, X = [0.2, 1.5].
inline BilevelProblem toy_qp_problem(double x_lower = 0.2, double x_upper = 1.5) {
  BilevelProblem p;
  p.name = "toy_qp";
  p.n = 1;
  p.m = 2;
  p.k = 2;
  p.upper_set = UpperSet::box(Vector::Constant(1, x_lower), Vector::Constant(1, x_upper));
  p.setting = Setting::StronglyConvex;
  const double xmax = std::max(std::abs(x_lower), std::abs(x_upper));

  auto& c = p.constants;
  // |y - 1| <= |y| + sqrt(2) <= 2 + sqrt(2) on |y| <= 2.
  c.L_f = std::sqrt(4 * xmax * xmax + 4 * std::pow(2 + std::sqrt(2.0), 2));
  c.Lbar_f = 2;
  c.L_g = 2;
  c.Lbar_g = 1;
  c.mu_g = 1;
  c.L_h = 4;
  c.Lbar_h = 2;
  c.R = 2;
  c.k = 2;
  c.T = 0.5;

  auto& f = p.oracles;
  f.f = [](const Vector& x, const Vector& y) {
    return (y.array() - 1).square().sum() + x[0] * x[0];
  };
  f.grad_f_x = [](const Vector& x, const Vector&) { return Vector(2 * x); };
  f.grad_f_y = [](const Vector&, const Vector& y) { return Vector(2 * (y.array() - 1)); };
  f.g = [](const Vector&, const Vector& y) { return 0.5 * y.squaredNorm(); };
  f.grad_g_x = [](const Vector&, const Vector&) { return Vector(Vector::Zero(1)); };
  f.grad_g_y = [](const Vector&, const Vector& y) { return y; };
  f.hess_g_yy = [](const Vector&, const Vector&) { return Matrix(Matrix::Identity(2, 2)); };
  f.hess_g_xy = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(1, 2)); };
  f.h = [](const Vector& x, const Vector& y) {
    Vector h(2);
    h << y[0] + y[1] - x[0], y.squaredNorm() - 4;
    return h;
  };
  f.jac_h_x = [](const Vector&, const Vector&) {
    Matrix J = Matrix::Zero(2, 1);
    J(0, 0) = -1;
    return J;
  };
  f.jac_h_y = [](const Vector&, const Vector& y) {
    Matrix J(2, 2);
    J << 1, 1, 2 * y[0], 2 * y[1];
    return J;
  };
  f.hess_h_yy = [](const Vector&, const Vector&, int i) {
    return Matrix(i == 1 ? Matrix(2 * Matrix::Identity(2, 2)) : Matrix(Matrix::Zero(2, 2)));
  };
  f.hess_h_xy = [](const Vector&, const Vector&, int) { return Matrix(Matrix::Zero(1, 2)); };

  p.y_hull = Box{Vector::Constant(2, -2), Vector::Constant(2, 2)};
  p.affine_in_y = {true, false};
  validate(p);
  return p;
}

// ---------------------------------------------------------------------------
// Brute-force oracles
// ---------------------------------------------------------------------------

struct KktCertificate {
  Vector y_star;
  std::vector<int> active;
  Vector lambdas;
  double stationarity_residual = 0;
  double g_value = 0;
  /// All optimal points found (vertex mode may report a face).
  std::vector<Vector> optimal_set;
};

struct GridMode {
  int res = 201;
};
struct ActiveSetMode {};
struct VertexMode {};
using OracleMode = std::variant<GridMode, ActiveSetMode, VertexMode>;

/// Lawson-Hanson non-negative least squares: min |A z - b| s.t. z >= 0.
inline Vector nnls(const Matrix& A, const Vector& b) {
  const Eigen::Index n = A.cols();
  Vector z = Vector::Zero(n);
  std::vector<bool> passive(n, false);
  const double tol = 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff()) *
                     std::max<double>(A.rows(), n);
  const auto solve_passive = [&]() {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (passive[j]) idx.push_back(j);
    }
    Matrix Ap(A.rows(), idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) Ap.col(r) = A.col(idx[r]);
    const Vector s = Ap.colPivHouseholderQr().solve(b);
    Vector full = Vector::Zero(n);
    for (std::size_t r = 0; r < idx.size(); ++r) full[idx[r]] = s[r];
    return full;
  };
  for (int outer = 0; outer < 3 * n + 10; ++outer) {
    const Vector w = A.transpose() * (b - A * z);
    Eigen::Index best = -1;
    double wmax = tol;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!passive[j] && w[j] > wmax) {
        wmax = w[j];
        best = j;
      }
    }
    if (best < 0) break;
    passive[best] = true;
    for (int inner = 0; inner < 3 * n + 10; ++inner) {
      const Vector s = solve_passive();
      bool feasible = true;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[j] && s[j] <= 0) feasible = false;
      }
      if (feasible) {
        z = s;
        break;
      }
      double alpha = 1;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[j] && s[j] <= 0) alpha = std::min(alpha, z[j] / (z[j] - s[j]));
      }
      z += alpha * (s - z);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[j] && z[j] <= tol) {
          passive[j] = false;
          z[j] = 0;
        }
      }
    }
  }
  return z;
}

namespace detail {

inline KktCertificate kkt_from_point(const BilevelProblem& p, const Vector& x,
                                     const Vector& y, double tol) {
  KktCertificate cert;
  cert.y_star = y;
  cert.g_value = p.oracles.g(x, y);
  cert.lambdas = Vector::Zero(p.k);
  const Vector gy = p.oracles.grad_g_y(x, y);
  if (p.k == 0) {
    cert.stationarity_residual = gy.norm();
    return cert;
  }
  const Vector h = eval_constraints(p, x, y);
  for (int i = 0; i < p.k; ++i) {
    if (std::abs(h[i]) <= 10 * tol) cert.active.push_back(i);
  }
  if (cert.active.empty()) {
    cert.stationarity_residual = gy.norm();
    return cert;
  }
  const Matrix J = p.oracles.jac_h_y(x, y);
  Matrix A(p.m, cert.active.size());
  for (std::size_t r = 0; r < cert.active.size(); ++r) {
    A.col(r) = J.row(cert.active[r]).transpose();
  }
  const Vector lam = nnls(A, -gy);
  for (std::size_t r = 0; r < cert.active.size(); ++r) cert.lambdas[cert.active[r]] = lam[r];
  cert.stationarity_residual = (gy + A * lam).norm();
  return cert;
}

}  // namespace detail

/// KKT multipliers at a given lower-level optimum by non-negative least
/// squares over the constraints with |h_i| <= 10 tol.
inline KktCertificate kkt_multipliers(const BilevelProblem& p, const Vector& x,
                                      const Vector& y_star, double tol) {
  KktCertificate cert = detail::kkt_from_point(p, x, y_star, tol);
  const double scale = std::max(1.0, p.oracles.grad_g_y(x, y_star).norm());
  if (cert.stationarity_residual > 1e-6 * scale) {
    throw Error(ErrorCode::ResidualTooLarge,
                "KKT residual " + std::to_string(cert.stationarity_residual));
  }
  return cert;
}

namespace detail {

/// All index subsets of {0..k-1} with size in [lo, hi], in lexicographic
/// order of the bit masks.
inline std::vector<std::vector<int>> subsets(int k, int lo, int hi) {
  std::vector<std::vector<int>> out;
  for (std::uint32_t mask = 0; mask < (1u << k); ++mask) {
    const int size = std::popcount(mask);
    if (size < lo || size > hi) continue;
    std::vector<int> s;
    for (int i = 0; i < k; ++i) {
      if (mask & (1u << i)) s.push_back(i);
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Newton's method on the equality KKT system of subset S.
inline std::optional<std::pair<Vector, Vector>> solve_equality_kkt(
    const BilevelProblem& p, const Vector& x, const std::vector<int>& S,
    const Vector& start) {
  const int m = p.m;
  const int s = static_cast<int>(S.size());
  Vector y = start;
  Vector lam = Vector::Ones(s);
  for (int it = 0; it < 60; ++it) {
    const Vector gy = p.oracles.grad_g_y(x, y);
    Matrix K = Matrix::Zero(m + s, m + s);
    K.topLeftCorner(m, m) = p.oracles.hess_g_yy(x, y);
    Vector r(m + s);
    r.head(m) = gy;
    if (s > 0) {
      const Vector h = p.oracles.h(x, y);
      const Matrix J = p.oracles.jac_h_y(x, y);
      for (int a = 0; a < s; ++a) {
        const int i = S[a];
        r.head(m) += lam[a] * J.row(i).transpose();
        if (!p.affine_in_y[i]) K.topLeftCorner(m, m) += lam[a] * p.oracles.hess_h_yy(x, y, i);
        K.block(0, m + a, m, 1) = J.row(i).transpose();
        K.block(m + a, 0, 1, m) = J.row(i);
        r[m + a] = h[i];
      }
    }
    const double scale = 1 + y.norm() + lam.norm();
    if (r.norm() <= 1e-12 * scale) return std::make_pair(y, lam);
    Eigen::FullPivLU<Matrix> lu(K);
    lu.setThreshold(1e-12);
    if (lu.rank() < m + s) return std::nullopt;
    const Vector step = lu.solve(-r);
    y += step.head(m);
    lam += step.tail(s);
    if (!y.allFinite() || !lam.allFinite()) return std::nullopt;
  }
  return std::nullopt;
}

inline std::vector<Vector> newton_starts(const BilevelProblem& p) {
  const Vector lo = p.y_hull.lower, hi = p.y_hull.upper;
  const Vector mid = 0.5 * (lo + hi);
  std::vector<Vector> starts{mid};
  Vector alt = mid;
  for (Eigen::Index j = 0; j < alt.size(); ++j) {
    alt[j] += (j % 2 == 0 ? 0.3 : -0.2) * (hi[j] - lo[j]);
  }
  starts.push_back(alt);
  return starts;
}

inline void add_unique(std::vector<Vector>& pts, const Vector& v, double tol) {
  for (const auto& q : pts) {
    if ((q - v).norm() <= tol * (1 + v.norm())) return;
  }
  pts.push_back(v);
}

}  // namespace detail

/// Vertices of {y : h_i(x, y) <= 0}. Affine constraints are intersected m
/// at a time; for a norm-ball augmented problem, m - 1 affine hyperplanes
/// are also intersected with the sphere.
inline std::vector<Vector> enumerate_vertices(const BilevelProblem& p, const Vector& x) {
  const int m = p.m;
  std::vector<int> aff;
  int ball = -1;
  for (int i = 0; i < p.k; ++i) {
    if (p.affine_in_y[i]) {
      aff.push_back(i);
    } else if (p.ball_augmented && i == p.k - 1) {
      ball = i;
    } else {
      throw Error(ErrorCode::InvalidArgument, "vertex enumeration needs affine constraints");
    }
  }
  const Vector yref = Vector::Zero(m);
  const Vector h0 = eval_constraints(p, x, yref);
  const Matrix J = p.oracles.jac_h_y(x, yref);
  const int na = static_cast<int>(aff.size());
  Matrix A(na, m);
  Vector b(na);
  for (int r = 0; r < na; ++r) {
    A.row(r) = J.row(aff[r]);
    b[r] = -h0[aff[r]];  // a^T y = b on the boundary
  }
  std::vector<Vector> verts;
  const auto feasible = [&](const Vector& y) {
    return eval_constraints(p, x, y).maxCoeff() <= 1e-9 * (1 + y.norm());
  };
  for (const auto& S : detail::subsets(na, m, m)) {
    Matrix As(m, m);
    Vector bs(m);
    for (int r = 0; r < m; ++r) {
      As.row(r) = A.row(S[r]);
      bs[r] = b[S[r]];
    }
    Eigen::FullPivLU<Matrix> lu(As);
    lu.setThreshold(1e-10);
    if (lu.rank() < m) continue;
    const Vector y = lu.solve(bs);
    if (feasible(y)) detail::add_unique(verts, y, 1e-9);
  }
  if (ball >= 0) {
    const double R2 = -h0[ball];
    for (const auto& S : detail::subsets(na, m - 1, m - 1)) {
      // Line {y0 + s d} = intersection of the m - 1 hyperplanes.
      Matrix As(m - 1, m);
      Vector bs(m - 1);
      for (int r = 0; r < m - 1; ++r) {
        As.row(r) = A.row(S[r]);
        bs[r] = b[S[r]];
      }
      Eigen::FullPivLU<Matrix> lu(As);
      lu.setThreshold(1e-10);
      if (lu.rank() < m - 1) continue;
      const Vector y0 = As.completeOrthogonalDecomposition().solve(bs);
      const Matrix ker = lu.kernel();
      if (ker.cols() != 1) continue;
      const Vector dir = ker.col(0).normalized();
      const double bq = 2 * y0.dot(dir);
      const double cq = y0.squaredNorm() - R2;
      const double disc = bq * bq - 4 * cq;
      if (disc < 0) continue;
      for (double sgn : {-1.0, 1.0}) {
        const Vector y = y0 + ((-bq + sgn * std::sqrt(disc)) / 2) * dir;
        if (feasible(y)) detail::add_unique(verts, y, 1e-9);
      }
    }
  }
  return verts;
}

/// Exact lower-level solution by brute force.
inline KktCertificate brute_force_lower(const BilevelProblem& p, const Vector& x,
                                        const OracleMode& mode = ActiveSetMode{}) {
  detail::require_dims(p, x, Vector::Zero(p.m));
  if (std::holds_alternative<VertexMode>(mode)) {
    if (p.k > 12) throw Error(ErrorCode::InvalidArgument, "too many constraints");
    const auto verts = enumerate_vertices(p, x);
    if (verts.empty()) throw Error(ErrorCode::Infeasible, "no vertices");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& v : verts) best = std::min(best, p.oracles.g(x, v));
    std::vector<Vector> opt;
    for (const auto& v : verts) {
      if (p.oracles.g(x, v) <= best + 1e-9 * (1 + std::abs(best))) opt.push_back(v);
    }
    KktCertificate cert = detail::kkt_from_point(p, x, opt.front(), 1e-10);
    cert.optimal_set = opt;
    return cert;
  }

  if (std::holds_alternative<ActiveSetMode>(mode)) {
    if (p.k > 12) throw Error(ErrorCode::InvalidArgument, "too many constraints");
    double best = std::numeric_limits<double>::infinity();
    std::optional<std::pair<Vector, Vector>> winner;
    std::vector<int> winner_set;
    for (const auto& S : detail::subsets(p.k, 0, std::min(p.k, p.m))) {
      for (const auto& start : detail::newton_starts(p)) {
        const auto sol = detail::solve_equality_kkt(p, x, S, start);
        if (!sol) continue;
        const auto& [y, lam] = *sol;
        if ((lam.array() < -1e-10).any()) continue;
        if (p.k > 0 && eval_constraints(p, x, y).maxCoeff() > 1e-10 * (1 + y.norm())) continue;
        const double gv = p.oracles.g(x, y);
        if (gv < best - 1e-12 * (1 + std::abs(gv))) {
          best = gv;
          winner = sol;
          winner_set = S;
        }
        break;
      }
    }
    if (!winner) throw Error(ErrorCode::Infeasible, "no KKT point found");
    KktCertificate cert;
    cert.y_star = winner->first;
    cert.g_value = best;
    cert.lambdas = Vector::Zero(p.k);
    for (std::size_t a = 0; a < winner_set.size(); ++a) {
      cert.lambdas[winner_set[a]] = winner->second[a];
    }
    cert.active = winner_set;
    Vector res = p.oracles.grad_g_y(x, cert.y_star);
    if (p.k > 0) res += p.oracles.jac_h_y(x, cert.y_star).transpose() * cert.lambdas;
    cert.stationarity_residual = res.norm();
    cert.optimal_set = {cert.y_star};
    return cert;
  }

  const int res = std::get<GridMode>(mode).res;
  if (p.m > 3) throw Error(ErrorCode::InvalidArgument, "grid oracle needs m <= 3");
  const Vector lo = p.y_hull.lower, hi = p.y_hull.upper;
  long total = 1;
  for (int j = 0; j < p.m; ++j) total *= res;
  double best = std::numeric_limits<double>::infinity();
  Vector ybest;
  Vector y(p.m);
  for (long idx = 0; idx < total; ++idx) {
    long rem = idx;
    for (int j = 0; j < p.m; ++j) {
      y[j] = lo[j] + (hi[j] - lo[j]) * double(rem % res) / (res - 1);
      rem /= res;
    }
    if (p.k > 0 && eval_constraints(p, x, y).maxCoeff() > 0) continue;
    const double gv = p.oracles.g(x, y);
    if (gv < best) {
      best = gv;
      ybest = y;
    }
  }
  if (ybest.size() == 0) throw Error(ErrorCode::Infeasible, "no feasible grid point");
  // Projected-gradient refinement on the original feasible set.
  ShrunkSet set(p, x, 0.0);
  set.set_anchor(find_initial_margin(p, x).y0);
  const double step = 1 / std::max(1.0, p.constants.Lbar_g);
  const double h = (hi - lo).maxCoeff() / (res - 1);
  for (int it = 0; it < 2000; ++it) {
    const Vector g = p.oracles.grad_g_y(x, ybest);
    const double s = p.setting == Setting::LinearLP ? h / std::max(1.0, g.norm()) : step;
    const Vector next = project_shrunk(set, ybest - s * g, 1e-12);
    const bool stalled = (next - ybest).norm() <= 1e-14;
    if (p.oracles.g(x, next) <= p.oracles.g(x, ybest)) ybest = next;
    if (stalled) break;
  }
  KktCertificate cert = detail::kkt_from_point(p, x, ybest, 1e-6);
  cert.optimal_set = {ybest};
  return cert;
}

/// phi(x) = min over the lower-level solution set of f(x, y).
inline double brute_force_hyperfunction(const BilevelProblem& p, const Vector& x) {
  if (p.setting == Setting::StronglyConvex) {
    return p.oracles.f(x, brute_force_lower(p, x, ActiveSetMode{}).y_star);
  }
  const KktCertificate cert = brute_force_lower(p, x, VertexMode{});
  const auto& opt = cert.optimal_set;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& v : opt) best = std::min(best, p.oracles.f(x, v));
  if (opt.size() > 1) {
    std::mt19937_64 rng(0);
    std::exponential_distribution<double> expo(1.0);
    for (int s = 0; s < 100; ++s) {
      Vector w(opt.size());
      for (auto& wi : w) wi = expo(rng);
      w /= w.sum();
      Vector y = Vector::Zero(p.m);
      for (std::size_t i = 0; i < opt.size(); ++i) y += w[i] * opt[i];
      best = std::min(best, p.oracles.f(x, y));
    }
  }
  return best;
}

/// Smallest cosine between grad_y g at the optimum and the directions to the
/// other vertices.
inline double estimate_tau(const BilevelProblem& p, const Vector& x) {
  const KktCertificate cert = brute_force_lower(p, x, VertexMode{});
  if (cert.optimal_set.size() != 1) {
    throw Error(ErrorCode::NonUniqueOptimum, "lower-level optimum is a face");
  }
  const Vector& ys = cert.y_star;
  const Vector gy = p.oracles.grad_g_y(x, ys);
  double tau = 1;
  for (const auto& v : enumerate_vertices(p, x)) {
    const Vector d = v - ys;
    if (d.norm() <= 1e-9) continue;
    tau = std::min(tau, d.dot(gy) / (d.norm() * gy.norm()));
  }
  return tau;
}

/// Exact barrier minimizer by damped Newton, used as a reference solution.
inline Vector barrier_minimizer_newton(const BarrierContext& ctx, const Vector& x) {
  const auto& p = *ctx.prob;
  Vector y = find_initial_margin(p, x).y0;
  for (int it = 0; it < 200; ++it) {
    const Vector g = barrier_grad_y(ctx, x, y);
    const Matrix H = barrier_hess_yy(ctx, x, y);
    const Vector dir = -solve_spd(H, g);
    const double decrement = -g.dot(dir);
    if (decrement <= 1e-28 * (1 + std::abs(barrier_value(ctx, x, y)))) break;
    double s = 1;
    const double f0 = barrier_value(ctx, x, y);
    // Near the minimizer the Armijo test drowns in rounding; take full steps.
    const bool quadratic = decrement <= 1e-12 * (1 + std::abs(f0));
    for (int ls = 0; ls < 80; ++ls, s *= 0.5) {
      const Vector trial = y + s * dir;
      if (max_constraint(p, x, trial) >= kBoundaryThreshold) continue;
      if (quadratic || barrier_value(ctx, x, trial) <= f0 - 0.25 * s * decrement) break;
    }
    const Vector next = y + s * dir;
    if ((next - y).norm() <= 1e-16 * (1 + y.norm())) {
      y = next;
      break;
    }
    y = next;
  }
  return y;
}

}  // namespace bbm
