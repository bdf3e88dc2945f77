#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "bbm/bbm.hpp"

namespace bbm::test {

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

inline Vector scalar(double v) { return Vector::Constant(1, v); }

/// Unconstrained quadratic lower level, linear upper level:
/// g = 1/2 y^T G y + x^T B y, f = a^T x + c^T y with n = m = 2, k = 0.
struct QuadraticData {
  Matrix G{{2, 0}, {0, 4}};
  Matrix B{{1, 2}, {0, 1}};
  Vector a = vec({1, 1});
  Vector c = vec({2, 4});
};

inline BilevelProblem quadratic_k0(const QuadraticData& d = {}) {
  BilevelProblem p;
  p.name = "quadratic_k0";
  p.n = 2;
  p.m = 2;
  p.k = 0;
  p.upper_set = UpperSet::box(Vector::Constant(2, -1), Vector::Constant(2, 1));
  p.setting = Setting::StronglyConvex;
  auto& c = p.constants;
  c.L_f = d.a.norm() + d.c.norm();
  c.L_g = 10;
  c.Lbar_g = 4 + d.B.norm();
  c.mu_g = 2;
  c.R = 2;
  c.k = 0;
  c.T = 1;
  auto& o = p.oracles;
  o.f = [d](const Vector& x, const Vector& y) { return d.a.dot(x) + d.c.dot(y); };
  o.grad_f_x = [d](const Vector&, const Vector&) { return d.a; };
  o.grad_f_y = [d](const Vector&, const Vector&) { return d.c; };
  o.g = [d](const Vector& x, const Vector& y) { return 0.5 * y.dot(d.G * y) + x.dot(d.B * y); };
  o.grad_g_x = [d](const Vector&, const Vector& y) { return Vector(d.B * y); };
  o.grad_g_y = [d](const Vector& x, const Vector& y) {
    return Vector(d.G * y + d.B.transpose() * x);
  };
  o.hess_g_yy = [d](const Vector&, const Vector&) { return d.G; };
  o.hess_g_xy = [d](const Vector&, const Vector&) { return d.B; };
  o.h = [](const Vector&, const Vector&) { return Vector(0); };
  o.jac_h_x = [](const Vector&, const Vector&) { return Matrix(0, 2); };
  o.jac_h_y = [](const Vector&, const Vector&) { return Matrix(0, 2); };
  o.hess_h_yy = [](const Vector&, const Vector&, int) { return Matrix(Matrix::Zero(2, 2)); };
  o.hess_h_xy = [](const Vector&, const Vector&, int) { return Matrix(Matrix::Zero(2, 2)); };
  p.y_hull = Box{Vector::Constant(2, -2), Vector::Constant(2, 2)};
  validate(p);
  return p;
}

/// Lower set {y in R : |y| <= slack}, with g = y^2/2 and f = y. The deepest
/// slack of any point is `slack` (attained at y = 0).
inline BilevelProblem interval_problem(double slack) {
  BilevelProblem p;
  p.name = "interval";
  p.n = 1;
  p.m = 1;
  p.k = 2;
  p.upper_set = UpperSet::box(Vector::Constant(1, -1), Vector::Constant(1, 1));
  p.setting = Setting::StronglyConvex;
  auto& c = p.constants;
  c.L_f = 1;
  c.L_g = 2;
  c.Lbar_g = 1;
  c.mu_g = 1;
  c.L_h = 1;
  c.R = std::max(slack, 1e-3);
  c.k = 2;
  c.T = 1;
  auto& o = p.oracles;
  o.f = [](const Vector&, const Vector& y) { return y[0]; };
  o.grad_f_x = [](const Vector&, const Vector&) { return Vector(Vector::Zero(1)); };
  o.grad_f_y = [](const Vector&, const Vector&) { return Vector(Vector::Ones(1)); };
  o.g = [](const Vector&, const Vector& y) { return 0.5 * y[0] * y[0]; };
  o.grad_g_x = [](const Vector&, const Vector&) { return Vector(Vector::Zero(1)); };
  o.grad_g_y = [](const Vector&, const Vector& y) { return y; };
  o.hess_g_yy = [](const Vector&, const Vector&) { return Matrix(Matrix::Identity(1, 1)); };
  o.hess_g_xy = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(1, 1)); };
  o.h = [slack](const Vector&, const Vector& y) {
    Vector h(2);
    h << y[0] - slack, -y[0] - slack;
    return h;
  };
  o.jac_h_x = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(2, 1)); };
  o.jac_h_y = [](const Vector&, const Vector&) {
    Matrix J(2, 1);
    J << 1, -1;
    return J;
  };
  o.hess_h_yy = [](const Vector&, const Vector&, int) { return Matrix(Matrix::Zero(1, 1)); };
  o.hess_h_xy = [](const Vector&, const Vector&, int) { return Matrix(Matrix::Zero(1, 1)); };
  p.y_hull = Box{Vector::Constant(1, -1), Vector::Constant(1, 1)};
  p.affine_in_y = {true, true};
  validate(p);
  return p;
}

/// Single halfspace y1 <= 0 in R^2.
inline BilevelProblem halfspace_problem() {
  BilevelProblem p = interval_problem(1.0);
  p.name = "halfspace";
  p.m = 2;
  p.k = 1;
  p.constants.k = 1;
  auto& o = p.oracles;
  o.f = [](const Vector&, const Vector& y) { return y[0]; };
  o.grad_f_y = [](const Vector&, const Vector&) { return Vector(Vector::Unit(2, 0)); };
  o.g = [](const Vector&, const Vector& y) { return 0.5 * y.squaredNorm(); };
  o.grad_g_y = [](const Vector&, const Vector& y) { return y; };
  o.hess_g_yy = [](const Vector&, const Vector&) { return Matrix(Matrix::Identity(2, 2)); };
  o.hess_g_xy = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(1, 2)); };
  o.h = [](const Vector&, const Vector& y) { return Vector(Vector::Constant(1, y[0])); };
  o.jac_h_x = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(1, 1)); };
  o.jac_h_y = [](const Vector&, const Vector&) {
    Matrix J(1, 2);
    J << 1, 0;
    return J;
  };
  o.hess_h_yy = [](const Vector&, const Vector&, int) { return Matrix(Matrix::Zero(2, 2)); };
  o.hess_h_xy = [](const Vector&, const Vector&, int) { return Matrix(Matrix::Zero(1, 2)); };
  p.y_hull = Box{Vector::Constant(2, -2), Vector::Constant(2, 2)};
  p.affine_in_y = {true};
  validate(p);
  return p;
}

inline std::vector<BilevelProblem> testbed_problems() {
  return {example1_problem(), price_setting_problem(), svm_problem(), toy_qp_problem()};
}

inline Matrix random_spd(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> N(0, 1);
  Matrix M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = N(rng);
  return M * M.transpose() + n * Matrix::Identity(n, n);
}

}  // namespace bbm::test
