#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <string>

#include "bbm/error.hpp"

namespace bbm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace detail {

inline double max_abs(const Matrix& A) {
  return A.size() == 0 ? 0.0 : A.cwiseAbs().maxCoeff();
}

inline void require_symmetric(const Matrix& A, double tol = 1e-10) {
  if (A.rows() != A.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "matrix is not square");
  }
  const double scale = std::max(1.0, max_abs(A));
  if (A.size() > 0 && (A - A.transpose()).cwiseAbs().maxCoeff() > tol * scale) {
    throw Error(ErrorCode::NotSymmetric, "matrix asymmetry exceeds tolerance");
  }
}

}  // namespace detail

inline bool all_finite(const Vector& v) { return v.allFinite(); }
inline bool all_finite(const Matrix& A) { return A.allFinite(); }

/// Solves A x = b for symmetric positive definite A.
///
/// Uses a Cholesky factorization. If the factorization fails, a diagonal
/// jitter is added, growing from 1e-12 to 1e-6 (relative to the largest
/// entry), and the result is polished by iterative refinement against the
/// unperturbed matrix.
inline Vector solve_spd(const Matrix& A, const Vector& b) {
  detail::require_symmetric(A);
  if (A.rows() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "matrix has " + std::to_string(A.rows()) + " rows, rhs has " +
                    std::to_string(b.size()) + " entries");
  }
  if (A.rows() == 0) return Vector(0);

  const double scale = std::max(1.0, detail::max_abs(A));
  Eigen::LLT<Matrix> llt(A);
  bool jittered = false;
  if (llt.info() != Eigen::Success) {
    jittered = true;
    bool ok = false;
    for (double jitter = 1e-12; jitter <= 1e-6 * (1 + 1e-9); jitter *= 10) {
      Matrix shifted = A;
      shifted.diagonal().array() += jitter * scale;
      llt.compute(shifted);
      if (llt.info() == Eigen::Success) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw Error(ErrorCode::NotPositiveDefinite,
                  "Cholesky failed after jitter escalation");
    }
  }

  Vector x = llt.solve(b);
  if (jittered) {
    for (int pass = 0; pass < 3; ++pass) {
      Vector r = b - A * x;
      x += llt.solve(r);
    }
  }
  return x;
}

/// True iff A - mu*I is positive semidefinite up to 1e-10.
inline bool min_eig_lower_bound(const Matrix& A, double mu) {
  detail::require_symmetric(A);
  if (A.rows() == 0) return true;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(A, Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, detail::max_abs(A));
  return eig.eigenvalues().minCoeff() - mu >= -1e-10 * scale;
}

}  // namespace bbm
