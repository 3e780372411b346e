#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>
#include <Eigen/Dense>

#include "epinv/errors.hpp"

namespace epinv::linalg {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Relative pivot tolerance shared by factorization and downdates.
inline constexpr double kPivotTolerance = 1e-14;

/// Lower-triangular factor L of an SPD matrix A = L L^t.
///
/// The factor can be modified in place by symmetric rank-one updates and
/// downdates at O(n^2) cost. A failed downdate is detected before any entry is
/// touched, so the factor is never left half-modified.
class CholeskyFactor {
 public:
  CholeskyFactor() = default;
  explicit CholeskyFactor(MatrixXd lower) : L_(std::move(lower)) {}

  Index dim() const noexcept { return L_.rows(); }
  const MatrixXd& lower() const noexcept { return L_; }

  /// L L^t, the represented matrix.
  MatrixXd reconstruct() const {
    return L_.triangularView<Eigen::Lower>() * L_.transpose();
  }

  /// X with A X = B.
  MatrixXd solve(const MatrixXd& B) const {
    check_rows(B.rows());
    MatrixXd X = L_.triangularView<Eigen::Lower>().solve(B);
    L_.transpose().triangularView<Eigen::Upper>().solveInPlace(X);
    return X;
  }

  VectorXd solve(const VectorXd& b) const {
    check_rows(b.size());
    VectorXd x = L_.triangularView<Eigen::Lower>().solve(b);
    L_.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
    return x;
  }

  /// L^{-1} B (forward substitution only).
  MatrixXd forward_solve(const MatrixXd& B) const {
    check_rows(B.rows());
    return L_.triangularView<Eigen::Lower>().solve(B);
  }

  VectorXd forward_solve(const VectorXd& b) const {
    check_rows(b.size());
    return L_.triangularView<Eigen::Lower>().solve(b);
  }

  MatrixXd inverse() const {
    return solve(MatrixXd(MatrixXd::Identity(dim(), dim())));
  }

  double log_det() const { return 2.0 * L_.diagonal().array().log().sum(); }

  /// In place: A <- A + x x^t.
  void update(VectorXd x) {
    check_rows(x.size());
    const Index n = dim();
    for (Index k = 0; k < n; ++k) {
      const double lkk = L_(k, k);
      const double r = std::hypot(lkk, x(k));
      const double c = r / lkk;
      const double s = x(k) / lkk;
      L_(k, k) = r;
      if (k + 1 < n) {
        const Index m = n - k - 1;
        L_.col(k).tail(m) = (L_.col(k).tail(m) + s * x.tail(m)) / c;
        x.tail(m) = c * x.tail(m) - s * L_.col(k).tail(m);
      }
    }
  }

  /// In place: A <- A - x x^t by a hyperbolic rotation sweep.
  /// Throws DowndateFailed, leaving the factor untouched, when A - x x^t is
  /// not numerically positive definite.
  void downdate(VectorXd x) {
    check_rows(x.size());
    const VectorXd p = forward_solve(x);
    const double rho2 = 1.0 - p.squaredNorm();
    if (!(rho2 > kPivotTolerance)) {
      throw DowndateFailed("rank-one downdate loses positive definiteness (1 - |L^-1 x|^2 = " +
                           std::to_string(rho2) + ")");
    }
    const Index n = dim();
    for (Index k = 0; k < n; ++k) {
      const double lkk = L_(k, k);
      const double r = std::sqrt((lkk - x(k)) * (lkk + x(k)));
      const double c = r / lkk;
      const double s = x(k) / lkk;
      L_(k, k) = r;
      if (k + 1 < n) {
        const Index m = n - k - 1;
        L_.col(k).tail(m) = (L_.col(k).tail(m) - s * x.tail(m)) / c;
        x.tail(m) = c * x.tail(m) - s * L_.col(k).tail(m);
      }
    }
  }

  /// sign = +1 updates, sign = -1 downdates.
  void rank1(const VectorXd& x, int sign) {
    if (sign == 1) {
      update(x);
    } else if (sign == -1) {
      downdate(x);
    } else {
      throw std::invalid_argument("rank1: sign must be +1 or -1");
    }
  }

 private:
  void check_rows(Index rows) const {
    if (rows != dim()) {
      throw std::invalid_argument("CholeskyFactor: dimension mismatch (" + std::to_string(rows) +
                                  " vs " + std::to_string(dim()) + ")");
    }
  }

  MatrixXd L_;
};

/// Left-looking Cholesky factorization of a symmetric matrix. Only the lower
/// triangle of A is read. Pivots at or below 1e-14 * max(diag A) are rejected.
inline CholeskyFactor cholesky(const Eigen::Ref<const MatrixXd>& A) {
  if (A.rows() != A.cols()) {
    throw std::invalid_argument("cholesky: matrix is not square");
  }
  const Index n = A.rows();
  MatrixXd L = MatrixXd::Zero(n, n);
  const double max_diag = n > 0 ? A.diagonal().maxCoeff() : 0.0;
  const double tol = kPivotTolerance * std::max(max_diag, 0.0);
  for (Index j = 0; j < n; ++j) {
    const double pivot = A(j, j) - L.row(j).head(j).squaredNorm();
    if (!(pivot > tol)) {
      throw NotPositiveDefinite("cholesky: pivot " + std::to_string(j) + " = " +
                                std::to_string(pivot) + " below tolerance");
    }
    const double ljj = std::sqrt(pivot);
    L(j, j) = ljj;
    const Index m = n - j - 1;
    if (m > 0) {
      L.col(j).tail(m) =
          (A.col(j).tail(m) - L.bottomLeftCorner(m, j) * L.row(j).head(j).transpose()) / ljj;
    }
  }
  return CholeskyFactor(std::move(L));
}

/// Pure form of the rank-one modification: factor of A + sign * x x^t.
inline CholeskyFactor rank1_update(CholeskyFactor F, const VectorXd& x, int sign) {
  F.rank1(x, sign);
  return F;
}

inline MatrixXd solve(const CholeskyFactor& F, const MatrixXd& B) {
  return F.solve(B);
}

/// (A + W W^t)^{-1} from the factor of A via the Woodbury identity with C = I.
inline MatrixXd woodbury_inverse(const CholeskyFactor& A, const MatrixXd& W) {
  const MatrixXd AinvW = A.solve(W);
  MatrixXd capacitance = MatrixXd::Identity(W.cols(), W.cols()) + W.transpose() * AinvW;
  const MatrixXd correction = capacitance.llt().solve(AinvW.transpose());
  return A.inverse() - AinvW * correction;
}

/// Symmetric part of A.
inline MatrixXd symmetrize(const Eigen::Ref<const MatrixXd>& A) {
  return 0.5 * (A + A.transpose());
}

}  // namespace epinv::linalg
