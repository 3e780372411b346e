#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "epinv/linalg/cholesky.hpp"

namespace epinv {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Raw natural parameters (h, K) of exp(x^t h - x^t K x / 2). K may be
/// indefinite, e.g. for a cavity that has not been validated yet.
struct NaturalParams {
  VectorXd h;
  MatrixXd K;

  Index dim() const { return h.size(); }
};

inline NaturalParams operator+(const NaturalParams& a, const NaturalParams& b) {
  return {a.h + b.h, a.K + b.K};
}

inline NaturalParams operator-(const NaturalParams& a, const NaturalParams& b) {
  return {a.h - b.h, a.K - b.K};
}

struct MomentGaussian {
  VectorXd mu;
  MatrixXd C;

  Index dim() const { return mu.size(); }
};

/// Gaussian in natural parameters with the Cholesky factor of the precision
/// kept alongside. The factor is the source of truth for solves; K is kept for
/// bookkeeping and consistency checks.
class NaturalGaussian {
 public:
  NaturalGaussian() = default;

  NaturalGaussian(VectorXd h, MatrixXd K)
      : h_(std::move(h)), K_(std::move(K)), factor_(linalg::cholesky(K_)) {
    if (h_.size() != K_.rows()) {
      throw std::invalid_argument("NaturalGaussian: h and K dimensions differ");
    }
  }

  NaturalGaussian(VectorXd h, MatrixXd K, linalg::CholeskyFactor factor)
      : h_(std::move(h)), K_(std::move(K)), factor_(std::move(factor)) {}

  explicit NaturalGaussian(const NaturalParams& p) : NaturalGaussian(p.h, p.K) {}

  Index dim() const noexcept { return h_.size(); }
  const VectorXd& h() const noexcept { return h_; }
  const MatrixXd& K() const noexcept { return K_; }
  const linalg::CholeskyFactor& factor() const noexcept { return factor_; }
  NaturalParams params() const { return {h_, K_}; }

  VectorXd mean() const { return factor_.solve(h_); }

  // Mutators used by the EP engine for incremental refreshes.
  VectorXd& mutable_h() noexcept { return h_; }
  MatrixXd& mutable_K() noexcept { return K_; }
  linalg::CholeskyFactor& mutable_factor() noexcept { return factor_; }

 private:
  VectorXd h_;
  MatrixXd K_;
  linalg::CholeskyFactor factor_;
};

inline MomentGaussian moment_from_natural(const NaturalGaussian& g) {
  MatrixXd C = linalg::symmetrize(g.factor().inverse());
  VectorXd mu = g.factor().solve(g.h());
  return {std::move(mu), std::move(C)};
}

inline NaturalGaussian natural_from_moment(const MomentGaussian& m) {
  const auto cov_factor = linalg::cholesky(m.C);
  MatrixXd K = linalg::symmetrize(cov_factor.inverse());
  VectorXd h = K * m.mu;
  return NaturalGaussian(std::move(h), std::move(K));
}

/// Divides out a site contribution (U^t h_i, U^t K_i U). Positive
/// definiteness of the result is not checked here.
inline NaturalParams natural_quotient(const NaturalParams& g, const NaturalParams& site_contrib) {
  if (g.dim() != site_contrib.dim()) {
    throw std::invalid_argument("natural_quotient: dimension mismatch");
  }
  return g - site_contrib;
}

inline NaturalParams natural_product(const NaturalParams& a, const NaturalParams& b) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("natural_product: dimension mismatch");
  }
  return a + b;
}

/// Lifts low-rank site parameters to the full space: (U^t h_i, U^t K_i U).
inline NaturalParams lift(const MatrixXd& U, const VectorXd& h_site, const MatrixXd& K_site) {
  return {U.transpose() * h_site, U.transpose() * K_site * U};
}

inline double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

}  // namespace epinv
