#pragma once

#include <memory>
#include <string>

#include <Eigen/Core>
#include <Eigen/Dense>

#include "epinv/gaussian.hpp"
#include "epinv/linalg/cholesky.hpp"
#include "epinv/tilted/moments.hpp"

namespace epinv::tilted {

/// Moments of Z^{-1} t(s) N(s; mean, cov) for an l-dimensional factor.
struct TiltedMomentsN {
  double logZ;
  VectorXd mean;
  MatrixXd cov;
};

/// A nongaussian (or Gaussian) factor t(s), s = U x, as seen by EP.
class FactorFamily {
 public:
  virtual ~FactorFamily() = default;

  virtual Index dim() const = 0;
  virtual TiltedMomentsN tilted(const VectorXd& mean, const MatrixXd& cov) const = 0;
  /// log t(s); -inf outside the support.
  virtual double log_value(const VectorXd& s) const = 0;
  virtual bool log_concave() const = 0;
  virtual std::string name() const = 0;
};

using FactorPtr = std::shared_ptr<const FactorFamily>;

/// Convenience base for one-dimensional factors.
class ScalarFactor : public FactorFamily {
 public:
  Index dim() const final { return 1; }

  TiltedMomentsN tilted(const VectorXd& mean, const MatrixXd& cov) const final {
    const TiltedMoments tm = tilted1(mean(0), cov(0, 0));
    return {tm.logZ, VectorXd::Constant(1, tm.mean), MatrixXd::Constant(1, 1, tm.var)};
  }

  double log_value(const VectorXd& s) const final { return log_value1(s(0)); }

  virtual TiltedMoments tilted1(double m, double v) const = 0;
  virtual double log_value1(double s) const = 0;
};

class LaplacePositivity final : public ScalarFactor {
 public:
  explicit LaplacePositivity(LaplacePositivityFactor f) : f_(f) {}

  TiltedMoments tilted1(double m, double v) const override {
    return moments_laplace_positivity(f_, m, v);
  }
  double log_value1(double s) const override { return f_.log_value(s); }
  bool log_concave() const override { return true; }
  std::string name() const override { return "laplace_positivity"; }

  const LaplacePositivityFactor& params() const { return f_; }

 private:
  LaplacePositivityFactor f_;
};

/// Gaussian factor N(s; mu_t, C_t) in any dimension.
class GaussianFactor final : public FactorFamily {
 public:
  explicit GaussianFactor(MomentGaussian t) : t_(std::move(t)), chol_(linalg::cholesky(t_.C)) {}

  Index dim() const override { return t_.dim(); }

  TiltedMomentsN tilted(const VectorXd& mean, const MatrixXd& cov) const override {
    if (dim() == 1) {
      const auto tm = moments_gaussian_factor(t_, mean(0), cov(0, 0));
      return {tm.logZ, VectorXd::Constant(1, tm.mean), MatrixXd::Constant(1, 1, tm.var)};
    }
    const MatrixXd Kt = chol_.inverse();
    const auto cav = linalg::cholesky(cov);
    const MatrixXd K = cav.inverse() + Kt;
    const auto post = linalg::cholesky(linalg::symmetrize(K));
    MatrixXd C = linalg::symmetrize(post.inverse());
    VectorXd mu = post.solve(VectorXd(cav.solve(mean) + Kt * t_.mu));
    const auto joint = linalg::cholesky(linalg::symmetrize(cov + t_.C));
    const VectorXd d = mean - t_.mu;
    const double quad = d.dot(joint.solve(d));
    const double log_z =
        -0.5 * (quad + joint.log_det() + dim() * std::log(2.0 * std::numbers::pi));
    return {log_z, std::move(mu), std::move(C)};
  }

  double log_value(const VectorXd& s) const override {
    const VectorXd d = s - t_.mu;
    return -0.5 * (d.dot(chol_.solve(d)) + chol_.log_det() +
                   dim() * std::log(2.0 * std::numbers::pi));
  }

  bool log_concave() const override { return true; }
  std::string name() const override { return "gaussian"; }

  const MomentGaussian& moments() const { return t_; }

 private:
  MomentGaussian t_;
  linalg::CholeskyFactor chol_;
};

/// Indicator of [lo, hi]; moments are a truncated normal.
class IntervalIndicator final : public ScalarFactor {
 public:
  IntervalIndicator(double lo, double hi) : lo_(lo), hi_(hi) {}

  TiltedMoments tilted1(double m, double v) const override {
    const double sd = std::sqrt(v);
    const auto tr = truncated_std_normal((lo_ - m) / sd, (hi_ - m) / sd);
    double z = m;
    if (tr.ref == RefPoint::Lower) z = lo_;
    if (tr.ref == RefPoint::Upper) z = hi_;
    const double log_z = -(z - m) * (z - m) / (2.0 * v) - kLogSqrt2Pi + tr.log_scaled_mass;
    return {log_z, z + sd * tr.mean_offset, v * tr.var};
  }
  double log_value1(double s) const override { return (s >= lo_ && s <= hi_) ? 0.0 : -kInf; }
  bool log_concave() const override { return true; }
  std::string name() const override { return "interval_indicator"; }

 private:
  double lo_;
  double hi_;
};

/// Fallback for factors without closed-form moments: adaptive quadrature.
class QuadratureScalarFactor final : public ScalarFactor {
 public:
  QuadratureScalarFactor(QuadratureFactor q, bool log_concave, std::string name = "quadrature")
      : q_(std::move(q)), log_concave_(log_concave), name_(std::move(name)) {}

  TiltedMoments tilted1(double m, double v) const override { return moments_quadrature(q_, m, v); }
  double log_value1(double s) const override {
    if (s < q_.lo || s > q_.hi) return -kInf;
    return q_.log_value(s);
  }
  bool log_concave() const override { return log_concave_; }
  std::string name() const override { return name_; }

 private:
  QuadratureFactor q_;
  bool log_concave_;
  std::string name_;
};

}  // namespace epinv::tilted
