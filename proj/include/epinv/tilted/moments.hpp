#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "epinv/errors.hpp"
#include "epinv/gaussian.hpp"
#include "epinv/tilted/special.hpp"

namespace epinv::tilted {

/// Moments of the 1-D tilted density Z^{-1} t(s) N(s; m, v).
struct TiltedMoments {
  double logZ;
  double mean;
  double var;
};

/// Below this log-normalizer no double-precision mass is reachable.
inline constexpr double kLogZFloor = -745.0;

/// t(s) = exp(-lambda |s - background|) * 1[s >= floor].
/// lambda = 0 and floor = -inf are accepted as limits.
struct LaplacePositivityFactor {
  double lambda = 1.0;
  double background = 0.0;
  double floor = -kInf;

  double log_value(double s) const {
    if (s < floor) return -kInf;
    return -lambda * std::abs(s - background);
  }
};

namespace detail {

struct Piece {
  double log_weight;
  double mean;
  double var;
};

/// One exponentially tilted truncated-Gaussian piece:
///   int_lo^hi exp(slope * (s - background)) N(s; m, v) ds
/// using exp(slope s) N(s; m, v) = exp(slope m + slope^2 v / 2) N(s; m + slope v, v).
/// The constant is folded into the exponent at the reference point z so that
/// no large terms cancel: with z the truncation bound (or the shifted mean),
///   log weight = slope (z - background) - (z - m)^2 / (2v) - log sqrt(2 pi) + log I.
inline Piece tilted_piece(double slope, double background, double lo, double hi, double m,
                          double v) {
  const double sd = std::sqrt(v);
  const double shifted = m + slope * v;
  const double a = std::isinf(lo) ? -kInf : (lo - shifted) / sd;
  const double b = std::isinf(hi) ? kInf : (hi - shifted) / sd;
  const StdTruncated tr = truncated_std_normal(a, b);
  double z = shifted;
  if (tr.ref == RefPoint::Lower) z = lo;
  if (tr.ref == RefPoint::Upper) z = hi;
  const double log_w =
      slope * (z - background) - (z - m) * (z - m) / (2.0 * v) - kLogSqrt2Pi + tr.log_scaled_mass;
  return {log_w, z + sd * tr.mean_offset, v * tr.var};
}

}  // namespace detail

/// Semi-analytic moments of exp(-lambda |s - bg|) 1[s >= floor] N(s; m, v).
///
/// The factor is split at the background value into two exponentially tilted
/// truncated Gaussians, each evaluated in the log domain through the Mills
/// ratio, and the pieces are recombined as a two-component mixture.
/// Throws DegenerateSupport when logZ < -745.
inline TiltedMoments moments_laplace_positivity(const LaplacePositivityFactor& f, double m,
                                                double v) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw std::invalid_argument("moments_laplace_positivity: variance must be positive");
  }
  if (f.lambda < 0.0) {
    throw std::invalid_argument("moments_laplace_positivity: lambda must be non-negative");
  }
  std::vector<detail::Piece> pieces;
  if (f.lambda == 0.0) {
    pieces.push_back(detail::tilted_piece(0.0, f.background, f.floor, kInf, m, v));
  } else {
    if (f.floor < f.background) {
      pieces.push_back(detail::tilted_piece(f.lambda, f.background, f.floor, f.background, m, v));
    }
    pieces.push_back(
        detail::tilted_piece(-f.lambda, f.background, std::max(f.floor, f.background), kInf, m, v));
  }
  double log_z = pieces.front().log_weight;
  for (std::size_t k = 1; k < pieces.size(); ++k) {
    const double hi = std::max(log_z, pieces[k].log_weight);
    log_z = hi + std::log(std::exp(log_z - hi) + std::exp(pieces[k].log_weight - hi));
  }
  if (!(log_z >= kLogZFloor)) {
    throw DegenerateSupport("tilted mass below double precision (logZ = " + std::to_string(log_z) +
                            "); site is pinned at the floor");
  }
  if (pieces.size() == 1) {
    return {log_z, pieces[0].mean, pieces[0].var};
  }
  const double wa = std::exp(pieces[0].log_weight - log_z);
  const double wb = std::exp(pieces[1].log_weight - log_z);
  const double mean = wa * pieces[0].mean + wb * pieces[1].mean;
  const double gap = pieces[0].mean - pieces[1].mean;
  const double var = wa * pieces[0].var + wb * pieces[1].var + wa * wb * gap * gap;
  return {log_z, mean, var};
}

/// Gaussian factor t(s) = N(s; mt, vt): closed-form product of Gaussians.
inline TiltedMoments moments_gaussian_factor(double mt, double vt, double m, double v) {
  if (!(v > 0.0) || !(vt > 0.0)) {
    throw std::invalid_argument("moments_gaussian_factor: variances must be positive");
  }
  const double var = 1.0 / (1.0 / v + 1.0 / vt);
  const double mean = var * (m / v + mt / vt);
  return {log_normal_pdf(m, mt, v + vt), mean, var};
}

inline TiltedMoments moments_gaussian_factor(const MomentGaussian& t, double m, double v) {
  if (t.dim() != 1) {
    throw std::invalid_argument("moments_gaussian_factor: factor must be one-dimensional");
  }
  return moments_gaussian_factor(t.mu(0), t.C(0, 0), m, v);
}

struct QuadratureOptions {
  double rel_tol = 1e-12;
  unsigned max_depth = 18;
  double window_sds = 12.0;
};

/// Pointwise-evaluable factor for quadrature: log t(s) (-inf outside the
/// support), the support interval, kinks of t (the window is widened to cover
/// them) and extra subdivision points where t has fine structure.
struct QuadratureFactor {
  std::function<double(double)> log_value;
  double lo = -kInf;
  double hi = kInf;
  std::vector<double> breakpoints;
  std::vector<double> refinement;
};

/// Adaptive Gauss-Kronrod quadrature of the tilted moments.
///
/// Integrates over m +- 12 sd intersected with the support, widened to cover
/// every kink. The integrand is shifted by its sampled log-maximum
/// before exponentiation, the mean is accumulated about m and the variance
/// about the computed mean.
inline TiltedMoments moments_quadrature(const QuadratureFactor& t, double m, double v,
                                        const QuadratureOptions& opts = {}) {
  if (!(v > 0.0)) {
    throw std::invalid_argument("moments_quadrature: variance must be positive");
  }
  const double sd = std::sqrt(v);
  double lo = m - opts.window_sds * sd;
  double hi = m + opts.window_sds * sd;
  for (double b : t.breakpoints) {
    if (std::isfinite(b)) {
      lo = std::min(lo, b - opts.window_sds * sd);
      hi = std::max(hi, b + opts.window_sds * sd);
    }
  }
  lo = std::max(lo, t.lo);
  hi = std::min(hi, t.hi);
  if (std::isfinite(t.lo) && hi < t.lo + opts.window_sds * sd) {
    hi = std::min(t.hi, t.lo + opts.window_sds * sd);
  }
  if (!(lo < hi)) {
    throw QuadratureNotConverged("moments_quadrature: empty integration window");
  }

  std::vector<double> cuts{lo, hi};
  for (const auto* points : {&t.breakpoints, &t.refinement}) {
    for (double b : *points) {
      if (b > lo && b < hi) cuts.push_back(b);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  auto log_integrand = [&](double s) {
    return t.log_value(s) - 0.5 * (s - m) * (s - m) / v;
  };
  double shift = -kInf;
  auto probe = [&](double s) {
    const double val = log_integrand(s);
    if (std::isfinite(val)) shift = std::max(shift, val);
  };
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    for (int j = 0; j <= 64; ++j) probe(cuts[k] + (cuts[k + 1] - cuts[k]) * j / 64.0);
  }
  probe(std::clamp(m, lo, hi));
  if (!std::isfinite(shift)) {
    throw QuadratureNotConverged("moments_quadrature: integrand vanishes on the window");
  }

  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  auto integrate = [&](auto&& g) {
    double total = 0.0;
    double err_total = 0.0;
    double l1_total = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      double err = 0.0;
      double l1 = 0.0;
      total += GK::integrate(g, cuts[k], cuts[k + 1], opts.max_depth, opts.rel_tol, &err, &l1);
      err_total += err;
      l1_total += l1;
    }
    if (err_total > 10.0 * opts.rel_tol * std::max(l1_total, std::abs(total)) + 1e-300) {
      throw QuadratureNotConverged("moments_quadrature: error estimate " +
                                   std::to_string(err_total) + " exceeds tolerance");
    }
    return total;
  };
  auto w = [&](double s) { return std::exp(log_integrand(s) - shift); };
  const double z0 = integrate(w);
  const double mean = m + integrate([&](double s) { return (s - m) * w(s); }) / z0;
  const double var = integrate([&](double s) { return (s - mean) * (s - mean) * w(s); }) / z0;
  const double log_z = shift + std::log(z0) - 0.5 * std::log(2.0 * std::numbers::pi * v);
  return {log_z, mean, var};
}

/// Quadrature view of a Laplace-positivity factor, with breakpoints at the
/// kink and floor plus a geometric ladder at the 1/lambda scale around the kink.
inline QuadratureFactor as_quadrature_factor(const LaplacePositivityFactor& f) {
  QuadratureFactor q;
  q.log_value = [f](double s) { return f.log_value(s); };
  q.lo = f.floor;
  q.breakpoints.push_back(f.background);
  if (std::isfinite(f.floor)) q.refinement.push_back(f.floor);
  if (f.lambda > 0.0) {
    for (double k = 1.0; k <= 4096.0; k *= 4.0) {
      q.refinement.push_back(f.background + k / f.lambda);
      q.refinement.push_back(f.background - k / f.lambda);
    }
  }
  return q;
}

}  // namespace epinv::tilted
