#pragma once

// Tail-stable special functions for truncated standard-normal moments.
//
// Notation: phi/Q are the standard normal density and upper tail, R(t) =
// Q(t)/phi(t) the Mills ratio. For a tail interval [t, t + w] with t >= 0 we
// work in the shifted variable y = x - t, whose density is proportional to
// exp(-t*y - y^2/2) on [0, w]; this keeps every moment free of the
// catastrophic cancellation that the textbook formulas suffer for large t.

#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/quadrature/gauss.hpp>

namespace epinv::tilted {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2 pi))

/// Tail integrals J_k(t) = int_0^inf y^k exp(-t y - y^2/2) dy, k = 0, 1, 2.
struct TailIntegrals {
  double j0;
  double j1;
  double j2;
};

/// J_k(t) for t >= 0. Below t = 5 the closed forms via erfc are accurate to a
/// few ulps; above, the Laplace continued fraction
///   R(t) = 1/(t + 1/(t + 2/(t + 3/(t + ...))))
/// is evaluated backwards and its first two tails u1, u2 give
///   J0 = R, J1 = u1 R, J2 = u1 u2 R
/// without subtraction.
inline TailIntegrals tail_integrals(double t) {
  if (t < 5.0) {
    const double R = std::sqrt(std::numbers::pi / 2.0) * std::exp(0.5 * t * t) *
                     std::erfc(t / std::numbers::sqrt2);
    const double j1 = 1.0 - t * R;
    const double j2 = R - t * j1;
    return {R, j1, j2};
  }
  // Depth 200 is well past convergence to double precision for t >= 5.
  double u = 0.0;
  double u1 = 0.0;
  double u2 = 0.0;
  for (int k = 200; k >= 1; --k) {
    u = k / (t + u);
    if (k == 2) u2 = u;
    if (k == 1) u1 = u;
  }
  const double R = 1.0 / (t + u1);
  return {R, u1 * R, u1 * u2 * R};
}

/// Mills ratio Q(t)/phi(t) for t >= 0.
inline double mills_ratio(double t) { return tail_integrals(t).j0; }

/// Scaled complementary error function exp(x^2) erfc(x), any real x.
inline double erfcx(double x) {
  if (x < 0.0) {
    return 2.0 * std::exp(x * x) - erfcx(-x);
  }
  // erfcx(x) = sqrt(2/pi) * R(sqrt(2) x)
  return std::sqrt(2.0 / std::numbers::pi) * mills_ratio(std::numbers::sqrt2 * x);
}

/// Where the standardized reference point of a truncated normal sits.
enum class RefPoint { Lower, Upper, Center };

/// Moments of a standard normal truncated to [a, b], expressed relative to a
/// reference point x_ref so callers can recombine in original units without
/// cancellation:
///   mass     = phi(x_ref) * exp(log_scaled_mass)
///   mean     = x_ref + mean_offset
///   variance = var
/// x_ref is a (Lower), b (Upper) or 0 (Center).
struct StdTruncated {
  RefPoint ref;
  double x_ref;
  double log_scaled_mass;
  double mean_offset;
  double var;
};

namespace detail {

struct ShiftedMoments {
  double log_i0;
  double mean;
  double var;
};

template <class F>
double gauss64(F f, double lo, double hi) {
  return boost::math::quadrature::gauss<double, 64>::integrate(f, lo, hi);
}

/// Moments of y on [0, w] with density proportional to exp(-t y - y^2/2),
/// t >= 0, w in (0, inf].
inline ShiftedMoments shifted_tail(double t, double w) {
  const double decay = std::isinf(w) ? kInf : t * w + 0.5 * w * w;
  if (decay <= 40.0) {
    // Smooth, moderately decaying integrand on a finite interval: Gauss-Legendre
    // is exact to roundoff and computes the central moment directly.
    auto dens = [t](double y) { return std::exp(-t * y - 0.5 * y * y); };
    const double i0 = gauss64(dens, 0.0, w);
    const double m = gauss64([&](double y) { return y * dens(y); }, 0.0, w) / i0;
    const double v =
        gauss64([&](double y) { return (y - m) * (y - m) * dens(y); }, 0.0, w) / i0;
    return {std::log(i0), m, v};
  }
  const TailIntegrals ja = tail_integrals(t);
  double i0 = ja.j0;
  double i1 = ja.j1;
  double i2 = ja.j2;
  if (!std::isinf(w)) {
    // Subtract the tail beyond t + w; its weight is below exp(-40).
    const double e = std::exp(-decay);
    const TailIntegrals jb = tail_integrals(t + w);
    i0 -= e * jb.j0;
    i1 -= e * (jb.j1 + w * jb.j0);
    i2 -= e * (jb.j2 + 2.0 * w * jb.j1 + w * w * jb.j0);
  }
  const double m = i1 / i0;
  return {std::log(i0), m, i2 / i0 - m * m};
}

inline double std_pdf(double x) {
  return std::isinf(x) ? 0.0 : std::exp(-0.5 * x * x - kLogSqrt2Pi);
}

inline double std_upper_tail(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

}  // namespace detail

inline StdTruncated truncated_std_normal(double a, double b) {
  if (!(a < b)) {
    throw std::invalid_argument("truncated_std_normal: empty interval");
  }
  if (a >= 0.0) {
    const auto s = detail::shifted_tail(a, b - a);
    return {RefPoint::Lower, a, s.log_i0, s.mean, s.var};
  }
  if (b <= 0.0) {
    const auto s = detail::shifted_tail(-b, b - a);
    return {RefPoint::Upper, b, s.log_i0, -s.mean, s.var};
  }
  // Interval straddles the mode.
  constexpr double log_phi0 = -kLogSqrt2Pi;
  if (b - a < 2.0) {
    auto dens = [](double x) { return std::exp(-0.5 * x * x); };
    const double i0 = detail::gauss64(dens, a, b);
    const double m = detail::gauss64([&](double x) { return x * dens(x); }, a, b) / i0;
    const double v =
        detail::gauss64([&](double x) { return (x - m) * (x - m) * dens(x); }, a, b) / i0;
    return {RefPoint::Center, 0.0, std::log(i0), m, v};
  }
  const double mass = 1.0 - detail::std_upper_tail(b) - detail::std_upper_tail(-a);
  const double pa = detail::std_pdf(a);
  const double pb = detail::std_pdf(b);
  const double m = (pa - pb) / mass;
  const double apa = std::isinf(a) ? 0.0 : a * pa;
  const double bpb = std::isinf(b) ? 0.0 : b * pb;
  const double v = 1.0 + (apa - bpb) / mass - m * m;
  return {RefPoint::Center, 0.0, std::log(mass) - log_phi0, m, v};
}

}  // namespace epinv::tilted
