#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"

namespace gcpx {

// Modified Bessel functions of the first kind in log space.
//
// log I_v(x) is evaluated in one of three regimes:
//   * ascending power series, scaled to avoid overflow. Used for x <= v
//     when v >= kDebyeMinOrder, and for x <= kHankelOffset + 4 v^2 otherwise;
//   * Debye uniform asymptotic expansion in 1/v for v >= kDebyeMinOrder, x > v;
//   * Hankel large-argument expansion for small orders and x beyond the
//     series range, where the expansion terms shrink by at least 8x per step.
// Tests cross-check adjacent regimes on both sides of each seam.

namespace bessel_detail {

inline constexpr double kDebyeMinOrder = 25.0;
inline constexpr double kHankelOffset = 500.0;
inline constexpr int kDebyeTerms = 14;

enum class Regime { series, debye, hankel };

inline Regime regime(double v, double x) {
  if (v >= kDebyeMinOrder) return x <= v ? Regime::series : Regime::debye;
  return x <= kHankelOffset + 4.0 * v * v ? Regime::series : Regime::hankel;
}

inline double log_series(double v, double x) {
  constexpr double kRescale = 1e250;
  const double log_rescale = std::log(kRescale);
  const double q = 0.25 * x * x;
  double term = 1.0;
  double sum = 1.0;
  double log_scale = 0.0;
  for (int k = 0; k < 1000000; ++k) {
    const double ratio = q / ((k + 1.0) * (v + k + 1.0));
    term *= ratio;
    sum += term;
    if (sum > kRescale) {
      sum /= kRescale;
      term /= kRescale;
      log_scale += log_rescale;
    }
    if (ratio < 0.5 && term <= sum * 1e-17) break;
  }
  return v * std::log(0.5 * x) - std::lgamma(v + 1.0) + log_scale + std::log(sum);
}

// Coefficients (ascending powers of p) of the Debye polynomials u_0..u_K,
// generated from
//   u_{k+1}(p) = p^2 (1 - p^2) u_k'(p) / 2 + 1/8 \int_0^p (1 - 5 s^2) u_k(s) ds.
inline const std::vector<std::vector<double>>& debye_polynomials() {
  static const std::vector<std::vector<double>> polys = [] {
    std::vector<std::vector<double>> u(kDebyeTerms + 1);
    u[0] = {1.0};
    for (int k = 0; k < kDebyeTerms; ++k) {
      const auto& c = u[k];
      std::vector<double> next(c.size() + 4, 0.0);
      for (std::size_t j = 1; j < c.size(); ++j) {
        const double d = static_cast<double>(j) * c[j];  // coefficient of p^{j-1} in u'
        next[j + 1] += 0.5 * d;
        next[j + 3] -= 0.5 * d;
      }
      for (std::size_t j = 0; j < c.size(); ++j) {
        next[j + 1] += c[j] / (8.0 * (j + 1.0));
        next[j + 3] -= 5.0 * c[j] / (8.0 * (j + 3.0));
      }
      u[k + 1] = std::move(next);
    }
    return u;
  }();
  return polys;
}

inline double log_debye(double v, double x) {
  const double root = std::hypot(v, x);
  const double p = v / root;
  const auto& polys = debye_polynomials();
  double sum = 1.0;
  double v_pow = 1.0;
  for (int k = 1; k <= kDebyeTerms; ++k) {
    v_pow *= v;
    const auto& c = polys[k];
    double poly = 0.0;
    for (std::size_t j = c.size(); j-- > 0;) poly = poly * p + c[j];
    const double term = poly / v_pow;
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return root + v * std::log(x / (v + root)) -
         0.5 * std::log(2.0 * std::numbers::pi * root) + std::log(sum);
}

inline double log_hankel(double v, double x) {
  const double mu = 4.0 * v * v;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 200; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = -term * (mu - odd * odd) / (8.0 * k * x);
    if (std::abs(next) > std::abs(term)) break;
    term = next;
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
}

inline void check_args(double order, double x, const char* fn) {
  if (!std::isfinite(order) || !std::isfinite(x) || order < 0.0 || x <= 0.0) {
    throw DomainError(std::string(fn) + ": invalid arguments (order=" +
                      std::to_string(order) + ", x=" + std::to_string(x) + ")");
  }
}

}  // namespace bessel_detail

// log I_order(x) for order >= 0, x > 0.
inline double log_bessel_i(double order, double x) {
  using namespace bessel_detail;
  check_args(order, x, "log_bessel_i");
  switch (regime(order, x)) {
    case Regime::series:
      return log_series(order, x);
    case Regime::debye:
      return log_debye(order, x);
    case Regime::hankel:
      return log_hankel(order, x);
  }
  return log_series(order, x);
}

// I_{order+1}(x) / I_order(x) by the Gauss continued fraction
//   r = 1 / (2(v+1)/x + 1 / (2(v+2)/x + ...)),
// evaluated with the modified Lentz algorithm. Never forms the Bessel values
// themselves, so it stays accurate when the ratio is close to 1.
inline double bessel_i_ratio(double order, double x) {
  bessel_detail::check_args(order, x, "bessel_i_ratio");
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  double f = kTiny;
  double c = f;
  double d = 0.0;
  const long max_iter = 1000000 + static_cast<long>(10.0 * x);
  for (long j = 1; j <= max_iter; ++j) {
    const double b = 2.0 * (order + static_cast<double>(j)) / x;
    d = b + d;
    if (d == 0.0) d = kTiny;
    c = b + 1.0 / c;
    if (c == 0.0) c = kTiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < kEps) return f;
  }
  throw NumericalError("bessel_i_ratio: continued fraction did not converge (order=" +
                       std::to_string(order) + ", x=" + std::to_string(x) + ")");
}

}  // namespace gcpx
