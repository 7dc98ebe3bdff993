#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "bessel.hpp"
#include "errors.hpp"
#include "random.hpp"
#include "sphere.hpp"

namespace gcpx {

// von Mises-Fisher parameters: mean direction and scalar concentration.
// kappa = 0 is excluded; use kappa = 1e-8 for the uniform limit.
class VmfParams {
 public:
  VmfParams(UnitVector mu, double kappa) : mu_(std::move(mu)), kappa_(kappa) {
    if (!(kappa_ > 0.0) || !std::isfinite(kappa_)) {
      throw DomainError("vMF concentration must be positive and finite, got " +
                        std::to_string(kappa_));
    }
  }

  const UnitVector& mu() const { return mu_; }
  double kappa() const { return kappa_; }
  int dim() const { return static_cast<int>(mu_.dim()); }

 private:
  UnitVector mu_;
  double kappa_;
};

namespace vmf_detail {

inline void check_dk(int d, double kappa, const char* fn) {
  if (d < 2 || !(kappa > 0.0) || !std::isfinite(kappa)) {
    throw DomainError(std::string(fn) + ": need d >= 2 and finite kappa > 0 (d=" +
                      std::to_string(d) + ", kappa=" + std::to_string(kappa) + ")");
  }
}

}  // namespace vmf_detail

// log C_d(kappa) = (d/2-1) log kappa - (d/2) log 2pi - log I_{d/2-1}(kappa).
inline double log_norm_const(int d, double kappa) {
  vmf_detail::check_dk(d, kappa, "log_norm_const");
  const double order = 0.5 * d - 1.0;
  return order * std::log(kappa) - 0.5 * d * std::log(2.0 * std::numbers::pi) -
         log_bessel_i(order, kappa);
}

// A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa), the mean resultant length.
inline double mean_resultant(int d, double kappa) {
  vmf_detail::check_dk(d, kappa, "mean_resultant");
  return bessel_i_ratio(0.5 * d - 1.0, kappa);
}

// dA_d/dkappa = 1 - A^2 - (d-1) A / kappa.
inline double mean_resultant_derivative(int d, double kappa) {
  const double a = mean_resultant(d, kappa);
  return 1.0 - a * a - (d - 1.0) * a / kappa;
}

// log Area(S^{d-1}) = log(2 pi^{d/2} / Gamma(d/2)).
inline double log_sphere_area(int d) {
  return std::log(2.0) + 0.5 * d * std::log(std::numbers::pi) - std::lgamma(0.5 * d);
}

inline double log_density(const VmfParams& params, const UnitVector& z) {
  require_same_dim(params.mu().dim(), z.dim(), "log_density");
  return log_norm_const(params.dim(), params.kappa()) + params.kappa() * params.mu().dot(z);
}

// Differential entropy -log C_d(kappa) - kappa A_d(kappa); strictly
// decreasing in kappa.
inline double entropy(int d, double kappa) {
  return -log_norm_const(d, kappa) - kappa * mean_resultant(d, kappa);
}

// KL(p || q) = log(C_d(k_p)/C_d(k_q)) + A_d(k_p) (k_p - k_q mu_p.mu_q).
inline double kl_divergence(const VmfParams& p, const VmfParams& q) {
  require_same_dim(p.mu().dim(), q.mu().dim(), "kl_divergence");
  if (p.kappa() == q.kappa() && p.mu().coords() == q.mu().coords()) return 0.0;
  const int d = p.dim();
  // Clamped: rounding can push near-identical pairs slightly below zero.
  return std::max(0.0, log_norm_const(d, p.kappa()) - log_norm_const(d, q.kappa()) +
                           mean_resultant(d, p.kappa()) * (p.kappa() - q.kappa() * p.mu().dot(q.mu())));
}

// Draws `count` samples with Wood's rejection scheme for the cosine to the
// mean direction, then maps e_1 onto mu with a Householder reflection.
inline std::vector<UnitVector> sample(const VmfParams& params, int count, std::uint64_t seed) {
  if (count < 1) throw DomainError("sample: count must be >= 1");
  const int d = params.dim();
  const double kappa = params.kappa();
  const double dm1 = d - 1.0;

  // b = (d-1) / (2 kappa + sqrt(4 kappa^2 + (d-1)^2)), cancellation-free form.
  const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + dm1 * std::log(1.0 - x0 * x0);

  CounterRng rng(seed);
  std::gamma_distribution<double> gamma(0.5 * dm1, 1.0);
  std::normal_distribution<double> normal;

  // Householder vector taking e_1 to mu.
  Vector u = -params.mu().coords();
  u(0) += 1.0;
  const double u_norm = u.norm();
  const bool reflect = u_norm > 1e-14;
  if (reflect) u /= u_norm;

  std::vector<UnitVector> out;
  out.reserve(count);
  Vector x(d);
  Vector tangent(d - 1);
  for (int s = 0; s < count; ++s) {
    double w = 0.0;
    for (;;) {
      const double g1 = gamma(rng);
      const double g2 = gamma(rng);
      const double beta = g1 / (g1 + g2);
      w = (1.0 - (1.0 + b) * beta) / (1.0 - (1.0 - b) * beta);
      const double log_u = std::log(1.0 - rng.uniform());
      if (kappa * w + dm1 * std::log(1.0 - x0 * w) - c >= log_u) break;
    }
    double t_norm = 0.0;
    do {
      for (int i = 0; i < d - 1; ++i) tangent(i) = normal(rng);
      t_norm = tangent.norm();
    } while (t_norm < 1e-12);
    const double radial = std::sqrt(std::max(0.0, 1.0 - w * w));
    x(0) = w;
    x.tail(d - 1) = radial * tangent / t_norm;
    if (reflect) x -= 2.0 * u.dot(x) * u;
    out.push_back(UnitVector::normalized(x));
  }
  return out;
}

}  // namespace gcpx
