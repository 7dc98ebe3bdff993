#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "errors.hpp"
#include "random.hpp"
#include "sphere.hpp"

namespace gcpx {

// n unit vectors on S^{d-1} with their Riesz exponent and energy, split into
// base proxies (one per known class) and open proxies (everything else).
struct ProxySet {
  Matrix vectors;
  double s = 1.0;
  double energy = 0.0;
  std::vector<int> base_indices;
  std::vector<int> open_indices;
  bool converged = true;
  int iterations = 0;

  int count() const { return static_cast<int>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }

  Matrix base_vectors() const { return rows(base_indices); }
  Matrix open_vectors() const { return rows(open_indices); }

  Matrix rows(const std::vector<int>& idx) const {
    Matrix out(static_cast<Eigen::Index>(idx.size()), vectors.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = vectors.row(idx[i]);
    return out;
  }
};

struct EnergyMinConfig {
  int restarts = 8;
  int max_iters = 5000;
  double step_size = 0.1;
  double tolerance = 1e-15;  // relative energy change between accepted steps

  void validate() const {
    if (restarts < 1 || max_iters < 1 || !(step_size > 0.0) || !(tolerance > 0.0)) {
      throw ConfigError("energy minimization settings must all be positive");
    }
  }
};

enum class BaseAssignment { random, spread };

inline double geodesic_distance(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v) {
  require_same_dim(u.size(), v.size(), "geodesic_distance");
  return std::acos(std::clamp(u.dot(v), -1.0, 1.0));
}

inline double geodesic_distance(const UnitVector& u, const UnitVector& v) {
  return geodesic_distance(u.coords(), v.coords());
}

namespace proxy_detail {

inline constexpr double kCoincidence = 1e-12;
inline constexpr double kClamp = 1.0 - 1e-12;

inline double kernel(double dist, double s) {
  return s > 0.0 ? std::pow(dist, -s) : -std::log(dist);
}

inline double kernel_slope(double dist, double s) {
  return s > 0.0 ? -s * std::pow(dist, -s - 1.0) : -1.0 / dist;
}

inline void check_s(double s) {
  if (!(s >= 0.0) || !std::isfinite(s)) {
    throw DomainError("Riesz exponent must be finite and >= 0, got " + std::to_string(s));
  }
}

// Riemannian gradient of the energy, one row per proxy. Each unordered pair
// contributes to both endpoints with the factor 2 of the ordered double sum.
inline Matrix energy_gradient(const Matrix& x, double s) {
  const Eigen::Index n = x.rows();
  Matrix grad = Matrix::Zero(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double c = std::clamp(x.row(i).dot(x.row(j)), -kClamp, kClamp);
      const double dist = std::acos(c);
      // d(dist)/dc = -1 / sqrt(1 - c^2); tangent parts of the partner
      // directions at each endpoint.
      const double scale = 2.0 * kernel_slope(dist, s) * (-1.0 / std::sqrt(1.0 - c * c));
      grad.row(i) += scale * (x.row(j) - c * x.row(i));
      grad.row(j) += scale * (x.row(i) - c * x.row(j));
    }
  }
  return grad;
}

}  // namespace proxy_detail

// Sum over ordered pairs i != j of the Riesz s-kernel of the geodesic
// distance (log kernel for s = 0).
inline double riesz_energy(const Matrix& proxies, double s) {
  proxy_detail::check_s(s);
  const Eigen::Index n = proxies.rows();
  if (n < 2) throw CapacityError("riesz_energy needs at least two proxies");
  double energy = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double dist = geodesic_distance(proxies.row(i).transpose(), proxies.row(j).transpose());
      if (dist <= proxy_detail::kCoincidence) {
        throw DegenerateError("riesz_energy: proxies " + std::to_string(i) + " and " +
                              std::to_string(j) + " coincide");
      }
      energy += 2.0 * proxy_detail::kernel(dist, s);
    }
  }
  return energy;
}

// Projected gradient descent on the sphere from `restarts` random starts;
// returns the lowest-energy configuration. Steps that raise the energy are
// rejected and the step size halved; accepted steps grow it by 10%.
inline ProxySet minimize_energy(int n, int d, double s, const EnergyMinConfig& config,
                                std::uint64_t seed) {
  proxy_detail::check_s(s);
  config.validate();
  if (n < 2) throw CapacityError("minimize_energy needs n >= 2");
  if (d < 2) throw DomainError("minimize_energy needs d >= 2");

  const CounterRng root(seed);
  ProxySet best;
  best.s = s;
  best.energy = std::numeric_limits<double>::infinity();

  for (int r = 0; r < config.restarts; ++r) {
    CounterRng rng = root.substream(static_cast<std::uint64_t>(r));
    Matrix x(n, d);
    for (int i = 0; i < n; ++i) x.row(i) = UnitVector::random(d, rng).coords().transpose();

    double energy = riesz_energy(x, s);
    double step = config.step_size;
    bool converged = false;
    int iter = 0;
    for (; iter < config.max_iters; ++iter) {
      const Matrix grad = proxy_detail::energy_gradient(x, s);
      const double grad_norm = grad.rowwise().norm().maxCoeff();
      if (grad_norm < 1e-13 * std::max(1.0, std::abs(energy))) {
        converged = true;
        break;
      }
      // Normalize so the step size is an angle, independent of the kernel scale.
      const Matrix direction = grad / grad_norm;
      bool accepted = false;
      while (step > 1e-18) {
        Matrix trial = x - step * direction;
        normalize_rows(trial);
        double trial_energy;
        try {
          trial_energy = riesz_energy(trial, s);
        } catch (const DegenerateError&) {
          step *= 0.5;
          continue;
        }
        if (trial_energy <= energy) {
          const double change = (energy - trial_energy) / std::max(1.0, std::abs(energy));
          x = std::move(trial);
          energy = trial_energy;
          step *= 1.1;
          accepted = true;
          if (change < config.tolerance) converged = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        // No descent possible at machine precision: a stationary point.
        converged = true;
        break;
      }
      if (converged) break;
    }

    if (energy < best.energy) {
      best.vectors = std::move(x);
      best.energy = energy;
      best.converged = converged;
      best.iterations = iter;
    }
  }

  best.open_indices.resize(n);
  std::iota(best.open_indices.begin(), best.open_indices.end(), 0);
  return best;
}

// Chooses num_base proxies as class anchors. `random` draws a seeded uniform
// subset; `spread` greedily maximizes the minimum geodesic distance among the
// chosen anchors, starting from a seeded random proxy. Both indices lists
// are returned in ascending order; class c maps to base_indices[c].
inline ProxySet assign_base_proxies(ProxySet proxies, int num_base, std::uint64_t seed,
                                    BaseAssignment strategy = BaseAssignment::random) {
  const int n = proxies.count();
  if (num_base < 0) throw ConfigError("num_base must be >= 0");
  if (num_base > n) {
    throw CapacityError("cannot assign " + std::to_string(num_base) + " base proxies out of " +
                        std::to_string(n));
  }
  CounterRng rng(seed);
  std::vector<int> chosen;
  if (strategy == BaseAssignment::random) {
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < num_base; ++i) {
      const auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[i], pool[j]);
    }
    chosen.assign(pool.begin(), pool.begin() + num_base);
  } else if (num_base > 0) {
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    std::vector<bool> taken(n, false);
    int next = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    for (int c = 0; c < num_base; ++c) {
      chosen.push_back(next);
      taken[next] = true;
      int far = -1;
      for (int i = 0; i < n; ++i) {
        if (taken[i]) continue;
        min_dist[i] = std::min(min_dist[i], geodesic_distance(proxies.vectors.row(i).transpose(),
                                                              proxies.vectors.row(next).transpose()));
        if (far < 0 || min_dist[i] > min_dist[far]) far = i;
      }
      next = far;
    }
  }
  std::sort(chosen.begin(), chosen.end());
  proxies.base_indices = chosen;
  proxies.open_indices.clear();
  for (int i = 0; i < n; ++i) {
    if (!std::binary_search(chosen.begin(), chosen.end(), i)) proxies.open_indices.push_back(i);
  }
  return proxies;
}

struct PairwiseDistanceStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

// Realized pairwise geodesic distances; general n admits no equidistant
// configuration, so these are reported rather than enforced.
inline PairwiseDistanceStats pairwise_distance_stats(const Matrix& proxies) {
  PairwiseDistanceStats stats{std::numeric_limits<double>::infinity(), 0.0, 0.0};
  long pairs = 0;
  for (Eigen::Index i = 0; i < proxies.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < proxies.rows(); ++j) {
      const double dist = geodesic_distance(proxies.row(i).transpose(), proxies.row(j).transpose());
      stats.min = std::min(stats.min, dist);
      stats.max = std::max(stats.max, dist);
      stats.mean += dist;
      ++pairs;
    }
  }
  if (pairs > 0) stats.mean /= static_cast<double>(pairs);
  return stats;
}

// ---------------------------------------------------------------------------
// Proxy file: "GCPX", version u32, n u32, d u32, s f64, n*d f64 row-major,
// u32 base count, base indices u32. All little-endian.

inline constexpr std::uint32_t kProxyFileVersion = 1;

inline std::vector<char> encode_proxies(const ProxySet& proxies) {
  io::ByteWriter w;
  w.magic("GCPX");
  w.u32(kProxyFileVersion);
  w.u32(static_cast<std::uint32_t>(proxies.count()));
  w.u32(static_cast<std::uint32_t>(proxies.dim()));
  w.f64(proxies.s);
  for (Eigen::Index i = 0; i < proxies.vectors.size(); ++i) w.f64(proxies.vectors.data()[i]);
  w.u32(static_cast<std::uint32_t>(proxies.base_indices.size()));
  for (int idx : proxies.base_indices) w.u32(static_cast<std::uint32_t>(idx));
  return w.bytes();
}

inline ProxySet decode_proxies(std::vector<char> bytes, const std::string& source) {
  io::ByteReader r(std::move(bytes), source);
  r.expect_magic("GCPX");
  const std::uint32_t version = r.u32("version");
  if (version != kProxyFileVersion) r.fail("unsupported proxy file version " + std::to_string(version));
  const std::uint32_t n = r.u32("n");
  const std::uint32_t d = r.u32("d");
  if (n < 1 || d < 2) r.fail("invalid proxy shape");
  if (r.remaining() < 8 + static_cast<std::size_t>(n) * d * 8) r.fail("truncated proxy payload");
  ProxySet proxies;
  proxies.s = r.f64("s");
  proxies.vectors.resize(n, d);
  for (Eigen::Index i = 0; i < proxies.vectors.size(); ++i) proxies.vectors.data()[i] = r.f64("proxy coordinate");
  for (Eigen::Index i = 0; i < proxies.vectors.rows(); ++i) {
    if (std::abs(proxies.vectors.row(i).norm() - 1.0) > kUnitNormTolerance) {
      r.fail("proxy row " + std::to_string(i) + " is not unit norm");
    }
  }
  const std::uint32_t base_count = r.u32("base count");
  if (base_count > n) r.fail("more base indices than proxies");
  std::vector<bool> seen(n, false);
  for (std::uint32_t i = 0; i < base_count; ++i) {
    const std::uint32_t idx = r.u32("base index");
    if (idx >= n || seen[idx]) r.fail("invalid or duplicate base index " + std::to_string(idx));
    seen[idx] = true;
    proxies.base_indices.push_back(static_cast<int>(idx));
  }
  r.expect_end();
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!seen[i]) proxies.open_indices.push_back(static_cast<int>(i));
  }
  proxies.energy = n >= 2 ? riesz_energy(proxies.vectors, proxies.s) : 0.0;
  return proxies;
}

inline void write_proxies(const ProxySet& proxies, const std::filesystem::path& path) {
  io::write_file(path, encode_proxies(proxies));
}

inline ProxySet read_proxies(const std::filesystem::path& path) {
  return decode_proxies(io::read_file(path), path.string());
}

}  // namespace gcpx
