#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "clustering.hpp"
#include "errors.hpp"
#include "random.hpp"
#include "sphere.hpp"

namespace gcpx {

// Rectified, k-NN sparsified cosine affinity with unit self-loops.
struct AffinityGraph {
  Matrix weights;
  Vector degree;
  int neighbor_count = 0;
  std::vector<int> isolated;  // nodes left with only their self-loop

  bool isolated_warning() const { return !isolated.empty(); }
};

// w_ij = max(0, z_i.z_j); each row keeps its `neighbor_count` largest
// off-diagonal weights (lowest index on ties), the result is symmetrized by
// max(w_ij, w_ji) and the diagonal set to 1.
inline AffinityGraph build_affinity(const Matrix& z, int neighbor_count) {
  const Eigen::Index n = z.rows();
  if (n < 2) throw CapacityError("affinity graph needs at least two points");
  if (neighbor_count < 1) throw ConfigError("neighbor_count must be >= 1");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(z.row(i).norm() - 1.0) > 1e-6) {
      throw DomainError("affinity rows must be unit norm (row " + std::to_string(i) + ")");
    }
  }
  const Matrix raw = (z * z.transpose()).cwiseMax(0.0);
  const auto keep = static_cast<Eigen::Index>(std::min<Eigen::Index>(neighbor_count, n - 1));

  Matrix kept = Matrix::Zero(n, n);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index fill = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) order[fill++] = j;
    }
    std::partial_sort(order.begin(), order.begin() + keep, order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return raw(i, a) > raw(i, b) || (raw(i, a) == raw(i, b) && a < b);
    });
    for (Eigen::Index r = 0; r < keep; ++r) kept(i, order[r]) = raw(i, order[r]);
  }

  AffinityGraph g;
  g.neighbor_count = neighbor_count;
  g.weights = kept.cwiseMax(kept.transpose());
  g.weights.diagonal().setOnes();
  g.degree = g.weights.rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (g.degree(i) <= 1.0) g.isolated.push_back(static_cast<int>(i));
  }
  return g;
}

// L = D^{-1/2} (D - W) D^{-1/2} = I - D^{-1/2} W D^{-1/2}.
inline Matrix normalized_laplacian(const AffinityGraph& graph) {
  const Eigen::Index n = graph.weights.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(graph.degree(i) > 0.0)) throw DegenerateError("node " + std::to_string(i) + " has zero degree");
  }
  const Vector inv_sqrt = graph.degree.cwiseSqrt().cwiseInverse();
  Matrix lap = -(inv_sqrt.asDiagonal() * graph.weights * inv_sqrt.asDiagonal());
  lap.diagonal().array() += 1.0;
  return 0.5 * (lap + lap.transpose());
}

enum class CountLevel { coarse, fine };

inline constexpr int kDefaultNeighborCount = 10;
inline constexpr int kDefaultMaxPoints = 768;

struct SpectralOptions {
  std::optional<std::pair<int, int>> window;  // default: (2, min(100, N/10))
  CountLevel level = CountLevel::coarse;
  int neighbor_count = kDefaultNeighborCount;
  int max_points = kDefaultMaxPoints;
  std::uint64_t seed = 0;
};

struct SpectralEstimate {
  std::vector<double> eigenvalues;  // ascending
  std::vector<double> gaps;         // gaps[i-1] = lambda_{i+1} - lambda_i
  int coarse_count = 0;
  int fine_count = 0;
  std::pair<int, int> window{0, 0};
  CountLevel level = CountLevel::coarse;
  int points_used = 0;
  bool isolated_warning = false;

  int count() const { return level == CountLevel::coarse ? coarse_count : fine_count; }
};

inline std::pair<int, int> default_window(int n) {
  const int hi = std::min({100, std::max(3, n / 10), n - 1});
  return {2, hi};
}

// Uniform subsample (seeded) of at most `max_points` rows, in input order.
inline std::vector<int> subsample_rows(int n, int max_points, std::uint64_t seed) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (n <= max_points) return idx;
  CounterRng rng(seed);
  for (int i = 0; i < max_points; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(max_points));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Class count from the eigengaps of the normalized Laplacian. With
// eigenvalues lambda_1 <= ... <= lambda_N, the coarse count is the i in the
// window maximizing lambda_{i+1} - lambda_i (smaller i on ties); the fine
// count is the largest gap at an index beyond the coarse count, or the
// coarse count itself when none exists.
inline SpectralEstimate estimate_class_count(const Matrix& embeddings, const SpectralOptions& options = {}) {
  if (options.max_points < 4) throw ConfigError("max_points must be >= 4");
  const auto rows = subsample_rows(static_cast<int>(embeddings.rows()), options.max_points, options.seed);
  const int n = static_cast<int>(rows.size());
  if (n < 4) throw CapacityError("class count estimation needs at least 4 points");
  const auto [k_min, k_max] = options.window.value_or(default_window(n));
  if (k_min < 2 || k_min >= k_max || k_max > n - 1) {
    throw ConfigError("gap window (" + std::to_string(k_min) + ", " + std::to_string(k_max) +
                      ") must satisfy 2 <= k_min < k_max <= N-1 with N=" + std::to_string(n));
  }
  Matrix z(n, embeddings.cols());
  for (int i = 0; i < n; ++i) z.row(i) = embeddings.row(rows[static_cast<std::size_t>(i)]);

  const AffinityGraph graph = build_affinity(z, options.neighbor_count);
  const Eigen::MatrixXd lap = normalized_laplacian(graph);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("eigendecomposition of the Laplacian failed");

  SpectralEstimate est;
  est.level = options.level;
  est.window = {k_min, k_max};
  est.points_used = n;
  est.isolated_warning = graph.isolated_warning();
  est.eigenvalues.assign(solver.eigenvalues().data(), solver.eigenvalues().data() + n);
  est.gaps.resize(static_cast<std::size_t>(n - 1));
  for (int i = 0; i + 1 < n; ++i) est.gaps[i] = est.eigenvalues[i + 1] - est.eigenvalues[i];

  auto gap = [&](int i) { return est.gaps[static_cast<std::size_t>(i - 1)]; };
  est.coarse_count = k_min;
  for (int i = k_min + 1; i <= k_max; ++i) {
    if (gap(i) > gap(est.coarse_count)) est.coarse_count = i;
  }
  est.fine_count = est.coarse_count;
  for (int i = est.coarse_count + 1; i <= k_max; ++i) {
    if (est.fine_count == est.coarse_count || gap(i) > gap(est.fine_count)) est.fine_count = i;
  }
  return est;
}

struct BaselineEstimate {
  int k = 2;
  bool degenerate = false;
  std::vector<double> inertias;  // inertias[k-1] for k = 1..k_max
};

inline constexpr int kBaselineRestarts = 10;
inline constexpr int kBaselineMaxIters = 300;
// An elbow weaker than this fraction of the total inertia drop over the
// sweep is reported as degenerate.
inline constexpr double kElbowFloor = 0.1;

// Sweep-k spherical k-means (best of `restarts` seeds per k) and the elbow
// of the inertia curve: argmax over k of I(k-1) - 2 I(k) + I(k+1).
inline BaselineEstimate count_estimation_baseline(const Matrix& embeddings, int k_max, std::uint64_t seed,
                                                  int restarts = kBaselineRestarts) {
  if (k_max < 2) throw ConfigError("baseline needs k_max >= 2");
  if (restarts < 1) throw ConfigError("baseline needs at least one restart");
  if (k_max + 1 > embeddings.rows()) throw CapacityError("baseline k_max exceeds the number of points");
  const CounterRng root(seed);
  BaselineEstimate out;
  // One extra k so the second difference is defined at k_max.
  for (int k = 1; k <= k_max + 1; ++k) {
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
      auto rng = root.substream(static_cast<std::uint64_t>(k) * 1000 + static_cast<std::uint64_t>(r));
      best = std::min(best, spherical_kmeans(embeddings, k, rng(), kBaselineMaxIters).inertia);
    }
    out.inertias.push_back(best);
  }
  double strongest = -std::numeric_limits<double>::infinity();
  for (int k = 2; k <= k_max; ++k) {
    const double second = out.inertias[k - 2] - 2.0 * out.inertias[k - 1] + out.inertias[k];
    if (second > strongest) {
      strongest = second;
      out.k = k;
    }
  }
  if (!(strongest > kElbowFloor * (out.inertias.front() - out.inertias.back()))) {
    out.k = 2;
    out.degenerate = true;
  }
  return out;
}

}  // namespace gcpx
