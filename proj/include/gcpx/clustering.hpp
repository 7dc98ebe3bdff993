#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"
#include "random.hpp"
#include "sphere.hpp"

namespace gcpx {

struct ClusterAssignment {
  std::vector<int> labels;
  Matrix centroids;  // k x d, unit rows
  double inertia = 0.0;  // sum over points of 1 - cos(point, centroid)
  std::vector<double> inertia_trace;  // after every assignment step
  int iterations = 0;
  bool converged = false;
};

namespace clustering_detail {

// Greedy k-means++ seeding with the cosine distance 1 - cos, which for unit
// vectors is half the squared Euclidean distance: each step draws
// 2 + floor(ln k) candidates by distance weighting and keeps the one that
// lowers the total distance most.
inline Matrix seed_centroids(const Matrix& z, int k, CounterRng& rng) {
  const Eigen::Index n = z.rows();
  const int trials = 2 + static_cast<int>(std::log(static_cast<double>(k)));
  Matrix centroids(k, z.cols());
  auto distances_to = [&](Eigen::Index i) -> Vector {
    return (1.0 - (z * z.row(i).transpose()).array()).max(0.0).matrix();
  };
  Eigen::Index first = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
  centroids.row(0) = z.row(first);
  Vector dist = distances_to(first);
  for (int c = 1; c < k; ++c) {
    const double total = dist.sum();
    if (!(total > 0.0)) {
      // Every point coincides with a chosen centroid.
      const Eigen::Index pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
      centroids.row(c) = z.row(pick);
      continue;
    }
    Eigen::Index best = -1;
    double best_potential = std::numeric_limits<double>::infinity();
    Vector best_dist;
    for (int t = 0; t < trials; ++t) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      Eigen::Index pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += dist(i);
        if (acc > target && dist(i) > 0.0) {
          pick = i;
          break;
        }
      }
      Vector candidate = dist.cwiseMin(distances_to(pick));
      const double potential = candidate.sum();
      if (potential < best_potential) {
        best_potential = potential;
        best = pick;
        best_dist = std::move(candidate);
      }
    }
    centroids.row(c) = z.row(best);
    dist = std::move(best_dist);
  }
  return centroids;
}

}  // namespace clustering_detail

// Lloyd iterations under cosine similarity: assign each row to the
// centroid of maximal cosine (lowest index on ties), then replace every
// centroid by the normalized mean of its members. A cluster whose mean
// vanishes (including an empty one) is reseeded at the point farthest from
// its current centroid. Stops when assignments repeat or after max_iters.
inline ClusterAssignment spherical_kmeans(const Matrix& z, int k, std::uint64_t seed, int max_iters = 100) {
  if (k < 1) throw ConfigError("spherical_kmeans needs k >= 1");
  if (k > z.rows()) {
    throw CapacityError("cannot form " + std::to_string(k) + " clusters from " + std::to_string(z.rows()) +
                        " points");
  }
  if (max_iters < 1) throw ConfigError("spherical_kmeans needs max_iters >= 1");
  const Eigen::Index n = z.rows();
  CounterRng rng(seed);

  ClusterAssignment out;
  Matrix centroids = clustering_detail::seed_centroids(z, k, rng);
  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  std::vector<double> best_cos(static_cast<std::size_t>(n));

  for (int it = 0; it < max_iters; ++it) {
    const Matrix sims = z * centroids.transpose();
    bool changed = false;
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index arg = 0;
      const double best = sims.row(i).maxCoeff(&arg);
      if (labels[i] != static_cast<int>(arg)) changed = true;
      labels[i] = static_cast<int>(arg);
      best_cos[i] = best;
      inertia += 1.0 - best;
    }
    out.inertia_trace.push_back(inertia);
    out.iterations = it + 1;
    out.labels = labels;
    out.centroids = centroids;
    out.inertia = inertia;
    if (!changed) {
      out.converged = true;
      break;
    }

    Matrix sums = Matrix::Zero(k, z.cols());
    for (Eigen::Index i = 0; i < n; ++i) sums.row(labels[i]) += z.row(i);
    std::vector<bool> reseeded(static_cast<std::size_t>(n), false);
    for (int c = 0; c < k; ++c) {
      const double norm = sums.row(c).norm();
      if (norm > 1e-12) {
        centroids.row(c) = sums.row(c) / norm;
        continue;
      }
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (reseeded[i]) continue;
        if (far < 0 || best_cos[i] < best_cos[far]) far = i;
      }
      reseeded[far] = true;
      centroids.row(c) = z.row(far);
    }
  }
  return out;
}

}  // namespace gcpx
