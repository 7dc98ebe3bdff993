#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clustering.hpp"
#include "encoder.hpp"
#include "spectral.hpp"

namespace gcpx {

struct DiscoverOptions {
  SpectralOptions spectral;
  int max_iters = 100;
};

struct DiscoveryResult {
  ClusterAssignment assignment;
  std::optional<SpectralEstimate> estimate;  // present when k was estimated
  std::vector<std::string> stages;           // components invoked, in order
  int k = 0;
};

// Encodes every instance, estimates k from the mean directions when not
// given (coarse level), and clusters the directions with spherical k-means.
// Concentrations are not used at this stage.
inline DiscoveryResult discover(const EncoderModel& model, const Matrix& unlabeled_features, std::optional<int> k,
                                std::uint64_t seed, DiscoverOptions options = {}) {
  DiscoveryResult result;
  result.stages.push_back("encode");
  const Matrix directions = encode_directions(model, unlabeled_features);
  if (k) {
    result.k = *k;
  } else {
    result.stages.push_back("estimate");
    options.spectral.level = CountLevel::coarse;
    result.estimate = estimate_class_count(directions, options.spectral);
    result.k = result.estimate->coarse_count;
  }
  result.stages.push_back("cluster");
  result.assignment = spherical_kmeans(directions, result.k, seed, options.max_iters);
  return result;
}

}  // namespace gcpx
