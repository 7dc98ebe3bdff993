#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "errors.hpp"

namespace gcpx {

// Minimum-cost perfect matching on a square cost matrix (rows -> columns),
// Kuhn-Munkres with potentials, O(n^3). Returns the column for every row.
inline std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  for (const auto& row : cost) {
    if (static_cast<int>(row.size()) != n) throw ShapeError("assignment cost matrix must be square");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is a virtual start.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match_col(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match_col[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = match_col[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != 0);
    do {
      const int j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (match_col[j] > 0) row_to_col[match_col[j] - 1] = j - 1;
  }
  return row_to_col;
}

inline constexpr std::size_t kMaxMatchClasses = 512;

struct MatchResult {
  std::map<int, int> cluster_to_class;  // -1 when a cluster is left unmatched
  long overlap = 0;                     // instances whose cluster maps to their class
};

// Contingency table between predicted cluster ids and true class ids.
struct Contingency {
  std::vector<int> clusters;  // sorted distinct predicted ids
  std::vector<int> classes;   // sorted distinct true ids
  std::vector<std::vector<long>> counts;  // [cluster][class]

  Contingency(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.empty()) throw DataError("cannot match empty label sequences");
    if (pred.size() != truth.size()) {
      throw ShapeError("predicted and true label sequences differ in length (" + std::to_string(pred.size()) +
                       " vs " + std::to_string(truth.size()) + ")");
    }
    clusters = distinct(pred);
    classes = distinct(truth);
    if (clusters.size() > kMaxMatchClasses || classes.size() > kMaxMatchClasses) {
      throw CapacityError("matching supports at most 512 clusters and 512 classes");
    }
    counts.assign(clusters.size(), std::vector<long>(classes.size(), 0));
    for (std::size_t i = 0; i < pred.size(); ++i) ++counts[index_of(clusters, pred[i])][index_of(classes, truth[i])];
  }

  static std::vector<int> distinct(const std::vector<int>& v) {
    std::vector<int> out(v);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  static std::size_t index_of(const std::vector<int>& sorted, int value) {
    return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), value) - sorted.begin());
  }
};

// Cluster -> class map maximizing the number of matched instances, solved
// exactly on the zero-padded square contingency table.
inline MatchResult hungarian_match(const std::vector<int>& pred, const std::vector<int>& truth) {
  const Contingency table(pred, truth);
  const std::size_t p = table.clusters.size();
  const std::size_t t = table.classes.size();
  const std::size_t n = std::max(p, t);
  long peak = 0;
  for (const auto& row : table.counts) peak = std::max(peak, *std::max_element(row.begin(), row.end()));
  // Rows enter the solver ordered by their counts, not by cluster id, so
  // the choice among equally good matchings ignores how clusters are named.
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return table.counts[a] > table.counts[b]; });
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, static_cast<double>(peak)));
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t j = 0; j < t; ++j) cost[r][j] = static_cast<double>(peak - table.counts[order[r]][j]);
  }
  const auto assignment = solve_assignment(cost);
  MatchResult result;
  for (std::size_t r = 0; r < p; ++r) {
    const std::size_t i = order[r];
    const auto j = static_cast<std::size_t>(assignment[r]);
    if (j < t) {
      result.cluster_to_class[table.clusters[i]] = table.classes[j];
      result.overlap += table.counts[i][j];
    } else {
      result.cluster_to_class[table.clusters[i]] = -1;
    }
  }
  return result;
}

struct MetricsReport {
  double acc_all = 0.0;
  double acc_known = 0.0;
  double acc_novel = 0.0;
  double f1_all = 0.0;
  double f1_known = 0.0;
  double f1_novel = 0.0;
  std::map<int, int> cluster_to_class;
  std::map<int, long> class_counts;
  long known_instances = 0;
  long novel_instances = 0;
};

// Accuracy and macro F1 over all / known (base) / novel classes, read off a
// single global Hungarian match. Metrics over an empty subset are 0.
inline MetricsReport compute_metrics(const std::vector<int>& pred, const std::vector<int>& truth,
                                     const std::set<int>& base_classes) {
  const MatchResult match = hungarian_match(pred, truth);
  const Contingency table(pred, truth);
  for (int c : base_classes) {
    if (!std::binary_search(table.classes.begin(), table.classes.end(), c)) {
      throw DataError("base class " + std::to_string(c) + " does not occur in the true labels");
    }
  }

  MetricsReport report;
  report.cluster_to_class = match.cluster_to_class;
  long hit_known = 0;
  long hit_novel = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool known = base_classes.count(truth[i]) > 0;
    const bool hit = match.cluster_to_class.at(pred[i]) == truth[i];
    ++report.class_counts[truth[i]];
    (known ? report.known_instances : report.novel_instances) += 1;
    if (hit) (known ? hit_known : hit_novel) += 1;
  }
  const auto n = static_cast<double>(pred.size());
  report.acc_all = static_cast<double>(hit_known + hit_novel) / n;
  if (report.known_instances > 0) report.acc_known = static_cast<double>(hit_known) / static_cast<double>(report.known_instances);
  if (report.novel_instances > 0) report.acc_novel = static_cast<double>(hit_novel) / static_cast<double>(report.novel_instances);

  std::map<int, long> cluster_sizes;
  for (int p : pred) ++cluster_sizes[p];
  std::map<int, int> class_to_cluster;
  for (const auto& [cluster, cls] : match.cluster_to_class) {
    if (cls >= 0) class_to_cluster[cls] = cluster;
  }
  double sum_all = 0.0, sum_known = 0.0, sum_novel = 0.0;
  int n_known = 0, n_novel = 0;
  for (std::size_t j = 0; j < table.classes.size(); ++j) {
    const int cls = table.classes[j];
    double f1 = 0.0;
    if (auto it = class_to_cluster.find(cls); it != class_to_cluster.end()) {
      const long tp = table.counts[Contingency::index_of(table.clusters, it->second)][j];
      if (tp > 0) {
        const double precision = static_cast<double>(tp) / static_cast<double>(cluster_sizes[it->second]);
        const double recall = static_cast<double>(tp) / static_cast<double>(report.class_counts[cls]);
        f1 = 2.0 * precision * recall / (precision + recall);
      }
    }
    sum_all += f1;
    if (base_classes.count(cls) > 0) {
      sum_known += f1;
      ++n_known;
    } else {
      sum_novel += f1;
      ++n_novel;
    }
  }
  report.f1_all = sum_all / static_cast<double>(table.classes.size());
  if (n_known > 0) report.f1_known = sum_known / n_known;
  if (n_novel > 0) report.f1_novel = sum_novel / n_novel;
  return report;
}

}  // namespace gcpx
