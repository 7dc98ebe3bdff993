#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "proxies.hpp"
#include "sphere.hpp"
#include "vmf.hpp"

namespace gcpx {

enum class Domain { base, unlabeled };

// Mini-batch of instance posteriors. Labels are present exactly for the
// base domain.
struct InstanceBatch {
  std::vector<VmfParams> params;
  std::vector<int> features_index;
  std::optional<std::vector<int>> labels;
  Domain domain = Domain::unlabeled;

  std::size_t size() const { return params.size(); }

  void validate() const {
    if (labels.has_value() != (domain == Domain::base)) {
      throw DataError(domain == Domain::base ? "base batch is missing labels"
                                             : "unlabeled batch carries labels");
    }
    if (labels && labels->size() != params.size()) {
      throw ShapeError("batch has " + std::to_string(params.size()) + " instances but " +
                       std::to_string(labels->size()) + " labels");
    }
    for (std::size_t i = 1; i < params.size(); ++i) {
      require_same_dim(params[i].mu().dim(), params[0].mu().dim(), "instance batch");
    }
  }
};

struct LossWeights {
  double w_base = 1.0;
  double w_dis = 1.0;
  double w_str = 1.0;
  double dispersion_fraction = 0.25;
  int consensus_k = 3;

  void validate() const {
    for (double w : {w_base, w_dis, w_str}) {
      if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and >= 0");
    }
    if (!(dispersion_fraction > 0.0 && dispersion_fraction <= 1.0)) {
      throw ConfigError("dispersion fraction must lie in (0, 1]");
    }
    if (consensus_k < 1) throw ConfigError("consensus k must be >= 1");
  }
};

struct ConsensusGraph {
  std::vector<std::pair<int, int>> pairs;  // alpha < beta, lexicographic order
};

// Gradient of a scalar w.r.t. one instance's parameters: ambient gradient in
// mu (not projected onto the tangent space) and the kappa derivative.
struct ParamGrad {
  Vector mu;
  double kappa = 0.0;
};

namespace objective_detail {

// Per-instance quantities reused by every loss term.
struct Posterior {
  const Vector* mu;
  double kappa;
  double log_c;
  double a;
  double a_prime;
};

inline Posterior summarize(const VmfParams& p) {
  const int d = p.dim();
  const double a = mean_resultant(d, p.kappa());
  return {&p.mu().coords(), p.kappa(), log_norm_const(d, p.kappa()), a,
          1.0 - a * a - (d - 1.0) * a / p.kappa()};
}

inline double log_sum_exp2(double x, double y) {
  const double hi = std::max(x, y);
  return hi + std::log1p(std::exp(std::min(x, y) - hi));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double dispersion_value(const Posterior& q, const Vector& open, const Vector& base) {
  const double a = q.kappa * q.mu->dot(open);
  const double b = q.kappa * q.mu->dot(base);
  return log_sum_exp2(a, b) - a;
}

inline ParamGrad dispersion_grad(const Posterior& q, const Vector& open, const Vector& base) {
  const double cos_open = q.mu->dot(open);
  const double cos_base = q.mu->dot(base);
  const double w = sigmoid(q.kappa * (cos_base - cos_open));
  return {w * q.kappa * (base - open), w * (cos_base - cos_open)};
}

inline double kl_value(const Posterior& p, const Posterior& q) {
  return p.log_c - q.log_c + p.a * (p.kappa - q.kappa * p.mu->dot(*q.mu));
}

inline double structuring_value(const Posterior& p, const Posterior& q) {
  return -1.0 / (kl_value(p, q) + 1.0);
}

// d/d(params) of -(KL(p||q) + 1)^{-1}.
inline std::pair<ParamGrad, ParamGrad> structuring_grad(const Posterior& p, const Posterior& q) {
  const double kl = kl_value(p, q);
  const double outer = 1.0 / ((kl + 1.0) * (kl + 1.0));
  const double cos = p.mu->dot(*q.mu);
  ParamGrad gp{outer * (-p.a * q.kappa) * *q.mu, outer * p.a_prime * (p.kappa - q.kappa * cos)};
  ParamGrad gq{outer * (-p.a * q.kappa) * *p.mu, outer * (q.a - p.a * cos)};
  return {std::move(gp), std::move(gq)};
}

// Index of the row of `proxies` (restricted to `subset`) with the largest
// cosine to mu; lowest index wins ties.
inline int nearest(const Vector& mu, const Matrix& proxies, const std::vector<int>& subset) {
  int best = -1;
  double best_cos = -std::numeric_limits<double>::infinity();
  for (int idx : subset) {
    const double c = proxies.row(idx).dot(mu);
    if (c > best_cos) {
      best_cos = c;
      best = idx;
    }
  }
  return best;
}

inline std::vector<int> top_k_set(const Vector& log_overlaps, int k) {
  std::vector<int> order(static_cast<std::size_t>(log_overlaps.size()));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    return log_overlaps(a) > log_overlaps(b) || (log_overlaps(a) == log_overlaps(b) && a < b);
  });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace objective_detail

// Base bounding loss: -kappa mu.v_B - (d/2-1) log kappa + log I_{d/2-1}(kappa)
// + (d/2) log 2pi, i.e. the negative vMF log density at the class proxy.
inline double loss_base(const VmfParams& params, const UnitVector& base_proxy) {
  require_same_dim(params.mu().dim(), base_proxy.dim(), "loss_base");
  return -params.kappa() * params.mu().dot(base_proxy) - log_norm_const(params.dim(), params.kappa());
}

inline ParamGrad grad_loss_base(const VmfParams& params, const UnitVector& base_proxy) {
  require_same_dim(params.mu().dim(), base_proxy.dim(), "grad_loss_base");
  return {-params.kappa() * base_proxy.coords(),
          mean_resultant(params.dim(), params.kappa()) - params.mu().dot(base_proxy)};
}

// Unlabeled instances ordered by their best base-proxy log density, lowest
// (most divergent from every base class) first; ties keep batch order.
inline std::vector<int> rank_open_candidates(const InstanceBatch& batch, const Matrix& base_proxies) {
  if (batch.domain != Domain::unlabeled) throw DataError("rank_open_candidates expects an unlabeled batch");
  if (base_proxies.rows() == 0) throw ConfigError("rank_open_candidates: no base proxies");
  std::vector<double> score(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& p = batch.params[i];
    require_same_dim(p.mu().dim(), base_proxies.cols(), "rank_open_candidates");
    const double best_cos = (base_proxies * p.mu().coords()).maxCoeff();
    score[i] = log_norm_const(p.dim(), p.kappa()) + p.kappa() * best_cos;
  }
  std::vector<int> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score[a] < score[b]; });
  return order;
}

// -log softmax of the open-proxy logit against the base-proxy logit.
inline double loss_dispersion(const VmfParams& params, const UnitVector& open_proxy,
                              const UnitVector& base_proxy) {
  require_same_dim(params.mu().dim(), open_proxy.dim(), "loss_dispersion");
  require_same_dim(params.mu().dim(), base_proxy.dim(), "loss_dispersion");
  const double a = params.kappa() * params.mu().dot(open_proxy);
  const double b = params.kappa() * params.mu().dot(base_proxy);
  return objective_detail::log_sum_exp2(a, b) - a;
}

inline ParamGrad grad_loss_dispersion(const VmfParams& params, const UnitVector& open_proxy,
                                      const UnitVector& base_proxy) {
  require_same_dim(params.mu().dim(), open_proxy.dim(), "grad_loss_dispersion");
  require_same_dim(params.mu().dim(), base_proxy.dim(), "grad_loss_dispersion");
  const objective_detail::Posterior q{&params.mu().coords(), params.kappa(), 0.0, 0.0, 0.0};
  return objective_detail::dispersion_grad(q, open_proxy.coords(), base_proxy.coords());
}

// log C_d(kappa) + kappa mu.v_i for every proxy row.
inline Vector proxy_overlaps(const VmfParams& params, const Matrix& proxies) {
  require_same_dim(params.mu().dim(), proxies.cols(), "proxy_overlaps");
  const double log_c = log_norm_const(params.dim(), params.kappa());
  return (params.kappa() * (proxies * params.mu().coords())).array() + log_c;
}

inline ConsensusGraph consensus_pairs(const InstanceBatch& batch, const Matrix& proxies, int k) {
  if (k < 1 || k > proxies.rows()) {
    throw ConfigError("consensus k=" + std::to_string(k) + " outside [1, " +
                      std::to_string(proxies.rows()) + "]");
  }
  std::vector<std::vector<int>> keys;
  keys.reserve(batch.size());
  for (const auto& p : batch.params) {
    keys.push_back(objective_detail::top_k_set(proxy_overlaps(p, proxies), k));
  }
  ConsensusGraph graph;
  for (std::size_t a = 0; a < keys.size(); ++a) {
    for (std::size_t b = a + 1; b < keys.size(); ++b) {
      if (keys[a] == keys[b]) graph.pairs.emplace_back(static_cast<int>(a), static_cast<int>(b));
    }
  }
  return graph;
}

// -(KL(p||q) + 1)^{-1}, in [-1, 0).
inline double loss_structuring(const VmfParams& p, const VmfParams& q) {
  return -1.0 / (kl_divergence(p, q) + 1.0);
}

inline std::pair<ParamGrad, ParamGrad> grad_loss_structuring(const VmfParams& p, const VmfParams& q) {
  require_same_dim(p.mu().dim(), q.mu().dim(), "grad_loss_structuring");
  return objective_detail::structuring_grad(objective_detail::summarize(p),
                                            objective_detail::summarize(q));
}

// ---------------------------------------------------------------------------
// Combined objective.

struct DispersionPick {
  int instance;
  int open_proxy;  // row of the proxy matrix
  int base_proxy;
};

// Discrete choices made before differentiation: which unlabeled instances are
// dispersed toward which proxies, and which pairs are structured.
struct ObjectiveSelection {
  std::vector<DispersionPick> dispersion;
  ConsensusGraph consensus;
};

struct ObjectiveTerms {
  double total = 0.0;
  double base = 0.0;         // unweighted mean of the base bounding loss
  double dispersion = 0.0;   // unweighted mean of the dispersion loss
  double structuring = 0.0;  // unweighted mean of the symmetrized structuring loss
  bool base_empty = true;
  bool dispersion_empty = true;
  bool structuring_empty = true;
};

struct ObjectiveResult {
  ObjectiveTerms terms;
  ObjectiveSelection selection;
  // d total / d params for each instance; empty unless gradients requested.
  std::vector<ParamGrad> base_grads;
  std::vector<ParamGrad> unlabeled_grads;
};

inline ObjectiveSelection select_candidates(const InstanceBatch& unlabeled, const ProxySet& proxies,
                                            const LossWeights& weights) {
  ObjectiveSelection sel;
  if (unlabeled.size() == 0) return sel;
  const Matrix base = proxies.base_vectors();
  if (!proxies.open_indices.empty()) {
    const auto order = rank_open_candidates(unlabeled, base);
    const auto take = static_cast<std::size_t>(
        std::ceil(weights.dispersion_fraction * static_cast<double>(unlabeled.size())));
    for (std::size_t r = 0; r < std::min(take, order.size()); ++r) {
      const Vector& mu = unlabeled.params[order[r]].mu().coords();
      sel.dispersion.push_back({order[r], objective_detail::nearest(mu, proxies.vectors, proxies.open_indices),
                                objective_detail::nearest(mu, proxies.vectors, proxies.base_indices)});
    }
  }
  sel.consensus = consensus_pairs(unlabeled, proxies.vectors, weights.consensus_k);
  return sel;
}

// Evaluates the weighted objective for a fixed selection, optionally with
// per-instance gradients. Reductions run in index order.
inline ObjectiveResult evaluate_objective(const InstanceBatch& base_batch, const InstanceBatch& unlabeled,
                                          const ProxySet& proxies, const LossWeights& weights,
                                          const ObjectiveSelection& selection, bool with_grads) {
  using namespace objective_detail;
  weights.validate();
  if (base_batch.domain != Domain::base) throw DataError("first batch must be the base domain");
  if (unlabeled.domain != Domain::unlabeled) throw DataError("second batch must be the unlabeled domain");
  base_batch.validate();
  unlabeled.validate();

  ObjectiveResult result;
  result.selection = selection;
  const int d = proxies.dim();
  if (with_grads) {
    result.base_grads.assign(base_batch.size(), ParamGrad{Vector::Zero(d), 0.0});
    result.unlabeled_grads.assign(unlabeled.size(), ParamGrad{Vector::Zero(d), 0.0});
  }
  ObjectiveTerms& t = result.terms;

  std::vector<Posterior> base_post;
  base_post.reserve(base_batch.size());
  for (const auto& p : base_batch.params) {
    require_same_dim(p.mu().dim(), d, "base batch vs proxies");
    base_post.push_back(summarize(p));
  }
  std::vector<Posterior> unl_post;
  unl_post.reserve(unlabeled.size());
  for (const auto& p : unlabeled.params) {
    require_same_dim(p.mu().dim(), d, "unlabeled batch vs proxies");
    unl_post.push_back(summarize(p));
  }

  if (!base_batch.params.empty()) {
    t.base_empty = false;
    const double scale = 1.0 / static_cast<double>(base_batch.size());
    for (std::size_t i = 0; i < base_batch.size(); ++i) {
      const int label = (*base_batch.labels)[i];
      if (label < 0 || label >= static_cast<int>(proxies.base_indices.size())) {
        throw DataError("label " + std::to_string(label) + " outside the base class roster of size " +
                        std::to_string(proxies.base_indices.size()));
      }
      const Vector anchor = proxies.vectors.row(proxies.base_indices[label]).transpose();
      const Posterior& q = base_post[i];
      t.base += scale * (-q.kappa * q.mu->dot(anchor) - q.log_c);
      if (with_grads) {
        result.base_grads[i].mu += (weights.w_base * scale * -q.kappa) * anchor;
        result.base_grads[i].kappa += weights.w_base * scale * (q.a - q.mu->dot(anchor));
      }
    }
  }

  if (!selection.dispersion.empty()) {
    t.dispersion_empty = false;
    const double scale = 1.0 / static_cast<double>(selection.dispersion.size());
    for (const auto& pick : selection.dispersion) {
      const Vector open = proxies.vectors.row(pick.open_proxy).transpose();
      const Vector base = proxies.vectors.row(pick.base_proxy).transpose();
      const Posterior& q = unl_post[pick.instance];
      t.dispersion += scale * dispersion_value(q, open, base);
      if (with_grads) {
        const ParamGrad g = dispersion_grad(q, open, base);
        result.unlabeled_grads[pick.instance].mu += (weights.w_dis * scale) * g.mu;
        result.unlabeled_grads[pick.instance].kappa += weights.w_dis * scale * g.kappa;
      }
    }
  }

  if (!selection.consensus.pairs.empty()) {
    t.structuring_empty = false;
    const double scale = 0.5 / static_cast<double>(selection.consensus.pairs.size());
    for (const auto& [a, b] : selection.consensus.pairs) {
      const Posterior& p = unl_post[a];
      const Posterior& q = unl_post[b];
      t.structuring += scale * (structuring_value(p, q) + structuring_value(q, p));
      if (with_grads) {
        const double w = weights.w_str * scale;
        const auto [gpq_p, gpq_q] = structuring_grad(p, q);
        const auto [gqp_q, gqp_p] = structuring_grad(q, p);
        result.unlabeled_grads[a].mu += w * (gpq_p.mu + gqp_p.mu);
        result.unlabeled_grads[a].kappa += w * (gpq_p.kappa + gqp_p.kappa);
        result.unlabeled_grads[b].mu += w * (gpq_q.mu + gqp_q.mu);
        result.unlabeled_grads[b].kappa += w * (gpq_q.kappa + gqp_q.kappa);
      }
    }
  }

  t.total = weights.w_base * t.base + weights.w_dis * t.dispersion + weights.w_str * t.structuring;
  return result;
}

// Selects dispersion candidates and consensus pairs at the current
// parameters, then evaluates the weighted objective.
inline ObjectiveResult total_objective(const InstanceBatch& base_batch, const InstanceBatch& unlabeled,
                                       const ProxySet& proxies, const LossWeights& weights,
                                       bool with_grads = false) {
  weights.validate();
  unlabeled.validate();
  if (unlabeled.domain != Domain::unlabeled) throw DataError("second batch must be the unlabeled domain");
  return evaluate_objective(base_batch, unlabeled, proxies, weights,
                            select_candidates(unlabeled, proxies, weights), with_grads);
}

}  // namespace gcpx
