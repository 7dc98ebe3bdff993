#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "errors.hpp"
#include "objectives.hpp"
#include "proxies.hpp"
#include "random.hpp"
#include "sphere.hpp"
#include "vmf.hpp"

namespace gcpx {

// Fully connected layer; weights are (outputs x inputs).
struct DenseLayer {
  Matrix weights;
  Vector bias;
};

// tanh trunk followed by a linear output of width d + 1: the first d
// entries are normalized into the mean direction, the last goes through
// softplus plus a floor to give the concentration.
struct EncoderModel {
  std::vector<DenseLayer> layers;
  double kappa_floor = 0.01;

  int input_dim() const { return static_cast<int>(layers.front().weights.cols()); }
  int sphere_dim() const { return static_cast<int>(layers.back().weights.rows()) - 1; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n;
  }
};

using ModelGradient = std::vector<DenseLayer>;

inline EncoderModel make_encoder(int input_dim, const std::vector<int>& hidden, int sphere_dim,
                                 double kappa_floor, std::uint64_t seed) {
  if (input_dim < 1 || sphere_dim < 2) throw ConfigError("encoder needs input_dim >= 1 and sphere_dim >= 2");
  if (!(kappa_floor > 0.0) || !std::isfinite(kappa_floor)) throw ConfigError("kappa_floor must be positive");
  std::vector<int> widths{input_dim};
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden widths must be positive");
    widths.push_back(h);
  }
  widths.push_back(sphere_dim + 1);

  CounterRng rng(seed);
  EncoderModel model;
  model.kappa_floor = kappa_floor;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    const double limit = std::sqrt(6.0 / (in + out));
    DenseLayer layer{Matrix(out, in), Vector::Zero(out)};
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
      layer.weights.data()[i] = limit * (2.0 * rng.uniform() - 1.0);
    }
    model.layers.push_back(std::move(layer));
  }
  return model;
}

inline ModelGradient zero_gradient(const EncoderModel& model) {
  ModelGradient g;
  for (const auto& l : model.layers) {
    g.push_back({Matrix::Zero(l.weights.rows(), l.weights.cols()), Vector::Zero(l.bias.size())});
  }
  return g;
}

namespace encoder_detail {

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline constexpr double kDegenerateNorm = 1e-12;

// Activations of every layer for a batch (rows are instances).
struct Forward {
  std::vector<Matrix> activations;  // [0] = input, back() = raw output
};

inline Forward forward(const EncoderModel& model, const Matrix& x) {
  if (x.cols() != model.input_dim()) {
    throw ShapeError("encoder expects " + std::to_string(model.input_dim()) + " features, got " +
                     std::to_string(x.cols()));
  }
  Forward f;
  f.activations.push_back(x);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Matrix z = f.activations.back() * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    if (l + 1 < model.layers.size()) z = z.array().tanh().matrix();
    f.activations.push_back(std::move(z));
  }
  return f;
}

struct HeadOutput {
  std::vector<VmfParams> params;
  std::vector<bool> degenerate;
};

inline HeadOutput heads(const EncoderModel& model, const Matrix& out) {
  const int d = model.sphere_dim();
  HeadOutput h;
  h.params.reserve(static_cast<std::size_t>(out.rows()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const Vector v = out.row(i).head(d).transpose();
    const double norm = v.norm();
    const bool degenerate = !(norm >= kDegenerateNorm);
    const double kappa = softplus(out(i, d)) + model.kappa_floor;
    h.params.emplace_back(degenerate ? UnitVector::basis(d, 0) : UnitVector(Vector(v / norm)), kappa);
    h.degenerate.push_back(degenerate);
  }
  return h;
}

// Chains per-instance (mu, kappa) gradients back through the heads and the
// trunk, accumulating into `grad`.
inline void backward(const EncoderModel& model, const Forward& f, const std::vector<ParamGrad>& param_grads,
                     ModelGradient& grad) {
  const int d = model.sphere_dim();
  const Matrix& out = f.activations.back();
  Matrix delta(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const Vector v = out.row(i).head(d).transpose();
    const double norm = v.norm();
    const ParamGrad& g = param_grads[static_cast<std::size_t>(i)];
    if (norm >= kDegenerateNorm) {
      const Vector mu = v / norm;
      delta.row(i).head(d) = ((g.mu - g.mu.dot(mu) * mu) / norm).transpose();
    } else {
      delta.row(i).head(d).setZero();
    }
    delta(i, d) = g.kappa * sigmoid(out(i, d));
  }
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const Matrix& input = f.activations[l];
    grad[l].weights += delta.transpose() * input;
    grad[l].bias += delta.colwise().sum().transpose();
    if (l == 0) break;
    Matrix back = delta * model.layers[l].weights;
    delta = back.array() * (1.0 - input.array().square());
  }
}

}  // namespace encoder_detail

struct Encoding {
  VmfParams params;
  bool degenerate = false;
};

// Forward pass for one feature vector. A direction-head output with norm
// below 1e-12 falls back to e_1 and sets `degenerate`.
inline Encoding encode(const EncoderModel& model, const Eigen::Ref<const Vector>& features) {
  const Matrix x = features.transpose();
  const auto f = encoder_detail::forward(model, x);
  auto h = encoder_detail::heads(model, f.activations.back());
  return {std::move(h.params.front()), h.degenerate.front()};
}

inline std::vector<VmfParams> encode_rows(const EncoderModel& model, const Matrix& features) {
  const auto f = encoder_detail::forward(model, features);
  return encoder_detail::heads(model, f.activations.back()).params;
}

// Mean directions only, one row per instance.
inline Matrix encode_directions(const EncoderModel& model, const Matrix& features) {
  const auto params = encode_rows(model, features);
  Matrix out(static_cast<Eigen::Index>(params.size()), model.sphere_dim());
  for (std::size_t i = 0; i < params.size(); ++i) out.row(i) = params[i].mu().coords().transpose();
  return out;
}

struct TrainingBatch {
  Matrix base_features;
  std::vector<int> base_labels;
  Matrix unlabeled_features;
};

struct BackpropResult {
  ObjectiveTerms terms;
  ObjectiveSelection selection;
  ModelGradient gradient;
};

// Objective value for the batch. With `selection` given the discrete
// choices are frozen; otherwise they are made at the current parameters.
inline BackpropResult evaluate_model(const EncoderModel& model, const TrainingBatch& batch, const ProxySet& proxies,
                                     const LossWeights& weights, const ObjectiveSelection* selection,
                                     bool with_grads) {
  if (proxies.dim() != model.sphere_dim()) {
    throw ShapeError("model sphere dimension " + std::to_string(model.sphere_dim()) +
                     " does not match proxies (" + std::to_string(proxies.dim()) + ")");
  }
  if (static_cast<std::size_t>(batch.base_features.rows()) != batch.base_labels.size()) {
    throw ShapeError("base features and labels differ in length");
  }
  const auto fb = encoder_detail::forward(model, batch.base_features);
  const auto fu = encoder_detail::forward(model, batch.unlabeled_features);

  InstanceBatch base{encoder_detail::heads(model, fb.activations.back()).params, {}, batch.base_labels,
                     Domain::base};
  InstanceBatch unl{encoder_detail::heads(model, fu.activations.back()).params, {}, std::nullopt,
                    Domain::unlabeled};

  ObjectiveResult obj = selection ? evaluate_objective(base, unl, proxies, weights, *selection, with_grads)
                                  : total_objective(base, unl, proxies, weights, with_grads);
  BackpropResult r{obj.terms, std::move(obj.selection), {}};
  if (with_grads) {
    r.gradient = zero_gradient(model);
    if (!obj.base_grads.empty()) encoder_detail::backward(model, fb, obj.base_grads, r.gradient);
    if (!obj.unlabeled_grads.empty()) encoder_detail::backward(model, fu, obj.unlabeled_grads, r.gradient);
  }
  return r;
}

// Exact gradient of the combined objective w.r.t. every weight and bias, with
// the candidate ranking and consensus pairing held fixed.
inline BackpropResult backprop(const EncoderModel& model, const TrainingBatch& batch, const ProxySet& proxies,
                               const LossWeights& weights) {
  return evaluate_model(model, batch, proxies, weights, nullptr, true);
}

inline constexpr std::size_t kMaxFiniteDiffParameters = 10000;
// Gradients smaller than this in magnitude are compared in absolute terms.
inline constexpr double kFiniteDiffFloor = 1e-6;

// Max over parameters of |analytic - central difference| / max(|analytic|,
// |central difference|, kFiniteDiffFloor); 0 when both vanish.
inline double finite_diff_check(const EncoderModel& model, const TrainingBatch& batch, const ProxySet& proxies,
                                const LossWeights& weights, double epsilon) {
  if (!(epsilon > 1e-8 && epsilon < 1e-2)) {
    throw DomainError("finite difference epsilon must lie in (1e-8, 1e-2), got " + std::to_string(epsilon));
  }
  if (model.parameter_count() > kMaxFiniteDiffParameters) {
    throw CapacityError("model has " + std::to_string(model.parameter_count()) +
                        " parameters; exhaustive check is capped at " +
                        std::to_string(kMaxFiniteDiffParameters));
  }
  const BackpropResult analytic = backprop(model, batch, proxies, weights);
  EncoderModel probe = model;
  double worst = 0.0;
  auto check = [&](double& param, double g) {
    const double saved = param;
    param = saved + epsilon;
    const double up = evaluate_model(probe, batch, proxies, weights, &analytic.selection, false).terms.total;
    param = saved - epsilon;
    const double down = evaluate_model(probe, batch, proxies, weights, &analytic.selection, false).terms.total;
    param = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double diff = std::abs(g - numeric);
    if (diff == 0.0) return;
    const double denom = std::max({std::abs(g), std::abs(numeric), kFiniteDiffFloor});
    worst = std::max(worst, diff / denom);
  };
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    auto& layer = probe.layers[l];
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
      check(layer.weights.data()[i], analytic.gradient[l].weights.data()[i]);
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) check(layer.bias(i), analytic.gradient[l].bias(i));
  }
  return worst;
}

struct TrainConfig {
  int iterations = 2000;
  int batch_size_base = 64;
  int batch_size_unlabeled = 64;
  double step_size = 1e-3;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  LossWeights weights;

  void validate() const {
    if (iterations < 0 || batch_size_base < 1 || batch_size_unlabeled < 1) {
      throw ConfigError("iterations must be >= 0 and batch sizes >= 1");
    }
    if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw ConfigError("step size must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    weights.validate();
  }
};

struct TrainResult {
  EncoderModel model;
  std::vector<ObjectiveTerms> trace;  // objective before each update
};

namespace encoder_detail {

inline std::vector<int> draw_without_replacement(int population, int count, CounterRng& rng,
                                                 std::vector<int>& pool) {
  pool.resize(static_cast<std::size_t>(population));
  std::iota(pool.begin(), pool.end(), 0);
  const int take = std::min(count, population);
  for (int i = 0; i < take; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(population - i)));
    std::swap(pool[i], pool[j]);
  }
  std::vector<int> out(pool.begin(), pool.begin() + take);
  std::sort(out.begin(), out.end());
  return out;
}

inline Matrix gather(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

inline bool all_finite(const ModelGradient& g) {
  for (const auto& l : g) {
    if (!l.weights.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

}  // namespace encoder_detail

// Minibatch SGD with momentum. Class c of the base set is anchored to
// proxies.base_indices[c] for the whole run.
inline TrainResult train(EncoderModel model, const Matrix& base_features, const std::vector<int>& base_labels,
                         const Matrix& unlabeled_features, const ProxySet& proxies, const TrainConfig& config) {
  config.validate();
  if (static_cast<std::size_t>(base_features.rows()) != base_labels.size()) {
    throw ShapeError("base features and labels differ in length");
  }
  for (int label : base_labels) {
    if (label < 0 || label >= static_cast<int>(proxies.base_indices.size())) {
      throw DataError("base label " + std::to_string(label) + " outside the roster of " +
                      std::to_string(proxies.base_indices.size()) + " base proxies");
    }
  }
  if (config.iterations > 0 && (base_features.rows() == 0 || unlabeled_features.rows() == 0)) {
    throw DataError("training needs non-empty base and unlabeled sets");
  }

  TrainResult result{std::move(model), {}};
  EncoderModel& m = result.model;
  ModelGradient velocity = zero_gradient(m);
  CounterRng rng(config.seed);
  std::vector<int> pool;
  result.trace.reserve(static_cast<std::size_t>(config.iterations));

  for (int it = 0; it < config.iterations; ++it) {
    const auto base_rows = encoder_detail::draw_without_replacement(static_cast<int>(base_features.rows()),
                                                                    config.batch_size_base, rng, pool);
    const auto unl_rows = encoder_detail::draw_without_replacement(
        static_cast<int>(unlabeled_features.rows()), config.batch_size_unlabeled, rng, pool);
    TrainingBatch batch{encoder_detail::gather(base_features, base_rows), {},
                        encoder_detail::gather(unlabeled_features, unl_rows)};
    batch.base_labels.reserve(base_rows.size());
    for (int r : base_rows) batch.base_labels.push_back(base_labels[static_cast<std::size_t>(r)]);

    BackpropResult step = backprop(m, batch, proxies, config.weights);
    if (!std::isfinite(step.terms.total) || !encoder_detail::all_finite(step.gradient)) {
      throw NumericalError("training diverged at iteration " + std::to_string(it) + ": objective " +
                           std::to_string(step.terms.total));
    }
    result.trace.push_back(step.terms);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      velocity[l].weights = config.momentum * velocity[l].weights - config.step_size * step.gradient[l].weights;
      velocity[l].bias = config.momentum * velocity[l].bias - config.step_size * step.gradient[l].bias;
      m.layers[l].weights += velocity[l].weights;
      m.layers[l].bias += velocity[l].bias;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Model file: "GCPM", version u32, layer count u32, per layer rows u32,
// cols u32, rows*cols f64 weights (row-major), rows f64 biases; then
// kappa_floor f64.

inline constexpr std::uint32_t kModelFileVersion = 1;

inline std::vector<char> encode_model(const EncoderModel& model) {
  io::ByteWriter w;
  w.magic("GCPM");
  w.u32(kModelFileVersion);
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& l : model.layers) {
    w.u32(static_cast<std::uint32_t>(l.weights.rows()));
    w.u32(static_cast<std::uint32_t>(l.weights.cols()));
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) w.f64(l.weights.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.f64(l.bias(i));
  }
  w.f64(model.kappa_floor);
  return w.bytes();
}

inline EncoderModel decode_model(std::vector<char> bytes, const std::string& source) {
  io::ByteReader r(std::move(bytes), source);
  r.expect_magic("GCPM");
  const std::uint32_t version = r.u32("version");
  if (version != kModelFileVersion) r.fail("unsupported model file version " + std::to_string(version));
  const std::uint32_t count = r.u32("layer count");
  if (count < 1) r.fail("model has no layers");
  EncoderModel model;
  for (std::uint32_t l = 0; l < count; ++l) {
    const std::uint32_t rows = r.u32("layer rows");
    const std::uint32_t cols = r.u32("layer cols");
    if (rows < 1 || cols < 1) r.fail("empty layer");
    if (!model.layers.empty() && static_cast<Eigen::Index>(cols) != model.layers.back().weights.rows()) {
      r.fail("layer " + std::to_string(l) + " input width does not match previous output");
    }
    if (r.remaining() < (static_cast<std::size_t>(rows) * cols + rows) * 8) r.fail("truncated layer payload");
    DenseLayer layer{Matrix(rows, cols), Vector(rows)};
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = r.f64("weight");
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = r.f64("bias");
    model.layers.push_back(std::move(layer));
  }
  model.kappa_floor = r.f64("kappa_floor");
  if (!(model.kappa_floor > 0.0)) r.fail("kappa_floor must be positive");
  if (model.sphere_dim() < 2) r.fail("output layer too narrow for a sphere dimension >= 2");
  r.expect_end();
  return model;
}

inline void write_model(const EncoderModel& model, const std::filesystem::path& path) {
  io::write_file(path, encode_model(model));
}

inline EncoderModel read_model(const std::filesystem::path& path) {
  return decode_model(io::read_file(path), path.string());
}

}  // namespace gcpx
