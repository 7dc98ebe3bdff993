#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "errors.hpp"
#include "objectives.hpp"
#include "random.hpp"
#include "sphere.hpp"
#include "vmf.hpp"

namespace gcpx {

struct SynthConfig {
  int d_feature = 32;
  int d_embed = 16;
  int num_base = 5;
  int num_novel = 3;
  int per_base_count = 200;
  double imbalance_ratio = 8.0;
  double shift_angle_deg = 15.0;
  double gen_kappa = 40.0;
  double noise_sigma = 0.3;
  int nuisance_rank = 4;
  double nuisance_sigma = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (d_feature < 1 || d_embed < 2) throw ConfigError("need d_feature >= 1 and d_embed >= 2");
    if (num_base < 1 || num_novel < 1 || per_base_count < 1) throw ConfigError("class counts must be >= 1");
    if (!(imbalance_ratio >= 1.0) || !std::isfinite(imbalance_ratio)) throw ConfigError("imbalance_ratio must be >= 1");
    if (!(shift_angle_deg >= 0.0 && shift_angle_deg <= 90.0)) throw ConfigError("shift angle must lie in [0, 90]");
    if (!(gen_kappa > 0.0) || !std::isfinite(gen_kappa)) throw ConfigError("gen_kappa must be positive");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
    if (nuisance_rank < 0 || nuisance_rank > d_feature) throw ConfigError("nuisance_rank must lie in [0, d_feature]");
    if (!(nuisance_sigma >= 0.0) || !std::isfinite(nuisance_sigma)) throw ConfigError("nuisance_sigma must be >= 0");
  }
};

struct EmbeddingDataset {
  Matrix features;
  std::optional<std::vector<int>> labels;
  Domain domain = Domain::unlabeled;
  std::vector<int> base_classes;  // sorted class ids of the labeled base set

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }

  bool operator==(const EmbeddingDataset& o) const {
    return features.rows() == o.features.rows() && features.cols() == o.features.cols() &&
           features == o.features && labels == o.labels && domain == o.domain && base_classes == o.base_classes;
  }
};

struct SyntheticBenchmark {
  EmbeddingDataset base;
  EmbeddingDataset unlabeled;
  std::vector<int> truth;        // class of every unlabeled instance
  Matrix class_directions;       // generating directions, one row per class
  Matrix shifted_directions;     // unlabeled-domain directions of the base classes
  std::vector<int> novel_sizes;  // instances per novel class, largest first
};

inline constexpr double kMinClassSeparationDeg = 30.0;
inline constexpr int kSeparationBudget = 20000;
inline constexpr int kMinNovelClassSize = 5;

// Novel class sizes decaying geometrically from per_base_count down to
// per_base_count / imbalance_ratio.
inline std::vector<int> novel_class_sizes(const SynthConfig& config) {
  std::vector<int> sizes;
  for (int i = 0; i < config.num_novel; ++i) {
    const double frac = config.num_novel == 1 ? 0.0 : static_cast<double>(i) / (config.num_novel - 1);
    sizes.push_back(static_cast<int>(std::lround(config.per_base_count * std::pow(config.imbalance_ratio, -frac))));
  }
  return sizes;
}

namespace synth_detail {

inline Matrix draw_separated_directions(int count, int d, CounterRng& rng) {
  const double max_cos = std::cos(kMinClassSeparationDeg * std::numbers::pi / 180.0);
  Matrix dirs(count, d);
  int filled = 0;
  for (int attempt = 0; filled < count; ++attempt) {
    if (attempt >= kSeparationBudget) {
      throw DataError("could not place " + std::to_string(count) + " class directions 30 degrees apart in " +
                      std::to_string(d) + " dimensions; use fewer classes or a larger d_embed");
    }
    const Vector cand = UnitVector::random(d, rng).coords();
    bool ok = true;
    for (int j = 0; j < filled && ok; ++j) ok = dirs.row(j).dot(cand) <= max_cos;
    if (ok) dirs.row(filled++) = cand.transpose();
  }
  return dirs;
}

// Rotates `dir` by `angle` radians toward a seeded random orthogonal direction.
inline Vector rotate_in_random_plane(const Vector& dir, double angle, CounterRng& rng) {
  Vector w;
  do {
    w = UnitVector::random(dir.size(), rng).coords();
    w -= w.dot(dir) * dir;
  } while (w.norm() < 1e-6);
  w.normalize();
  Vector out = std::cos(angle) * dir + std::sin(angle) * w;
  return out / out.norm();
}

struct FeatureMap {
  Matrix lift;      // d_feature x d_embed
  Matrix nuisance;  // d_feature x nuisance_rank, orthonormal columns
  double noise_sigma = 0.0;
  double nuisance_sigma = 1.0;
};

inline void emit_class(Matrix& out, Eigen::Index& row, const Vector& direction, int count, double kappa,
                       const FeatureMap& map, std::uint64_t seed) {
  const auto samples = sample(VmfParams(UnitVector::normalized(direction), kappa), count, seed);
  CounterRng noise_rng(seed, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& z : samples) {
    Vector f = map.lift * z.coords();
    for (Eigen::Index j = 0; j < f.size(); ++j) f(j) += map.noise_sigma * normal(noise_rng);
    for (Eigen::Index j = 0; j < map.nuisance.cols(); ++j) f += map.nuisance_sigma * normal(noise_rng) * map.nuisance.col(j);
    out.row(row++) = f.transpose();
  }
}

}  // namespace synth_detail

// Base split: per_base_count samples of every base class. Unlabeled split:
// the base classes again with their directions rotated by shift_angle_deg,
// plus the long-tailed novel classes, in a seeded random order. Latent
// samples are vMF(direction, gen_kappa) on S^{d_embed-1}, lifted to
// d_feature by one fixed Gaussian linear map with independent noise.
inline SyntheticBenchmark generate_synthetic(const SynthConfig& config) {
  config.validate();
  const auto sizes = novel_class_sizes(config);
  if (sizes.back() < kMinNovelClassSize) {
    throw DataError("smallest novel class would have " + std::to_string(sizes.back()) +
                    " instances; at least 5 are required");
  }
  const int classes = config.num_base + config.num_novel;
  const CounterRng root(config.seed);
  CounterRng dir_rng = root.substream(0);
  CounterRng map_rng = root.substream(1);
  CounterRng shift_rng = root.substream(2);
  CounterRng order_rng = root.substream(3);

  SyntheticBenchmark bench;
  bench.class_directions = synth_detail::draw_separated_directions(classes, config.d_embed, dir_rng);
  bench.novel_sizes = sizes;

  synth_detail::FeatureMap map;
  map.noise_sigma = config.noise_sigma;
  map.nuisance_sigma = config.nuisance_sigma;
  map.lift.resize(config.d_feature, config.d_embed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(config.d_embed)));
  for (Eigen::Index i = 0; i < map.lift.size(); ++i) map.lift.data()[i] = normal(map_rng);
  if (config.nuisance_rank > 0) {
    Eigen::MatrixXd g(config.d_feature, config.nuisance_rank);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(map_rng);
    map.nuisance = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() *
                   Eigen::MatrixXd::Identity(config.d_feature, config.nuisance_rank);
  } else {
    map.nuisance.resize(config.d_feature, 0);
  }

  const double shift = config.shift_angle_deg * std::numbers::pi / 180.0;
  bench.shifted_directions.resize(config.num_base, config.d_embed);
  for (int c = 0; c < config.num_base; ++c) {
    const Vector dir = bench.class_directions.row(c).transpose();
    bench.shifted_directions.row(c) =
        (shift == 0.0 ? dir : synth_detail::rotate_in_random_plane(dir, shift, shift_rng)).transpose();
  }

  // Per-class sample seeds: stream 100 + c for the base split, 200 + c for
  // the unlabeled split.
  auto class_seed = [&](std::uint64_t stream) { return root.substream(stream)(); };

  EmbeddingDataset& base = bench.base;
  base.domain = Domain::base;
  base.features.resize(static_cast<Eigen::Index>(config.num_base) * config.per_base_count, config.d_feature);
  base.labels.emplace();
  Eigen::Index row = 0;
  for (int c = 0; c < config.num_base; ++c) {
    synth_detail::emit_class(base.features, row, bench.class_directions.row(c).transpose(), config.per_base_count,
                             config.gen_kappa, map, class_seed(100 + c));
    base.labels->insert(base.labels->end(), static_cast<std::size_t>(config.per_base_count), c);
  }
  for (int c = 0; c < config.num_base; ++c) base.base_classes.push_back(c);

  int total_unlabeled = config.num_base * config.per_base_count;
  for (int s : sizes) total_unlabeled += s;
  Matrix pooled(total_unlabeled, config.d_feature);
  std::vector<int> pooled_truth;
  pooled_truth.reserve(static_cast<std::size_t>(total_unlabeled));
  row = 0;
  for (int c = 0; c < classes; ++c) {
    const bool is_base = c < config.num_base;
    const int count = is_base ? config.per_base_count : sizes[static_cast<std::size_t>(c - config.num_base)];
    const Vector dir = is_base ? Vector(bench.shifted_directions.row(c).transpose())
                               : Vector(bench.class_directions.row(c).transpose());
    synth_detail::emit_class(pooled, row, dir, count, config.gen_kappa, map, class_seed(200 + c));
    pooled_truth.insert(pooled_truth.end(), static_cast<std::size_t>(count), c);
  }

  std::vector<int> perm(static_cast<std::size_t>(total_unlabeled));
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = total_unlabeled - 1; i > 0; --i) {
    std::swap(perm[i], perm[static_cast<std::size_t>(order_rng.below(static_cast<std::uint64_t>(i + 1)))]);
  }
  EmbeddingDataset& unl = bench.unlabeled;
  unl.domain = Domain::unlabeled;
  unl.features.resize(total_unlabeled, config.d_feature);
  bench.truth.resize(static_cast<std::size_t>(total_unlabeled));
  for (int i = 0; i < total_unlabeled; ++i) {
    unl.features.row(i) = pooled.row(perm[i]);
    bench.truth[i] = pooled_truth[perm[i]];
  }
  unl.base_classes = base.base_classes;
  return bench;
}

// ---------------------------------------------------------------------------
// Embedding files. Binary: "GCPE", version u32 (1), flags u32 (bit 0: labels
// present), N u32, D u32, N*D f64 row-major, [N u32 labels], u32 count of
// base-class ids, ids u32. CSV (chosen by a .csv extension): header
// id,label,f0..f{D-1}, empty label field for unlabeled rows, 17 significant
// digits.

inline constexpr std::uint32_t kEmbeddingFileVersion = 1;

inline std::vector<char> encode_embeddings(const EmbeddingDataset& ds) {
  io::ByteWriter w;
  w.magic("GCPE");
  w.u32(kEmbeddingFileVersion);
  w.u32(ds.labels ? 1u : 0u);
  w.u32(static_cast<std::uint32_t>(ds.features.rows()));
  w.u32(static_cast<std::uint32_t>(ds.features.cols()));
  for (Eigen::Index i = 0; i < ds.features.size(); ++i) w.f64(ds.features.data()[i]);
  if (ds.labels) {
    for (int l : *ds.labels) w.u32(static_cast<std::uint32_t>(l));
  }
  w.u32(static_cast<std::uint32_t>(ds.base_classes.size()));
  for (int c : ds.base_classes) w.u32(static_cast<std::uint32_t>(c));
  return w.bytes();
}

inline EmbeddingDataset decode_embeddings(std::vector<char> bytes, const std::string& source) {
  io::ByteReader r(std::move(bytes), source);
  r.expect_magic("GCPE");
  const std::uint32_t version = r.u32("version");
  if (version != kEmbeddingFileVersion) r.fail("unsupported embedding file version " + std::to_string(version));
  const std::uint32_t flags = r.u32("flags");
  if (flags > 1u) r.fail("unknown flag bits");
  const std::uint32_t n = r.u32("N");
  const std::uint32_t d = r.u32("D");
  if (r.remaining() < static_cast<std::size_t>(n) * d * 8) r.fail("truncated feature block");
  EmbeddingDataset ds;
  ds.features.resize(n, d);
  for (Eigen::Index i = 0; i < ds.features.size(); ++i) ds.features.data()[i] = r.f64("feature");
  if (flags & 1u) {
    ds.labels.emplace(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t l = r.u32("label");
      if (l > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) r.fail("label out of range");
      (*ds.labels)[i] = static_cast<int>(l);
    }
  }
  const std::uint32_t base_count = r.u32("base class count");
  for (std::uint32_t i = 0; i < base_count; ++i) ds.base_classes.push_back(static_cast<int>(r.u32("base class id")));
  r.expect_end();
  ds.domain = ds.labels ? Domain::base : Domain::unlabeled;
  return ds;
}

namespace synth_detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline std::string encode_csv(const EmbeddingDataset& ds) {
  std::string out = "id,label";
  for (Eigen::Index j = 0; j < ds.features.cols(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    out += std::to_string(i) + ',';
    if (ds.labels) out += std::to_string((*ds.labels)[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) out += ',' + format_double(ds.features(i, j));
    out += '\n';
  }
  return out;
}

inline EmbeddingDataset decode_csv(const std::vector<char>& bytes, const std::string& source) {
  const std::string text(bytes.begin(), bytes.end());
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line)) throw FormatError(source + ": empty CSV", 0);
  const auto header = split(line, ',');
  if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
    throw FormatError(source + ": CSV header must start with id,label,f0", 0);
  }
  const std::size_t d = header.size() - 2;
  offset += line.size() + 1;
  std::vector<std::vector<double>> rows;
  std::vector<std::optional<int>> labels;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    const auto cells = split(line, ',');
    if (cells.size() != d + 2) throw FormatError(source + ": wrong number of CSV fields", offset);
    if (cells[1].empty()) {
      labels.emplace_back();
    } else {
      int l = 0;
      const auto res = std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), l);
      if (res.ec != std::errc() || res.ptr != cells[1].data() + cells[1].size() || l < 0) {
        throw FormatError(source + ": invalid label \"" + cells[1] + "\"", offset);
      }
      labels.emplace_back(l);
    }
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d; ++j) {
      const std::string& cell = cells[j + 2];
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), row[j]);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(row[j])) {
        throw FormatError(source + ": invalid feature value \"" + cell + "\"", offset);
      }
    }
    rows.push_back(std::move(row));
    offset += line.size() + 1;
  }
  EmbeddingDataset ds;
  ds.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  const bool any = std::any_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); });
  const bool all = std::all_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); });
  if (any && !all) throw FormatError(source + ": labels must be present on every row or on none", offset);
  if (all && !labels.empty()) {
    ds.labels.emplace();
    std::set<int> distinct;
    for (const auto& l : labels) {
      ds.labels->push_back(*l);
      distinct.insert(*l);
    }
    ds.base_classes.assign(distinct.begin(), distinct.end());
  }
  ds.domain = ds.labels ? Domain::base : Domain::unlabeled;
  return ds;
}

inline bool is_csv(const std::filesystem::path& path) { return path.extension() == ".csv"; }

}  // namespace synth_detail

inline void write_embeddings(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  if (synth_detail::is_csv(path)) {
    io::write_text(path, synth_detail::encode_csv(ds));
  } else {
    io::write_file(path, encode_embeddings(ds));
  }
}

inline EmbeddingDataset read_embeddings(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  if (synth_detail::is_csv(path)) return synth_detail::decode_csv(bytes, path.string());
  return decode_embeddings(std::move(bytes), path.string());
}

}  // namespace gcpx
