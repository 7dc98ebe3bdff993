#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numbers>
#include <set>

#include <gtest/gtest.h>

#include "gcpx/label_io.hpp"
#include "gcpx/synth.hpp"

namespace {

using namespace gcpx;
namespace fs = std::filesystem;

SynthConfig small_config() {
  SynthConfig c;
  c.per_base_count = 40;
  c.imbalance_ratio = 4.0;
  return c;
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gcpx_synth_test";
  fs::create_directories(dir);
  return dir / name;
}

double angle_deg(const Vector& a, const Vector& b) {
  return std::acos(std::clamp(a.dot(b), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

TEST(NovelClassSizes, GeometricDecay) {
  SynthConfig c;
  c.num_novel = 4;
  c.imbalance_ratio = 8.0;
  EXPECT_EQ(novel_class_sizes(c), (std::vector<int>{200, 100, 50, 25}));
  c.num_novel = 1;
  EXPECT_EQ(novel_class_sizes(c), (std::vector<int>{200}));
}

TEST(GenerateSynthetic, SizesAndLabelSets) {
  const SynthConfig c;
  const auto b = generate_synthetic(c);
  EXPECT_EQ(b.base.features.rows(), c.num_base * c.per_base_count);
  EXPECT_EQ(b.base.features.cols(), c.d_feature);
  const std::set<int> base_labels(b.base.labels->begin(), b.base.labels->end());
  EXPECT_EQ(base_labels, (std::set<int>{0, 1, 2, 3, 4}));
  const std::set<int> truth(b.truth.begin(), b.truth.end());
  EXPECT_EQ(truth, (std::set<int>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(b.base.base_classes, (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_FALSE(b.unlabeled.labels.has_value());
  EXPECT_EQ(b.unlabeled.domain, Domain::unlabeled);
  EXPECT_EQ(b.base.domain, Domain::base);
  EXPECT_EQ(b.truth.size(), b.unlabeled.size());
  std::vector<long> counts(8, 0);
  for (int t : b.truth) ++counts[static_cast<std::size_t>(t)];
  for (int cls = 0; cls < 5; ++cls) EXPECT_EQ(counts[cls], 200);
  EXPECT_EQ(counts[5], 200);
  EXPECT_EQ(counts[6], 71);
  EXPECT_EQ(counts[7], 25);
  EXPECT_TRUE(b.base.features.allFinite());
  EXPECT_TRUE(b.unlabeled.features.allFinite());
}

TEST(GenerateSynthetic, ClassDirectionsAreSeparated) {
  const auto b = generate_synthetic(SynthConfig{});
  for (Eigen::Index i = 0; i < b.class_directions.rows(); ++i) {
    EXPECT_NEAR(b.class_directions.row(i).norm(), 1.0, 1e-12);
    for (Eigen::Index j = i + 1; j < b.class_directions.rows(); ++j) {
      EXPECT_GE(angle_deg(b.class_directions.row(i).transpose(), b.class_directions.row(j).transpose()), 30.0);
    }
  }
}

TEST(GenerateSynthetic, ZeroShiftKeepsDirections) {
  auto c = small_config();
  c.shift_angle_deg = 0.0;
  const auto b = generate_synthetic(c);
  EXPECT_EQ(b.shifted_directions, b.class_directions.topRows(c.num_base));
}

TEST(GenerateSynthetic, RealizedShiftAngle) {
  for (double deg : {5.0, 15.0, 45.0, 90.0}) {
    auto c = small_config();
    c.shift_angle_deg = deg;
    const auto b = generate_synthetic(c);
    for (int cls = 0; cls < c.num_base; ++cls) {
      EXPECT_NEAR(angle_deg(b.class_directions.row(cls).transpose(), b.shifted_directions.row(cls).transpose()), deg,
                  1e-6);
    }
  }
}

TEST(GenerateSynthetic, BitIdenticalForSameSeed) {
  const auto a = generate_synthetic(small_config());
  const auto b = generate_synthetic(small_config());
  EXPECT_TRUE(a.base == b.base);
  EXPECT_TRUE(a.unlabeled == b.unlabeled);
  EXPECT_EQ(a.truth, b.truth);
  EXPECT_EQ(encode_embeddings(a.unlabeled), encode_embeddings(b.unlabeled));
  auto other = small_config();
  other.seed = 2;
  EXPECT_FALSE(generate_synthetic(other).base == a.base);
}

TEST(GenerateSynthetic, Errors) {
  auto tiny_tail = small_config();
  tiny_tail.per_base_count = 20;
  tiny_tail.imbalance_ratio = 8.0;
  EXPECT_THROW(generate_synthetic(tiny_tail), DataError);
  auto crowded = small_config();
  crowded.d_embed = 2;
  crowded.num_base = 10;
  EXPECT_THROW(generate_synthetic(crowded), DataError);
  auto bad = small_config();
  bad.shift_angle_deg = 91.0;
  EXPECT_THROW(generate_synthetic(bad), ConfigError);
  bad = small_config();
  bad.gen_kappa = 0.0;
  EXPECT_THROW(generate_synthetic(bad), ConfigError);
  bad = small_config();
  bad.imbalance_ratio = 0.5;
  EXPECT_THROW(generate_synthetic(bad), ConfigError);
  bad = small_config();
  bad.num_novel = 0;
  EXPECT_THROW(generate_synthetic(bad), ConfigError);
}

TEST(EmbeddingFile, BinaryRoundTrip) {
  const auto b = generate_synthetic(small_config());
  for (const auto* ds : {&b.base, &b.unlabeled}) {
    const auto path = temp_path("round.gcpe");
    write_embeddings(*ds, path);
    const auto back = read_embeddings(path);
    EXPECT_TRUE(back == *ds);
    EXPECT_EQ(std::memcmp(back.features.data(), ds->features.data(),
                          static_cast<std::size_t>(ds->features.size()) * sizeof(double)),
              0);
  }
}

TEST(EmbeddingFile, CsvRoundTrip) {
  const auto b = generate_synthetic(small_config());
  for (const auto* ds : {&b.base, &b.unlabeled}) {
    const auto path = temp_path("round.csv");
    write_embeddings(*ds, path);
    const auto back = read_embeddings(path);
    EXPECT_EQ(back.features, ds->features);
    EXPECT_EQ(back.labels, ds->labels);
    EXPECT_EQ(back.domain, ds->domain);
  }
  const auto text = synth_detail::encode_csv(b.base);
  EXPECT_EQ(text.rfind("id,label,f0,f1,", 0), 0u);
}

TEST(EmbeddingFile, RejectsCorruptBinary) {
  const auto bytes = encode_embeddings(generate_synthetic(small_config()).base);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(decode_embeddings(truncated, "t"), FormatError);
  auto tail = bytes;
  tail.pop_back();
  EXPECT_THROW(decode_embeddings(tail, "t"), FormatError);
  auto magic = bytes;
  magic[1] = 'Z';
  EXPECT_THROW(decode_embeddings(magic, "m"), FormatError);
  auto version = bytes;
  version[4] = 2;
  EXPECT_THROW(decode_embeddings(version, "v"), FormatError);
  auto nan = bytes;
  const double inf = std::numeric_limits<double>::infinity();
  std::memcpy(nan.data() + 20 + 8 * 5, &inf, 8);
  try {
    decode_embeddings(nan, "n");
    FAIL() << "non-finite value accepted";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 60u);
  }
  EXPECT_THROW(read_embeddings(temp_path("missing.gcpe")), Error);
}

TEST(EmbeddingFile, RejectsCorruptCsv) {
  auto decode = [](const std::string& text) {
    return synth_detail::decode_csv(std::vector<char>(text.begin(), text.end()), "csv");
  };
  EXPECT_THROW(decode("x,y,z\n"), FormatError);
  EXPECT_THROW(decode("id,label,f0,f1\n0,1,0.5\n"), FormatError);
  EXPECT_THROW(decode("id,label,f0\n0,1,abc\n"), FormatError);
  EXPECT_THROW(decode("id,label,f0\n0,1,0.5\n1,,0.25\n"), FormatError);
  const auto ok = decode("id,label,f0,f1\n0,,0.5,1e-3\n1,,-2,3\n");
  EXPECT_FALSE(ok.labels.has_value());
  EXPECT_EQ(ok.features(1, 0), -2.0);
}

TEST(LabelCsv, RoundTripAndErrors) {
  const std::vector<int> labels{3, 0, 2, 2, 1};
  const auto text = encode_label_csv(labels, "predicted_label");
  EXPECT_EQ(text.rfind("instance_id,predicted_label\n", 0), 0u);
  EXPECT_EQ(decode_label_csv(std::vector<char>(text.begin(), text.end()), "x"), labels);
  auto decode = [](const std::string& t) { return decode_label_csv(std::vector<char>(t.begin(), t.end()), "x"); };
  EXPECT_EQ(decode("instance_id,label\n1,5\n0,7\n"), (std::vector<int>{7, 5}));
  EXPECT_THROW(decode("id,label\n0,1\n"), FormatError);
  EXPECT_THROW(decode("instance_id,label\n0,a\n"), FormatError);
  EXPECT_TRUE(decode("instance_id,label\n").empty());
  EXPECT_THROW(decode(""), FormatError);
  EXPECT_THROW(decode("instance_id,label\n0,1\n2,1\n"), DataError);
  EXPECT_THROW(decode("instance_id,label\n0,1\n0,1\n"), DataError);
}

}  // namespace
