// Acceptance checks: one PASS or FAIL line per criterion; exit status 1 if
// any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcpx/gcpx.hpp"
#include "pipeline_support.hpp"
#include "planted.hpp"

namespace {

using namespace gcpx;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;
constexpr double kPi = std::numbers::pi;

struct Verdict {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct Outcome {
  int code;
  std::string out;
};

Outcome run_cli(const std::string& args) {
  const std::string cmd = std::string(GCPX_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return {-1, ""};
  std::string out;
  char buf[4096];
  while (const auto n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gcpx_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Vector uniform_point(int d, std::mt19937_64& gen) {
  std::normal_distribution<double> n;
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = n(gen);
  return v / v.norm();
}

// Closed forms on S^2 and an inverse-CDF sampler, independent of the library.
double log_c3(double k) { return std::log(k) - std::log(4.0 * kPi) - (k + std::log1p(-std::exp(-2.0 * k)) - std::log(2.0)); }

Eigen::Vector3d sample_s2(const Eigen::Vector3d& mu, double k, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u = u01(gen);
  const double w = 1.0 + std::log(u + (1.0 - u) * std::exp(-2.0 * k)) / k;
  const double phi = 2.0 * kPi * u01(gen);
  const Eigen::Vector3d a = std::abs(mu(0)) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  const Eigen::Vector3d e1 = (a - a.dot(mu) * mu).normalized();
  const Eigen::Vector3d e2 = mu.cross(e1);
  const double r = std::sqrt(std::max(0.0, 1.0 - w * w));
  return w * mu + r * (std::cos(phi) * e1 + std::sin(phi) * e2);
}

Verdict vmf_normalization() {
  std::mt19937_64 gen(11);
  const int n = 1000000;
  std::vector<Vector> pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i) pts.push_back(uniform_point(3, gen));
  bool ok = true;
  std::string detail;
  for (double k : {0.5, 1.0, 5.0}) {
    const VmfParams p(UnitVector::basis(3, 2), k);
    double sum = 0.0;
    for (const auto& z : pts) sum += std::exp(log_density(p, UnitVector(z)));
    const double integral = 4.0 * kPi * sum / n;
    ok = ok && std::abs(integral - 1.0) <= 0.01;
    detail += "k=" + fmt(k) + ": " + fmt(integral, 6) + " ";
  }
  return {ok, detail + "(" + std::to_string(n) + " uniform samples)"};
}

Verdict sampler_fidelity() {
  const std::pair<int, double> cases[] = {{3, 1.0}, {3, 10.0}, {16, 5.0}};
  bool ok = true;
  std::string detail;
  for (const auto& [d, k] : cases) {
    const auto s = sample(VmfParams(UnitVector::basis(d, 0), k), 50000, 99);
    Vector m = Vector::Zero(d);
    for (const auto& z : s) m += z.coords();
    const double err = std::abs(m.norm() / static_cast<double>(s.size()) - mean_resultant(d, k));
    ok = ok && err <= 0.01;
    detail += "(" + std::to_string(d) + "," + fmt(k) + ") err " + fmt(err, 2) + " ";
  }
  return {ok, detail};
}

Verdict entropy_monotone() {
  for (int d : {3, 8, 64}) {
    double prev = 0.0;
    for (int i = 0; i < 50; ++i) {
      const double k = 0.1 * std::pow(1000.0, i / 49.0);
      const double h = entropy(d, k);
      if (i > 0 && !(h < prev)) return {false, "d=" + std::to_string(d) + " not decreasing at kappa " + fmt(k)};
      prev = h;
    }
  }
  return {true, "strict decrease on 50-point grids for d in {3, 8, 64}"};
}

Verdict kl_correctness() {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> kd(0.3, 6.0);
  double worst_mc = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Vector3d mp = uniform_point(3, gen), mq = uniform_point(3, gen);
    const double kp = kd(gen), kq = kd(gen);
    const int n = 2000000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d z = sample_s2(mp, kp, gen);
      sum += (log_c3(kp) + kp * mp.dot(z)) - (log_c3(kq) + kq * mq.dot(z));
    }
    const double kl = kl_divergence(VmfParams(UnitVector(Vector(mp)), kp), VmfParams(UnitVector(Vector(mq)), kq));
    worst_mc = std::max(worst_mc, std::abs(kl - sum / n));
  }
  CounterRng rng(17);
  double worst_self = 0.0, lowest = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int d = 2 + static_cast<int>(rng.below(30));
    const VmfParams p(UnitVector::random(d, rng), 0.01 + 100.0 * rng.uniform());
    const VmfParams q(UnitVector::random(d, rng), 0.01 + 100.0 * rng.uniform());
    worst_self = std::max(worst_self, std::abs(kl_divergence(p, p)));
    lowest = std::min(lowest, kl_divergence(p, q));
  }
  const bool ok = worst_mc <= 0.01 && worst_self <= 1e-10 && lowest >= -1e-10;
  return {ok, "max |closed - MC| " + fmt(worst_mc, 3) + ", max KL(p,p) " + fmt(worst_self, 3) + ", min KL " +
                  fmt(lowest, 3)};
}

// Relative error with an absolute floor for derivatives that vanish.
double rel_err(double analytic, double fd) { return std::abs(analytic - fd) / std::max(std::abs(fd), 1e-2); }

namespace od = objective_detail;

od::Posterior posterior(const Vector& mu, double kappa) {
  const int d = static_cast<int>(mu.size());
  const double a = mean_resultant(d, kappa);
  return {&mu, kappa, log_norm_const(d, kappa), a, 1.0 - a * a - (d - 1.0) * a / kappa};
}

Verdict gradient_fidelity() {
  CounterRng rng(21);
  const double h = 1e-5;
  double worst = 0.0;
  auto central = [&](const std::function<double(double)>& f) { return (f(h) - f(-h)) / (2.0 * h); };
  for (int i = 0; i < 100; ++i) {
    const int d = 2 + static_cast<int>(rng.below(31));
    const Vector mp = UnitVector::random(d, rng).coords();
    const Vector mq = UnitVector::random(d, rng).coords();
    const double kp = std::exp(-1.0 + 5.0 * rng.uniform()), kq = std::exp(-1.0 + 5.0 * rng.uniform());
    const Vector v = UnitVector::random(d, rng).coords();
    const Vector w = UnitVector::random(d, rng).coords();

    const auto gb = grad_loss_base(VmfParams(UnitVector(mp), kp), UnitVector(v));
    auto base = [&](const Vector& mu, double k) { return -k * mu.dot(v) - log_norm_const(d, k); };
    const auto gd = grad_loss_dispersion(VmfParams(UnitVector(mp), kp), UnitVector(v), UnitVector(w));
    auto disp = [&](const Vector& mu, double k) { return od::dispersion_value(posterior(mu, k), v, w); };
    const auto [gsp, gsq] = grad_loss_structuring(VmfParams(UnitVector(mp), kp), VmfParams(UnitVector(mq), kq));
    auto str = [&](const Vector& a, double ka, const Vector& b, double kb) {
      return od::structuring_value(posterior(a, ka), posterior(b, kb));
    };

    worst = std::max(worst, rel_err(gb.kappa, central([&](double e) { return base(mp, kp + e); })));
    worst = std::max(worst, rel_err(gd.kappa, central([&](double e) { return disp(mp, kp + e); })));
    worst = std::max(worst, rel_err(gsp.kappa, central([&](double e) { return str(mp, kp + e, mq, kq); })));
    worst = std::max(worst, rel_err(gsq.kappa, central([&](double e) { return str(mp, kp, mq, kq + e); })));
    for (int j = 0; j < d; ++j) {
      auto shift = [&](const Vector& m, double e) {
        Vector out = m;
        out(j) += e;
        return out;
      };
      worst = std::max(worst, rel_err(gb.mu(j), central([&](double e) { return base(shift(mp, e), kp); })));
      worst = std::max(worst, rel_err(gd.mu(j), central([&](double e) { return disp(shift(mp, e), kp); })));
      worst = std::max(worst, rel_err(gsp.mu(j), central([&](double e) { return str(shift(mp, e), kp, mq, kq); })));
      worst = std::max(worst, rel_err(gsq.mu(j), central([&](double e) { return str(mp, kp, shift(mq, e), kq); })));
    }
  }

  double worst_model = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    CounterRng r(seed);
    std::normal_distribution<double> n;
    auto model = make_encoder(4, {8}, 3, 0.01, seed);
    for (auto& l : model.layers) {
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = 0.3 * n(r);
    }
    TrainingBatch batch;
    batch.base_features = Matrix(6, 4);
    batch.unlabeled_features = Matrix(10, 4);
    for (Eigen::Index i = 0; i < batch.base_features.size(); ++i) batch.base_features.data()[i] = n(r);
    for (Eigen::Index i = 0; i < batch.unlabeled_features.size(); ++i) batch.unlabeled_features.data()[i] = n(r);
    batch.base_labels = {0, 1, 0, 1, 1, 0};
    const auto proxies = assign_base_proxies(minimize_energy(6, 3, 1.0, {}, 1), 2, 1);
    LossWeights weights;
    weights.consensus_k = 1;
    worst_model = std::max(worst_model, finite_diff_check(model, batch, proxies, weights, 1e-5));
  }
  const bool ok = worst <= 1e-5 && worst_model <= 1e-5;
  return {ok, "losses max rel err " + fmt(worst, 3) + " over 100 points, backprop " + fmt(worst_model, 3)};
}

Verdict loss_identity() {
  CounterRng rng(6);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int d = 2 + static_cast<int>(rng.below(63));
    const VmfParams p(UnitVector::random(d, rng), std::exp(-3.0 + 8.0 * rng.uniform()));
    const auto v = UnitVector::random(d, rng);
    worst = std::max(worst, std::abs(loss_base(p, v) + log_density(p, v)));
  }
  return {worst <= 1e-12, "max deviation " + fmt(worst, 3) + " on 1000 inputs"};
}

Verdict proxy_uniformity() {
  const auto three = minimize_energy(3, 2, 1.0, {}, 1);
  const auto four = minimize_energy(4, 3, 1.0, {}, 1);
  double err3 = 0.0, err4 = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = i + 1; j < 3; ++j) {
      const double g = std::acos(std::clamp(three.vectors.row(i).dot(three.vectors.row(j)), -1.0, 1.0));
      err3 = std::max(err3, std::abs(g - 2.0 * kPi / 3.0));
    }
  }
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      const double g = std::acos(std::clamp(four.vectors.row(i).dot(four.vectors.row(j)), -1.0, 1.0));
      err4 = std::max(err4, std::abs(g - std::acos(-1.0 / 3.0)));
    }
  }
  return {err3 <= 1e-6 && err4 <= 1e-3, "n=3 d=2 err " + fmt(err3, 3) + ", n=4 d=3 err " + fmt(err4, 3)};
}

Verdict spectral_accuracy() {
  bool ok = true;
  std::string detail;
  for (int k = 3; k <= 8; ++k) {
    int hits = 0;
    for (int t = 0; t < 20; ++t) {
      CounterRng rng(1000 * k + t);
      const Matrix dirs = gcpx::testing::orthonormal_directions(k, 32, rng);
      const auto p = gcpx::testing::sample_mixture(dirs, gcpx::testing::decaying_sizes(k, 200, 20), 30.0, rng);
      SpectralOptions o;
      o.seed = static_cast<std::uint64_t>(t);
      hits += estimate_class_count(p.points, o).coarse_count == k;
    }
    ok = ok && hits >= 18;
    detail += "K=" + std::to_string(k) + " " + std::to_string(hits) + "/20 ";
  }
  int hierarchy = 0;
  for (int t = 0; t < 20; ++t) {
    CounterRng rng(200 + t);
    const auto p = gcpx::testing::planted_hierarchy(100, 32, 25.0 * kPi / 180.0, 80.0, rng);
    SpectralOptions o;
    o.seed = static_cast<std::uint64_t>(t);
    o.level = CountLevel::fine;
    o.neighbor_count = 120;
    const auto est = estimate_class_count(p.points, o);
    hierarchy += est.coarse_count == 2 && est.fine_count == 4;
  }
  ok = ok && hierarchy >= 14;
  return {ok, detail + "hierarchy (2,4) " + std::to_string(hierarchy) + "/20"};
}

Verdict spectral_speed() {
  CounterRng rng(9);
  const auto p = gcpx::testing::orthogonal_mixture(10, 200, 64, 30.0, rng);
  EmbeddingDataset ds;
  ds.features = p.points;
  ds.domain = Domain::unlabeled;
  const auto dir = scratch("speed");
  write_embeddings(ds, dir / "planted.gcpe");
  const auto r = run_cli("bench-estimate --embeddings " + (dir / "planted.gcpe").string() + " --k-max 20");
  if (r.code != 0) return {false, "bench-estimate exited with " + std::to_string(r.code) + ": " + r.out};
  const auto doc = nlohmann::json::parse(r.out);
  const double spectral = doc.at("spectral_seconds").get<double>();
  const double baseline = doc.at("baseline_seconds").get<double>();
  const double speedup = baseline / spectral;
  const bool ok = spectral <= 1.0 && speedup >= 5.0;
  return {ok, "N=2000 d=64: spectral " + fmt(spectral, 3) + " s (count " +
                  std::to_string(doc.at("spectral_count").get<int>()) + "), baseline " + fmt(baseline, 3) +
                  " s, speedup " + fmt(speedup, 3) + "x"};
}

Verdict end_to_end() {
  const auto t0 = clock_type::now();
  double full = 0.0, raw = 0.0, ablated = 0.0;
  const int seeds = 5;
  for (int s = 1; s <= seeds; ++s) {
    RunConfig cfg;
    cfg.synth.seed = static_cast<std::uint64_t>(s);
    cfg.proxies.seed = static_cast<std::uint64_t>(2 + 10 * s);
    cfg.model.seed = static_cast<std::uint64_t>(3 + 10 * s);
    cfg.train.seed = static_cast<std::uint64_t>(4 + 10 * s);
    cfg.discover_seed = static_cast<std::uint64_t>(6 + 10 * s);
    const int k = cfg.synth.num_base + cfg.synth.num_novel;
    const auto run_full = gcpx::testing::run_pipeline(cfg);
    auto base_only = cfg;
    base_only.train.weights.w_dis = 0.0;
    base_only.train.weights.w_str = 0.0;
    const auto run_base = gcpx::testing::run_pipeline(base_only);
    const auto& bench = run_full.bench;
    const std::set<int> base(bench.base.base_classes.begin(), bench.base.base_classes.end());
    auto acc = [&](const std::vector<int>& labels) { return compute_metrics(labels, bench.truth, base).acc_novel; };
    Matrix z = bench.unlabeled.features;
    normalize_rows(z);
    raw += acc(spherical_kmeans(z, k, cfg.discover_seed, cfg.discover.max_iters).labels);
    full += acc(discover(run_full.trained.model, bench.unlabeled.features, k, cfg.discover_seed, cfg.discover)
                    .assignment.labels);
    ablated += acc(discover(run_base.trained.model, bench.unlabeled.features, k, cfg.discover_seed, cfg.discover)
                       .assignment.labels);
  }
  full /= seeds;
  raw /= seeds;
  ablated /= seeds;
  const double elapsed = seconds_since(t0);
  const bool ok = full - raw >= 0.10 && full - ablated >= 0.10 && elapsed <= 300.0;
  return {ok, "mean acc_novel full " + fmt(full, 3) + ", raw k-means " + fmt(raw, 3) + ", base-only " +
                  fmt(ablated, 3) + " over 5 seeds"};
}

long brute_force_overlap(const std::vector<int>& pred, const std::vector<int>& truth) {
  const auto clusters = Contingency::distinct(pred);
  const auto classes = Contingency::distinct(truth);
  std::vector<int> perm(std::max(clusters.size(), classes.size()));
  std::iota(perm.begin(), perm.end(), 0);
  long best = 0;
  do {
    long total = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const auto j = static_cast<std::size_t>(perm[Contingency::index_of(clusters, pred[i])]);
      if (j < classes.size() && classes[j] == truth[i]) ++total;
    }
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Verdict hungarian_exactness() {
  CounterRng rng(31);
  int mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    const int clusters = 1 + static_cast<int>(rng.below(6));
    const int classes = 1 + static_cast<int>(rng.below(6));
    const int n = 1 + static_cast<int>(rng.below(100));
    std::vector<int> pred(static_cast<std::size_t>(n)), truth(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      pred[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(clusters)));
      truth[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    }
    mismatches += hungarian_match(pred, truth).overlap != brute_force_overlap(pred, truth);
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 100 random tables"};
}

// Runs every stage of the command-line pipeline in `dir` and returns the
// concatenated outputs: files in order, then captured standard output.
std::string cli_pipeline(const fs::path& dir) {
  const auto p = [&](const std::string& name) { return (dir / name).string(); };
  std::string transcript;
  const std::string commands[] = {
      "synth --out-dir " + p("data"),
      "proxies --dim 16 --count 16 --num-base 5 --out " + p("proxies.gcpp"),
      "train --base " + p("data/base.gcpe") + " --unlabeled " + p("data/unlabeled.gcpe") + " --proxies " +
          p("proxies.gcpp") + " --out " + p("model.gcpm") + " --trace " + p("trace.csv"),
      "estimate --embeddings " + p("data/unlabeled.gcpe") + " --model " + p("model.gcpm") + " --out " +
          p("estimate.txt"),
      "discover --model " + p("model.gcpm") + " --unlabeled " + p("data/unlabeled.gcpe") + " --out " +
          p("assignments.csv"),
  };
  for (const auto& c : commands) {
    const auto r = run_cli(c);
    if (r.code != 0) throw std::runtime_error("'" + c + "' exited with " + std::to_string(r.code) + ": " + r.out);
    std::string out = r.out;
    // Paths differ between the two run directories.
    for (std::size_t pos; (pos = out.find(dir.string())) != std::string::npos;) out.replace(pos, dir.string().size(), "<dir>");
    transcript += out;
  }
  for (const char* f : {"data/base.gcpe", "data/unlabeled.gcpe", "data/truth.csv", "proxies.gcpp", "model.gcpm",
                        "trace.csv", "estimate.txt", "assignments.csv"}) {
    transcript += "\n== " + std::string(f) + "\n" + slurp(dir / f);
  }
  return transcript;
}

Verdict determinism() {
  try {
    const auto a = cli_pipeline(scratch("run_a"));
    const auto b = cli_pipeline(scratch("run_b"));
    return {a == b, a == b ? "two runs byte-identical (" + std::to_string(a.size()) + " bytes)" : "outputs differ"};
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
}

struct Criterion {
  std::string name;
  double limit_seconds;  // 0 when the criterion carries no time limit
  std::function<Verdict()> check;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"vmf density integrates to one", 10.0, vmf_normalization},
      {"sampler mean resultant", 10.0, sampler_fidelity},
      {"entropy decreases in concentration", 0.0, entropy_monotone},
      {"closed-form KL", 0.0, kl_correctness},
      {"gradient fidelity", 30.0, gradient_fidelity},
      {"base loss is negative log density", 0.0, loss_identity},
      {"proxy uniformity", 30.0, proxy_uniformity},
      {"spectral count accuracy", 120.0, spectral_accuracy},
      {"spectral count speed", 0.0, spectral_speed},
      {"end-to-end discovery and ablation", 300.0, end_to_end},
      {"Hungarian exactness", 0.0, hungarian_exactness},
      {"determinism of CLI stages", 0.0, determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    const auto t0 = clock_type::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double elapsed = seconds_since(t0);
    if (c.limit_seconds > 0.0 && elapsed > c.limit_seconds) {
      v.pass = false;
      v.detail += "; over the " + fmt(c.limit_seconds) + " s limit";
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << c.name << ": " << v.detail << " ("
              << fmt(elapsed, 3) << " s)" << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
