// gcpx: command-line front end for the discovery pipeline.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data or file
// format error, 3 numerical failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gcpx/config.hpp"
#include "gcpx/gcpx.hpp"
#include "gcpx/label_io.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

int fail(const std::string& stage, const std::string& msg, int code) {
  std::cerr << "gcpx " << stage << ": " << msg << "\n";
  return code;
}

// Runs one stage and maps library errors onto exit codes.
int run_stage(const std::string& stage, const std::function<void()>& body) {
  try {
    body();
    return kOk;
  } catch (const gcpx::ConfigError& e) {
    return fail(stage, e.what(), kUsage);
  } catch (const gcpx::FormatError& e) {
    return fail(stage, e.what(), kData);
  } catch (const gcpx::DataError& e) {
    return fail(stage, e.what(), kData);
  } catch (const gcpx::ShapeError& e) {
    return fail(stage, e.what(), kData);
  } catch (const gcpx::CapacityError& e) {
    return fail(stage, e.what(), kData);
  } catch (const gcpx::NumericalError& e) {
    return fail(stage, e.what(), kNumerical);
  } catch (const gcpx::DomainError& e) {
    return fail(stage, e.what(), kNumerical);
  } catch (const gcpx::DegenerateError& e) {
    return fail(stage, e.what(), kNumerical);
  } catch (const fs::filesystem_error& e) {
    return fail(stage, e.what(), kData);
  }
}

gcpx::RunConfig load_config(const std::string& path) {
  return path.empty() ? gcpx::RunConfig{} : gcpx::read_config(path);
}

std::pair<int, int> parse_window(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw gcpx::ConfigError("--window expects 'a,b', got '" + text + "'");
  try {
    std::size_t used_a = 0, used_b = 0;
    const int a = std::stoi(text.substr(0, comma), &used_a);
    const int b = std::stoi(text.substr(comma + 1), &used_b);
    if (used_a != comma || used_b != text.size() - comma - 1) throw std::invalid_argument("trailing");
    return {a, b};
  } catch (const std::logic_error&) {
    throw gcpx::ConfigError("--window expects two integers 'a,b', got '" + text + "'");
  }
}

std::set<int> parse_class_list(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.insert(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw gcpx::ConfigError("--base-classes expects comma-separated integers, got '" + text + "'");
    }
  }
  return out;
}

// Unit-norm rows to estimate on: encoded directions when a model is given,
// otherwise the normalized input rows.
gcpx::Matrix embedding_rows(const std::string& embeddings, const std::string& model_path) {
  const auto ds = gcpx::read_embeddings(embeddings);
  if (!model_path.empty()) return gcpx::encode_directions(gcpx::read_model(model_path), ds.features);
  gcpx::Matrix z = ds.features;
  if (const auto zeros = gcpx::normalize_rows(z); zeros > 0) {
    throw gcpx::DataError(embeddings + ": " + std::to_string(zeros) + " rows have zero norm");
  }
  return z;
}

std::string metrics_json(const gcpx::MetricsReport& m) {
  ordered_json doc;
  doc["acc_all"] = m.acc_all;
  doc["acc_known"] = m.acc_known;
  doc["acc_novel"] = m.acc_novel;
  doc["f1_all"] = m.f1_all;
  doc["f1_known"] = m.f1_known;
  doc["f1_novel"] = m.f1_novel;
  ordered_json mapping = ordered_json::object();
  for (const auto& [cluster, cls] : m.cluster_to_class) mapping[std::to_string(cluster)] = cls;
  doc["cluster_to_class"] = mapping;
  ordered_json counts = ordered_json::object();
  for (const auto& [cls, n] : m.class_counts) counts[std::to_string(cls)] = n;
  doc["class_counts"] = counts;
  doc["known_instances"] = m.known_instances;
  doc["novel_instances"] = m.novel_instances;
  return doc.dump(2) + "\n";
}

double mean_of(const std::vector<gcpx::ObjectiveTerms>& trace, std::size_t from, std::size_t to) {
  double sum = 0.0;
  for (std::size_t i = from; i < to; ++i) sum += trace[i].total;
  return to > from ? sum / static_cast<double>(to - from) : 0.0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometry-constrained probabilistic novel-class discovery"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  std::function<int()> action;

  // config
  std::string config_show;
  auto* cmd_config = app.add_subcommand("config", "Print the effective run configuration as JSON");
  cmd_config->add_option("--config", config_show, "Configuration file to load (defaults when omitted)");
  cmd_config->callback([&] {
    action = [&] { return run_stage("config", [&] { std::cout << gcpx::dump_config(load_config(config_show)); }); };
  });

  // synth
  std::string synth_config, synth_out;
  auto* cmd_synth = app.add_subcommand("synth", "Generate the synthetic shifted long-tailed benchmark");
  cmd_synth->add_option("--config", synth_config, "Configuration file (defaults when omitted)");
  cmd_synth->add_option("--out-dir", synth_out, "Output directory")->required();
  cmd_synth->callback([&] {
    action = [&] {
      return run_stage("synth", [&] {
        const auto cfg = load_config(synth_config);
        const auto bench = gcpx::generate_synthetic(cfg.synth);
        const fs::path dir(synth_out);
        fs::create_directories(dir);
        gcpx::write_embeddings(bench.base, dir / "base.gcpe");
        gcpx::write_embeddings(bench.unlabeled, dir / "unlabeled.gcpe");
        gcpx::write_label_csv(bench.truth, "label", dir / "truth.csv");
        std::cout << "base: " << bench.base.size() << " x " << bench.base.features.cols() << " -> "
                  << (dir / "base.gcpe").string() << "\n";
        std::cout << "unlabeled: " << bench.unlabeled.size() << " x " << bench.unlabeled.features.cols() << " -> "
                  << (dir / "unlabeled.gcpe").string() << "\n";
        std::cout << "truth: " << (dir / "truth.csv").string() << "\n";
        std::cout << "novel class sizes:";
        for (int s : bench.novel_sizes) std::cout << " " << s;
        std::cout << "\n";
      });
    };
  });

  // proxies
  int prox_dim = 16, prox_count = 16, prox_num_base = 0;
  double prox_s = 1.0;
  std::uint64_t prox_seed = gcpx::RunConfig{}.proxies.seed;
  std::string prox_out, prox_assignment = "random";
  gcpx::EnergyMinConfig prox_energy;
  auto* cmd_proxies = app.add_subcommand("proxies", "Place energy-minimized proxies on the unit sphere");
  cmd_proxies->add_option("--dim", prox_dim, "Sphere dimension d (proxies live on S^{d-1})");
  cmd_proxies->add_option("--count", prox_count, "Number of proxies n");
  cmd_proxies->add_option("--s", prox_s, "Riesz exponent (0 selects the logarithmic kernel)");
  cmd_proxies->add_option("--num-base", prox_num_base, "Proxies reserved for base classes");
  cmd_proxies->add_option("--assignment", prox_assignment, "Base proxy selection")
      ->check(CLI::IsMember({"random", "spread"}));
  cmd_proxies->add_option("--seed", prox_seed, "Random seed");
  cmd_proxies->add_option("--restarts", prox_energy.restarts, "Random initializations");
  cmd_proxies->add_option("--max-iters", prox_energy.max_iters, "Iterations per restart");
  cmd_proxies->add_option("--out", prox_out, "Output proxy file")->required();
  cmd_proxies->callback([&] {
    action = [&] {
      return run_stage("proxies", [&] {
        auto set = gcpx::minimize_energy(prox_count, prox_dim, prox_s, prox_energy, prox_seed);
        set = gcpx::assign_base_proxies(std::move(set), prox_num_base, prox_seed + 1,
                                        gcpx::config_detail::parse_assignment(prox_assignment));
        gcpx::write_proxies(set, prox_out);
        const auto stats = gcpx::pairwise_distance_stats(set.vectors);
        std::cout << "energy: " << set.energy << "\n"
                  << "converged: " << (set.converged ? "true" : "false") << "\n"
                  << "pairwise geodesic distance: min " << stats.min << " mean " << stats.mean << " max "
                  << stats.max << "\n"
                  << "base proxies:";
        for (int i : set.base_indices) std::cout << " " << i;
        std::cout << "\n";
      });
    };
  });

  // train
  std::string train_base, train_unl, train_prox, train_config, train_out, train_trace;
  auto* cmd_train = app.add_subcommand("train", "Train the encoder on base and unlabeled features");
  cmd_train->add_option("--base", train_base, "Labeled base embeddings")->required();
  cmd_train->add_option("--unlabeled", train_unl, "Unlabeled embeddings")->required();
  cmd_train->add_option("--proxies", train_prox, "Proxy file")->required();
  cmd_train->add_option("--config", train_config, "Configuration file (defaults when omitted)");
  cmd_train->add_option("--out", train_out, "Output model file")->required();
  cmd_train->add_option("--trace", train_trace, "Optional CSV of per-iteration loss terms");
  cmd_train->callback([&] {
    action = [&] {
      return run_stage("train", [&] {
        const auto cfg = load_config(train_config);
        const auto base = gcpx::read_embeddings(train_base);
        const auto unl = gcpx::read_embeddings(train_unl);
        const auto proxies = gcpx::read_proxies(train_prox);
        if (!base.labels) throw gcpx::DataError(train_base + ": base embeddings carry no labels");
        auto model = gcpx::make_encoder(static_cast<int>(base.features.cols()), cfg.model.hidden, proxies.dim(),
                                        cfg.model.kappa_floor, cfg.model.seed);
        const auto result = gcpx::train(std::move(model), base.features, *base.labels, unl.features, proxies, cfg.train);
        gcpx::write_model(result.model, train_out);
        if (!train_trace.empty()) {
          std::ostringstream csv;
          csv.precision(17);
          csv << "iteration,total,base,dispersion,structuring\n";
          for (std::size_t i = 0; i < result.trace.size(); ++i) {
            const auto& t = result.trace[i];
            csv << i << "," << t.total << "," << t.base << "," << t.dispersion << "," << t.structuring << "\n";
          }
          gcpx::io::write_text(train_trace, csv.str());
        }
        const auto& trace = result.trace;
        const std::size_t window = std::min<std::size_t>(100, trace.size());
        std::cout << "parameters: " << result.model.parameter_count() << "\n"
                  << "iterations: " << trace.size() << "\n";
        if (window > 0) {
          std::cout << "mean loss, first " << window << ": " << mean_of(trace, 0, window) << "\n"
                    << "mean loss, last " << window << ": " << mean_of(trace, trace.size() - window, trace.size())
                    << "\n";
        }
      });
    };
  });

  // estimate
  std::string est_emb, est_model, est_config, est_level = "coarse", est_window, est_report = "text", est_out;
  std::optional<int> est_neighbors, est_max_points;
  std::optional<std::uint64_t> est_seed;
  auto* cmd_estimate = app.add_subcommand("estimate", "Estimate the number of classes from the Laplacian eigengap");
  cmd_estimate->add_option("--embeddings", est_emb, "Embedding file")->required();
  cmd_estimate->add_option("--model", est_model, "Encode the embeddings with this model first");
  cmd_estimate->add_option("--config", est_config, "Configuration file (defaults when omitted)");
  cmd_estimate->add_option("--level", est_level, "Count level")->check(CLI::IsMember({"coarse", "fine"}));
  cmd_estimate->add_option("--window", est_window, "Gap search window 'k_min,k_max' (default 2,min(100,N/10))");
  cmd_estimate->add_option("--neighbors", est_neighbors, "Nearest neighbors kept per row (default 10)");
  cmd_estimate->add_option("--max-points", est_max_points, "Subsample size cap (default 768)");
  cmd_estimate->add_option("--seed", est_seed, "Subsampling seed (default from config)");
  cmd_estimate->add_option("--report", est_report, "Report format")->check(CLI::IsMember({"text", "csv"}));
  cmd_estimate->add_option("--out", est_out, "Write the report here instead of standard output");
  cmd_estimate->callback([&] {
    action = [&] {
      return run_stage("estimate", [&] {
        const auto cfg = load_config(est_config);
        auto options = cfg.spectral;
        options.level = gcpx::config_detail::parse_level(est_level);
        if (!est_window.empty()) options.window = parse_window(est_window);
        if (est_neighbors) options.neighbor_count = *est_neighbors;
        if (est_max_points) options.max_points = *est_max_points;
        if (est_seed) options.seed = *est_seed;
        const auto est = gcpx::estimate_class_count(embedding_rows(est_emb, est_model), options);
        std::ostringstream report;
        report.precision(17);
        if (est_report == "csv") {
          report << "index,eigenvalue,gap\n";
          for (std::size_t i = 0; i < est.eigenvalues.size(); ++i) {
            report << i + 1 << "," << est.eigenvalues[i] << ",";
            if (i < est.gaps.size()) report << est.gaps[i];
            report << "\n";
          }
        } else {
          report << "points_used " << est.points_used << "\n"
                 << "window " << est.window.first << " " << est.window.second << "\n"
                 << "coarse_count " << est.coarse_count << "\n"
                 << "fine_count " << est.fine_count << "\n"
                 << "count " << est.count() << "\n"
                 << "isolated_warning " << (est.isolated_warning ? "true" : "false") << "\n";
        }
        if (est_out.empty()) {
          std::cout << report.str();
        } else {
          gcpx::io::write_text(est_out, report.str());
          std::cout << "count " << est.count() << "\n";
        }
        if (est.isolated_warning) std::cerr << "gcpx estimate: warning: isolated nodes in the affinity graph\n";
      });
    };
  });

  // discover
  std::string disc_model, disc_unl, disc_out, disc_config;
  std::optional<int> disc_k;
  std::optional<std::uint64_t> disc_seed;
  auto* cmd_discover = app.add_subcommand("discover", "Cluster unlabeled instances in the learned space");
  cmd_discover->add_option("--model", disc_model, "Trained model file")->required();
  cmd_discover->add_option("--unlabeled", disc_unl, "Unlabeled embeddings")->required();
  cmd_discover->add_option("--k", disc_k, "Number of clusters (estimated when omitted)");
  cmd_discover->add_option("--config", disc_config, "Configuration file (defaults when omitted)");
  cmd_discover->add_option("--seed", disc_seed, "Clustering seed (default from config)");
  cmd_discover->add_option("--out", disc_out, "Output assignments CSV")->required();
  cmd_discover->callback([&] {
    action = [&] {
      return run_stage("discover", [&] {
        const auto cfg = load_config(disc_config);
        const auto model = gcpx::read_model(disc_model);
        const auto unl = gcpx::read_embeddings(disc_unl);
        const auto result =
            gcpx::discover(model, unl.features, disc_k, disc_seed.value_or(cfg.discover_seed), cfg.discover);
        gcpx::write_label_csv(result.assignment.labels, "predicted_label", disc_out);
        for (const auto& stage : result.stages) std::cout << "stage " << stage << "\n";
        std::cout << "k " << result.k << "\n"
                  << "inertia " << result.assignment.inertia << "\n";
      });
    };
  });

  // eval
  std::string eval_pred, eval_truth, eval_base, eval_out;
  auto* cmd_eval = app.add_subcommand("eval", "Score predicted clusters against ground truth");
  cmd_eval->add_option("--pred", eval_pred, "Assignments CSV (instance_id,predicted_label)")->required();
  cmd_eval->add_option("--truth", eval_truth, "Truth CSV (instance_id,label)")->required();
  cmd_eval->add_option("--base-classes", eval_base, "Comma-separated base class ids")->required();
  cmd_eval->add_option("--out", eval_out, "Also write the metrics JSON here");
  cmd_eval->callback([&] {
    action = [&] {
      return run_stage("eval", [&] {
        const auto pred = gcpx::read_label_csv(eval_pred);
        const auto truth = gcpx::read_label_csv(eval_truth);
        if (pred.size() != truth.size()) {
          throw gcpx::ShapeError(eval_pred + " has " + std::to_string(pred.size()) + " rows but " + eval_truth +
                                 " has " + std::to_string(truth.size()));
        }
        const std::string text = metrics_json(gcpx::compute_metrics(pred, truth, parse_class_list(eval_base)));
        if (!eval_out.empty()) gcpx::io::write_text(eval_out, text);
        std::cout << text;
      });
    };
  });

  // bench-estimate
  std::string bench_emb, bench_model;
  int bench_k_max = 20;
  int bench_restarts = gcpx::kBaselineRestarts;
  std::uint64_t bench_seed = gcpx::RunConfig{}.spectral.seed;
  auto* cmd_bench = app.add_subcommand("bench-estimate", "Time the spectral estimator against a sweep-k elbow");
  cmd_bench->add_option("--embeddings", bench_emb, "Embedding file")->required();
  cmd_bench->add_option("--model", bench_model, "Encode the embeddings with this model first");
  cmd_bench->add_option("--k-max", bench_k_max, "Largest k of the baseline sweep");
  cmd_bench->add_option("--restarts", bench_restarts, "k-means restarts per k in the baseline");
  cmd_bench->add_option("--seed", bench_seed, "Seed shared by both estimators");
  cmd_bench->callback([&] {
    action = [&] {
      return run_stage("bench-estimate", [&] {
        using clock = std::chrono::steady_clock;
        const auto z = embedding_rows(bench_emb, bench_model);
        gcpx::SpectralOptions options;
        options.seed = bench_seed;
        const auto t0 = clock::now();
        const auto est = gcpx::estimate_class_count(z, options);
        const auto t1 = clock::now();
        const auto base = gcpx::count_estimation_baseline(z, bench_k_max, bench_seed, bench_restarts);
        const auto t2 = clock::now();
        const double spectral_s = std::chrono::duration<double>(t1 - t0).count();
        const double baseline_s = std::chrono::duration<double>(t2 - t1).count();
        ordered_json doc;
        doc["points"] = z.rows();
        doc["dim"] = z.cols();
        doc["spectral_seconds"] = spectral_s;
        doc["spectral_count"] = est.coarse_count;
        doc["baseline_seconds"] = baseline_s;
        doc["baseline_count"] = base.k;
        doc["baseline_degenerate"] = base.degenerate;
        doc["speedup"] = spectral_s > 0.0 ? baseline_s / spectral_s : 0.0;
        std::cout << doc.dump(2) << "\n";
      });
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  return action ? action() : kUsage;
}
