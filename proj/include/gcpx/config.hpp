#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "binary_io.hpp"
#include "discovery.hpp"
#include "encoder.hpp"
#include "errors.hpp"
#include "proxies.hpp"
#include "spectral.hpp"
#include "synth.hpp"

namespace gcpx {

struct ProxyConfig {
  int count = 0;  // 0: twice the total class count of the synth section
  double s = 1.0;
  BaseAssignment assignment = BaseAssignment::random;
  std::uint64_t seed = 2;
  EnergyMinConfig energy;
};

struct ModelConfig {
  std::vector<int> hidden{64};
  double kappa_floor = 0.01;
  std::uint64_t seed = 3;
};

// Every stage reads its settings and seed from here; nothing falls back to
// the clock.
struct RunConfig {
  SynthConfig synth;
  ProxyConfig proxies;
  ModelConfig model;
  TrainConfig train;
  SpectralOptions spectral;
  DiscoverOptions discover;
  std::uint64_t discover_seed = 6;

  RunConfig() {
    train.seed = 4;
    spectral.seed = 5;
  }

  int proxy_count() const { return proxies.count > 0 ? proxies.count : 2 * (synth.num_base + synth.num_novel); }

  void validate() const {
    synth.validate();
    proxies.energy.validate();
    train.validate();
    if (proxies.count < 0) throw ConfigError("proxies.count must be >= 0");
    if (!(model.kappa_floor > 0.0)) throw ConfigError("model.kappa_floor must be positive");
    for (int h : model.hidden) {
      if (h < 1) throw ConfigError("model.hidden widths must be >= 1");
    }
    if (spectral.neighbor_count < 1) throw ConfigError("spectral.neighbor_count must be >= 1");
    if (discover.max_iters < 1) throw ConfigError("discover.max_iters must be >= 1");
  }
};

namespace config_detail {

using nlohmann::json;

inline void check_keys(const json& obj, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("section '" + section + "' must be an object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* key : allowed) known = known || item.key() == key;
    if (!known) throw ConfigError("unknown key '" + item.key() + "' in section '" + section + "'");
  }
}

template <class T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

inline std::string assignment_name(BaseAssignment a) { return a == BaseAssignment::spread ? "spread" : "random"; }

inline BaseAssignment parse_assignment(const std::string& name) {
  if (name == "random") return BaseAssignment::random;
  if (name == "spread") return BaseAssignment::spread;
  throw ConfigError("proxies.assignment must be 'random' or 'spread', got '" + name + "'");
}

inline std::string level_name(CountLevel l) { return l == CountLevel::fine ? "fine" : "coarse"; }

inline CountLevel parse_level(const std::string& name) {
  if (name == "coarse") return CountLevel::coarse;
  if (name == "fine") return CountLevel::fine;
  throw ConfigError("level must be 'coarse' or 'fine', got '" + name + "'");
}

}  // namespace config_detail

inline RunConfig parse_config(const std::string& text) {
  using config_detail::check_keys;
  using config_detail::read;
  using nlohmann::json;
  RunConfig cfg;
  try {
    const json doc = json::parse(text);
    check_keys(doc, "root", {"synth", "proxies", "model", "train", "weights", "spectral", "discover"});
    if (doc.contains("synth")) {
      const auto& j = doc.at("synth");
      check_keys(j, "synth",
                 {"d_feature", "d_embed", "num_base", "num_novel", "per_base_count", "imbalance_ratio",
                  "shift_angle_deg", "gen_kappa", "noise_sigma", "nuisance_rank", "nuisance_sigma", "seed"});
      auto& s = cfg.synth;
      read(j, "d_feature", s.d_feature);
      read(j, "d_embed", s.d_embed);
      read(j, "num_base", s.num_base);
      read(j, "num_novel", s.num_novel);
      read(j, "per_base_count", s.per_base_count);
      read(j, "imbalance_ratio", s.imbalance_ratio);
      read(j, "shift_angle_deg", s.shift_angle_deg);
      read(j, "gen_kappa", s.gen_kappa);
      read(j, "noise_sigma", s.noise_sigma);
      read(j, "nuisance_rank", s.nuisance_rank);
      read(j, "nuisance_sigma", s.nuisance_sigma);
      read(j, "seed", s.seed);
    }
    if (doc.contains("proxies")) {
      const auto& j = doc.at("proxies");
      check_keys(j, "proxies", {"count", "s", "assignment", "seed", "restarts", "max_iters", "step_size", "tolerance"});
      auto& p = cfg.proxies;
      read(j, "count", p.count);
      read(j, "s", p.s);
      if (j.contains("assignment")) p.assignment = config_detail::parse_assignment(j.at("assignment").get<std::string>());
      read(j, "seed", p.seed);
      read(j, "restarts", p.energy.restarts);
      read(j, "max_iters", p.energy.max_iters);
      read(j, "step_size", p.energy.step_size);
      read(j, "tolerance", p.energy.tolerance);
    }
    if (doc.contains("model")) {
      const auto& j = doc.at("model");
      check_keys(j, "model", {"hidden", "kappa_floor", "seed"});
      read(j, "hidden", cfg.model.hidden);
      read(j, "kappa_floor", cfg.model.kappa_floor);
      read(j, "seed", cfg.model.seed);
    }
    if (doc.contains("train")) {
      const auto& j = doc.at("train");
      check_keys(j, "train", {"iterations", "batch_size_base", "batch_size_unlabeled", "step_size", "momentum", "seed"});
      auto& t = cfg.train;
      read(j, "iterations", t.iterations);
      read(j, "batch_size_base", t.batch_size_base);
      read(j, "batch_size_unlabeled", t.batch_size_unlabeled);
      read(j, "step_size", t.step_size);
      read(j, "momentum", t.momentum);
      read(j, "seed", t.seed);
    }
    if (doc.contains("weights")) {
      const auto& j = doc.at("weights");
      check_keys(j, "weights", {"w_base", "w_dis", "w_str", "dispersion_fraction", "consensus_k"});
      auto& w = cfg.train.weights;
      read(j, "w_base", w.w_base);
      read(j, "w_dis", w.w_dis);
      read(j, "w_str", w.w_str);
      read(j, "dispersion_fraction", w.dispersion_fraction);
      read(j, "consensus_k", w.consensus_k);
    }
    if (doc.contains("spectral")) {
      const auto& j = doc.at("spectral");
      check_keys(j, "spectral", {"window", "level", "neighbor_count", "max_points", "seed"});
      auto& sp = cfg.spectral;
      if (j.contains("window") && !j.at("window").is_null()) {
        const auto w = j.at("window").get<std::vector<int>>();
        if (w.size() != 2) throw ConfigError("spectral.window must be a pair [k_min, k_max]");
        sp.window = std::pair{w[0], w[1]};
      }
      if (j.contains("level")) sp.level = config_detail::parse_level(j.at("level").get<std::string>());
      read(j, "neighbor_count", sp.neighbor_count);
      read(j, "max_points", sp.max_points);
      read(j, "seed", sp.seed);
    }
    if (doc.contains("discover")) {
      const auto& j = doc.at("discover");
      check_keys(j, "discover", {"max_iters", "seed"});
      read(j, "max_iters", cfg.discover.max_iters);
      read(j, "seed", cfg.discover_seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.what());
  }
  cfg.discover.spectral = cfg.spectral;
  cfg.validate();
  return cfg;
}

inline RunConfig read_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return parse_config(std::string(bytes.begin(), bytes.end()));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline std::string dump_config(const RunConfig& cfg) {
  using nlohmann::ordered_json;
  const auto& s = cfg.synth;
  const auto& p = cfg.proxies;
  const auto& t = cfg.train;
  const auto& w = t.weights;
  ordered_json doc;
  doc["synth"] = {{"d_feature", s.d_feature},
                  {"d_embed", s.d_embed},
                  {"num_base", s.num_base},
                  {"num_novel", s.num_novel},
                  {"per_base_count", s.per_base_count},
                  {"imbalance_ratio", s.imbalance_ratio},
                  {"shift_angle_deg", s.shift_angle_deg},
                  {"gen_kappa", s.gen_kappa},
                  {"noise_sigma", s.noise_sigma},
                  {"nuisance_rank", s.nuisance_rank},
                  {"nuisance_sigma", s.nuisance_sigma},
                  {"seed", s.seed}};
  doc["proxies"] = {{"count", p.count},
                    {"s", p.s},
                    {"assignment", config_detail::assignment_name(p.assignment)},
                    {"seed", p.seed},
                    {"restarts", p.energy.restarts},
                    {"max_iters", p.energy.max_iters},
                    {"step_size", p.energy.step_size},
                    {"tolerance", p.energy.tolerance}};
  doc["model"] = {{"hidden", cfg.model.hidden}, {"kappa_floor", cfg.model.kappa_floor}, {"seed", cfg.model.seed}};
  doc["train"] = {{"iterations", t.iterations},
                  {"batch_size_base", t.batch_size_base},
                  {"batch_size_unlabeled", t.batch_size_unlabeled},
                  {"step_size", t.step_size},
                  {"momentum", t.momentum},
                  {"seed", t.seed}};
  doc["weights"] = {{"w_base", w.w_base},
                    {"w_dis", w.w_dis},
                    {"w_str", w.w_str},
                    {"dispersion_fraction", w.dispersion_fraction},
                    {"consensus_k", w.consensus_k}};
  ordered_json window = nullptr;
  if (cfg.spectral.window) window = {cfg.spectral.window->first, cfg.spectral.window->second};
  doc["spectral"] = {{"window", window},
                     {"level", config_detail::level_name(cfg.spectral.level)},
                     {"neighbor_count", cfg.spectral.neighbor_count},
                     {"max_points", cfg.spectral.max_points},
                     {"seed", cfg.spectral.seed}};
  doc["discover"] = {{"max_iters", cfg.discover.max_iters}, {"seed", cfg.discover_seed}};
  return doc.dump(2) + "\n";
}

}  // namespace gcpx
