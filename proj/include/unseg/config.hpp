#pragma once

// Run configuration: defaults, overridden by a flat key=value file,
// overridden by command-line flags. Every layer goes through set().

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "unseg/baselines.hpp"
#include "unseg/eval.hpp"
#include "unseg/hyperparams.hpp"

namespace unseg {

inline const std::vector<double>& default_pr_thresholds() {
  static const std::vector<double> t{0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  return t;
}

struct RunConfig {
  HyperParams hp;
  int epochs = 1;
  GtMode gt_mode = GtMode::all;
  MiouAggregate aggregate = MiouAggregate::pairs;
  std::vector<double> pr_thresholds = default_pr_thresholds();

  // baselines
  std::size_t k = 17;
  std::size_t window = 5;
  int kmeans_max_iter = 100;
  GsConfig gs;

  // paths
  std::string input;
  std::string output;
  std::string viz;
  std::string model;
  std::string scribbles;
  std::string gt_dir;
  std::string pred_dir;
  std::string out_dir;

  /// Names accepted by set(), in the order they are documented.
  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k{
        "layers", "p", "q", "lr", "momentum", "mu", "nu", "iters", "min_labels", "seed", "eps", "tv_bounds",
        "epochs", "gt_mode", "aggregate", "pr_thresholds", "k", "window", "kmeans_max_iter", "tau", "sigma",
        "min_size", "input", "output", "viz", "model", "scribbles", "gt_dir", "pred_dir", "out_dir"};
    return k;
  }

  void set(const std::string& key, const std::string& value) {
    if (key == "layers") hp.layers = parse<int>(key, value);
    else if (key == "p") hp.feature_dim = parse<int>(key, value);
    else if (key == "q") hp.max_clusters = parse<int>(key, value);
    else if (key == "lr") hp.lr = parse<double>(key, value);
    else if (key == "momentum") hp.momentum = parse<double>(key, value);
    else if (key == "mu") hp.mu = parse<double>(key, value);
    else if (key == "nu") hp.nu = parse<double>(key, value);
    else if (key == "iters") hp.max_iters = parse<int>(key, value);
    else if (key == "min_labels") hp.min_labels = parse<int>(key, value);
    else if (key == "seed") hp.seed = parse<std::uint64_t>(key, value);
    else if (key == "eps") hp.eps = parse<double>(key, value);
    else if (key == "tv_bounds") hp.tv_bounds = parse_tv_bounds(value);
    else if (key == "epochs") epochs = parse<int>(key, value);
    else if (key == "gt_mode") gt_mode = parse_gt_mode(value);
    else if (key == "aggregate") aggregate = parse_aggregate(value);
    else if (key == "pr_thresholds") pr_thresholds = parse_list(key, value);
    else if (key == "k") k = parse<std::size_t>(key, value);
    else if (key == "window") window = parse<std::size_t>(key, value);
    else if (key == "kmeans_max_iter") kmeans_max_iter = parse<int>(key, value);
    else if (key == "tau") gs.tau = parse<double>(key, value);
    else if (key == "sigma") gs.sigma = parse<double>(key, value);
    else if (key == "min_size") gs.min_size = parse<std::size_t>(key, value);
    else if (key == "input") input = value;
    else if (key == "output") output = value;
    else if (key == "viz") viz = value;
    else if (key == "model") model = value;
    else if (key == "scribbles") scribbles = value;
    else if (key == "gt_dir") gt_dir = value;
    else if (key == "pred_dir") pred_dir = value;
    else if (key == "out_dir") out_dir = value;
    else throw InvalidArgument("unknown configuration key '" + key + "'");
  }

  /// Applies `key = value` lines; '#' starts a comment, blank lines are skipped.
  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path.string() + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
      try {
        set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
      } catch (const InvalidArgument& e) {
        throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  template <typename V>
  static V parse(const std::string& key, const std::string& value) {
    V out{};
    const char* first = value.data();
    const char* last = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last || value.empty())
      throw InvalidArgument("invalid value '" + value + "' for " + key);
    return out;
  }

  static std::vector<double> parse_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse<double>(key, trim(item)));
    if (out.empty()) throw InvalidArgument("empty list for " + key);
    return out;
  }
};

}  // namespace unseg
