#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "ltibayes/core.hpp"
#include "ltibayes/wave_sim.hpp"

namespace ltibayes {

namespace toml {

/// Minimal TOML-subset document: [section] headers, `key = value` lines,
/// values are numbers, booleans, quoted strings or flat arrays of those,
/// `#` comments. Enough for run configs; nothing more.
using Value = std::variant<double, bool, std::string, std::vector<double>,
                           std::vector<std::string>>;

struct Table {
  std::map<std::string, std::map<std::string, Value>> sections;

  bool has(const std::string& section, const std::string& key) const;
  double number(const std::string& section, const std::string& key) const;
  double number_or(const std::string& section, const std::string& key,
                   double fallback) const;
  int integer(const std::string& section, const std::string& key) const;
  int integer_or(const std::string& section, const std::string& key,
                 int fallback) const;
  bool boolean_or(const std::string& section, const std::string& key,
                  bool fallback) const;
  std::string string_or(const std::string& section, const std::string& key,
                        const std::string& fallback) const;
  std::vector<double> numbers(const std::string& section,
                              const std::string& key) const;
};

Table parse(const std::string& text);
Table parse_file(const std::filesystem::path& path);

}  // namespace toml

struct PriorParams {
  double gamma = -1.0;  // < 0 resolves to the default (4 h_x)^2
  double delta = 1.0;

  double resolved_gamma(double h_x) const {
    return gamma >= 0 ? gamma : (4 * h_x) * (4 * h_x);
  }
};

struct NoiseParams {
  double rel = 0.01;
  uint64_t seed = 1;
};

struct TruthParams {
  double center_x = 0;   // resolved to length/2 when negative
  double sigma_x = -1;   // resolved to 8 h_x when negative
  double rise_time = 20;
  double amplitude = 2;
};

struct BenchParams {
  std::vector<int> nt_sweep = {1024, 2048, 4096, 8192};
  int nd = 4;
  int nm = 4;
  int repeats = 3;
  bool run_cg = true;
  double cg_tol = 1e-8;
  int cg_max_iter = 200000;
};

/// Full run configuration (TOML sections [wave], [prior], [noise], [truth],
/// [dims], [paths], [bench]).
struct RunConfig {
  WaveConfig wave;
  PriorParams prior;
  NoiseParams noise;
  TruthParams truth;
  BenchParams bench;
  std::string out_dir = "out";

  void validate() const;
  /// Resolves defaults that depend on other fields (truth center etc.).
  void resolve();
};

RunConfig load_config(const std::filesystem::path& path);
RunConfig config_from_table(const toml::Table& t);

/// Reference desk configuration (N_m = 256, N_d = 16, N_q = 4, N_t = 128).
RunConfig reference_config();
/// Small configuration for quick end-to-end runs and tests.
RunConfig tiny_config();

}  // namespace ltibayes
