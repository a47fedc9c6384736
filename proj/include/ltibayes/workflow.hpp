#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ltibayes/bayes_engine.hpp"
#include "ltibayes/config.hpp"
#include "ltibayes/io.hpp"

namespace ltibayes {

/// Workflow drivers behind the CLI subcommands. Each writes its outputs
/// under cfg.out_dir and returns a summary for the caller to print or
/// assert on.

struct SimulateResult {
  double max_pressure = 0;     // Pa, clean observations
  double max_wave_height = 0;  // m, clean QoI
  double sigma = 0;            // noise std used for Gamma_noise
  std::filesystem::path d_obs_path;
};
SimulateResult cmd_simulate(const RunConfig& cfg);

struct OfflineResult {
  bool skipped = false;  // artifacts were already up to date
  Manifest manifest;
  double smw_self_check = 0;  // embedded end-to-end residual check
};
OfflineResult cmd_offline(
    const RunConfig& cfg,
    InferenceEngine::KAssembly mode = InferenceEngine::KAssembly::ColumnByColumn);

struct InferResult {
  double load_seconds = 0;
  double compute_seconds = 0;
  double smw_rel_residual = 0;
  uint64_t wave_solver_invocations = 0;  // must stay 0 on the online path
  std::filesystem::path map_csv, qoi_csv;
};
InferResult cmd_infer(const RunConfig& cfg,
                      const std::filesystem::path& d_obs_path,
                      int probes = 0, double level = 0.95);

struct BenchRow {
  std::string op;
  int n_d = 0, n_m = 0, n_t = 0;
  double wall_seconds = 0;
  double gflops_est = 0;
};
struct BenchResult {
  std::vector<BenchRow> rows;
  double fft_speedup_largest = 0;  // dense/fft wall ratio at largest N_t
  double online_seconds = 0;
  double cg_seconds = 0;
  int cg_iterations = 0;
  double online_speedup = 0;  // cg/online wall ratio
  std::filesystem::path csv_path;
};
BenchResult cmd_bench(const RunConfig& cfg);

struct VerifyCheck {
  std::string name;
  double measured = 0;
  std::string bound;  // human-readable pass condition
  bool pass = false;
};
struct VerifyReport {
  std::vector<VerifyCheck> checks;
  bool all_pass = true;
};
/// Full oracle suite on built-in tiny instances. With debug_transpose the
/// p2o kernel slices are transposed first, a negative control that must make
/// the dot-product check fail.
VerifyReport cmd_verify(const RunConfig& cfg, bool debug_transpose = false);

/// FNV digest of the resolved configuration (manifest staleness checks).
uint64_t config_digest(const RunConfig& cfg);

}  // namespace ltibayes
