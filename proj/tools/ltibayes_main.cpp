#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "ltibayes/workflow.hpp"

using namespace ltibayes;

namespace {

RunConfig resolve_config(const std::string& config_path,
                         const std::string& out_dir, uint64_t seed,
                         bool seed_set) {
  RunConfig cfg =
      config_path.empty() ? reference_config() : load_config(config_path);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (seed_set) cfg.noise.seed = seed;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "ltibayes: offline-online Bayesian inversion for LTI wave models\n"
      "(block-Toeplitz FFT matvecs, data-space posterior, real-time MAP "
      "inference and QoI forecasting)"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir, d_obs_path;
  uint64_t seed = 0;
  bool seed_set = false;
  int probes = 0;
  double level = 0.95;
  bool debug_transpose = false;
  bool fused_k = false;

  app.add_option("--config", config_path,
                 "TOML config file (built-in reference config when omitted)");
  app.add_option("--out", out_dir, "artifact directory (overrides [paths])");
  app.add_option("--seed", seed, "noise seed (overrides [noise])")
      ->each([&](const std::string&) { seed_set = true; });

  auto* sim = app.add_subcommand(
      "simulate", "generate synthetic truth, clean data and noisy d_obs");
  auto* off = app.add_subcommand(
      "offline", "run precomputation Phases 1-3 and write the artifact set");
  off->add_flag("--fused-k", fused_k,
                "assemble K with the fused batched path");
  auto* inf = app.add_subcommand(
      "infer", "real-time Phase 4: MAP inference and QoI forecast");
  inf->add_option("--data", d_obs_path,
                  "observed data series (default: <out>/d_obs.f64)");
  inf->add_option("--probes", probes,
                  "Hutchinson probes for pointwise std (0 = skip)");
  inf->add_option("--level", level, "credible level in (0,1)")
      ->check(CLI::Range(1e-9, 1.0 - 1e-9));
  auto* ben = app.add_subcommand("bench",
                                 "time FFT vs dense matvecs and the online "
                                 "inference path vs a CG baseline");
  auto* ver = app.add_subcommand("verify",
                                 "run the oracle suite on built-in tiny "
                                 "instances; exit 0 iff all checks pass");
  ver->add_flag("--debug-transpose", debug_transpose,
                "negative control: transpose kernel slices (must fail)");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = resolve_config(config_path, out_dir, seed, seed_set);
    if (*sim) {
      const auto r = cmd_simulate(cfg);
      std::printf("simulate: wrote truth and data to %s\n",
                  cfg.out_dir.c_str());
      std::printf("  max |pressure|    = %.6g Pa\n", r.max_pressure);
      std::printf("  max |wave height| = %.6g m\n", r.max_wave_height);
      std::printf("  noise sigma       = %.6g Pa\n", r.sigma);
    } else if (*off) {
      const auto r = cmd_offline(cfg, fused_k
                                          ? InferenceEngine::KAssembly::FusedBatched
                                          : InferenceEngine::KAssembly::ColumnByColumn);
      if (r.skipped) {
        std::printf("offline: artifacts up to date (matching hashes), no-op\n");
      } else {
        std::printf("offline: artifact set written to %s\n",
                    cfg.out_dir.c_str());
        for (const auto& p : r.manifest.phases) {
          std::printf("  %-28s %10.3f s\n", p.name.c_str(), p.seconds);
        }
        std::printf("  SMW self check residual = %.3e\n", r.smw_self_check);
      }
    } else if (*inf) {
      const std::filesystem::path data =
          d_obs_path.empty() ? std::filesystem::path(cfg.out_dir) / "d_obs.f64"
                             : std::filesystem::path(d_obs_path);
      const auto r = cmd_infer(cfg, data, probes, level);
      std::printf("infer: load %.3f s, compute %.3f s\n", r.load_seconds,
                  r.compute_seconds);
      std::printf("  SMW residual            = %.3e\n", r.smw_rel_residual);
      std::printf("  wave solver invocations = %llu (online path is PDE-free)\n",
                  static_cast<unsigned long long>(r.wave_solver_invocations));
      std::printf("  wrote %s and %s\n", r.map_csv.c_str(), r.qoi_csv.c_str());
      if (r.wave_solver_invocations != 0) {
        std::fprintf(stderr, "error: online path invoked the wave solver\n");
        return 1;
      }
    } else if (*ben) {
      const auto r = cmd_bench(cfg);
      std::printf("bench: wrote %s\n", r.csv_path.c_str());
      std::printf("  fft over dense speedup (largest N_t) = %.1fx\n",
                  r.fft_speedup_largest);
      if (r.cg_iterations > 0) {
        std::printf("  online %.3f s vs CG %.3f s (%d iters): %.1fx\n",
                    r.online_seconds, r.cg_seconds, r.cg_iterations,
                    r.online_speedup);
      }
    } else if (*ver) {
      const auto r = cmd_verify(cfg, debug_transpose);
      for (const auto& c : r.checks) {
        std::printf("%-36s measured %.3e  %-28s [%s]\n", c.name.c_str(),
                    c.measured, c.bound.c_str(), c.pass ? "PASS" : "FAIL");
      }
      std::printf("verify: %s\n", r.all_pass ? "all checks pass" : "FAILURES");
      return r.all_pass ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
