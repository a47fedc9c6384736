#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "ltibayes/config.hpp"
#include "ltibayes/workflow.hpp"

using namespace ltibayes;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / "ltibayes_wf" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

RunConfig test_config(const std::string& out) {
  RunConfig c = tiny_config();
  c.out_dir = (fresh_dir(out)).string();
  return c;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("toml subset parsing") {
  const auto t = toml::parse(
      "# comment\n"
      "[wave]\n"
      "length = 1000.0  # trailing comment\n"
      "substeps = 4\n"
      "absorbing_lateral = false\n"
      "sensor_x = [100.0, 200.0, 300.0]\n"
      "[paths]\n"
      "out_dir = \"runs/x #not-a-comment\"\n");
  CHECK(t.number("wave", "length") == 1000.0);
  CHECK(t.integer("wave", "substeps") == 4);
  CHECK(t.boolean_or("wave", "absorbing_lateral", true) == false);
  CHECK(t.numbers("wave", "sensor_x") == std::vector<double>{100, 200, 300});
  CHECK(t.string_or("paths", "out_dir", "") == "runs/x #not-a-comment");
  CHECK(t.number_or("wave", "missing", 7.5) == 7.5);

  CHECK_THROWS_WITH_AS(toml::parse("[wave]\nlength 3\n"),
                       doctest::Contains("key = value"), ConfigError);
  CHECK_THROWS_WITH_AS(toml::parse("x = [1, \"a\"]\n"),
                       doctest::Contains("mixed array"), ConfigError);
  CHECK_THROWS_WITH_AS(toml::parse("x = zzz\n"),
                       doctest::Contains("cannot parse value"), ConfigError);
  CHECK_THROWS_AS(toml::parse("[wave\nx = 1\n"), ConfigError);
}

TEST_CASE("config building and field-level validation") {
  const auto t = toml::parse(
      "[dims]\nn_time = 8\ndt_obs = 1.0\n"
      "[wave]\nlength = 16000.0\ndepth = 3000.0\nhx = 2000.0\nhz = 500.0\n"
      "substeps = 8\nsensor_count = 3\nqoi_count = 2\n"
      "[prior]\ngamma = 100.0\ndelta = 2.0\n"
      "[noise]\nrel = 0.02\nseed = 9\n"
      "[truth]\nrise_time = 4.0\namplitude = 1.5\n"
      "[paths]\nout_dir = \"/tmp/cfg_test\"\n");
  const auto c = config_from_table(t);
  CHECK(c.wave.n_space() == 9);
  CHECK(c.wave.sensor_x.size() == 3);
  CHECK(c.wave.n_time == 8);
  CHECK(c.prior.resolved_gamma(c.wave.h_x) == 100.0);
  CHECK(c.noise.seed == 9);
  CHECK(c.truth.center_x == 8000.0);  // resolved to length/2

  CHECK_THROWS_WITH_AS(
      config_from_table(toml::parse(
          "[wave]\nsensor_count = 2\nsensor_x = [1.0]\n")),
      doctest::Contains("not both"), ConfigError);
  auto bad = c;
  bad.prior.delta = 0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("delta"),
                       ConfigError);
}

TEST_CASE("simulate: reproducibility and zero amplitude") {
  RunConfig a = test_config("sim_a");
  const auto ra = cmd_simulate(a);
  RunConfig b = test_config("sim_b");
  const auto rb = cmd_simulate(b);
  CHECK(slurp(a.out_dir + "/d_obs.f64") == slurp(b.out_dir + "/d_obs.f64"));
  CHECK(ra.sigma == rb.sigma);
  CHECK(ra.max_pressure > 0);
  CHECK(ra.max_wave_height > 0);

  RunConfig z = test_config("sim_zero");
  z.truth.amplitude = 0.0;
  const auto rz = cmd_simulate(z);
  CHECK(rz.max_pressure == 0.0);
  const auto d = read_series<ObsSeries>(
      std::filesystem::path(z.out_dir) / "d_obs.f64");
  for (double v : d.values) CHECK(v == 0.0);
}

TEST_CASE("offline + infer end to end, idempotence, stale detection") {
  RunConfig cfg = test_config("pipeline");
  cmd_simulate(cfg);
  const auto off1 = cmd_offline(cfg);
  CHECK(!off1.skipped);
  CHECK(off1.smw_self_check <= 1e-8);
  // manifest records one adjoint PDE solve per sensor and per QoI point
  bool found = false;
  for (const auto& kv : off1.manifest.meta) {
    if (kv.first == "pde_solves") {
      CHECK(kv.second ==
            std::to_string(cfg.wave.sensor_x.size() + cfg.wave.qoi_x.size()));
      found = true;
    }
  }
  CHECK(found);

  const auto off2 = cmd_offline(cfg);
  CHECK(off2.skipped);  // byte-identical artifacts, nothing to do

  WaveSimulator::reset_solver_invocations();
  const auto inf1 = cmd_infer(cfg, std::filesystem::path(cfg.out_dir) /
                                       "d_obs.f64");
  CHECK(inf1.wave_solver_invocations == 0);  // online path is PDE-free
  CHECK(inf1.smw_rel_residual <= 1e-8);
  const auto qoi_bytes = slurp(inf1.qoi_csv);
  const auto inf2 = cmd_infer(cfg, std::filesystem::path(cfg.out_dir) /
                                       "d_obs.f64");
  CHECK(slurp(inf2.qoi_csv) == qoi_bytes);  // repeated calls identical

  // zero data -> zero forecasts
  ObsSeries zero(static_cast<int>(cfg.wave.sensor_x.size()), cfg.wave.n_time,
                 Layout::SpaceMajorRows);
  write_series(std::filesystem::path(cfg.out_dir) / "zero.f64", zero);
  const auto infz = cmd_infer(cfg, std::filesystem::path(cfg.out_dir) /
                                       "zero.f64");
  std::ifstream qcsv(infz.qoi_csv);
  std::string line;
  std::getline(qcsv, line);  // header
  while (std::getline(qcsv, line)) {
    double qid, t, mean, lo, hi;
    REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &qid, &t, &mean,
                        &lo, &hi) == 5);
    CHECK(mean == 0.0);
    CHECK(lo == doctest::Approx(-hi));  // symmetric CIs around 0
  }

  // single-byte corruption must be detected as a stale artifact
  {
    auto path = std::filesystem::path(cfg.out_dir) / "gstar.btpz";
    auto bytes = slurp(path);
    bytes[bytes.size() / 2] ^= 0x01;
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.close();
    CHECK_THROWS_WITH_AS(
        cmd_infer(cfg, std::filesystem::path(cfg.out_dir) / "d_obs.f64"),
        doctest::Contains("stale"), StateError);
  }

  // config change must also be flagged as stale
  {
    RunConfig changed = cfg;
    changed.noise.rel = 0.05;
    CHECK_THROWS_WITH_AS(
        cmd_infer(changed, std::filesystem::path(cfg.out_dir) / "d_obs.f64"),
        doctest::Contains("stale"), StateError);
  }
}

TEST_CASE("bench on a small sweep writes the pinned CSV schema") {
  RunConfig cfg = test_config("bench");
  cfg.bench.nt_sweep = {64, 128};
  cfg.bench.nd = 2;
  cfg.bench.nm = 2;
  cfg.bench.repeats = 1;
  cfg.bench.run_cg = true;
  cfg.bench.cg_max_iter = 20000;
  const auto r = cmd_bench(cfg);
  CHECK(r.fft_speedup_largest > 0);
  CHECK(r.online_speedup > 0);
  CHECK(r.cg_iterations > 0);

  std::ifstream is(r.csv_path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "op,N_d,N_m,N_t,wall_seconds,gflops_est");
  int rows = 0;
  std::string line;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == static_cast<int>(r.rows.size()));
  // per sweep point: fft, dense, speedup (+2 scaling rows after the first),
  // plus 4 online-vs-cg rows
  CHECK(rows == 3 + 5 + 4);
}

TEST_CASE("verify: pristine pass and transposed negative control") {
  RunConfig cfg = test_config("verify");
  const auto ok = cmd_verify(cfg, false);
  CHECK(ok.all_pass);
  for (const auto& c : ok.checks) CHECK(c.pass);

  const auto bad = cmd_verify(cfg, true);
  CHECK(!bad.all_pass);
  REQUIRE(!bad.checks.empty());
  CHECK(bad.checks[0].name == "adjoint_dot_product");
  CHECK(!bad.checks[0].pass);  // the deliberate transpose must be caught
}
