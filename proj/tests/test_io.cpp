#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "ltibayes/io.hpp"

using namespace ltibayes;

namespace {

std::filesystem::path tmpdir() {
  auto p = std::filesystem::temp_directory_path() / "ltibayes_io_test";
  std::filesystem::create_directories(p);
  return p;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("BTPZ1 header layout is pinned") {
  const auto dir = tmpdir();
  BlockToeplitzKernel k(2, 3, 4, KernelTag::Gstar);
  for (size_t i = 0; i < k.data.size(); ++i) k.data[i] = double(i);
  write_kernel(dir / "k.btpz", k);
  const auto bytes = slurp(dir / "k.btpz");
  REQUIRE(bytes.size() == 5 + 4 * 8 + 2 * 3 * 4 * 8);
  CHECK(std::memcmp(bytes.data(), "BTPZ1", 5) == 0);
  uint64_t rows, cols, nt, tag;
  std::memcpy(&rows, bytes.data() + 5, 8);
  std::memcpy(&cols, bytes.data() + 13, 8);
  std::memcpy(&nt, bytes.data() + 21, 8);
  std::memcpy(&tag, bytes.data() + 29, 8);
  CHECK(rows == 2);
  CHECK(cols == 3);
  CHECK(nt == 4);
  CHECK(tag == 2);  // Gstar provenance code
  double first, last;
  std::memcpy(&first, bytes.data() + 37, 8);
  std::memcpy(&last, bytes.data() + bytes.size() - 8, 8);
  CHECK(first == 0.0);   // [row][col][lag] order
  CHECK(last == 23.0);
}

TEST_CASE("artifact round trips are byte-identical") {
  const auto dir = tmpdir();
  std::mt19937_64 gen(5);
  std::normal_distribution<double> n(0, 1);

  BlockToeplitzKernel k(3, 4, 5, KernelTag::Fq);
  for (auto& x : k.data) x = n(gen);
  write_kernel(dir / "a.btpz", k);
  const auto k2 = read_kernel(dir / "a.btpz");
  write_kernel(dir / "b.btpz", k2);
  CHECK(slurp(dir / "a.btpz") == slurp(dir / "b.btpz"));
  CHECK(k2.tag == KernelTag::Fq);
  CHECK(k2.data == k.data);

  Eigen::MatrixXd m(4, 3);
  for (int i = 0; i < m.size(); ++i) m(i / 3, i % 3) = n(gen);
  write_dense(dir / "a.dnsm", m, false);
  bool sym = true;
  const auto m2 = read_dense(dir / "a.dnsm", &sym);
  write_dense(dir / "b.dnsm", m2, sym);
  CHECK(slurp(dir / "a.dnsm") == slurp(dir / "b.dnsm"));
  CHECK(!sym);
  CHECK(m2 == m);

  ObsSeries s(3, 7, Layout::SpaceMajorRows);
  for (auto& x : s.values) x = n(gen);
  write_series(dir / "a.f64", s);
  const auto s2 = read_series<ObsSeries>(dir / "a.f64");
  write_series(dir / "b.f64", s2);
  CHECK(slurp(dir / "a.f64") == slurp(dir / "b.f64"));
  CHECK(slurp(dir / "a.f64.hdr") == slurp(dir / "b.f64.hdr"));
  CHECK(s2.layout == Layout::SpaceMajorRows);
  CHECK(s2.values == s.values);
}

TEST_CASE("fnv1a64 known value and manifest corruption detection") {
  // FNV-1a 64 reference values
  CHECK(fnv1a64("", 0) == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cull);

  const auto dir = tmpdir();
  BlockToeplitzKernel k(2, 2, 3, KernelTag::F);
  for (size_t i = 0; i < k.data.size(); ++i) k.data[i] = double(i) + 1;
  write_kernel(dir / "m.btpz", k);
  Manifest man;
  man.add_artifact(dir, "m.btpz");
  write_manifest(dir / "manifest.txt", man);
  const auto man2 = read_manifest(dir / "manifest.txt");
  REQUIRE(man2.artifacts.size() == 1);
  CHECK(man2.artifacts[0].hash == man.artifacts[0].hash);
  CHECK(!verify_manifest(dir, man2));

  // flip a single byte; every such corruption must be caught
  auto bytes = slurp(dir / "m.btpz");
  for (size_t pos : {size_t(0), size_t(20), bytes.size() - 1}) {
    auto corrupted = bytes;
    corrupted[pos] = static_cast<char>(corrupted[pos] ^ 0x01);
    std::ofstream os(dir / "m.btpz", std::ios::binary | std::ios::trunc);
    os.write(corrupted.data(), corrupted.size());
    os.close();
    const auto bad = verify_manifest(dir, man2);
    REQUIRE(bad.has_value());
    CHECK(*bad == "m.btpz");
  }
}

TEST_CASE("manifest phases and meta round trip") {
  const auto dir = tmpdir();
  Manifest m;
  m.phases = {{"phase1_form_F", 12.5}, {"phase2_form_K", 3.25}};
  m.meta = {{"sigma2", "4.0"}, {"substeps", "16"}};
  write_manifest(dir / "man2.txt", m);
  const auto m2 = read_manifest(dir / "man2.txt");
  REQUIRE(m2.phases.size() == 2);
  CHECK(m2.phases[1].name == "phase2_form_K");
  CHECK(m2.phases[1].seconds == doctest::Approx(3.25));
  REQUIRE(m2.meta.size() == 2);
  CHECK(m2.meta[0].second == "4.0");
}

TEST_CASE("atomic writes leave no temp files") {
  const auto dir = tmpdir() / "atomic";
  std::filesystem::create_directories(dir);
  atomic_write(dir / "x.txt", [](std::ostream& os) { os << "hello\n"; });
  int count = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    (void)e;
    ++count;
  }
  CHECK(count == 1);
}

TEST_CASE("truncated archives raise IoError") {
  const auto dir = tmpdir();
  BlockToeplitzKernel k(2, 2, 2, KernelTag::F);
  write_kernel(dir / "t.btpz", k);
  auto bytes = slurp(dir / "t.btpz");
  bytes.resize(bytes.size() - 9);
  std::ofstream os(dir / "t.btpz", std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), bytes.size());
  os.close();
  CHECK_THROWS_AS(read_kernel(dir / "t.btpz"), IoError);
  CHECK_THROWS_AS(read_kernel(dir / "missing.btpz"), IoError);
}
