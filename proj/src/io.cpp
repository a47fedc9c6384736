#include "ltibayes/io.hpp"

#include <unistd.h>

#include <array>
#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ltibayes {

namespace {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

void put_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint64_t get_u64(std::istream& is, const char* what) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw IoError(std::string("truncated archive while reading ") + what);
  }
  return v;
}

void put_f64(std::ostream& os, const double* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), sizeof(double) * n);
}

void get_f64(std::istream& is, double* p, size_t n, const char* what) {
  if (!is.read(reinterpret_cast<char*>(p), sizeof(double) * n)) {
    throw IoError(std::string("truncated archive while reading ") + what);
  }
}

void expect_magic(std::istream& is, const char* magic,
                  const std::filesystem::path& path) {
  std::array<char, 5> buf{};
  if (!is.read(buf.data(), 5) || std::memcmp(buf.data(), magic, 5) != 0) {
    throw IoError("bad magic in " + path.string() + " (expected " + magic +
                  ")");
  }
}

}  // namespace

void atomic_write(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer) {
  auto dir = path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  // unique temp name in the same directory so rename stays on one filesystem
  static std::atomic<uint64_t> counter{0};
  auto tmp = path;
  tmp += ".tmp" + std::to_string(counter.fetch_add(1)) + "." +
         std::to_string(::getpid());
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    writer(os);
    os.flush();
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_kernel(const std::filesystem::path& path,
                  const BlockToeplitzKernel& kernel) {
  kernel.check_consistent("write_kernel");
  atomic_write(path, [&](std::ostream& os) {
    os.write("BTPZ1", 5);
    put_u64(os, static_cast<uint64_t>(kernel.rows_out));
    put_u64(os, static_cast<uint64_t>(kernel.n_cols));
    put_u64(os, static_cast<uint64_t>(kernel.n_time));
    put_u64(os, static_cast<uint64_t>(kernel.tag));
    put_f64(os, kernel.data.data(), kernel.data.size());
  });
}

BlockToeplitzKernel read_kernel(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open kernel archive " + path.string());
  expect_magic(is, "BTPZ1", path);
  const auto rows = get_u64(is, "rows_out");
  const auto cols = get_u64(is, "n_cols");
  const auto nt = get_u64(is, "N_t");
  const auto tag = get_u64(is, "provenance");
  if (rows == 0 || cols == 0 || nt == 0 || tag > 3 ||
      rows * cols * nt > (1ull << 40)) {
    throw IoError("implausible kernel header in " + path.string());
  }
  BlockToeplitzKernel k(static_cast<int>(rows), static_cast<int>(cols),
                        static_cast<int>(nt), static_cast<KernelTag>(tag));
  get_f64(is, k.data.data(), k.data.size(), "kernel data");
  return k;
}

void write_dense(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                 bool symmetric) {
  atomic_write(path, [&](std::ostream& os) {
    os.write("DNSM1", 5);
    put_u64(os, static_cast<uint64_t>(m.rows()));
    put_u64(os, static_cast<uint64_t>(m.cols()));
    put_u64(os, symmetric ? 1 : 0);
    // row-major on disk
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      Eigen::RowVectorXd row = m.row(i);
      put_f64(os, row.data(), static_cast<size_t>(row.size()));
    }
  });
}

Eigen::MatrixXd read_dense(const std::filesystem::path& path,
                           bool* symmetric) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dense archive " + path.string());
  expect_magic(is, "DNSM1", path);
  const auto rows = get_u64(is, "rows");
  const auto cols = get_u64(is, "cols");
  const auto sym = get_u64(is, "symmetric flag");
  if (rows == 0 || cols == 0 || rows * cols > (1ull << 40)) {
    throw IoError("implausible dense header in " + path.string());
  }
  if (symmetric) *symmetric = (sym != 0);
  Eigen::MatrixXd m(rows, cols);
  std::vector<double> row(cols);
  for (uint64_t i = 0; i < rows; ++i) {
    get_f64(is, row.data(), row.size(), "dense row");
    for (uint64_t j = 0; j < cols; ++j) m(i, j) = row[j];
  }
  return m;
}

template <typename Series>
void write_series(const std::filesystem::path& path, const Series& s) {
  s.check_consistent("write_series");
  atomic_write(path, [&](std::ostream& os) {
    put_f64(os, s.values.data(), s.values.size());
  });
  auto hdr = path;
  hdr += ".hdr";
  atomic_write(hdr, [&](std::ostream& os) {
    os << "rows=" << s.n_rows << " nt=" << s.n_time
       << " layout=" << layout_name(s.layout) << "\n";
  });
}

template <typename Series>
Series read_series(const std::filesystem::path& path) {
  auto hdr = path;
  hdr += ".hdr";
  std::ifstream hs(hdr);
  if (!hs) throw IoError("missing series sidecar " + hdr.string());
  std::string line;
  std::getline(hs, line);
  int rows = 0, nt = 0;
  char layout_buf[32] = {0};
  if (std::sscanf(line.c_str(), "rows=%d nt=%d layout=%31s", &rows, &nt,
                  layout_buf) != 3 ||
      rows < 1 || nt < 1) {
    throw IoError("malformed series sidecar " + hdr.string());
  }
  Layout layout;
  if (std::string(layout_buf) == "TimeMajorBlocks") {
    layout = Layout::TimeMajorBlocks;
  } else if (std::string(layout_buf) == "SpaceMajorRows") {
    layout = Layout::SpaceMajorRows;
  } else {
    throw IoError("unknown layout in sidecar " + hdr.string());
  }
  Series s(rows, nt, layout);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open series " + path.string());
  get_f64(is, s.values.data(), s.values.size(), "series data");
  return s;
}

template void write_series(const std::filesystem::path&, const SpaceTimeField&);
template void write_series(const std::filesystem::path&, const ObsSeries&);
template void write_series(const std::filesystem::path&, const QoISeries&);
template SpaceTimeField read_series(const std::filesystem::path&);
template ObsSeries read_series(const std::filesystem::path&);
template QoISeries read_series(const std::filesystem::path&);

void write_csv(const std::filesystem::path& path, const std::string& header,
               const std::function<void(std::ostream&)>& body) {
  atomic_write(path, [&](std::ostream& os) {
    os << header << "\n";
    os.precision(17);
    body(os);
  });
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot hash missing file " + path.string());
  uint64_t h = 0xcbf29ce484222325ull;
  std::array<char, 65536> buf;
  while (is) {
    is.read(buf.data(), buf.size());
    const auto got = is.gcount();
    if (got > 0) h = fnv1a64(buf.data(), static_cast<size_t>(got), h);
  }
  return h;
}

void Manifest::add_artifact(const std::filesystem::path& dir,
                            const std::string& name) {
  ManifestEntry e;
  e.name = name;
  e.bytes = std::filesystem::file_size(dir / name);
  e.hash = fnv1a64_file(dir / name);
  artifacts.push_back(std::move(e));
}

const ManifestEntry* Manifest::find(const std::string& name) const {
  for (const auto& e : artifacts) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  atomic_write(path, [&](std::ostream& os) {
    os << "# ltibayes artifact manifest\n";
    for (const auto& e : m.artifacts) {
      char hex[32];
      std::snprintf(hex, sizeof(hex), "%016llx",
                    static_cast<unsigned long long>(e.hash));
      os << "artifact " << e.name << " " << e.bytes << " " << hex << "\n";
    }
    os.precision(6);
    for (const auto& p : m.phases) {
      os << "phase " << p.name << " " << std::fixed << p.seconds << "\n";
      os.unsetf(std::ios::fixed);
    }
    for (const auto& kv : m.meta) {
      os << "meta " << kv.first << " " << kv.second << "\n";
    }
  });
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string kind;
    ss >> kind;
    if (kind == "artifact") {
      ManifestEntry e;
      std::string hex;
      ss >> e.name >> e.bytes >> hex;
      e.hash = std::stoull(hex, nullptr, 16);
      m.artifacts.push_back(std::move(e));
    } else if (kind == "phase") {
      PhaseTime p;
      ss >> p.name >> p.seconds;
      m.phases.push_back(std::move(p));
    } else if (kind == "meta") {
      std::string k, v;
      ss >> k;
      std::getline(ss, v);
      if (!v.empty() && v[0] == ' ') v.erase(0, 1);
      m.meta.emplace_back(k, v);
    } else {
      throw IoError("unknown manifest line: " + line);
    }
  }
  return m;
}

std::optional<std::string> verify_manifest(const std::filesystem::path& dir,
                                           const Manifest& m) {
  for (const auto& e : m.artifacts) {
    const auto p = dir / e.name;
    if (!std::filesystem::exists(p)) return e.name;
    if (std::filesystem::file_size(p) != e.bytes) return e.name;
    if (fnv1a64_file(p) != e.hash) return e.name;
  }
  return std::nullopt;
}

}  // namespace ltibayes
