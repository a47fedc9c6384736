#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ltibayes/core.hpp"

namespace ltibayes {

// ---------------------------------------------------------------------------
// Kernel archive "BTPZ1": magic bytes "BTPZ1", then little-endian u64 fields
// [rows_out, n_cols, N_t, provenance code], then rows_out*n_cols*N_t
// little-endian f64 in [row][col][lag] order.
// ---------------------------------------------------------------------------
void write_kernel(const std::filesystem::path& path,
                  const BlockToeplitzKernel& kernel);
BlockToeplitzKernel read_kernel(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Dense matrix archive "DNSM1": magic, u64 rows, u64 cols, u64 symmetric
// flag, then row-major little-endian f64.
// ---------------------------------------------------------------------------
void write_dense(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                 bool symmetric);
Eigen::MatrixXd read_dense(const std::filesystem::path& path,
                           bool* symmetric = nullptr);

// ---------------------------------------------------------------------------
// Raw f64 series: <name> holds little-endian f64 values; <name>.hdr is a
// one-line text sidecar "rows=R nt=T layout=L" describing dims and layout.
// ---------------------------------------------------------------------------
template <typename Series>
void write_series(const std::filesystem::path& path, const Series& s);
template <typename Series>
Series read_series(const std::filesystem::path& path);

// CSV with a header row; each row callback writes one line.
void write_csv(const std::filesystem::path& path, const std::string& header,
               const std::function<void(std::ostream&)>& body);

// 64-bit FNV-1a over a byte range / a whole file.
uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull);
uint64_t fnv1a64_file(const std::filesystem::path& path);

// Atomic file write: content goes to a temp file in the same directory,
// then rename.
void atomic_write(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer);

// ---------------------------------------------------------------------------
// Run manifest: one line per artifact "name  bytes  fnv1a64(hex)" plus
// "phase  <name>  <wall seconds>" lines for the per-phase cost ledger and
// "meta  <key>  <value>" lines for run provenance (substep ratio etc.).
// ---------------------------------------------------------------------------
struct ManifestEntry {
  std::string name;
  uint64_t bytes = 0;
  uint64_t hash = 0;
};
struct PhaseTime {
  std::string name;
  double seconds = 0;
};
struct Manifest {
  std::vector<ManifestEntry> artifacts;
  std::vector<PhaseTime> phases;
  std::vector<std::pair<std::string, std::string>> meta;

  void add_artifact(const std::filesystem::path& dir, const std::string& name);
  const ManifestEntry* find(const std::string& name) const;
};

void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

/// Recomputes hashes of all artifacts listed in the manifest; returns the
/// name of the first mismatching artifact, or nullopt if everything matches.
std::optional<std::string> verify_manifest(const std::filesystem::path& dir,
                                           const Manifest& m);

}  // namespace ltibayes
