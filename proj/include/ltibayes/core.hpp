#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ltibayes {

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LayoutError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Problem dimensions shared by parameters, observations and QoI.
/// A single n_time is used for all three series; dt_obs is the
/// observation interval in seconds.
struct Dims {
  int n_space = 0;    // spatial parameter points N_m
  int n_sensors = 0;  // N_d
  int n_qoi = 0;      // N_q
  int n_time = 0;     // observation steps N_t
  double dt_obs = 1.0;

  void validate() const;
};

/// Storage order of a stacked space-time vector.
///  - TimeMajorBlocks: blocks m_j in R^{n_rows} stacked over j = 1..N_t
///  - SpaceMajorRows:  per spatial row, its N_t-long time series contiguous
enum class Layout { TimeMajorBlocks, SpaceMajorRows };

const char* layout_name(Layout l);

/// Common storage for stacked space-time vectors (parameters, observations,
/// QoI forecasts). values.size() == n_rows * n_time always.
struct BlockSeries {
  int n_rows = 0;
  int n_time = 0;
  Layout layout = Layout::TimeMajorBlocks;
  std::vector<double> values;

  BlockSeries() = default;
  BlockSeries(int rows, int nt, Layout l)
      : n_rows(rows), n_time(nt), layout(l),
        values(static_cast<size_t>(rows) * nt, 0.0) {}

  size_t size() const { return values.size(); }

  // (row r, time j) with j 0-based internally; public docs index time 1-based.
  size_t index(int r, int j) const {
    return layout == Layout::SpaceMajorRows
               ? static_cast<size_t>(r) * n_time + j
               : static_cast<size_t>(j) * n_rows + r;
  }
  double& at(int r, int j) { return values[index(r, j)]; }
  double at(int r, int j) const { return values[index(r, j)]; }

  void check_consistent(const char* what) const;
};

/// Parameter vector m (seafloor normal velocity), n_rows == N_m.
struct SpaceTimeField : BlockSeries {
  using BlockSeries::BlockSeries;
};
/// Stacked sensor pressures d, n_rows == N_d. Units: Pa.
struct ObsSeries : BlockSeries {
  using BlockSeries::BlockSeries;
};
/// Surface-height forecasts q, n_rows == N_q. Units: m.
struct QoISeries : BlockSeries {
  using BlockSeries::BlockSeries;
};

/// Bijective permutation between the two layouts. Round trips are exact
/// (a pure permutation, no arithmetic).
template <typename Series>
Series reindex(const Series& v, Layout target);

/// Provenance of a block-Toeplitz kernel archive.
enum class KernelTag : uint64_t { F = 0, Fq = 1, Gstar = 2, Gqstar = 3 };

const char* kernel_tag_name(KernelTag t);

/// First block column of a block lower-triangular Toeplitz map, stored as a
/// [row][col][lag] tensor with the lag axis contiguous so that length-2*N_t
/// transforms operate on contiguous memory.
///
/// Lag k (1-based) holds the block F_{k,1}: the response at output time k to
/// a unit input at time 1. The same container stores F, F_q and the
/// prior-premultiplied G*, G_q* (distinguished by tag).
struct BlockToeplitzKernel {
  int rows_out = 0;  // N_d or N_q
  int n_cols = 0;    // N_m (or N_d for synthetic instances)
  int n_time = 0;    // N_t lags
  KernelTag tag = KernelTag::F;
  std::vector<double> data;  // rows_out * n_cols * n_time

  BlockToeplitzKernel() = default;
  BlockToeplitzKernel(int rows, int cols, int nt, KernelTag t)
      : rows_out(rows), n_cols(cols), n_time(nt), tag(t),
        data(static_cast<size_t>(rows) * cols * nt, 0.0) {}

  size_t index(int r, int c, int k) const {  // k 0-based lag here
    return (static_cast<size_t>(r) * n_cols + c) * n_time + k;
  }
  double& at(int r, int c, int k) { return data[index(r, c, k)]; }
  double at(int r, int c, int k) const { return data[index(r, c, k)]; }

  const double* lag_series(int r, int c) const {
    return data.data() + (static_cast<size_t>(r) * n_cols + c) * n_time;
  }
  double* lag_series(int r, int c) {
    return data.data() + (static_cast<size_t>(r) * n_cols + c) * n_time;
  }

  void check_consistent(const char* what) const;
};

/// Dense block (rows_out x n_cols) at block position (i, j), both 1-based.
/// Returns the lag slice at k = i - j + 1 when i >= j, the zero block when
/// i < j (strict lower-triangular causality).
Eigen::MatrixXd toeplitz_block(const BlockToeplitzKernel& kernel, int i, int j);

}  // namespace ltibayes
