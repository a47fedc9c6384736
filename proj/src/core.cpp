#include "ltibayes/core.hpp"

#include <cmath>

namespace ltibayes {

void Dims::validate() const {
  if (n_space < 1 || n_sensors < 1 || n_qoi < 1 || n_time < 1) {
    throw DimensionError("Dims: all counts must be >= 1 (n_space=" +
                         std::to_string(n_space) + ", n_sensors=" +
                         std::to_string(n_sensors) + ", n_qoi=" +
                         std::to_string(n_qoi) + ", n_time=" +
                         std::to_string(n_time) + ")");
  }
  if (n_sensors > n_space) {
    throw DimensionError("Dims: n_sensors (" + std::to_string(n_sensors) +
                         ") must not exceed n_space (" +
                         std::to_string(n_space) + ")");
  }
  if (!(dt_obs > 0.0)) {
    throw DimensionError("Dims: dt_obs must be positive");
  }
}

const char* layout_name(Layout l) {
  return l == Layout::TimeMajorBlocks ? "TimeMajorBlocks" : "SpaceMajorRows";
}

void BlockSeries::check_consistent(const char* what) const {
  if (n_rows < 1 || n_time < 1 ||
      values.size() != static_cast<size_t>(n_rows) * n_time) {
    throw DimensionError(std::string(what) + ": length " +
                         std::to_string(values.size()) +
                         " does not match n_rows*n_time = " +
                         std::to_string(n_rows) + "*" +
                         std::to_string(n_time));
  }
}

template <typename Series>
Series reindex(const Series& v, Layout target) {
  v.check_consistent("reindex");
  if (target == v.layout) return v;
  Series out(v.n_rows, v.n_time, target);
  for (int r = 0; r < v.n_rows; ++r) {
    for (int j = 0; j < v.n_time; ++j) {
      out.at(r, j) = v.at(r, j);
    }
  }
  return out;
}

template SpaceTimeField reindex(const SpaceTimeField&, Layout);
template ObsSeries reindex(const ObsSeries&, Layout);
template QoISeries reindex(const QoISeries&, Layout);

const char* kernel_tag_name(KernelTag t) {
  switch (t) {
    case KernelTag::F: return "F";
    case KernelTag::Fq: return "Fq";
    case KernelTag::Gstar: return "Gstar";
    case KernelTag::Gqstar: return "Gqstar";
  }
  return "?";
}

void BlockToeplitzKernel::check_consistent(const char* what) const {
  if (rows_out < 1 || n_cols < 1 || n_time < 1 ||
      data.size() != static_cast<size_t>(rows_out) * n_cols * n_time) {
    throw DimensionError(std::string(what) +
                         ": kernel tensor size does not match dims");
  }
  for (double x : data) {
    if (!std::isfinite(x)) {
      throw NumericalError(std::string(what) + ": non-finite kernel entry");
    }
  }
}

Eigen::MatrixXd toeplitz_block(const BlockToeplitzKernel& kernel, int i,
                               int j) {
  if (i < 1 || j < 1 || i > kernel.n_time || j > kernel.n_time) {
    throw IndexError("toeplitz_block: indices (" + std::to_string(i) + ", " +
                     std::to_string(j) + ") out of range 1.." +
                     std::to_string(kernel.n_time));
  }
  Eigen::MatrixXd block =
      Eigen::MatrixXd::Zero(kernel.rows_out, kernel.n_cols);
  if (i < j) return block;
  const int k = i - j;  // 0-based lag of block F_{i-j+1,1}
  for (int r = 0; r < kernel.rows_out; ++r) {
    for (int c = 0; c < kernel.n_cols; ++c) {
      block(r, c) = kernel.at(r, c, k);
    }
  }
  return block;
}

}  // namespace ltibayes
