#include "ltibayes/prior.hpp"

#include <random>

#include "ltibayes/threads.hpp"

namespace ltibayes {

PriorOp::PriorOp(int n_space, double h_x, double gamma, double delta)
    : n_space_(n_space), h_x_(h_x), gamma_(gamma), delta_(delta) {
  if (n_space < 1) throw ConfigError("prior: n_space must be >= 1");
  if (!(h_x > 0)) throw ConfigError("prior: h_x must be positive");
  if (!(delta > 0)) throw ConfigError("prior: delta must be positive");
  if (gamma < 0) throw ConfigError("prior: gamma must be >= 0");

  // A_x = delta I - gamma L, L the symmetric Neumann Laplacian
  const double w = gamma / (h_x * h_x);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(n_space) * 3);
  for (int i = 0; i < n_space; ++i) {
    double diag = delta;
    if (i > 0) {
      trip.emplace_back(i, i - 1, -w);
      diag += w;
    }
    if (i + 1 < n_space) {
      trip.emplace_back(i, i + 1, -w);
      diag += w;
    }
    trip.emplace_back(i, i, diag);
  }
  a_x_.resize(n_space, n_space);
  a_x_.setFromTriplets(trip.begin(), trip.end());
  a_x_.makeCompressed();
  llt_.compute(a_x_);
  if (llt_.info() != Eigen::Success) {
    throw NumericalError("prior: factorization of A_x failed");
  }
}

Eigen::VectorXd PriorOp::apply_cov_spatial(const Eigen::VectorXd& v) const {
  return llt_.solve(llt_.solve(v).eval());
}

Eigen::VectorXd PriorOp::apply_precision_spatial(
    const Eigen::VectorXd& v) const {
  return a_x_ * (a_x_ * v).eval();
}

Eigen::VectorXd PriorOp::apply_sqrt_cov_spatial(
    const Eigen::VectorXd& v) const {
  return llt_.solve(v);
}

namespace {

void check_blocks(const SpaceTimeField& v, int n_space, const char* what) {
  v.check_consistent(what);
  if (v.n_rows != n_space) {
    throw DimensionError(std::string(what) + ": n_rows != prior n_space");
  }
  if (v.layout != Layout::TimeMajorBlocks) {
    throw LayoutError(std::string(what) +
                      ": requires TimeMajorBlocks (blockwise-in-time apply)");
  }
}

}  // namespace

SpaceTimeField PriorOp::apply_cov(const SpaceTimeField& v) const {
  check_blocks(v, n_space_, "prior apply_cov");
  SpaceTimeField out(v.n_rows, v.n_time, Layout::TimeMajorBlocks);
  for (int j = 0; j < v.n_time; ++j) {
    Eigen::Map<const Eigen::VectorXd> block(
        v.values.data() + static_cast<size_t>(j) * n_space_, n_space_);
    Eigen::VectorXd y = apply_cov_spatial(block);
    for (int r = 0; r < n_space_; ++r) out.at(r, j) = y[r];
  }
  return out;
}

SpaceTimeField PriorOp::apply_precision(const SpaceTimeField& v) const {
  check_blocks(v, n_space_, "prior apply_precision");
  SpaceTimeField out(v.n_rows, v.n_time, Layout::TimeMajorBlocks);
  for (int j = 0; j < v.n_time; ++j) {
    Eigen::Map<const Eigen::VectorXd> block(
        v.values.data() + static_cast<size_t>(j) * n_space_, n_space_);
    Eigen::VectorXd y = apply_precision_spatial(block);
    for (int r = 0; r < n_space_; ++r) out.at(r, j) = y[r];
  }
  return out;
}

SpaceTimeField PriorOp::sample(int n_time, uint64_t seed) const {
  if (n_time < 1) throw DimensionError("prior sample: n_time must be >= 1");
  SpaceTimeField out(n_space_, n_time, Layout::TimeMajorBlocks);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(n_space_);
  for (int j = 0; j < n_time; ++j) {
    for (int r = 0; r < n_space_; ++r) z[r] = normal(gen);
    Eigen::VectorXd y = apply_sqrt_cov_spatial(z);
    for (int r = 0; r < n_space_; ++r) out.at(r, j) = y[r];
  }
  return out;
}

BlockToeplitzKernel PriorOp::premultiply_kernel(
    const BlockToeplitzKernel& f) const {
  f.check_consistent("premultiply_kernel");
  if (f.n_cols != n_space_) {
    throw DimensionError("premultiply_kernel: kernel n_cols != prior n_space");
  }
  KernelTag tag;
  switch (f.tag) {
    case KernelTag::F: tag = KernelTag::Gstar; break;
    case KernelTag::Fq: tag = KernelTag::Gqstar; break;
    default:
      throw ConfigError("premultiply_kernel: kernel already premultiplied");
  }
  BlockToeplitzKernel g(f.rows_out, f.n_cols, f.n_time, tag);
  // one batched solve pair per kernel row: N_m x N_t right-hand sides
  parallel_for(f.rows_out, [&](int s) {
    Eigen::MatrixXd rhs(n_space_, f.n_time);
    for (int x = 0; x < n_space_; ++x) {
      for (int k = 0; k < f.n_time; ++k) rhs(x, k) = f.at(s, x, k);
    }
    Eigen::MatrixXd sol = llt_.solve(llt_.solve(rhs).eval());
    for (int x = 0; x < n_space_; ++x) {
      for (int k = 0; k < f.n_time; ++k) g.at(s, x, k) = sol(x, k);
    }
  });
  return g;
}

Eigen::MatrixXd PriorOp::dense_cov() const {
  const Eigen::MatrixXd a = Eigen::MatrixXd(a_x_);
  const Eigen::MatrixXd ainv = a.inverse();
  return ainv * ainv;
}

Eigen::MatrixXd PriorOp::dense_precision() const {
  const Eigen::MatrixXd a = Eigen::MatrixXd(a_x_);
  return a * a;
}

}  // namespace ltibayes
