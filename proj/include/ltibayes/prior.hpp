#pragma once

#include <cstdint>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "ltibayes/core.hpp"

namespace ltibayes {

/// Gaussian prior with a Matern-style spatial covariance per time block.
///
/// The spatial operator is A_x = delta*I - gamma*L with L the 1D Neumann
/// finite-difference Laplacian on the N_m bottom nodes; the covariance block
/// is Gamma_x = A_x^{-2} and the full prior is Gamma_prior = I_{N_t} (x)
/// Gamma_x (block diagonal in time, identical blocks). The prior mean is
/// zero. A_x is assembled and factorized once; all applies reuse the factor
/// and are safe to run concurrently on different inputs.
class PriorOp {
 public:
  /// delta must be positive; gamma >= 0. Throws ConfigError otherwise.
  PriorOp(int n_space, double h_x, double gamma, double delta);

  int n_space() const { return n_space_; }
  double gamma() const { return gamma_; }
  double delta() const { return delta_; }
  double h_x() const { return h_x_; }

  /// Gamma_x v = A_x^{-2} v (two solve passes).
  Eigen::VectorXd apply_cov_spatial(const Eigen::VectorXd& v) const;
  /// Gamma_x^{-1} v = A_x^2 v.
  Eigen::VectorXd apply_precision_spatial(const Eigen::VectorXd& v) const;
  /// Gamma_x^{1/2} z = A_x^{-1} z.
  Eigen::VectorXd apply_sqrt_cov_spatial(const Eigen::VectorXd& v) const;

  /// Blockwise-in-time Gamma_prior / Gamma_prior^{-1}. TimeMajorBlocks only
  /// (each time block is one spatial solve); other layouts are an error.
  SpaceTimeField apply_cov(const SpaceTimeField& v) const;
  SpaceTimeField apply_precision(const SpaceTimeField& v) const;

  /// Draw from N(0, Gamma_prior): A_x^{-1} z per time block, z iid standard
  /// normal from the seeded generator. Output TimeMajorBlocks.
  SpaceTimeField sample(int n_time, uint64_t seed) const;

  /// {G*, Gq*} = Gamma_prior {F*, Fq*}: applies Gamma_x to the spatial axis
  /// of every lag slice. Because Gamma_prior commutes with time shifts the
  /// result is block Toeplitz again; one batched solve pair per kernel row.
  /// Tag maps F -> Gstar, Fq -> Gqstar.
  BlockToeplitzKernel premultiply_kernel(const BlockToeplitzKernel& f) const;

  /// Dense Gamma_x for small instances (test oracle).
  Eigen::MatrixXd dense_cov() const;
  Eigen::MatrixXd dense_precision() const;

 private:
  int n_space_;
  double h_x_, gamma_, delta_;
  Eigen::SparseMatrix<double> a_x_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt_;
};

}  // namespace ltibayes
