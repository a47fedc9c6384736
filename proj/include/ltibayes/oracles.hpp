#pragma once

// Dense reference implementations used by verification harnesses and tests.
// These deliberately avoid the FFT and data-space (SMW) code paths: plain
// materialized matrices and parameter-space normal equations.

#include <Eigen/Dense>

#include "ltibayes/core.hpp"
#include "ltibayes/prior.hpp"

namespace ltibayes {

/// Dense (rows*N_t) x (cols*N_t) matrix of the block lower-triangular
/// Toeplitz map in the SpaceMajorRows vector convention: row (r, i) at
/// r*N_t + i, column (c, j) at c*N_t + j, entry kernel[r][c][i-j] for i >= j.
inline Eigen::MatrixXd materialize_dense(const BlockToeplitzKernel& kernel,
                                         uint64_t mem_cap_bytes = 2ull << 30) {
  kernel.check_consistent("materialize_dense");
  const int nt = kernel.n_time;
  const uint64_t bytes = static_cast<uint64_t>(kernel.rows_out) * nt *
                         kernel.n_cols * nt * 8;
  if (mem_cap_bytes != 0 && bytes > mem_cap_bytes) {
    throw CapacityError("materialize_dense: " + std::to_string(bytes) +
                        " bytes above cap");
  }
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(kernel.rows_out) * nt,
      static_cast<Eigen::Index>(kernel.n_cols) * nt);
  for (int r = 0; r < kernel.rows_out; ++r) {
    for (int c = 0; c < kernel.n_cols; ++c) {
      const double* lag = kernel.lag_series(r, c);
      for (int j = 0; j < nt; ++j) {
        for (int i = j; i < nt; ++i) {
          f(static_cast<Eigen::Index>(r) * nt + i,
            static_cast<Eigen::Index>(c) * nt + j) = lag[i - j];
        }
      }
    }
  }
  return f;
}

/// Dense Gamma_prior / Gamma_prior^{-1} in the SpaceMajorRows convention:
/// entry ((x,i),(x',j)) = Gamma_x(x,x') * delta_ij.
inline Eigen::MatrixXd dense_prior_cov_sm(const PriorOp& prior, int n_time) {
  const Eigen::MatrixXd gx = prior.dense_cov();
  const int nm = prior.n_space();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(nm) * n_time,
      static_cast<Eigen::Index>(nm) * n_time);
  for (int x = 0; x < nm; ++x) {
    for (int y = 0; y < nm; ++y) {
      for (int j = 0; j < n_time; ++j) {
        g(static_cast<Eigen::Index>(x) * n_time + j,
          static_cast<Eigen::Index>(y) * n_time + j) = gx(x, y);
      }
    }
  }
  return g;
}

inline Eigen::MatrixXd dense_prior_precision_sm(const PriorOp& prior,
                                                int n_time) {
  const Eigen::MatrixXd px = prior.dense_precision();
  const int nm = prior.n_space();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(nm) * n_time,
      static_cast<Eigen::Index>(nm) * n_time);
  for (int x = 0; x < nm; ++x) {
    for (int y = 0; y < nm; ++y) {
      for (int j = 0; j < n_time; ++j) {
        g(static_cast<Eigen::Index>(x) * n_time + j,
          static_cast<Eigen::Index>(y) * n_time + j) = px(x, y);
      }
    }
  }
  return g;
}

/// Dense negative log-posterior Hessian H = F^T F / sigma2 + Gamma_prior^{-1}.
inline Eigen::MatrixXd dense_hessian(const Eigen::MatrixXd& f_dense,
                                     const PriorOp& prior, int n_time,
                                     double sigma2) {
  return f_dense.transpose() * f_dense / sigma2 +
         dense_prior_precision_sm(prior, n_time);
}

/// Direct dense solve of the normal equations H m = F^T d / sigma2.
inline Eigen::VectorXd dense_map_solve(const Eigen::MatrixXd& f_dense,
                                       const PriorOp& prior, int n_time,
                                       double sigma2,
                                       const Eigen::VectorXd& d) {
  const Eigen::MatrixXd h = dense_hessian(f_dense, prior, n_time, sigma2);
  const Eigen::VectorXd rhs = f_dense.transpose() * d / sigma2;
  return Eigen::LDLT<Eigen::MatrixXd>(h).solve(rhs);
}

/// Dense posterior QoI covariance Fq H^{-1} Fq^T.
inline Eigen::MatrixXd dense_posterior_qoi_cov(const Eigen::MatrixXd& f_dense,
                                               const Eigen::MatrixXd& fq_dense,
                                               const PriorOp& prior,
                                               int n_time, double sigma2) {
  const Eigen::MatrixXd h = dense_hessian(f_dense, prior, n_time, sigma2);
  const Eigen::MatrixXd hinv_fqt =
      Eigen::LDLT<Eigen::MatrixXd>(h).solve(fq_dense.transpose());
  return fq_dense * hinv_fqt;
}

/// Dense diagonal of D Gamma_post D^T with D the dt-weighted time sum
/// (displacement projection).
inline Eigen::VectorXd dense_displacement_cov_diag(
    const Eigen::MatrixXd& f_dense, const PriorOp& prior, int n_time,
    double sigma2, double dt_obs) {
  const Eigen::MatrixXd h = dense_hessian(f_dense, prior, n_time, sigma2);
  const Eigen::MatrixXd gpost = h.inverse();
  const int nm = prior.n_space();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(
      nm, static_cast<Eigen::Index>(nm) * n_time);
  for (int x = 0; x < nm; ++x) {
    for (int j = 0; j < n_time; ++j) {
      d(x, static_cast<Eigen::Index>(x) * n_time + j) = dt_obs;
    }
  }
  return (d * gpost * d.transpose()).diagonal();
}

}  // namespace ltibayes
