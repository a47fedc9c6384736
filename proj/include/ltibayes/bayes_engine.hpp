#pragma once

#include <cstdint>
#include <memory>
#include <optional>

#include <Eigen/Dense>

#include "ltibayes/core.hpp"
#include "ltibayes/fft_matvec.hpp"
#include "ltibayes/prior.hpp"

namespace ltibayes {

/// Standard normal quantile (used for credible levels other than 0.95;
/// the 95% multiplier is hard-coded to 1.96).
double normal_quantile(double p);

/// Offline-online inference engine, Phases 2-4.
///
/// All stacked vectors use the SpaceMajorRows convention: entry (row s,
/// time i) sits at index s*N_t + i. Offline artifacts (K factor, Q,
/// Gamma_post_q, plans) are immutable once formed; Phase-4 queries are pure
/// reads and safe to serve concurrently.
class InferenceEngine {
 public:
  enum class KAssembly { ColumnByColumn, FusedBatched };

  /// Kernels F, Fq as extracted in Phase 1; the prior premultiplies them to
  /// G*, Gq* (Phase 2a) inside this constructor.
  InferenceEngine(BlockToeplitzKernel f, BlockToeplitzKernel fq,
                  std::shared_ptr<const PriorOp> prior, double sigma2,
                  double dt_obs);
  /// Variant with already-premultiplied kernels (artifact reload path).
  InferenceEngine(BlockToeplitzKernel f, BlockToeplitzKernel fq,
                  BlockToeplitzKernel gstar, BlockToeplitzKernel gqstar,
                  std::shared_ptr<const PriorOp> prior, double sigma2,
                  double dt_obs);

  int n_sensors() const { return f_.rows_out; }
  int n_qoi() const { return fq_.rows_out; }
  int n_space() const { return f_.n_cols; }
  int n_time() const { return f_.n_time; }
  int n_data() const { return n_sensors() * n_time(); }
  int n_qoi_total() const { return n_qoi() * n_time(); }
  double sigma2() const { return sigma2_; }
  double dt_obs() const { return dt_obs_; }

  const BlockToeplitzKernel& kernel_f() const { return f_; }
  const BlockToeplitzKernel& kernel_fq() const { return fq_; }
  const BlockToeplitzKernel& kernel_gstar() const { return g_; }
  const BlockToeplitzKernel& kernel_gqstar() const { return gq_; }
  const MatvecPlan& plan_f() const { return *plan_f_; }
  const MatvecPlan& plan_fq() const { return *plan_fq_; }
  const MatvecPlan& plan_gstar() const { return *plan_g_; }
  const MatvecPlan& plan_gqstar() const { return *plan_gq_; }
  const PriorOp& prior() const { return *prior_; }

  /// Phase 2b: K = sigma2 I + F G*, column by column on unit vectors (or the
  /// fused batched path; both agree to 1e-12). K is symmetrized once after
  /// assembly; the pre-symmetrization asymmetry is recorded.
  void form_K(KAssembly mode = KAssembly::ColumnByColumn);
  double k_asymmetry() const { return k_asymmetry_; }

  /// Dense Cholesky of K. Uses LAPACK in place for large instances, Eigen
  /// otherwise. Throws NumericalError (with a smallest-eigenvalue estimate
  /// where affordable) if K is not positive definite.
  void factorize();

  /// Phase 3: Q = (K^{-1} (F Gq*))^T and Gamma_post_q = Fq Gq* -
  /// (F Gq*)^T K^{-1} (F Gq*), plus the prior QoI covariance Fq Gq*.
  void form_Q();
  void form_qoi_cov();

  const Eigen::MatrixXd& K() const;
  const Eigen::MatrixXd& chol_lower() const;
  const Eigen::MatrixXd& Q() const;
  const Eigen::MatrixXd& gamma_post_q() const;
  const Eigen::MatrixXd& prior_qoi_cov() const;

  /// Artifact reload path: install a precomputed Cholesky factor / Phase-3
  /// matrices without redoing the offline work.
  void set_factor(Eigen::MatrixXd chol_lower);
  void set_phase3(Eigen::MatrixXd q, Eigen::MatrixXd gamma_post_q,
                  Eigen::MatrixXd prior_qoi_cov);

  /// y = K^{-1} x via the triangular factor pair.
  void solve_k_inplace(Eigen::VectorXd& x) const;

  struct MapResult {
    SpaceTimeField m_map;           // SpaceMajorRows
    double smw_rel_residual = 0;    // residual of the normal equations
    double seconds = 0;             // online compute time
  };
  /// Phase 4: m_map = G* K^{-1} d_obs (one triangular-solve pair + one
  /// kernel matvec). Evaluates the normal-equation residual
  /// (F* sigma^{-2} F + Gamma_prior^{-1}) m_map - F* sigma^{-2} d_obs
  /// with kernel matvecs and prior precision applies on every call.
  MapResult infer_map(const ObsSeries& d_obs) const;

  struct QoIPrediction {
    QoISeries q_map, ci_lower, ci_upper;  // SpaceMajorRows
    double seconds = 0;
  };
  /// q_map = Q d_obs with credible intervals q_map +- z sqrt(diag
  /// Gamma_post_q); z = 1.96 at level 0.95, the normal quantile otherwise.
  QoIPrediction predict_qoi(const ObsSeries& d_obs, double level = 0.95) const;

  struct DiagEstimate {
    Eigen::VectorXd diag;       // Hutchinson estimate of diag(D Gpost D^T)
    Eigen::VectorXd std_err;    // per-component estimator standard error
    Eigen::VectorXd std_dev;    // sqrt(max(diag, 0)), meters
  };
  /// Hutchinson probe estimator of the displacement-projected posterior
  /// covariance diagonal; each probe costs one K-solve plus two kernel
  /// matvecs.
  DiagEstimate pointwise_param_std(int n_probes, uint64_t seed) const;

  /// Left-endpoint Riemann sum with dt_obs weights.
  static Eigen::VectorXd integrate_displacement(const SpaceTimeField& m,
                                                double dt_obs);

  /// Prior-preconditioner-free CG on the normal equations (the SoA baseline
  /// timed by cmd_bench). Returns (m, iterations); iterations == max_iter
  /// means the tolerance was not reached.
  std::pair<SpaceTimeField, int> cg_reference_solve(const ObsSeries& d_obs,
                                                    double tol,
                                                    int max_iter) const;

 private:
  Eigen::VectorXd read_gstar_column(const BlockToeplitzKernel& g,
                                    int col) const;
  void require(bool cond, const char* what) const;

  BlockToeplitzKernel f_, fq_, g_, gq_;
  std::shared_ptr<const PriorOp> prior_;
  double sigma2_ = 0, dt_obs_ = 1;
  std::unique_ptr<MatvecPlan> plan_f_, plan_fq_, plan_g_, plan_gq_;

  Eigen::MatrixXd k_;
  bool k_valid_ = false;
  double k_asymmetry_ = 0;
  Eigen::MatrixXd factor_;  // lower-triangular Cholesky factor
  bool factorized_ = false;
  Eigen::MatrixXd r_fgq_;   // F Gq*, kept between form_Q and form_qoi_cov
  Eigen::MatrixXd x_solve_; // K^{-1} (F Gq*)
  Eigen::MatrixXd q_;
  bool q_valid_ = false;
  Eigen::MatrixXd gamma_post_q_;
  Eigen::MatrixXd prior_qoi_cov_;
  bool cov_valid_ = false;
};

}  // namespace ltibayes
