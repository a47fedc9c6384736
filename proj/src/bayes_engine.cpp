#include "ltibayes/bayes_engine.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include "ltibayes/threads.hpp"

#if defined(LTIBAYES_HAVE_LAPACKE)
#include <lapacke.h>
#endif

namespace ltibayes {

namespace {

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch())
      .count();
}

Eigen::Map<const Eigen::VectorXd> as_vec(const BlockSeries& s) {
  return {s.values.data(), static_cast<Eigen::Index>(s.values.size())};
}

void check_sm(const BlockSeries& s, int rows, int nt, const char* what) {
  s.check_consistent(what);
  if (s.layout != Layout::SpaceMajorRows) {
    throw LayoutError(std::string(what) + ": requires SpaceMajorRows");
  }
  if (s.n_rows != rows || s.n_time != nt) {
    throw DimensionError(std::string(what) + ": dims do not match engine");
  }
}

}  // namespace

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw ConfigError("normal_quantile: p must lie in (0, 1)");
  }
  // Acklam's rational approximation, then one Halley refinement via erfc.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
          c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

InferenceEngine::InferenceEngine(BlockToeplitzKernel f, BlockToeplitzKernel fq,
                                 std::shared_ptr<const PriorOp> prior,
                                 double sigma2, double dt_obs)
    : InferenceEngine(std::move(f), std::move(fq), BlockToeplitzKernel{},
                      BlockToeplitzKernel{}, std::move(prior), sigma2,
                      dt_obs) {}

InferenceEngine::InferenceEngine(BlockToeplitzKernel f, BlockToeplitzKernel fq,
                                 BlockToeplitzKernel gstar,
                                 BlockToeplitzKernel gqstar,
                                 std::shared_ptr<const PriorOp> prior,
                                 double sigma2, double dt_obs)
    : f_(std::move(f)), fq_(std::move(fq)), g_(std::move(gstar)),
      gq_(std::move(gqstar)), prior_(std::move(prior)), sigma2_(sigma2),
      dt_obs_(dt_obs) {
  if (!prior_) throw StateError("engine: prior is required");
  if (!(sigma2_ > 0)) throw ConfigError("engine: sigma2 must be positive");
  f_.check_consistent("engine F");
  fq_.check_consistent("engine Fq");
  if (fq_.n_cols != f_.n_cols || fq_.n_time != f_.n_time) {
    throw DimensionError("engine: F and Fq dims are inconsistent");
  }
  if (prior_->n_space() != f_.n_cols) {
    throw DimensionError("engine: prior n_space != kernel n_cols");
  }
  // roles are positional; synthetic instances may pass any provenance tag
  f_.tag = KernelTag::F;
  fq_.tag = KernelTag::Fq;
  if (g_.data.empty()) g_ = prior_->premultiply_kernel(f_);     // Phase 2a
  if (gq_.data.empty()) gq_ = prior_->premultiply_kernel(fq_);
  if (g_.tag != KernelTag::Gstar || gq_.tag != KernelTag::Gqstar) {
    throw ConfigError("engine: premultiplied kernels carry the wrong tags");
  }
  plan_f_ = std::make_unique<MatvecPlan>(f_);
  plan_fq_ = std::make_unique<MatvecPlan>(fq_);
  plan_g_ = std::make_unique<MatvecPlan>(g_);
  plan_gq_ = std::make_unique<MatvecPlan>(gq_);
}

void InferenceEngine::require(bool cond, const char* what) const {
  if (!cond) {
    throw StateError(std::string("engine: missing offline artifact: ") + what);
  }
}

Eigen::VectorXd InferenceEngine::read_gstar_column(
    const BlockToeplitzKernel& g, int col) const {
  // G* e_(s,j) read off the kernel: entry (x, t) = g[s][x][j - t] for t <= j.
  const int nt = g.n_time;
  const int s = col / nt, j = col % nt;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(
      static_cast<Eigen::Index>(g.n_cols) * nt);
  for (int x = 0; x < g.n_cols; ++x) {
    const double* lag = g.lag_series(s, x);
    for (int t = 0; t <= j; ++t) out[static_cast<size_t>(x) * nt + t] = lag[j - t];
  }
  return out;
}

void InferenceEngine::form_K(KAssembly mode) {
  const int n = n_data();
  const int nt = n_time();
  k_.resize(n, n);
  parallel_for(n, [&](int i) {
    MatvecPlan::Scratch sf(*plan_f_);
    Eigen::VectorXd gcol(static_cast<Eigen::Index>(n_space()) * nt);
    if (mode == KAssembly::ColumnByColumn) {
      MatvecPlan::Scratch sg(*plan_g_);
      Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
      e[i] = 1.0;
      plan_g_->apply_adjoint_raw(e.data(), gcol.data(), sg);
    } else {
      gcol = read_gstar_column(g_, i);
    }
    plan_f_->apply_raw(gcol.data(), k_.col(i).data(), sf);
    k_(i, i) += sigma2_;
  });
  // measure the FFT round-off asymmetry, then symmetrize once
  double asym2 = 0, norm2 = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      const double d = k_(i, j) - k_(j, i);
      asym2 += 2 * d * d;
      norm2 += k_(i, j) * k_(i, j) + k_(j, i) * k_(j, i);
    }
    norm2 += k_(i, i) * k_(i, i);
  }
  k_asymmetry_ = std::sqrt(asym2) / std::max(std::sqrt(norm2), 1e-300);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      const double v = 0.5 * (k_(i, j) + k_(j, i));
      k_(i, j) = v;
      k_(j, i) = v;
    }
  }
  k_valid_ = true;
  factorized_ = false;
}

void InferenceEngine::factorize() {
  require(k_valid_, "K (run form_K)");
  const int n = n_data();
#if defined(LTIBAYES_HAVE_LAPACKE)
  if (n >= 8192) {
    // in place: K becomes its own lower factor (no second n^2 buffer)
    const lapack_int info = LAPACKE_dpotrf(LAPACK_COL_MAJOR, 'L', n,
                                           k_.data(), n);
    if (info != 0) {
      throw NumericalError("factorize: K not positive definite (dpotrf info=" +
                           std::to_string(info) + ")");
    }
    factor_ = std::move(k_);
    k_ = Eigen::MatrixXd();
    k_valid_ = false;
    factorized_ = true;
    return;
  }
#endif
  Eigen::LLT<Eigen::MatrixXd> llt(k_);
  if (llt.info() != Eigen::Success) {
    std::string detail = "n/a";
    if (n <= 4096) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k_,
                                                        Eigen::EigenvaluesOnly);
      detail = std::to_string(es.eigenvalues().minCoeff());
    }
    throw NumericalError(
        "factorize: K not positive definite after symmetrization "
        "(min eigenvalue estimate: " + detail + ")");
  }
  factor_ = llt.matrixL();
  factorized_ = true;
}

void InferenceEngine::set_factor(Eigen::MatrixXd chol_lower) {
  if (chol_lower.rows() != n_data() || chol_lower.cols() != n_data()) {
    throw DimensionError("set_factor: wrong factor dims");
  }
  factor_ = std::move(chol_lower);
  factorized_ = true;
}

void InferenceEngine::set_phase3(Eigen::MatrixXd q,
                                 Eigen::MatrixXd gamma_post_q,
                                 Eigen::MatrixXd prior_qoi_cov) {
  if (q.rows() != n_qoi_total() || q.cols() != n_data() ||
      gamma_post_q.rows() != n_qoi_total() ||
      gamma_post_q.cols() != n_qoi_total() ||
      prior_qoi_cov.rows() != n_qoi_total() ||
      prior_qoi_cov.cols() != n_qoi_total()) {
    throw DimensionError("set_phase3: wrong artifact dims");
  }
  q_ = std::move(q);
  gamma_post_q_ = std::move(gamma_post_q);
  prior_qoi_cov_ = std::move(prior_qoi_cov);
  q_valid_ = true;
  cov_valid_ = true;
}

void InferenceEngine::solve_k_inplace(Eigen::VectorXd& x) const {
  require(factorized_, "Cholesky factor (run factorize)");
  factor_.triangularView<Eigen::Lower>().solveInPlace(x);
  factor_.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
}

void InferenceEngine::form_Q() {
  require(factorized_, "Cholesky factor (run factorize)");
  const int n = n_data(), nq = n_qoi_total();
  r_fgq_.resize(n, nq);
  parallel_for(nq, [&](int i) {
    MatvecPlan::Scratch sf(*plan_f_);
    Eigen::VectorXd gcol = read_gstar_column(gq_, i);  // Gq* e_i
    plan_f_->apply_raw(gcol.data(), r_fgq_.col(i).data(), sf);
  });
  x_solve_ = r_fgq_;
  parallel_for(nq, [&](int i) {
    Eigen::VectorXd col = x_solve_.col(i);
    solve_k_inplace(col);
    x_solve_.col(i) = col;
  });
  q_ = x_solve_.transpose();
  q_valid_ = true;
}

void InferenceEngine::form_qoi_cov() {
  require(q_valid_, "Q (run form_Q)");
  const int nq = n_qoi_total();
  // prior QoI covariance Fq Gq* = Fq Gamma_prior Fq*
  prior_qoi_cov_.resize(nq, nq);
  parallel_for(nq, [&](int i) {
    MatvecPlan::Scratch sfq(*plan_fq_);
    Eigen::VectorXd gcol = read_gstar_column(gq_, i);
    plan_fq_->apply_raw(gcol.data(), prior_qoi_cov_.col(i).data(), sfq);
  });
  prior_qoi_cov_ = 0.5 * (prior_qoi_cov_ + prior_qoi_cov_.transpose()).eval();

  gamma_post_q_ = prior_qoi_cov_ - r_fgq_.transpose() * x_solve_;
  gamma_post_q_ = 0.5 * (gamma_post_q_ + gamma_post_q_.transpose()).eval();

  const double scale = gamma_post_q_.norm();
  const double min_diag = gamma_post_q_.diagonal().minCoeff();
  if (min_diag < -1e-10 * scale) {
    throw NumericalError(
        "form_qoi_cov: negative posterior QoI variance beyond tolerance (" +
        std::to_string(min_diag) + " vs norm " + std::to_string(scale) + ")");
  }
  cov_valid_ = true;
}

const Eigen::MatrixXd& InferenceEngine::K() const {
  require(k_valid_, "K (run form_K; destroyed by in-place factorization)");
  return k_;
}
const Eigen::MatrixXd& InferenceEngine::chol_lower() const {
  require(factorized_, "Cholesky factor");
  return factor_;
}
const Eigen::MatrixXd& InferenceEngine::Q() const {
  require(q_valid_, "Q");
  return q_;
}
const Eigen::MatrixXd& InferenceEngine::gamma_post_q() const {
  require(cov_valid_, "Gamma_post_q");
  return gamma_post_q_;
}
const Eigen::MatrixXd& InferenceEngine::prior_qoi_cov() const {
  require(cov_valid_, "prior QoI covariance");
  return prior_qoi_cov_;
}

InferenceEngine::MapResult InferenceEngine::infer_map(
    const ObsSeries& d_obs) const {
  check_sm(d_obs, n_sensors(), n_time(), "infer_map");
  require(factorized_, "Cholesky factor (run offline phases first)");
  const double t0 = now_seconds();
  Eigen::VectorXd y = as_vec(d_obs);
  solve_k_inplace(y);
  MapResult res;
  res.m_map = SpaceTimeField(n_space(), n_time(), Layout::SpaceMajorRows);
  {
    MatvecPlan::Scratch sg(*plan_g_);
    plan_g_->apply_adjoint_raw(y.data(), res.m_map.values.data(), sg);
  }
  res.seconds = now_seconds() - t0;

  // normal-equation residual, evaluated with kernel matvecs + prior applies
  MatvecPlan::Scratch sf(*plan_f_);
  Eigen::VectorXd fm(n_data());
  plan_f_->apply_raw(res.m_map.values.data(), fm.data(), sf);
  Eigen::VectorXd ftfm(static_cast<Eigen::Index>(n_space()) * n_time());
  plan_f_->apply_adjoint_raw(fm.data(), ftfm.data(), sf);
  const auto prec = reindex(
      prior_->apply_precision(reindex(res.m_map, Layout::TimeMajorBlocks)),
      Layout::SpaceMajorRows);
  Eigen::VectorXd b(static_cast<Eigen::Index>(n_space()) * n_time());
  plan_f_->apply_adjoint_raw(d_obs.values.data(), b.data(), sf);
  b /= sigma2_;
  const Eigen::VectorXd resid =
      ftfm / sigma2_ + as_vec(prec).eval() - b;
  res.smw_rel_residual = resid.norm() / std::max(b.norm(), 1e-300);
  return res;
}

InferenceEngine::QoIPrediction InferenceEngine::predict_qoi(
    const ObsSeries& d_obs, double level) const {
  check_sm(d_obs, n_sensors(), n_time(), "predict_qoi");
  require(q_valid_ && cov_valid_, "Phase-3 artifacts (run form_Q/form_qoi_cov)");
  if (!(level > 0 && level < 1)) {
    throw ConfigError("predict_qoi: credible level must lie in (0, 1)");
  }
  const double t0 = now_seconds();
  const double z = (level == 0.95) ? 1.96 : normal_quantile(0.5 * (1 + level));
  const Eigen::VectorXd q = q_ * as_vec(d_obs);
  QoIPrediction out;
  out.q_map = QoISeries(n_qoi(), n_time(), Layout::SpaceMajorRows);
  out.ci_lower = out.q_map;
  out.ci_upper = out.q_map;
  for (int i = 0; i < n_qoi_total(); ++i) {
    const double half = z * std::sqrt(std::max(gamma_post_q_(i, i), 0.0));
    out.q_map.values[i] = q[i];
    out.ci_lower.values[i] = q[i] - half;
    out.ci_upper.values[i] = q[i] + half;
  }
  out.seconds = now_seconds() - t0;
  return out;
}

InferenceEngine::DiagEstimate InferenceEngine::pointwise_param_std(
    int n_probes, uint64_t seed) const {
  if (n_probes < 1) throw ConfigError("pointwise_param_std: n_probes >= 1");
  require(factorized_, "Cholesky factor");
  const int nm = n_space(), nt = n_time();
  Eigen::MatrixXd samples(nm, n_probes);
  parallel_for(n_probes, [&](int t) {
    // per-probe engine keyed off (seed, probe) so parallel order is moot
    std::mt19937_64 gen(seed + 0x9e3779b97f4a7c15ull * (t + 1));
    Eigen::VectorXd z(nm);
    for (int i = 0; i < nm; ++i) z[i] = (gen() & 1) ? 1.0 : -1.0;
    // prior part D Gamma_prior D^T z = dt^2 N_t Gamma_x z (exact identity)
    Eigen::VectorXd a =
        dt_obs_ * dt_obs_ * nt * prior_->apply_cov_spatial(z);
    // data correction: D G* K^{-1} G D^T z
    Eigen::VectorXd v(static_cast<Eigen::Index>(nm) * nt);
    for (int x = 0; x < nm; ++x) {
      for (int j = 0; j < nt; ++j) v[static_cast<size_t>(x) * nt + j] = dt_obs_ * z[x];
    }
    MatvecPlan::Scratch sg(*plan_g_);
    Eigen::VectorXd w(n_data());
    plan_g_->apply_raw(v.data(), w.data(), sg);  // G v (kernel matvec 1)
    solve_k_inplace(w);                          // one K-solve
    Eigen::VectorXd u(static_cast<Eigen::Index>(nm) * nt);
    plan_g_->apply_adjoint_raw(w.data(), u.data(), sg);  // G* (matvec 2)
    for (int x = 0; x < nm; ++x) {
      double du = 0;
      for (int j = 0; j < nt; ++j) du += u[static_cast<size_t>(x) * nt + j];
      samples(x, t) = z[x] * (a[x] - dt_obs_ * du);
    }
  });
  DiagEstimate est;
  est.diag = samples.rowwise().mean();
  est.std_err.resize(nm);
  for (int x = 0; x < nm; ++x) {
    double var = 0;
    for (int t = 0; t < n_probes; ++t) {
      const double d = samples(x, t) - est.diag[x];
      var += d * d;
    }
    var /= std::max(n_probes - 1, 1);
    est.std_err[x] = std::sqrt(var / n_probes);
  }
  est.std_dev = est.diag.cwiseMax(0.0).cwiseSqrt();
  return est;
}

Eigen::VectorXd InferenceEngine::integrate_displacement(
    const SpaceTimeField& m, double dt_obs) {
  m.check_consistent("integrate_displacement");
  Eigen::VectorXd disp = Eigen::VectorXd::Zero(m.n_rows);
  for (int x = 0; x < m.n_rows; ++x) {
    for (int j = 0; j < m.n_time; ++j) disp[x] += m.at(x, j);
  }
  return disp * dt_obs;
}

std::pair<SpaceTimeField, int> InferenceEngine::cg_reference_solve(
    const ObsSeries& d_obs, double tol, int max_iter) const {
  check_sm(d_obs, n_sensors(), n_time(), "cg_reference_solve");
  const Eigen::Index n = static_cast<Eigen::Index>(n_space()) * n_time();
  MatvecPlan::Scratch sf(*plan_f_);
  Eigen::VectorXd fm(n_data());

  auto apply_h = [&](const Eigen::VectorXd& m) {
    plan_f_->apply_raw(m.data(), fm.data(), sf);
    Eigen::VectorXd out(n);
    plan_f_->apply_adjoint_raw(fm.data(), out.data(), sf);
    out /= sigma2_;
    SpaceTimeField mm(n_space(), n_time(), Layout::SpaceMajorRows);
    Eigen::VectorXd::Map(mm.values.data(), n) = m;
    const auto prec = reindex(
        prior_->apply_precision(reindex(mm, Layout::TimeMajorBlocks)),
        Layout::SpaceMajorRows);
    out += as_vec(prec);
    return out;
  };

  Eigen::VectorXd b(n);
  plan_f_->apply_adjoint_raw(d_obs.values.data(), b.data(), sf);
  b /= sigma2_;

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd r = b;
  Eigen::VectorXd p = r;
  double rr = r.squaredNorm();
  const double stop2 = tol * tol * b.squaredNorm();
  int it = 0;
  for (; it < max_iter && rr > stop2; ++it) {
    const Eigen::VectorXd hp = apply_h(p);
    const double alpha = rr / p.dot(hp);
    x += alpha * p;
    r -= alpha * hp;
    const double rr_new = r.squaredNorm();
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  SpaceTimeField m(n_space(), n_time(), Layout::SpaceMajorRows);
  Eigen::VectorXd::Map(m.values.data(), n) = x;
  return {m, it};
}

}  // namespace ltibayes
