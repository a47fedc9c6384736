#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "ltibayes/bayes_engine.hpp"
#include "ltibayes/oracles.hpp"
#include "ltibayes/wave_sim.hpp"

using namespace ltibayes;

namespace {

BlockToeplitzKernel identity_kernel(int n, int nt) {
  BlockToeplitzKernel k(n, n, nt, KernelTag::F);
  for (int i = 0; i < n; ++i) k.at(i, i, 0) = 1.0;
  return k;
}

/// Engine with F = identity, Gamma_prior = I: everything is analytic.
InferenceEngine identity_engine(int n, int nt, double sigma2) {
  auto prior = std::make_shared<PriorOp>(n, 1.0, 0.0, 1.0);
  return InferenceEngine(identity_kernel(n, nt),
                         identity_kernel(n, nt), prior, sigma2, 1.0);
}

struct TinyInstance {
  std::shared_ptr<PriorOp> prior;
  BlockToeplitzKernel f, fq;
  double sigma2;
  ObsSeries d_obs;  // SpaceMajorRows
};

TinyInstance random_instance(int nd, int nq, int nm, int nt, uint64_t seed,
                             double sigma2 = -1) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0, 1);
  TinyInstance inst;
  inst.prior = std::make_shared<PriorOp>(nm, 1.0, 2.0, 1.0);
  LtiSystem sys;
  auto randn = [&](int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r * c; ++i) m(i / c, i % c) = n(gen);
    return m;
  };
  const int ns = 6;
  sys.A = randn(ns, ns);
  sys.A *= 0.8 / std::abs(sys.A.eigenvalues().cwiseAbs().maxCoeff());
  sys.B = randn(ns, nm);
  sys.C = randn(nd, ns);
  sys.Cq = randn(nq, ns);
  inst.f = lti_impulse_kernel(sys, nt, KernelTag::F);
  inst.fq = lti_impulse_kernel({sys.A, sys.B, sys.Cq, sys.Cq}, nt,
                               KernelTag::Fq);
  inst.d_obs = ObsSeries(nd, nt, Layout::SpaceMajorRows);
  for (auto& x : inst.d_obs.values) x = n(gen);
  inst.sigma2 = sigma2 > 0 ? sigma2 : 0.3;
  return inst;
}

InferenceEngine make_engine(const TinyInstance& inst, bool offline = true) {
  InferenceEngine e(inst.f, inst.fq, inst.prior, inst.sigma2, 1.0);
  if (offline) {
    e.form_K();
    e.factorize();
    e.form_Q();
    e.form_qoi_cov();
  }
  return e;
}

Eigen::VectorXd to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

}  // namespace

TEST_CASE("normal quantile") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.95996398454).epsilon(1e-9));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
  CHECK(normal_quantile(0.005) ==
        doctest::Approx(-2.57582930355).epsilon(1e-9));
  CHECK_THROWS_AS(normal_quantile(1.0), ConfigError);
}

TEST_CASE("identity maps: scalar Tikhonov structure") {
  const double sigma2 = 0.25;
  auto e = identity_engine(3, 4, sigma2);
  e.form_K();
  CHECK((e.K() - (1 + sigma2) * Eigen::MatrixXd::Identity(12, 12)).norm() <=
        1e-12);
  e.factorize();
  // chol of (1+sigma2) I is sqrt(1+sigma2) I
  CHECK((e.chol_lower() -
         std::sqrt(1 + sigma2) * Eigen::MatrixXd::Identity(12, 12))
            .norm() <= 1e-12);
  ObsSeries d(3, 4, Layout::SpaceMajorRows);
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n(0, 1);
  for (auto& x : d.values) x = n(gen);
  const auto res = e.infer_map(d);
  for (size_t i = 0; i < d.values.size(); ++i) {
    CHECK(res.m_map.values[i] ==
          doctest::Approx(d.values[i] / (1 + sigma2)).epsilon(1e-12));
  }
  CHECK(res.smw_rel_residual <= 1e-12);
}

TEST_CASE("factorize: diagonal examples and failure detail") {
  // K = 4 I via identity kernels and sigma2 = 3
  auto e = identity_engine(2, 3, 3.0);
  e.form_K();
  e.factorize();
  CHECK((e.chol_lower() - 2.0 * Eigen::MatrixXd::Identity(6, 6)).norm() <=
        1e-12);
  // random SPD: chol * chol^T reproduces K
  auto inst = random_instance(2, 1, 3, 5, 77);
  auto er = make_engine(inst, false);
  er.form_K();
  const Eigen::MatrixXd k = er.K();
  er.factorize();
  const Eigen::MatrixXd l = er.chol_lower();
  CHECK((l * l.transpose() - k).norm() / k.norm() <= 1e-12);
}

TEST_CASE("form_K: column and fused paths agree; dense oracle; asymmetry") {
  auto inst = random_instance(3, 2, 4, 6, 1234);
  auto e1 = make_engine(inst, false);
  e1.form_K(InferenceEngine::KAssembly::ColumnByColumn);
  auto e2 = make_engine(inst, false);
  e2.form_K(InferenceEngine::KAssembly::FusedBatched);
  CHECK((e1.K() - e2.K()).norm() / e1.K().norm() <= 1e-12);
  CHECK(e1.k_asymmetry() <= 1e-11);

  // dense oracle: K = sigma2 I + F Gamma_prior F^T
  const Eigen::MatrixXd fd = materialize_dense(inst.f);
  const Eigen::MatrixXd gp = dense_prior_cov_sm(*inst.prior, 6);
  const Eigen::MatrixXd k_ref =
      inst.sigma2 *
          Eigen::MatrixXd::Identity(fd.rows(), fd.rows()) +
      fd * gp * fd.transpose();
  CHECK((e1.K() - k_ref).norm() / k_ref.norm() <= 1e-10);
}

TEST_CASE("infer_map equals the dense normal-equations oracle") {
  auto inst = random_instance(3, 2, 5, 7, 4321);
  auto e = make_engine(inst);
  const auto res = e.infer_map(inst.d_obs);
  const Eigen::MatrixXd fd = materialize_dense(inst.f);
  const Eigen::VectorXd m_ref = dense_map_solve(fd, *inst.prior, 7,
                                                inst.sigma2,
                                                to_vec(inst.d_obs.values));
  CHECK((to_vec(res.m_map.values) - m_ref).norm() / m_ref.norm() <= 1e-8);
  CHECK(res.smw_rel_residual <= 1e-8);

  // zero data: zero MAP (m_prior = 0)
  ObsSeries zero(3, 7, Layout::SpaceMajorRows);
  const auto rz = e.infer_map(zero);
  CHECK(to_vec(rz.m_map.values).norm() == 0.0);
}

TEST_CASE("Q: zero p2q map, chain identity, dense agreement") {
  auto inst = random_instance(2, 2, 4, 5, 86);
  {
    auto zeroed = inst;
    for (auto& x : zeroed.fq.data) x = 0.0;
    auto e = make_engine(zeroed);
    CHECK(e.Q().norm() == 0.0);
  }
  auto e = make_engine(inst);
  // Q d_obs == F_q m_map (the Phase-4 identity)
  std::mt19937_64 gen(5);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 5; ++trial) {
    ObsSeries d(2, 5, Layout::SpaceMajorRows);
    for (auto& x : d.values) x = n(gen);
    const Eigen::VectorXd qd = e.Q() * to_vec(d.values);
    const auto m = e.infer_map(d);
    const auto fqm = MatvecPlan(inst.fq).apply(m.m_map);
    CHECK((qd - to_vec(fqm.values)).norm() /
              std::max(qd.norm(), 1e-300) <= 1e-10);
  }
  // dense assembly: Q = Fq Gpost F^T / sigma2
  const Eigen::MatrixXd fd = materialize_dense(inst.f);
  const Eigen::MatrixXd fqd = materialize_dense(inst.fq);
  const Eigen::MatrixXd h = dense_hessian(fd, *inst.prior, 5, inst.sigma2);
  const Eigen::MatrixXd q_ref =
      fqd * h.inverse() * fd.transpose() / inst.sigma2;
  CHECK((e.Q() - q_ref).norm() / q_ref.norm() <= 1e-8);
}

TEST_CASE("posterior QoI covariance: dense oracle, limits, contraction") {
  auto inst = random_instance(3, 2, 4, 6, 99, 2.0);
  auto e = make_engine(inst);
  const Eigen::MatrixXd fd = materialize_dense(inst.f);
  const Eigen::MatrixXd fqd = materialize_dense(inst.fq);
  const Eigen::MatrixXd ref =
      dense_posterior_qoi_cov(fd, fqd, *inst.prior, 6, inst.sigma2);
  CHECK((e.gamma_post_q() - ref).norm() / ref.norm() <= 1e-8);
  CHECK((e.gamma_post_q() - e.gamma_post_q().transpose()).norm() == 0.0);
  const double scale = e.gamma_post_q().norm();
  CHECK(e.gamma_post_q().diagonal().minCoeff() >= -1e-10 * scale);

  // contraction: posterior QoI variance never exceeds the prior QoI variance
  const Eigen::VectorXd prior_diag = e.prior_qoi_cov().diagonal();
  const Eigen::VectorXd post_diag = e.gamma_post_q().diagonal();
  for (int i = 0; i < post_diag.size(); ++i) {
    CHECK(post_diag[i] <= prior_diag[i] + 1e-10 * scale);
  }

  // sigma2 -> infinity: no data, posterior returns to the prior
  auto noisy = inst;
  noisy.sigma2 = inst.sigma2 * 1e6;
  auto en = make_engine(noisy);
  CHECK((en.gamma_post_q() - en.prior_qoi_cov()).norm() /
            en.prior_qoi_cov().norm() <= 1e-4);

  // monotonicity: QoI variances nondecreasing in sigma2
  auto mid = inst;
  mid.sigma2 = inst.sigma2 * 10;
  auto em = make_engine(mid);
  const Eigen::VectorXd v0 = e.gamma_post_q().diagonal();
  const Eigen::VectorXd v1 = em.gamma_post_q().diagonal();
  const Eigen::VectorXd v2 = en.gamma_post_q().diagonal();
  for (int i = 0; i < v0.size(); ++i) {
    CHECK(v1[i] >= v0[i] - 1e-12 * scale);
    CHECK(v2[i] >= v1[i] - 1e-12 * scale);
  }
}

TEST_CASE("predict_qoi: interval arithmetic and zero data") {
  auto inst = random_instance(2, 2, 3, 4, 55);
  auto e = make_engine(inst);
  // variance 0.04 at every index: half width must be exactly 1.96 * 0.2
  const int nq = e.n_qoi_total();
  e.set_phase3(Eigen::MatrixXd::Zero(nq, e.n_data()),
               0.04 * Eigen::MatrixXd::Identity(nq, nq),
               Eigen::MatrixXd::Identity(nq, nq));
  ObsSeries zero(2, 4, Layout::SpaceMajorRows);
  const auto pred = e.predict_qoi(zero, 0.95);
  for (int i = 0; i < nq; ++i) {
    CHECK(pred.q_map.values[i] == 0.0);
    CHECK(pred.ci_upper.values[i] == doctest::Approx(0.392).epsilon(1e-12));
    CHECK(pred.ci_lower.values[i] == doctest::Approx(-0.392).epsilon(1e-12));
  }
  // non-default level goes through the quantile
  const auto pred99 = e.predict_qoi(zero, 0.99);
  CHECK(pred99.ci_upper.values[0] ==
        doctest::Approx(normal_quantile(0.995) * 0.2).epsilon(1e-12));
  CHECK_THROWS_AS(e.predict_qoi(zero, 1.5), ConfigError);
}

TEST_CASE("hutchinson estimator: analytic case, dense oracle, MC rate") {
  // identity maps with nt = 1: D = dt I, diag = sigma2/(1+sigma2)
  const double sigma2 = 0.5;
  auto e = identity_engine(6, 1, sigma2);
  e.form_K();
  e.factorize();
  const auto est = e.pointwise_param_std(400, 31);
  const double analytic = sigma2 / (1 + sigma2);
  for (int i = 0; i < 6; ++i) {
    CHECK(std::abs(est.diag[i] - analytic) <= 3 * est.std_err[i] + 1e-12);
  }

  // tiny instance vs dense diagonal at 200 probes, within 3 standard errors
  auto inst = random_instance(2, 1, 4, 5, 11, 0.2);
  auto ei = make_engine(inst);
  const Eigen::MatrixXd fd = materialize_dense(inst.f);
  const Eigen::VectorXd ref = dense_displacement_cov_diag(
      fd, *inst.prior, 5, inst.sigma2, 1.0);
  const auto est2 = ei.pointwise_param_std(200, 7);
  for (int i = 0; i < ref.size(); ++i) {
    CHECK(std::abs(est2.diag[i] - ref[i]) <= 3 * est2.std_err[i] + 1e-12);
  }

  // determinism and the Monte Carlo rate: variance halves as probes double
  const auto est2b = ei.pointwise_param_std(200, 7);
  CHECK(est2b.diag == est2.diag);
  double se_small = 0, se_big = 0;
  for (int rep = 0; rep < 8; ++rep) {
    se_small += ei.pointwise_param_std(100, 100 + rep).std_err.squaredNorm();
    se_big += ei.pointwise_param_std(200, 200 + rep).std_err.squaredNorm();
  }
  const double ratio = se_big / se_small;
  CHECK(ratio > 0.3);
  CHECK(ratio < 0.8);  // ~0.5 expected

  CHECK_THROWS_AS(ei.pointwise_param_std(0, 1), ConfigError);
}

TEST_CASE("integrate_displacement") {
  SpaceTimeField m(3, 4, Layout::TimeMajorBlocks);
  for (int x = 0; x < 3; ++x) {
    for (int j = 0; j < 4; ++j) m.at(x, j) = x + 1;  // constant in time
  }
  const auto disp = InferenceEngine::integrate_displacement(m, 0.5);
  for (int x = 0; x < 3; ++x) {
    CHECK(disp[x] == doctest::Approx(4 * 0.5 * (x + 1)));
  }
  SpaceTimeField zero(2, 3, Layout::SpaceMajorRows);
  CHECK(InferenceEngine::integrate_displacement(zero, 1.0).norm() == 0.0);
}

TEST_CASE("cg reference solve matches the engine MAP") {
  auto inst = random_instance(3, 1, 4, 6, 2027, 0.5);
  auto e = make_engine(inst);
  const auto direct = e.infer_map(inst.d_obs);
  auto [m_cg, iters] = e.cg_reference_solve(inst.d_obs, 1e-10, 10000);
  CHECK(iters < 10000);
  CHECK((to_vec(m_cg.values) - to_vec(direct.m_map.values)).norm() /
            to_vec(direct.m_map.values).norm() <= 1e-6);
}

TEST_CASE("state errors before offline phases") {
  auto inst = random_instance(2, 1, 3, 4, 6);
  auto e = make_engine(inst, false);
  CHECK_THROWS_AS(e.infer_map(inst.d_obs), StateError);
  CHECK_THROWS_AS(e.Q(), StateError);
  e.form_K();
  CHECK_THROWS_AS(e.chol_lower(), StateError);
  CHECK_THROWS_AS(e.form_Q(), StateError);
}

TEST_CASE("layout contract at the engine boundary") {
  auto inst = random_instance(2, 1, 3, 4, 60);
  auto e = make_engine(inst);
  ObsSeries tm(2, 4, Layout::TimeMajorBlocks);
  CHECK_THROWS_AS(e.infer_map(tm), LayoutError);
}
