#include "ltibayes/wave_sim.hpp"

#include <algorithm>
#include <atomic>
#include <random>

#include "ltibayes/threads.hpp"

namespace ltibayes {

namespace {
std::atomic<uint64_t> g_solver_invocations{0};
}

// ---------------------------------------------------------------------------
// WaveConfig
// ---------------------------------------------------------------------------

int WaveConfig::nx() const {
  return static_cast<int>(std::llround(length / h_x));
}
int WaveConfig::nz() const {
  return static_cast<int>(std::llround(depth / h_z));
}

Dims WaveConfig::dims() const {
  Dims d;
  d.n_space = n_space();
  d.n_sensors = static_cast<int>(sensor_x.size());
  d.n_qoi = static_cast<int>(qoi_x.size());
  d.n_time = n_time;
  d.dt_obs = dt_obs;
  return d;
}

void WaveConfig::validate() const {
  if (!(length > 0) || !(depth > 0) || !(h_x > 0) || !(h_z > 0)) {
    throw ConfigError("wave: length/depth/h_x/h_z must be positive");
  }
  if (std::abs(nx() * h_x - length) > 1e-6 * length || nx() < 2) {
    throw ConfigError("wave: h_x must evenly divide length into >= 2 cells");
  }
  if (std::abs(nz() * h_z - depth) > 1e-6 * depth || nz() < 2) {
    throw ConfigError("wave: h_z must evenly divide depth into >= 2 cells");
  }
  if (!(rho > 0) || !(bulk_modulus > 0) || !(gravity > 0)) {
    throw ConfigError("wave: rho/bulk_modulus/gravity must be positive");
  }
  if (substeps < 1) throw ConfigError("wave: substeps must be >= 1");
  if (n_time < 1) throw ConfigError("wave: n_time must be >= 1");
  if (!(dt_obs > 0)) throw ConfigError("wave: dt_obs must be positive");
  if (!(cfl_factor > 0) || cfl_factor > 0.5) {
    throw ConfigError("wave: cfl_factor must lie in (0, 0.5]");
  }
  const double dt_max = cfl_factor * std::min(h_x, h_z) / sound_speed();
  if (dt_sim() > dt_max * (1 + 1e-12)) {
    throw ConfigError(
        "wave: CFL check failed: dt_sim = " + std::to_string(dt_sim()) +
        " exceeds cfl_factor*min(h_x,h_z)/c = " + std::to_string(dt_max) +
        "; increase substeps");
  }
  if (sensor_x.empty()) throw ConfigError("wave: sensor_x must be nonempty");
  if (qoi_x.empty()) throw ConfigError("wave: qoi_x must be nonempty");
  for (double x : sensor_x) {
    if (x < 0 || x > length) {
      throw ConfigError("wave: sensor position " + std::to_string(x) +
                        " outside [0, length]");
    }
  }
  for (double x : qoi_x) {
    if (x < 0 || x > length) {
      throw ConfigError("wave: qoi position " + std::to_string(x) +
                        " outside [0, length]");
    }
  }
  dims().validate();
}

std::vector<double> WaveConfig::spread_positions(int n, double length,
                                                 double margin) {
  std::vector<double> out(n);
  const double a = margin * length, b = (1 - margin) * length;
  for (int i = 0; i < n; ++i) {
    out[i] = (n == 1) ? 0.5 * (a + b) : a + (b - a) * i / (n - 1);
  }
  return out;
}

bool WaveState::all_finite() const {
  return u_x.allFinite() && u_z.allFinite() && p.allFinite() &&
         eta.allFinite();
}

// ---------------------------------------------------------------------------
// LTI backend
// ---------------------------------------------------------------------------

void LtiSystem::validate() const {
  const auto n = A.rows();
  if (A.cols() != n || B.rows() != n || C.cols() != n || Cq.cols() != n) {
    throw DimensionError("LtiSystem: inconsistent dimensions");
  }
}

BlockToeplitzKernel lti_impulse_kernel(const LtiSystem& sys, int n_time,
                                       KernelTag tag) {
  sys.validate();
  const int nd = static_cast<int>(sys.C.rows());
  const int nm = static_cast<int>(sys.B.cols());
  BlockToeplitzKernel kernel(nd, nm, n_time, tag);
  Eigen::MatrixXd M = sys.B;  // A^{k-1} B
  for (int k = 0; k < n_time; ++k) {
    Eigen::MatrixXd slice = sys.C * M;
    for (int s = 0; s < nd; ++s) {
      for (int x = 0; x < nm; ++x) kernel.at(s, x, k) = slice(s, x);
    }
    if (k + 1 < n_time) M = sys.A * M;
  }
  return kernel;
}

ObsSeries lti_simulate(const LtiSystem& sys, const SpaceTimeField& m) {
  sys.validate();
  const auto mt = reindex(m, Layout::TimeMajorBlocks);
  const int nd = static_cast<int>(sys.C.rows());
  const int nm = static_cast<int>(sys.B.cols());
  if (mt.n_rows != nm) throw DimensionError("lti_simulate: n_rows != B cols");
  ObsSeries d(nd, mt.n_time, Layout::TimeMajorBlocks);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(sys.A.rows());
  for (int j = 0; j < mt.n_time; ++j) {
    Eigen::VectorXd mj(nm);
    for (int r = 0; r < nm; ++r) mj[r] = mt.at(r, j);
    x = sys.A * x + sys.B * mj;
    Eigen::VectorXd dj = sys.C * x;
    for (int s = 0; s < nd; ++s) d.at(s, j) = dj[s];
  }
  return d;
}

Eigen::MatrixXd lti_materialize(const LtiSystem& sys, int n_time) {
  sys.validate();
  const int nd = static_cast<int>(sys.C.rows());
  const int nm = static_cast<int>(sys.B.cols());
  Eigen::MatrixXd F =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nd) * n_time,
                            static_cast<Eigen::Index>(nm) * n_time);
  Eigen::MatrixXd M = sys.B;
  for (int lag = 0; lag < n_time; ++lag) {
    Eigen::MatrixXd blockk = sys.C * M;
    for (int j = 0; lag + j < n_time; ++j) {
      F.block(static_cast<Eigen::Index>(lag + j) * nd,
              static_cast<Eigen::Index>(j) * nm, nd, nm) = blockk;
    }
    if (lag + 1 < n_time) M = sys.A * M;
  }
  return F;
}

// ---------------------------------------------------------------------------
// WaveSimulator
// ---------------------------------------------------------------------------

namespace {

int snap_node(double x, double h, int n_max, const char* what) {
  const int i = static_cast<int>(std::llround(x / h));
  if (i < 0 || i > n_max) {
    throw ConfigError(std::string(what) + ": position snaps outside the grid");
  }
  return i;
}

}  // namespace

WaveSimulator::WaveSimulator(const WaveConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  nx_ = cfg_.nx();
  nz_ = cfg_.nz();
  const int nn = (nx_ + 1) * (nz_ + 1);
  const int np = (nx_ + 1) * nz_;
  const int ne = nx_ + 1;
  off_ux_ = 0;
  off_uz_ = nn;
  off_p_ = 2 * nn;
  off_eta_ = 2 * nn + np;
  n_state_ = 2 * nn + np + ne;

  for (double x : cfg_.sensor_x) {
    sensor_nodes_.push_back(snap_node(x, cfg_.h_x, nx_, "sensor"));
  }
  for (double x : cfg_.qoi_x) {
    qoi_nodes_.push_back(snap_node(x, cfg_.h_x, nx_, "qoi"));
  }
  {
    auto s = sensor_nodes_;
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end()) {
      throw ConfigError("two sensors snap to the same grid node");
    }
  }

  // --- assemble the semi-discrete generator ---
  const double rho = cfg_.rho, Kb = cfg_.bulk_modulus, g = cfg_.gravity;
  const double hx = cfg_.h_x, hz = cfg_.h_z;
  const double zinv = cfg_.impedance_inv();

  auto id_ux = [&](int i, int k) { return off_ux_ + i * (nz_ + 1) + k; };
  auto id_uz = [&](int i, int k) { return off_uz_ + i * (nz_ + 1) + k; };
  auto id_p = [&](int i, int k) { return off_p_ + i * nz_ + k; };
  auto id_eta = [&](int i) { return off_eta_ + i; };

  using Entry = std::pair<int, double>;  // (column, coefficient)

  // pressure including the surface substitution p(i, nz) = rho*g*eta_i
  auto p_entry = [&](int i, int k) -> Entry {
    if (k < nz_) return {id_p(i, k), 1.0};
    return {id_eta(i), rho * g};
  };

  // SBP first derivative of the (substituted) pressure along x / z
  auto grad_p_x = [&](int i, int k, std::vector<Entry>& out, double scale) {
    if (i == 0) {
      auto a = p_entry(1, k), b = p_entry(0, k);
      out.push_back({a.first, scale * a.second / hx});
      out.push_back({b.first, -scale * b.second / hx});
    } else if (i == nx_) {
      auto a = p_entry(nx_, k), b = p_entry(nx_ - 1, k);
      out.push_back({a.first, scale * a.second / hx});
      out.push_back({b.first, -scale * b.second / hx});
    } else {
      auto a = p_entry(i + 1, k), b = p_entry(i - 1, k);
      out.push_back({a.first, scale * a.second / (2 * hx)});
      out.push_back({b.first, -scale * b.second / (2 * hx)});
    }
  };
  auto grad_p_z = [&](int i, int k, std::vector<Entry>& out, double scale) {
    if (k == 0) {
      auto a = p_entry(i, 1), b = p_entry(i, 0);
      out.push_back({a.first, scale * a.second / hz});
      out.push_back({b.first, -scale * b.second / hz});
    } else if (k == nz_) {
      auto a = p_entry(i, nz_), b = p_entry(i, nz_ - 1);
      out.push_back({a.first, scale * a.second / hz});
      out.push_back({b.first, -scale * b.second / hz});
    } else {
      auto a = p_entry(i, k + 1), b = p_entry(i, k - 1);
      out.push_back({a.first, scale * a.second / (2 * hz)});
      out.push_back({b.first, -scale * b.second / (2 * hz)});
    }
  };

  // divergence of u at node (i, k), SBP closures at all four edges
  auto div_u = [&](int i, int k, std::vector<Entry>& out, double scale) {
    if (i == 0) {
      out.push_back({id_ux(1, k), scale / hx});
      out.push_back({id_ux(0, k), -scale / hx});
    } else if (i == nx_) {
      out.push_back({id_ux(nx_, k), scale / hx});
      out.push_back({id_ux(nx_ - 1, k), -scale / hx});
    } else {
      out.push_back({id_ux(i + 1, k), scale / (2 * hx)});
      out.push_back({id_ux(i - 1, k), -scale / (2 * hx)});
    }
    if (k == 0) {
      out.push_back({id_uz(i, 1), scale / hz});
      out.push_back({id_uz(i, 0), -scale / hz});
    } else if (k == nz_) {
      out.push_back({id_uz(i, nz_), scale / hz});
      out.push_back({id_uz(i, nz_ - 1), -scale / hz});
    } else {
      out.push_back({id_uz(i, k + 1), scale / (2 * hz)});
      out.push_back({id_uz(i, k - 1), -scale / (2 * hz)});
    }
  };

  // surface kinematic row: eta_dot = u_z - (hz/2) div u, the closure that
  // pairs the surface flux exactly in the discrete energy balance
  auto eta_row = [&](int i, std::vector<Entry>& out, double scale) {
    out.push_back({id_uz(i, nz_), scale});
    div_u(i, nz_, out, -scale * hz / 2);
  };

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(n_state_) * 6);
  std::vector<Entry> row;

  auto flush_row = [&](int r) {
    for (const auto& e : row) {
      if (e.second != 0.0) trip.emplace_back(r, e.first, e.second);
    }
    row.clear();
  };

  for (int i = 0; i <= nx_; ++i) {
    for (int k = 0; k <= nz_; ++k) {
      // u_x rows
      if (i == 0 || i == nx_) {
        // lateral impedance: u_x = +-Z^{-1} p held as an exact invariant by
        // overriding the row with +-Z^{-1} * d/dt(pressure at this node)
        if (zinv != 0.0) {
          const double sgn = (i == 0) ? -1.0 : 1.0;
          if (k < nz_) {
            div_u(i, k, row, sgn * zinv * (-Kb));
          } else {
            eta_row(i, row, sgn * zinv * rho * g);
          }
          flush_row(id_ux(i, k));
        }
        // zinv == 0: frozen row, u_x stays 0 (reflecting wall)
      } else {
        grad_p_x(i, k, row, -1.0 / rho);
        flush_row(id_ux(i, k));
      }

      // u_z rows; k == 0 is the forcing row (frozen, injected per interval)
      if (k > 0) {
        grad_p_z(i, k, row, -1.0 / rho);
        flush_row(id_uz(i, k));
      }

      // p rows (surface row excluded; surface pressure is rho*g*eta)
      if (k < nz_) {
        div_u(i, k, row, -Kb);
        flush_row(id_p(i, k));
      }
    }
    // eta rows
    eta_row(i, row, 1.0);
    flush_row(id_eta(i));
  }

  L_.resize(n_state_, n_state_);
  L_.setFromTriplets(trip.begin(), trip.end());
  L_.makeCompressed();
  Lt_ = L_.transpose();
  Lt_.makeCompressed();
}

WaveState WaveSimulator::zero_state() const {
  WaveState s;
  s.u_x = Eigen::MatrixXd::Zero(nx_ + 1, nz_ + 1);
  s.u_z = Eigen::MatrixXd::Zero(nx_ + 1, nz_ + 1);
  s.p = Eigen::MatrixXd::Zero(nx_ + 1, nz_);
  s.eta = Eigen::VectorXd::Zero(nx_ + 1);
  return s;
}

Eigen::VectorXd WaveSimulator::pack(const WaveState& s) const {
  Eigen::VectorXd x(n_state_);
  for (int i = 0; i <= nx_; ++i) {
    for (int k = 0; k <= nz_; ++k) {
      x[off_ux_ + i * (nz_ + 1) + k] = s.u_x(i, k);
      x[off_uz_ + i * (nz_ + 1) + k] = s.u_z(i, k);
    }
    for (int k = 0; k < nz_; ++k) x[off_p_ + i * nz_ + k] = s.p(i, k);
    x[off_eta_ + i] = s.eta(i);
  }
  return x;
}

WaveState WaveSimulator::unpack(const Eigen::VectorXd& x) const {
  WaveState s = zero_state();
  for (int i = 0; i <= nx_; ++i) {
    for (int k = 0; k <= nz_; ++k) {
      s.u_x(i, k) = x[off_ux_ + i * (nz_ + 1) + k];
      s.u_z(i, k) = x[off_uz_ + i * (nz_ + 1) + k];
    }
    for (int k = 0; k < nz_; ++k) s.p(i, k) = x[off_p_ + i * nz_ + k];
    s.eta(i) = x[off_eta_ + i];
  }
  return s;
}

void WaveSimulator::rk4_inplace(const Eigen::SparseMatrix<double>& op,
                                Eigen::VectorXd& x) const {
  const double dt = cfg_.dt_sim();
  Eigen::VectorXd k1 = op * x;
  Eigen::VectorXd k2 = op * (x + (dt / 2) * k1).eval();
  Eigen::VectorXd k3 = op * (x + (dt / 2) * k2).eval();
  Eigen::VectorXd k4 = op * (x + dt * k3).eval();
  x += (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
  g_solver_invocations.fetch_add(1, std::memory_order_relaxed);
}

void WaveSimulator::inject_forcing(Eigen::VectorXd& x,
                                   const Eigen::VectorXd& m) const {
  for (int i = 0; i <= nx_; ++i) x[off_uz_ + i * (nz_ + 1)] = m[i];
}

void WaveSimulator::zero_forcing_rows(Eigen::VectorXd& x) const {
  for (int i = 0; i <= nx_; ++i) x[off_uz_ + i * (nz_ + 1)] = 0.0;
}

Eigen::VectorXd WaveSimulator::read_bottom_uz(const Eigen::VectorXd& x) const {
  Eigen::VectorXd m(nx_ + 1);
  for (int i = 0; i <= nx_; ++i) m[i] = x[off_uz_ + i * (nz_ + 1)];
  return m;
}

WaveState WaveSimulator::step(const WaveState& state,
                              const Eigen::VectorXd& forcing_bottom) const {
  if (forcing_bottom.size() != nx_ + 1) {
    throw DimensionError("step: forcing length must equal n_space");
  }
  Eigen::VectorXd x = pack(state);
  inject_forcing(x, forcing_bottom);
  rk4_inplace(L_, x);
  if (!x.allFinite()) {
    throw NumericalError(
        "wave step produced non-finite state; CFL check "
        "(dt_sim <= cfl_factor*min(h_x,h_z)/c) likely violated");
  }
  return unpack(x);
}

std::pair<ObsSeries, QoISeries> WaveSimulator::simulate_forward(
    const SpaceTimeField& m) const {
  const auto mt = reindex(m, Layout::TimeMajorBlocks);
  if (mt.n_rows != n_space() || mt.n_time != cfg_.n_time) {
    throw DimensionError("simulate_forward: parameter dims do not match grid");
  }
  const int nd = static_cast<int>(sensor_nodes_.size());
  const int nq = static_cast<int>(qoi_nodes_.size());
  ObsSeries d(nd, cfg_.n_time, Layout::TimeMajorBlocks);
  QoISeries q(nq, cfg_.n_time, Layout::TimeMajorBlocks);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n_state_);
  Eigen::VectorXd mj(nx_ + 1);
  for (int j = 0; j < cfg_.n_time; ++j) {
    for (int r = 0; r <= nx_; ++r) mj[r] = mt.at(r, j);
    inject_forcing(x, mj);
    for (int s = 0; s < cfg_.substeps; ++s) rk4_inplace(L_, x);
    if (!x.allFinite()) {
      throw NumericalError(
          "simulate_forward: non-finite state at observation step " +
          std::to_string(j + 1) + "; CFL check likely violated");
    }
    for (int s = 0; s < nd; ++s) {
      d.at(s, j) = x[off_p_ + sensor_nodes_[s] * nz_];  // bottom pressure
    }
    for (int s = 0; s < nq; ++s) q.at(s, j) = x[off_eta_ + qoi_nodes_[s]];
  }
  return {d, q};
}

namespace {

// shared reverse-sweep skeleton: given per-step seeds w_j mapped into state
// space by seed_of(j), produce m~_j = bottom-read((S^T)^r v_j) with
// v_j = seed_j + Pi (S^T)^r v_{j+1}
template <typename SeedFn, typename StepFn, typename PiFn, typename ReadFn>
void adjoint_sweep(int n_time, int substeps, Eigen::VectorXd& v,
                   SeedFn&& add_seed, StepFn&& adj_substep, PiFn&& project,
                   ReadFn&& emit) {
  for (int j = n_time - 1; j >= 0; --j) {
    add_seed(j, v);
    for (int s = 0; s < substeps; ++s) adj_substep(v);
    emit(j, v);
    project(v);
  }
}

}  // namespace

SpaceTimeField WaveSimulator::apply_p2o_adjoint(const ObsSeries& w) const {
  const auto wt = reindex(w, Layout::TimeMajorBlocks);
  const int nd = static_cast<int>(sensor_nodes_.size());
  if (wt.n_rows != nd || wt.n_time != cfg_.n_time) {
    throw DimensionError("apply_p2o_adjoint: dims do not match");
  }
  SpaceTimeField out(n_space(), cfg_.n_time, Layout::TimeMajorBlocks);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n_state_);
  adjoint_sweep(
      cfg_.n_time, cfg_.substeps, v,
      [&](int j, Eigen::VectorXd& x) {
        for (int s = 0; s < nd; ++s) {
          x[off_p_ + sensor_nodes_[s] * nz_] += wt.at(s, j);
        }
      },
      [&](Eigen::VectorXd& x) { rk4_inplace(Lt_, x); },
      [&](Eigen::VectorXd& x) { zero_forcing_rows(x); },
      [&](int j, const Eigen::VectorXd& x) {
        const auto mj = read_bottom_uz(x);
        for (int r = 0; r <= nx_; ++r) out.at(r, j) = mj[r];
      });
  return out;
}

SpaceTimeField WaveSimulator::apply_p2q_adjoint(const QoISeries& w) const {
  const auto wt = reindex(w, Layout::TimeMajorBlocks);
  const int nq = static_cast<int>(qoi_nodes_.size());
  if (wt.n_rows != nq || wt.n_time != cfg_.n_time) {
    throw DimensionError("apply_p2q_adjoint: dims do not match");
  }
  SpaceTimeField out(n_space(), cfg_.n_time, Layout::TimeMajorBlocks);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n_state_);
  adjoint_sweep(
      cfg_.n_time, cfg_.substeps, v,
      [&](int j, Eigen::VectorXd& x) {
        for (int s = 0; s < nq; ++s) x[off_eta_ + qoi_nodes_[s]] += wt.at(s, j);
      },
      [&](Eigen::VectorXd& x) { rk4_inplace(Lt_, x); },
      [&](Eigen::VectorXd& x) { zero_forcing_rows(x); },
      [&](int j, const Eigen::VectorXd& x) {
        const auto mj = read_bottom_uz(x);
        for (int r = 0; r <= nx_; ++r) out.at(r, j) = mj[r];
      });
  return out;
}

Eigen::MatrixXd WaveSimulator::adjoint_kernel_from_seed(
    const Eigen::VectorXd& seed) const {
  Eigen::MatrixXd kernel(n_space(), cfg_.n_time);
  Eigen::VectorXd v = seed;
  for (int k = 0; k < cfg_.n_time; ++k) {
    for (int s = 0; s < cfg_.substeps; ++s) rk4_inplace(Lt_, v);
    kernel.col(k) = read_bottom_uz(v);
    zero_forcing_rows(v);
  }
  if (!kernel.allFinite()) {
    throw NumericalError("adjoint kernel sweep produced non-finite values");
  }
  return kernel;
}

Eigen::MatrixXd WaveSimulator::adjoint_kernel_for_sensor(int j) const {
  if (j < 0 || j >= static_cast<int>(sensor_nodes_.size())) {
    throw IndexError("adjoint_kernel_for_sensor: invalid sensor index");
  }
  Eigen::VectorXd seed = Eigen::VectorXd::Zero(n_state_);
  seed[off_p_ + sensor_nodes_[j] * nz_] = 1.0;
  return adjoint_kernel_from_seed(seed);
}

Eigen::MatrixXd WaveSimulator::adjoint_kernel_for_qoi(int j) const {
  if (j < 0 || j >= static_cast<int>(qoi_nodes_.size())) {
    throw IndexError("adjoint_kernel_for_qoi: invalid qoi index");
  }
  Eigen::VectorXd seed = Eigen::VectorXd::Zero(n_state_);
  seed[off_eta_ + qoi_nodes_[j]] = 1.0;
  return adjoint_kernel_from_seed(seed);
}

BlockToeplitzKernel WaveSimulator::extract_p2o_kernel() const {
  const int nd = static_cast<int>(sensor_nodes_.size());
  BlockToeplitzKernel kernel(nd, n_space(), cfg_.n_time, KernelTag::F);
  parallel_for(nd, [&](int s) {
    const auto m = adjoint_kernel_for_sensor(s);
    for (int x = 0; x < n_space(); ++x) {
      for (int k = 0; k < cfg_.n_time; ++k) kernel.at(s, x, k) = m(x, k);
    }
  });
  return kernel;
}

BlockToeplitzKernel WaveSimulator::extract_p2q_kernel() const {
  const int nq = static_cast<int>(qoi_nodes_.size());
  BlockToeplitzKernel kernel(nq, n_space(), cfg_.n_time, KernelTag::Fq);
  parallel_for(nq, [&](int s) {
    const auto m = adjoint_kernel_for_qoi(s);
    for (int x = 0; x < n_space(); ++x) {
      for (int k = 0; k < cfg_.n_time; ++k) kernel.at(s, x, k) = m(x, k);
    }
  });
  return kernel;
}

double WaveSimulator::energy(const WaveState& s) const {
  const double rho = cfg_.rho, Kb = cfg_.bulk_modulus, g = cfg_.gravity;
  auto wx = [&](int i) { return cfg_.h_x * ((i == 0 || i == nx_) ? 0.5 : 1.0); };
  auto wz = [&](int k) { return cfg_.h_z * ((k == 0 || k == nz_) ? 0.5 : 1.0); };
  double e = 0;
  for (int i = 0; i <= nx_; ++i) {
    for (int k = 0; k <= nz_; ++k) {
      const double w = wx(i) * wz(k);
      e += w * 0.5 * rho *
           (s.u_x(i, k) * s.u_x(i, k) + s.u_z(i, k) * s.u_z(i, k));
      if (k < nz_) e += w * s.p(i, k) * s.p(i, k) / (2 * Kb);
    }
    e += wx(i) * 0.5 * rho * g * s.eta(i) * s.eta(i);
  }
  return e;
}

uint64_t WaveSimulator::solver_invocations() {
  return g_solver_invocations.load();
}
void WaveSimulator::reset_solver_invocations() { g_solver_invocations = 0; }

// ---------------------------------------------------------------------------
// Synthetic truth and noise
// ---------------------------------------------------------------------------

SpaceTimeField synth_truth(const std::vector<double>& bottom_x, int n_time,
                           double dt_obs, double center_x, double sigma_x,
                           double rise_time, double amplitude) {
  if (!(rise_time > 0)) throw ConfigError("synth_truth: rise_time must be > 0");
  if (!(sigma_x > 0)) throw ConfigError("synth_truth: sigma_x must be > 0");
  const int nm = static_cast<int>(bottom_x.size());
  SpaceTimeField m(nm, n_time, Layout::TimeMajorBlocks);
  auto ramp = [&](double t) {
    const double th = std::clamp(t / rise_time, 0.0, 1.0);
    return th * th * (3 - 2 * th);  // smoothstep 0 -> 1
  };
  for (int x = 0; x < nm; ++x) {
    const double dx = bottom_x[x] - center_x;
    const double bump = amplitude * std::exp(-dx * dx / (2 * sigma_x * sigma_x));
    for (int j = 0; j < n_time; ++j) {
      // discrete rate of the ramp, so the dt_obs-weighted sum telescopes
      m.at(x, j) = bump * (ramp((j + 1) * dt_obs) - ramp(j * dt_obs)) / dt_obs;
    }
  }
  return m;
}

SpaceTimeField synth_truth(const WaveConfig& cfg, double center_x,
                           double sigma_x, double rise_time,
                           double amplitude) {
  std::vector<double> bx(cfg.n_space());
  for (int i = 0; i < cfg.n_space(); ++i) bx[i] = i * cfg.h_x;
  return synth_truth(bx, cfg.n_time, cfg.dt_obs, center_x, sigma_x, rise_time,
                     amplitude);
}

std::pair<ObsSeries, double> add_noise(const ObsSeries& d, double rel,
                                       uint64_t seed) {
  if (rel < 0) throw ConfigError("add_noise: rel must be >= 0");
  d.check_consistent("add_noise");
  double maxabs = 0;
  for (double x : d.values) maxabs = std::max(maxabs, std::abs(x));
  const double sigma_noise = rel * maxabs;
  ObsSeries out = d;
  if (sigma_noise > 0) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& x : out.values) x += sigma_noise * normal(gen);
  }
  // floor keeps Gamma_noise invertible for rel = 0 runs
  const double sigma = std::max(sigma_noise, 1e-12 * std::max(1.0, maxabs));
  return {out, sigma};
}

}  // namespace ltibayes
