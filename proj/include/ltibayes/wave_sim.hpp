#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "ltibayes/core.hpp"

namespace ltibayes {

/// Configuration of the 2D (x-z vertical slice) acoustic-gravity model.
///
/// The domain is [0, length] x [0, depth] with the sea surface at z = depth
/// and the seafloor at z = 0. Bottom forcing is the seafloor normal velocity
/// m(x, t), held constant over the `substeps` RK4 substeps of each
/// observation interval (zero-order hold). Sensors sample pressure at bottom
/// nodes, QoI sample the surface height eta; both snap to the nearest grid
/// node.
struct WaveConfig {
  double length = 102000.0;  // m
  double depth = 4000.0;     // m
  double h_x = 400.0;        // m
  double h_z = 250.0;        // m
  double rho = 1000.0;       // kg/m^3
  double bulk_modulus = 2.25e9;  // Pa (rho * c^2 with c = 1500 m/s)
  double gravity = 9.81;     // m/s^2
  bool absorbing_lateral = true;  // Z^{-1} = 1/(rho c) on x-boundaries, else 0
  double dt_obs = 1.0;       // s, observation interval
  int substeps = 16;         // r = dt_obs / dt_sim
  int n_time = 32;           // N_t observation steps
  double cfl_factor = 0.5;
  std::vector<double> sensor_x;  // bottom sensor positions in [0, length]
  std::vector<double> qoi_x;     // surface forecast positions in [0, length]

  double sound_speed() const { return std::sqrt(bulk_modulus / rho); }
  double dt_sim() const { return dt_obs / substeps; }
  double impedance_inv() const {
    return absorbing_lateral ? 1.0 / (rho * sound_speed()) : 0.0;
  }
  int nx() const;  // cells in x; nodes are 0..nx
  int nz() const;  // cells in z
  int n_space() const { return nx() + 1; }  // N_m: bottom nodes

  Dims dims() const;
  void validate() const;

  /// Evenly spread n points over the interior [margin*L, (1-margin)*L].
  static std::vector<double> spread_positions(int n, double length,
                                              double margin = 0.1);
};

/// Discrete fields of the simulator at one time instant.
struct WaveState {
  Eigen::MatrixXd u_x;   // (nx+1) x (nz+1) nodal horizontal velocity
  Eigen::MatrixXd u_z;   // (nx+1) x (nz+1) nodal vertical velocity
  Eigen::MatrixXd p;     // (nx+1) x nz nodal pressure (surface row excluded;
                         //  the surface pressure is rho*g*eta)
  Eigen::VectorXd eta;   // (nx+1) surface height

  bool all_finite() const;
};

/// Generic LTI state-space backend: x_k = A x_{k-1} + B m_k, d_k = C x_k,
/// q_k = C_q x_k, x_0 = 0. Used as an oracle for the Toeplitz algebra.
struct LtiSystem {
  Eigen::MatrixXd A;    // n_state x n_state
  Eigen::MatrixXd B;    // n_state x N_m
  Eigen::MatrixXd C;    // N_d x n_state
  Eigen::MatrixXd Cq;   // N_q x n_state

  void validate() const;
};

/// kernel[s][x][k] = (C A^{k-1} B)[s][x].
BlockToeplitzKernel lti_impulse_kernel(const LtiSystem& sys, int n_time,
                                       KernelTag tag = KernelTag::F);
/// Step-by-step recursion oracle (TimeMajorBlocks in, TimeMajorBlocks out).
ObsSeries lti_simulate(const LtiSystem& sys, const SpaceTimeField& m);
/// Brute-force materialization of the (N_d*N_t) x (N_m*N_t) map.
Eigen::MatrixXd lti_materialize(const LtiSystem& sys, int n_time);

/// Desk-scale 2D acoustic-gravity solver.
///
/// Spatial discretization: collocated second-order central differences with
/// one-sided closures at boundaries and a trapezoid quadrature norm; the
/// semi-discrete closed box (reflecting sides, rigid bottom) conserves the
/// discrete energy exactly, so time-integration error is the only drift
/// source. Time integration: classical RK4. Boundary rows: surface couples
/// p = rho*g*eta with eta_dot = u.n (imposed through the surface pressure
/// substitution and a surface kinematic row), bottom imposes u.n = -m,
/// lateral rows impose u.n = Z^{-1} p.
///
/// The semi-discrete generator is materialized as a sparse matrix so the
/// adjoint is its exact transpose; one RK4 step of the transposed generator
/// is the exact discrete adjoint of one forward step (the RK4 one-step map
/// of a linear autonomous system is a matrix polynomial).
class WaveSimulator {
 public:
  explicit WaveSimulator(const WaveConfig& cfg);

  const WaveConfig& config() const { return cfg_; }
  int n_state() const { return n_state_; }
  int n_space() const { return cfg_.n_space(); }
  const std::vector<int>& sensor_nodes() const { return sensor_nodes_; }
  const std::vector<int>& qoi_nodes() const { return qoi_nodes_; }

  WaveState zero_state() const;

  /// Advance one dt_sim substep with the bottom forcing held at m.
  /// Throws NumericalError naming the CFL check if the state leaves the
  /// finite range.
  WaveState step(const WaveState& state,
                 const Eigen::VectorXd& forcing_bottom) const;

  /// d = F m, q = F_q m for the discrete maps defined by this solver.
  /// Input may be either layout; outputs are TimeMajorBlocks.
  std::pair<ObsSeries, QoISeries> simulate_forward(
      const SpaceTimeField& m) const;

  /// m = F^T w (exact discrete adjoint, reverse-time sweep).
  SpaceTimeField apply_p2o_adjoint(const ObsSeries& w) const;
  SpaceTimeField apply_p2q_adjoint(const QoISeries& w) const;

  /// Row-generator of F for one sensor: entry (x, k) is the (k, x) entry of
  /// the first block column, from one reverse-time sweep seeded with the
  /// sensor's observation functional. N_m x N_t.
  Eigen::MatrixXd adjoint_kernel_for_sensor(int j) const;
  Eigen::MatrixXd adjoint_kernel_for_qoi(int j) const;

  /// Phase 1: one adjoint PDE solve per sensor / QoI point (parallel across
  /// rows, no shared mutable state).
  BlockToeplitzKernel extract_p2o_kernel() const;
  BlockToeplitzKernel extract_p2q_kernel() const;

  /// Trapezoid quadrature of rho|u|^2/2 + p^2/(2K) over the box plus
  /// rho*g*eta^2/2 over the surface line. J per unit strike length.
  double energy(const WaveState& state) const;

  // Flat-vector interface (used by tests that materialize the propagator).
  Eigen::VectorXd pack(const WaveState& s) const;
  WaveState unpack(const Eigen::VectorXd& x) const;
  const Eigen::SparseMatrix<double>& generator() const { return L_; }

  /// Count of RK4 substeps executed by any simulator instance; the online
  /// inference path must leave this untouched.
  static uint64_t solver_invocations();
  static void reset_solver_invocations();

 private:
  void rk4_inplace(const Eigen::SparseMatrix<double>& op,
                   Eigen::VectorXd& x) const;
  void inject_forcing(Eigen::VectorXd& x, const Eigen::VectorXd& m) const;
  void zero_forcing_rows(Eigen::VectorXd& x) const;
  Eigen::VectorXd read_bottom_uz(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd adjoint_kernel_from_seed(const Eigen::VectorXd& seed) const;

  WaveConfig cfg_;
  int nx_ = 0, nz_ = 0, n_state_ = 0;
  int off_ux_ = 0, off_uz_ = 0, off_p_ = 0, off_eta_ = 0;
  std::vector<int> sensor_nodes_;
  std::vector<int> qoi_nodes_;
  Eigen::SparseMatrix<double> L_;   // semi-discrete generator
  Eigen::SparseMatrix<double> Lt_;  // its transpose
};

/// m_true(x, t): a Gaussian bump in x times the discrete rate of a smooth
/// 0->1 ramp over [0, rise_time], so the time integral telescopes exactly to
/// an uplift of height `amplitude` * exp(-(x-center)^2 / (2 sigma_x^2)).
/// Output layout: TimeMajorBlocks.
SpaceTimeField synth_truth(const std::vector<double>& bottom_x, int n_time,
                           double dt_obs, double center_x, double sigma_x,
                           double rise_time, double amplitude);
SpaceTimeField synth_truth(const WaveConfig& cfg, double center_x,
                           double sigma_x, double rise_time, double amplitude);

/// d_obs = d + sigma * z with sigma = rel * max|d| guarded below by
/// 1e-12 * max(1, max|d|), z iid standard normal from the seeded generator.
/// Returns (d_obs, sigma).
std::pair<ObsSeries, double> add_noise(const ObsSeries& d, double rel,
                                       uint64_t seed);

}  // namespace ltibayes
