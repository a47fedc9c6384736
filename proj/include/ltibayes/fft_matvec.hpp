#pragma once

#include <complex>
#include <cstdint>
#include <memory>
#include <vector>

#include "ltibayes/core.hpp"

namespace ltibayes {

/// Reusable fast-apply plan for a block lower-triangular Toeplitz map.
///
/// Each [row][col] lag series of the kernel is zero-padded from N_t to
/// exactly 2*N_t, embedding the Toeplitz operator in a block circulant one,
/// and transformed once (real-to-complex, N_f = N_t + 1 coefficients).
/// Applying the map is then one batch of independent complex block matvecs,
/// one per frequency, between forward and inverse transforms of the input
/// and output rows. Convention: unnormalized forward transform, 1/(2*N_t)
/// on the inverse.
///
/// Strict layout contract: inputs and outputs are SpaceMajorRows (each
/// row's time series contiguous); a mismatching layout is an error, never a
/// silent reindex.
///
/// The plan is immutable after construction; apply/apply_adjoint are pure
/// given a plan plus a Scratch, so concurrent applies on different inputs
/// need one Scratch per thread.
class MatvecPlan {
 public:
  explicit MatvecPlan(const BlockToeplitzKernel& kernel);
  ~MatvecPlan();
  MatvecPlan(MatvecPlan&&) noexcept;
  MatvecPlan& operator=(MatvecPlan&&) noexcept;
  MatvecPlan(const MatvecPlan&) = delete;
  MatvecPlan& operator=(const MatvecPlan&) = delete;

  int rows_out() const;
  int n_cols() const;
  int n_time() const;
  int padded_len() const;  // exactly 2*N_t
  int n_freq() const;      // N_t + 1
  KernelTag tag() const;

  /// Workspace sized for one apply/apply_adjoint on this plan.
  class Scratch {
   public:
    explicit Scratch(const MatvecPlan& plan);
    ~Scratch();
    Scratch(Scratch&&) noexcept;
    Scratch(const Scratch&) = delete;
    Scratch& operator=(const Scratch&) = delete;

   private:
    friend class MatvecPlan;
    struct Impl;
    std::unique_ptr<Impl> impl_;
  };

  /// d = F m. Input length n_cols*N_t, output length rows_out*N_t, both
  /// SpaceMajorRows order.
  void apply_raw(const double* in, double* out, Scratch& scratch) const;
  /// m = F^T d. Input length rows_out*N_t, output length n_cols*N_t.
  void apply_adjoint_raw(const double* in, double* out,
                         Scratch& scratch) const;

  ObsSeries apply(const SpaceTimeField& m) const;
  ObsSeries apply(const SpaceTimeField& m, Scratch& scratch) const;
  SpaceTimeField apply_adjoint(const ObsSeries& d) const;
  SpaceTimeField apply_adjoint(const ObsSeries& d, Scratch& scratch) const;

  /// Frobenius norm squared of the frequency-domain kernel (Parseval checks).
  double kernel_hat_sqnorm() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Reference block-Toeplitz multiply in the time domain: materializes each
/// block per the lower-triangular rule and multiply-accumulates in
/// O(rows*cols*N_t^2) flops and O(1) extra memory. `mem_cap_bytes` caps the
/// size of the implied dense operator (rows*N_t x cols*N_t); 0 disables the
/// cap. Instances above the cap raise CapacityError.
std::vector<double> dense_apply(const BlockToeplitzKernel& kernel,
                                const std::vector<double>& v, bool adjoint,
                                uint64_t mem_cap_bytes = 2ull << 30);

}  // namespace ltibayes
