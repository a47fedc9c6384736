#include "ltibayes/fft_matvec.hpp"

#include <fftw3.h>

#include <cstring>
#include <mutex>

namespace ltibayes {

namespace {

// FFTW plan creation/destruction is not thread-safe; executes are.
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};
using RealBuf = std::unique_ptr<double[], FftwDeleter>;
using CplxBuf = std::unique_ptr<fftw_complex[], FftwDeleter>;

RealBuf alloc_real(size_t n) {
  return RealBuf(static_cast<double*>(fftw_malloc(sizeof(double) * n)));
}
CplxBuf alloc_cplx(size_t n) {
  return CplxBuf(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
}

inline std::complex<double>* as_std(fftw_complex* p) {
  return reinterpret_cast<std::complex<double>*>(p);
}
inline const std::complex<double>* as_std(const fftw_complex* p) {
  return reinterpret_cast<const std::complex<double>*>(p);
}

}  // namespace

struct MatvecPlan::Impl {
  int rows = 0, cols = 0, nt = 0, npad = 0, nf = 0;
  KernelTag tag = KernelTag::F;
  // kernel_hat stored per frequency: block f is a column-major rows x cols
  // complex matrix at offset f*rows*cols.
  CplxBuf kernel_hat;
  fftw_plan fwd = nullptr;  // real (npad) -> complex (nf)
  fftw_plan bwd = nullptr;  // complex (nf) -> real (npad)

  ~Impl() {
    std::lock_guard<std::mutex> lk(fftw_mutex());
    if (fwd) fftw_destroy_plan(fwd);
    if (bwd) fftw_destroy_plan(bwd);
  }
};

struct MatvecPlan::Scratch::Impl {
  RealBuf real;      // npad
  CplxBuf in_hat;    // nf * cols  (column c contiguous)
  CplxBuf out_hat;   // nf * rows  (row r contiguous)
};

MatvecPlan::Scratch::Scratch(const MatvecPlan& plan)
    : impl_(std::make_unique<Impl>()) {
  const auto& p = *plan.impl_;
  impl_->real = alloc_real(p.npad);
  impl_->in_hat = alloc_cplx(static_cast<size_t>(p.nf) * p.cols);
  impl_->out_hat = alloc_cplx(static_cast<size_t>(p.nf) * p.rows);
}
MatvecPlan::Scratch::~Scratch() = default;
MatvecPlan::Scratch::Scratch(Scratch&&) noexcept = default;

MatvecPlan::MatvecPlan(const BlockToeplitzKernel& kernel)
    : impl_(std::make_unique<Impl>()) {
  kernel.check_consistent("MatvecPlan");
  auto& p = *impl_;
  p.rows = kernel.rows_out;
  p.cols = kernel.n_cols;
  p.nt = kernel.n_time;
  p.npad = 2 * p.nt;
  p.nf = p.nt + 1;
  p.tag = kernel.tag;

  auto real = alloc_real(p.npad);
  auto cplx = alloc_cplx(p.nf);
  {
    std::lock_guard<std::mutex> lk(fftw_mutex());
    p.fwd = fftw_plan_dft_r2c_1d(p.npad, real.get(), cplx.get(),
                                 FFTW_ESTIMATE);
    p.bwd = fftw_plan_dft_c2r_1d(p.npad, cplx.get(), real.get(),
                                 FFTW_ESTIMATE);
  }
  if (!p.fwd || !p.bwd) throw NumericalError("MatvecPlan: FFTW plan failed");

  p.kernel_hat = alloc_cplx(static_cast<size_t>(p.nf) * p.rows * p.cols);
  for (int r = 0; r < p.rows; ++r) {
    for (int c = 0; c < p.cols; ++c) {
      std::memcpy(real.get(), kernel.lag_series(r, c),
                  sizeof(double) * p.nt);
      std::memset(real.get() + p.nt, 0, sizeof(double) * p.nt);
      fftw_execute_dft_r2c(p.fwd, real.get(), cplx.get());
      const auto* src = as_std(cplx.get());
      auto* dst = as_std(p.kernel_hat.get());
      for (int f = 0; f < p.nf; ++f) {
        // column-major block per frequency
        dst[static_cast<size_t>(f) * p.rows * p.cols +
            static_cast<size_t>(c) * p.rows + r] = src[f];
      }
    }
  }
}

MatvecPlan::~MatvecPlan() = default;
MatvecPlan::MatvecPlan(MatvecPlan&&) noexcept = default;
MatvecPlan& MatvecPlan::operator=(MatvecPlan&&) noexcept = default;

int MatvecPlan::rows_out() const { return impl_->rows; }
int MatvecPlan::n_cols() const { return impl_->cols; }
int MatvecPlan::n_time() const { return impl_->nt; }
int MatvecPlan::padded_len() const { return impl_->npad; }
int MatvecPlan::n_freq() const { return impl_->nf; }
KernelTag MatvecPlan::tag() const { return impl_->tag; }

double MatvecPlan::kernel_hat_sqnorm() const {
  const auto& p = *impl_;
  const auto* k = as_std(p.kernel_hat.get());
  double s = 0;
  const size_t n = static_cast<size_t>(p.nf) * p.rows * p.cols;
  for (size_t i = 0; i < n; ++i) s += std::norm(k[i]);
  // interior frequencies appear twice in the full circulant spectrum
  double edge = 0;
  const size_t bc = static_cast<size_t>(p.rows) * p.cols;
  for (size_t i = 0; i < bc; ++i) {
    edge += std::norm(k[i]) + std::norm(k[(p.nf - 1) * bc + i]);
  }
  return 2 * s - edge;
}

void MatvecPlan::apply_raw(const double* in, double* out,
                           Scratch& scratch) const {
  const auto& p = *impl_;
  auto& s = *scratch.impl_;
  // forward transforms of the input rows
  for (int c = 0; c < p.cols; ++c) {
    std::memcpy(s.real.get(), in + static_cast<size_t>(c) * p.nt,
                sizeof(double) * p.nt);
    std::memset(s.real.get() + p.nt, 0, sizeof(double) * p.nt);
    fftw_execute_dft_r2c(p.fwd, s.real.get(),
                         s.in_hat.get() + static_cast<size_t>(c) * p.nf);
  }
  // per-frequency block matvec: out_hat[r][f] = sum_c khat_f(r,c) in_hat[c][f]
  const auto* khat = as_std(p.kernel_hat.get());
  const auto* ih = as_std(s.in_hat.get());
  auto* oh = as_std(s.out_hat.get());
  const size_t bc = static_cast<size_t>(p.rows) * p.cols;
  for (int f = 0; f < p.nf; ++f) {
    const auto* kf = khat + static_cast<size_t>(f) * bc;
    for (int r = 0; r < p.rows; ++r) {
      oh[static_cast<size_t>(r) * p.nf + f] = {0.0, 0.0};
    }
    for (int c = 0; c < p.cols; ++c) {
      const auto x = ih[static_cast<size_t>(c) * p.nf + f];
      const auto* kcol = kf + static_cast<size_t>(c) * p.rows;
      for (int r = 0; r < p.rows; ++r) {
        oh[static_cast<size_t>(r) * p.nf + f] += kcol[r] * x;
      }
    }
  }
  // inverse transforms of the output rows, truncate to N_t, scale 1/npad
  const double scale = 1.0 / p.npad;
  for (int r = 0; r < p.rows; ++r) {
    fftw_execute_dft_c2r(
        p.bwd,
        reinterpret_cast<fftw_complex*>(oh + static_cast<size_t>(r) * p.nf),
        s.real.get());
    double* dst = out + static_cast<size_t>(r) * p.nt;
    for (int j = 0; j < p.nt; ++j) dst[j] = s.real.get()[j] * scale;
  }
}

void MatvecPlan::apply_adjoint_raw(const double* in, double* out,
                                   Scratch& scratch) const {
  const auto& p = *impl_;
  auto& s = *scratch.impl_;
  for (int r = 0; r < p.rows; ++r) {
    std::memcpy(s.real.get(), in + static_cast<size_t>(r) * p.nt,
                sizeof(double) * p.nt);
    std::memset(s.real.get() + p.nt, 0, sizeof(double) * p.nt);
    fftw_execute_dft_r2c(p.fwd, s.real.get(),
                         s.out_hat.get() + static_cast<size_t>(r) * p.nf);
  }
  // conjugate-transposed blocks: in_hat[c][f] = sum_r conj(khat_f(r,c)) d[r][f]
  const auto* khat = as_std(p.kernel_hat.get());
  auto* ih = as_std(s.in_hat.get());
  const auto* dh = as_std(s.out_hat.get());
  const size_t bc = static_cast<size_t>(p.rows) * p.cols;
  for (int f = 0; f < p.nf; ++f) {
    const auto* kf = khat + static_cast<size_t>(f) * bc;
    for (int c = 0; c < p.cols; ++c) {
      std::complex<double> acc{0.0, 0.0};
      const auto* kcol = kf + static_cast<size_t>(c) * p.rows;
      for (int r = 0; r < p.rows; ++r) {
        acc += std::conj(kcol[r]) * dh[static_cast<size_t>(r) * p.nf + f];
      }
      ih[static_cast<size_t>(c) * p.nf + f] = acc;
    }
  }
  const double scale = 1.0 / p.npad;
  for (int c = 0; c < p.cols; ++c) {
    fftw_execute_dft_c2r(
        p.bwd,
        reinterpret_cast<fftw_complex*>(ih + static_cast<size_t>(c) * p.nf),
        s.real.get());
    double* dst = out + static_cast<size_t>(c) * p.nt;
    for (int j = 0; j < p.nt; ++j) dst[j] = s.real.get()[j] * scale;
  }
}

namespace {

void check_layout(const BlockSeries& v, const char* what) {
  v.check_consistent(what);
  if (v.layout != Layout::SpaceMajorRows) {
    throw LayoutError(std::string(what) +
                      ": requires SpaceMajorRows input, got " +
                      layout_name(v.layout) + " (no silent reindex)");
  }
}

}  // namespace

ObsSeries MatvecPlan::apply(const SpaceTimeField& m) const {
  Scratch s(*this);
  return apply(m, s);
}

ObsSeries MatvecPlan::apply(const SpaceTimeField& m, Scratch& scratch) const {
  check_layout(m, "MatvecPlan::apply");
  if (m.n_rows != n_cols() || m.n_time != n_time()) {
    throw DimensionError("MatvecPlan::apply: input dims (" +
                         std::to_string(m.n_rows) + "," +
                         std::to_string(m.n_time) + ") do not match kernel (" +
                         std::to_string(n_cols()) + "," +
                         std::to_string(n_time()) + ")");
  }
  ObsSeries d(rows_out(), n_time(), Layout::SpaceMajorRows);
  apply_raw(m.values.data(), d.values.data(), scratch);
  return d;
}

SpaceTimeField MatvecPlan::apply_adjoint(const ObsSeries& d) const {
  Scratch s(*this);
  return apply_adjoint(d, s);
}

SpaceTimeField MatvecPlan::apply_adjoint(const ObsSeries& d,
                                         Scratch& scratch) const {
  check_layout(d, "MatvecPlan::apply_adjoint");
  if (d.n_rows != rows_out() || d.n_time != n_time()) {
    throw DimensionError("MatvecPlan::apply_adjoint: input dims do not match");
  }
  SpaceTimeField m(n_cols(), n_time(), Layout::SpaceMajorRows);
  apply_adjoint_raw(d.values.data(), m.values.data(), scratch);
  return m;
}

std::vector<double> dense_apply(const BlockToeplitzKernel& kernel,
                                const std::vector<double>& v, bool adjoint,
                                uint64_t mem_cap_bytes) {
  kernel.check_consistent("dense_apply");
  const int rows = kernel.rows_out, cols = kernel.n_cols, nt = kernel.n_time;
  const uint64_t implied = static_cast<uint64_t>(rows) * nt * cols * nt * 8;
  if (mem_cap_bytes != 0 && implied > mem_cap_bytes) {
    throw CapacityError(
        "dense_apply: implied dense operator needs " + std::to_string(implied) +
        " bytes, above the cap of " + std::to_string(mem_cap_bytes));
  }
  const size_t in_len = static_cast<size_t>(adjoint ? rows : cols) * nt;
  const size_t out_len = static_cast<size_t>(adjoint ? cols : rows) * nt;
  if (v.size() != in_len) {
    throw DimensionError("dense_apply: input length " +
                         std::to_string(v.size()) + ", expected " +
                         std::to_string(in_len));
  }
  std::vector<double> out(out_len, 0.0);
  // SpaceMajorRows in both directions; direct (co)convolution per (r,c) pair.
  if (!adjoint) {
    for (int r = 0; r < rows; ++r) {
      double* yr = out.data() + static_cast<size_t>(r) * nt;
      for (int c = 0; c < cols; ++c) {
        const double* k = kernel.lag_series(r, c);
        const double* mc = v.data() + static_cast<size_t>(c) * nt;
        for (int j = 0; j < nt; ++j) {
          const double mj = mc[j];
          if (mj == 0.0) continue;
          for (int l = 0; l + j < nt; ++l) yr[j + l] += k[l] * mj;
        }
      }
    }
  } else {
    for (int r = 0; r < rows; ++r) {
      const double* dr = v.data() + static_cast<size_t>(r) * nt;
      for (int c = 0; c < cols; ++c) {
        const double* k = kernel.lag_series(r, c);
        double* yc = out.data() + static_cast<size_t>(c) * nt;
        for (int j = 0; j < nt; ++j) {
          double acc = 0;
          for (int l = 0; l + j < nt; ++l) acc += k[l] * dr[j + l];
          yc[j] += acc;
        }
      }
    }
  }
  return out;
}

}  // namespace ltibayes
