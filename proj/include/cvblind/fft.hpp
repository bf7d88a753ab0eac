#pragma once

// Thin RAII layer over FFTW3 (double precision, complex-to-complex).

#include <fftw3.h>

#include <complex>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

namespace cvblind {

using cplx = std::complex<double>;

namespace detail {
// The FFTW planner is not reentrant; execution is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

class FftPlan {
 public:
  FftPlan(std::size_t n, int sign) : n_(n) {
    in_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    plan_ = fftw_plan_dft_1d(static_cast<int>(n), in_, out_, sign, FFTW_ESTIMATE);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
  ~FftPlan() {
    {
      std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }

  std::size_t size() const { return n_; }
  cplx* input() { return reinterpret_cast<cplx*>(in_); }
  const cplx* output() const { return reinterpret_cast<const cplx*>(out_); }
  void execute() { fftw_execute(plan_); }

 private:
  std::size_t n_;
  fftw_complex* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

// Real-to-complex forward transform producing n/2 + 1 bins.
class RealFftPlan {
 public:
  explicit RealFftPlan(std::size_t n) : n_(n) {
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  RealFftPlan(const RealFftPlan&) = delete;
  RealFftPlan& operator=(const RealFftPlan&) = delete;
  ~RealFftPlan() {
    {
      std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }

  std::size_t size() const { return n_; }
  double* input() { return in_; }
  const cplx* output() const { return reinterpret_cast<const cplx*>(out_); }
  void execute() { fftw_execute(plan_); }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

inline RealFftPlan& real_fft_plan(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<RealFftPlan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFftPlan>(n);
  return *slot;
}

// Per-thread plan cache keyed by (size, sign).
inline FftPlan& fft_plan(std::size_t n, int sign) {
  thread_local std::map<std::pair<std::size_t, int>, std::unique_ptr<FftPlan>> cache;
  auto& slot = cache[{n, sign}];
  if (!slot) slot = std::make_unique<FftPlan>(n, sign);
  return *slot;
}

inline std::vector<cplx> fft(std::span<const cplx> x) {
  auto& p = fft_plan(x.size(), FFTW_FORWARD);
  std::memcpy(p.input(), x.data(), x.size() * sizeof(cplx));
  p.execute();
  return std::vector<cplx>(p.output(), p.output() + x.size());
}

// Normalized so that ifft(fft(x)) == x.
inline std::vector<cplx> ifft(std::span<const cplx> x) {
  auto& p = fft_plan(x.size(), FFTW_BACKWARD);
  std::memcpy(p.input(), x.data(), x.size() * sizeof(cplx));
  p.execute();
  std::vector<cplx> y(p.output(), p.output() + x.size());
  const double s = 1.0 / static_cast<double>(x.size());
  for (auto& v : y) v *= s;
  return y;
}

// Frequency of bin k for an n-point transform at the given rate, in (-rate/2, rate/2].
inline double bin_frequency(std::size_t k, std::size_t n, double rate) {
  const double kk = (k <= n / 2) ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
  return kk * rate / static_cast<double>(n);
}

}  // namespace cvblind
