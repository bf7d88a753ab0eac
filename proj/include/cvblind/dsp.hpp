#pragma once

// Reduced receiver DSP: downconversion, RRC matched filter, polarization
// combining, variance, shot-noise-unit calibration, excess-noise estimators
// and the two saturation countermeasure monitors.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstring>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "cvblind/error.hpp"
#include "cvblind/fft.hpp"
#include "cvblind/rxsim.hpp"
#include "cvblind/units.hpp"

namespace cvblind {

struct DspConfig {
  double downconvert_hz = 4.0e8;
  double rrc_rolloff = 0.95;
  double symbol_rate = 1.536e8;
  int rrc_span_symbols = 32;
  double sample_rate = 3.2e9;

  void validate() const {
    if (!(rrc_rolloff > 0 && rrc_rolloff <= 1)) fail(ErrorKind::config, "rolloff must lie in (0, 1]");
    if (!(symbol_rate > 0 && symbol_rate < sample_rate)) fail(ErrorKind::config, "symbol_rate must be below sample_rate");
    if (rrc_span_symbols < 8) fail(ErrorKind::config, "RRC span must be at least 8 symbols");
    if (!(std::abs(downconvert_hz) < sample_rate / 2)) fail(ErrorKind::config, "downconversion above Nyquist");
  }

  // Occupied band of the signal around the downconversion frequency.
  Band signal_band() const {
    const double half = (1 + rrc_rolloff) * symbol_rate / 2;
    return {downconvert_hz - half, downconvert_hz + half};
  }
};

// Continuous root-raised-cosine pulse at time x (in symbol periods), unnormalized.
inline double rrc_pulse(double x, double beta) {
  if (std::abs(x) < 1e-12) return 1 - beta + 4 * beta / kPi;
  if (std::abs(std::abs(4 * beta * x) - 1) < 1e-9)
    return beta / std::sqrt(2.0) *
           ((1 + 2 / kPi) * std::sin(kPi / (4 * beta)) + (1 - 2 / kPi) * std::cos(kPi / (4 * beta)));
  return (std::sin(kPi * x * (1 - beta)) + 4 * beta * x * std::cos(kPi * x * (1 + beta))) /
         (kPi * x * (1 - (4 * beta * x) * (4 * beta * x)));
}

// Odd-length, unit-energy taps spanning rrc_span_symbols symbols.
inline std::vector<double> rrc_taps(const DspConfig& cfg) {
  cfg.validate();
  const double sps = cfg.sample_rate / cfg.symbol_rate;
  const auto half = static_cast<long>(std::floor(cfg.rrc_span_symbols * sps / 2));
  std::vector<double> h(2 * half + 1);
  for (long i = -half; i <= half; ++i) h[i + half] = rrc_pulse(static_cast<double>(i) / sps, cfg.rrc_rolloff);
  double e = 0;
  for (double x : h) e += x * x;
  for (double& x : h) x /= std::sqrt(e);
  return h;
}

// Complex oscillator e^{-i 2 pi f n / rate}; exact table when f/rate is a
// ratio with a short period, direct evaluation otherwise.
class Downconverter {
 public:
  Downconverter(double f, double rate) : w_(2 * kPi * f / rate) {
    for (std::size_t p = 1; p <= 4096; ++p) {
      const double cycles = f * static_cast<double>(p) / rate;
      if (std::abs(cycles - std::round(cycles)) < 1e-9) {
        table_.resize(p);
        for (std::size_t n = 0; n < p; ++n) table_[n] = std::polar(1.0, -w_ * static_cast<double>(n));
        break;
      }
    }
  }
  cplx at(std::uint64_t n) const {
    if (!table_.empty()) return table_[n % table_.size()];
    return std::polar(1.0, -w_ * static_cast<double>(n));
  }

 private:
  double w_;
  std::vector<cplx> table_;
};

inline std::vector<cplx> frequency_recover(std::span<const double> x, double f, double rate,
                                           std::uint64_t start_index = 0) {
  if (!(std::abs(f) < rate / 2)) fail(ErrorKind::invalid_argument, "f must lie below Nyquist");
  Downconverter osc(f, rate);
  std::vector<cplx> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * osc.at(start_index + i);
  return y;
}

// Full linear convolution (length N + L - 1) via FFT.
inline std::vector<cplx> convolve(std::span<const cplx> x, std::span<const double> taps) {
  if (x.empty()) return {};
  const std::size_t n = x.size() + taps.size() - 1;
  std::size_t m = 1;
  while (m < n) m <<= 1;
  std::vector<cplx> a(m, 0), b(m, 0);
  std::copy(x.begin(), x.end(), a.begin());
  for (std::size_t i = 0; i < taps.size(); ++i) b[i] = taps[i];
  auto fa = fft(a);
  const auto fb = fft(b);
  for (std::size_t k = 0; k < m; ++k) fa[k] *= fb[k];
  auto y = ifft(fa);
  y.resize(n);
  return y;
}

inline std::vector<cplx> rrc_filter(std::span<const cplx> x, const DspConfig& cfg) {
  const auto taps = rrc_taps(cfg);
  return convolve(x, taps);
}

inline double variance(std::span<const cplx> x) {
  if (x.size() < 2) fail(ErrorKind::invalid_argument, "variance needs at least two samples");
  cplx m = 0;
  for (const auto& v : x) m += v;
  m /= static_cast<double>(x.size());
  double s = 0;
  for (const auto& v : x) s += std::norm(v - m);
  return s / static_cast<double>(x.size());
}

// ---------------------------------------------------------------------------
// Polarization combining

enum class CombineMode { fixed, adaptive };

// Fixed mode uses the given weights as they are; adaptive mode uses equal
// weights and picks the relative phase that maximizes the combined variance.
struct CombineOptions {
  CombineMode mode = CombineMode::fixed;
  cplx w_h = 1.0 / std::sqrt(2.0);
  cplx w_v = 1.0 / std::sqrt(2.0);
};

// Second moments of the two filtered arms, enough to evaluate any linear combination.
struct ArmMoments {
  double n = 0;
  cplx sum_h = 0, sum_v = 0;
  double sum_hh = 0, sum_vv = 0;
  cplx sum_hv = 0;  // sum conj(h) v

  void add(const cplx& h, const cplx& v) {
    n += 1;
    sum_h += h;
    sum_v += v;
    sum_hh += std::norm(h);
    sum_vv += std::norm(v);
    sum_hv += std::conj(h) * v;
  }
  void merge(const ArmMoments& o) {
    n += o.n;
    sum_h += o.sum_h;
    sum_v += o.sum_v;
    sum_hh += o.sum_hh;
    sum_vv += o.sum_vv;
    sum_hv += o.sum_hv;
  }
  double var_h() const { return sum_hh / n - std::norm(sum_h / n); }
  double var_v() const { return sum_vv / n - std::norm(sum_v / n); }
  cplx cov_hv() const { return sum_hv / n - std::conj(sum_h / n) * (sum_v / n); }
};

inline std::pair<cplx, cplx> combine_weights(const ArmMoments& m, const CombineOptions& opt) {
  if (opt.mode == CombineMode::fixed) return {opt.w_h, opt.w_v};
  const cplx c = m.cov_hv();
  const double phi = std::abs(c) > 0 ? -std::arg(c) : 0.0;
  return {1.0 / std::sqrt(2.0), std::polar(1.0 / std::sqrt(2.0), phi)};
}

inline double combined_variance(const ArmMoments& m, const CombineOptions& opt = {}) {
  if (m.n < 2) fail(ErrorKind::invalid_argument, "too few filtered samples");
  const auto [wh, wv] = combine_weights(m, opt);
  const double v = std::norm(wh) * m.var_h() + std::norm(wv) * m.var_v() +
                   2 * std::real(std::conj(wh) * wv * m.cov_hv());
  return std::max(0.0, v);
}

inline std::vector<cplx> combine_polarizations(std::span<const cplx> h, std::span<const cplx> v,
                                               const CombineOptions& opt = {CombineMode::adaptive}) {
  if (h.size() != v.size()) fail(ErrorKind::invalid_argument, "arm lengths differ");
  ArmMoments m;
  for (std::size_t i = 0; i < h.size(); ++i) m.add(h[i], v[i]);
  const auto [wh, wv] = combine_weights(m, opt);
  std::vector<cplx> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = wh * h[i] + wv * v[i];
  return out;
}

// ---------------------------------------------------------------------------
// Streaming chain: downconvert + RRC (overlap-save) per arm, accumulating only
// fully overlapped filter outputs, plus clip counting and a Welch spectrum of
// the raw codes for the out-of-band monitor.
//
// When the downconversion frequency lands on an FFT bin, mixing is done as an
// exact cyclic shift of the block spectrum, with the block's starting phase
// applied afterwards; otherwise samples are mixed explicitly.

struct SpectrumConfig {
  std::size_t segment = 4096;
  bool enabled = true;
};

class ChainProcessor {
 public:
  explicit ChainProcessor(const DspConfig& cfg, double full_scale_code = 2048, SpectrumConfig spec = {})
      : cfg_(cfg), taps_(rrc_taps(cfg)), osc_(cfg.downconvert_hz, cfg.sample_rate), fs_code_(full_scale_code),
        spec_cfg_(spec) {
    const std::size_t l = taps_.size();
    nfft_ = 1;
    while (nfft_ < 4 * l) nfft_ <<= 1;
    const double k0 = cfg.downconvert_hz * static_cast<double>(nfft_) / cfg.sample_rate;
    shift_ok_ = std::abs(k0 - std::round(k0)) < 1e-9;
    k0_ = static_cast<long>(std::lround(k0));
    std::vector<cplx> t(nfft_, 0);
    for (std::size_t i = 0; i < l; ++i) t[i] = taps_[i];
    taps_f_ = fft(t);
    for (auto& a : rbuf_) a.assign(nfft_, 0.0);
    fill_ = 0;
    if (spec_cfg_.enabled) {
      psd_.assign(spec_cfg_.segment / 2 + 1, 0.0);
      hann_.resize(spec_cfg_.segment);
      for (std::size_t i = 0; i < hann_.size(); ++i)
        hann_[i] = 0.5 - 0.5 * std::cos(2 * kPi * static_cast<double>(i) / static_cast<double>(hann_.size()));
      for (auto& a : seg_) a.reserve(spec_cfg_.segment);
    }
  }

  void push(std::span<const double> h, std::span<const double> v) {
    if (h.size() != v.size()) fail(ErrorKind::invalid_argument, "arm lengths differ");
    for (std::size_t i = 0; i < h.size(); ++i) {
      clipped_ += std::abs(h[i]) >= fs_code_;
      clipped_ += std::abs(v[i]) >= fs_code_;
    }
    samples_ += 2 * h.size();
    if (spec_cfg_.enabled) spectrum_push(h, v);
    std::size_t i = 0;
    while (i < h.size()) {
      const std::size_t k = std::min(nfft_ - fill_, h.size() - i);
      std::copy_n(h.data() + i, k, rbuf_[0].data() + fill_);
      std::copy_n(v.data() + i, k, rbuf_[1].data() + fill_);
      fill_ += k;
      i += k;
      if (fill_ == nfft_) flush_block();
    }
  }

  const ArmMoments& moments() const { return moments_; }
  double clip_fraction() const { return samples_ ? static_cast<double>(clipped_) / static_cast<double>(samples_) : 0; }
  std::size_t code_samples() const { return samples_; }

  // Out-of-band over in-band power of the summed arm spectra, in dB.
  double out_of_band_db(const Band& band) const {
    if (psd_segments_ == 0) fail(ErrorKind::invalid_argument, "no complete spectrum segment");
    double in = 0, out = 0;
    const std::size_t n = spec_cfg_.segment;
    for (std::size_t k = 0; k < psd_.size(); ++k) {
      const double f = static_cast<double>(k) * cfg_.sample_rate / static_cast<double>(n);
      const double w = (k == 0 || 2 * k == n) ? 1.0 : 2.0;
      (f >= band.lo && f <= band.hi ? in : out) += w * psd_[k];
    }
    if (!(in > 0)) return 120.0;
    if (!(out > 0)) return -120.0;
    return db10(out / in);
  }

 private:
  void flush_block() {
    const std::size_t l = taps_.size();
    const std::size_t n = nfft_;
    const std::size_t m = n - (l - 1);
    for (int a = 0; a < 2; ++a) {
      auto& q = fft_plan(n, FFTW_BACKWARD);
      cplx* z = q.input();
      if (shift_ok_) {
        auto& p = real_fft_plan(n);
        std::copy_n(rbuf_[a].data(), n, p.input());
        p.execute();
        const cplx* xh = p.output();
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t j = (k + static_cast<std::size_t>(k0_)) % n;
          const cplx x = j <= n / 2 ? xh[j] : std::conj(xh[n - j]);
          z[k] = cmul(x, taps_f_[k]);
        }
      } else {
        auto& p = fft_plan(n, FFTW_FORWARD);
        for (std::size_t k = 0; k < n; ++k) p.input()[k] = rbuf_[a][k] * osc_.at(clock_ + k);
        p.execute();
        for (std::size_t k = 0; k < n; ++k) z[k] = cmul(p.output()[k], taps_f_[k]);
      }
      q.execute();
      y_[a].assign(q.output() + (l - 1), q.output() + n);
    }
    const double s = 1.0 / static_cast<double>(n);
    double hh = 0, vv = 0, hvr = 0, hvi = 0, shr = 0, shi = 0, svr = 0, svi = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const double ar = y_[0][i].real() * s, ai = y_[0][i].imag() * s;
      const double br = y_[1][i].real() * s, bi = y_[1][i].imag() * s;
      hh += ar * ar + ai * ai;
      vv += br * br + bi * bi;
      hvr += ar * br + ai * bi;  // conj(h) v
      hvi += ar * bi - ai * br;
      shr += ar;
      shi += ai;
      svr += br;
      svi += bi;
    }
    // Mixing phase at the first retained output of this block.
    const cplx ph = shift_ok_ ? osc_.at(clock_) : cplx(1, 0);
    moments_.n += static_cast<double>(m);
    moments_.sum_hh += hh;
    moments_.sum_vv += vv;
    moments_.sum_hv += cplx(hvr, hvi);
    moments_.sum_h += cmul(ph, cplx(shr, shi));
    moments_.sum_v += cmul(ph, cplx(svr, svi));
    for (auto& a : rbuf_) std::copy(a.end() - static_cast<std::ptrdiff_t>(l - 1), a.end(), a.begin());
    fill_ = l - 1;
    clock_ += m;
  }

  static cplx cmul(const cplx& a, const cplx& b) {
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
  }

  void spectrum_push(std::span<const double> h, std::span<const double> v) {
    const std::size_t seg = spec_cfg_.segment;
    std::size_t i = 0;
    while (i < h.size()) {
      const std::size_t k = std::min(seg - seg_[0].size(), h.size() - i);
      seg_[0].insert(seg_[0].end(), h.begin() + i, h.begin() + i + k);
      seg_[1].insert(seg_[1].end(), v.begin() + i, v.begin() + i + k);
      i += k;
      if (seg_[0].size() < seg) continue;
      for (auto& sgm : seg_) {
        auto& p = real_fft_plan(seg);
        double mean = 0;
        for (double x : sgm) mean += x;
        mean /= static_cast<double>(seg);
        for (std::size_t j = 0; j < seg; ++j) p.input()[j] = (sgm[j] - mean) * hann_[j];
        p.execute();
        for (std::size_t j = 0; j < psd_.size(); ++j) psd_[j] += std::norm(p.output()[j]);
        sgm.clear();
      }
      ++psd_segments_;
    }
  }

  DspConfig cfg_;
  std::vector<double> taps_;
  std::vector<cplx> taps_f_;
  Downconverter osc_;
  double fs_code_;
  SpectrumConfig spec_cfg_;
  std::size_t nfft_ = 0, fill_ = 0;
  bool shift_ok_ = false;
  long k0_ = 0;
  std::array<std::vector<double>, 2> rbuf_;
  std::array<std::vector<cplx>, 2> y_;
  std::uint64_t clock_ = 0;  // global index of the first retained output of the next block
  ArmMoments moments_;
  std::size_t clipped_ = 0, samples_ = 0;
  std::vector<double> psd_, hann_;
  std::array<std::vector<double>, 2> seg_;
  std::size_t psd_segments_ = 0;
};

inline ChainProcessor process_pair(const WaveformPair& p, const DspConfig& cfg, double full_scale_code = 2048,
                                   SpectrumConfig spec = {}) {
  p.validate();
  ChainProcessor cp(cfg, full_scale_code, spec);
  cp.push(p.h, p.v);
  return cp;
}

inline ChainProcessor process_stream(AcquisitionStream& s, const DspConfig& cfg, double full_scale_code = 2048,
                                     SpectrumConfig spec = {}) {
  ChainProcessor cp(cfg, full_scale_code, spec);
  std::vector<double> h(1 << 15), v(1 << 15);
  while (s.remaining() > 0) {
    const std::size_t k = s.next(h, v);
    cp.push(std::span(h.data(), k), std::span(v.data(), k));
  }
  return cp;
}

// ---------------------------------------------------------------------------
// Calibration and estimation

struct VarianceReport {
  double var_thermal = 0, var_shot = 0, var_noisy = 0;
  double snu = 0, eps_th = 0, sigma2 = 0, eps_est = 0;
};

struct EstimatorConfig {
  double t_assumed = 0.5;
  double eta = 0.90;
};

inline VarianceReport estimate_from_variances(double var_thermal, double var_shot, double var_noisy,
                                              const EstimatorConfig& ec = {}) {
  VarianceReport r{var_thermal, var_shot, var_noisy};
  r.snu = var_shot - var_thermal;
  if (!(r.snu > 0)) fail(ErrorKind::calibration_failure, "shot-noise unit is not positive");
  r.eps_th = var_thermal / r.snu;
  r.sigma2 = var_noisy / r.snu;
  // (sigma2 - 1 - eps_th) written as (var_noisy - var_shot)/snu, which is
  // algebraically identical and exactly zero when noisy equals shot.
  r.eps_est = ((var_noisy - var_shot) / r.snu) / (ec.eta * ec.t_assumed);
  return r;
}

inline VarianceReport calibrate_and_estimate(const WaveformPair& thermal, const WaveformPair& shot,
                                             const WaveformPair& noisy, const DspConfig& cfg,
                                             const EstimatorConfig& ec = {}, const CombineOptions& comb = {}) {
  const SpectrumConfig off{4096, false};
  const double vt = combined_variance(process_pair(thermal, cfg, 2048, off).moments(), comb);
  const double vs = combined_variance(process_pair(shot, cfg, 2048, off).moments(), comb);
  const double vn = combined_variance(process_pair(noisy, cfg, 2048, off).moments(), comb);
  return estimate_from_variances(vt, vs, vn, ec);
}

// Gain normalization of the linear-model estimator.
//   energy:       t = Re(sum a b*) / sum |a|^2, the least-squares gain of b on a.
//   symbol_count: t = Re(sum a b*) / N, the printed form, which equals the gain
//                 only when E|a|^2 = 1.
enum class GainNormalization { energy, symbol_count };

struct LinearModelEstimate {
  double t = 0;       // gain estimate
  double sigma2 = 0;  // residual variance
  double T = 0;       // transmission estimate
  double eps = 0;     // excess-noise estimate
};

inline LinearModelEstimate linear_model_estimate(std::span<const cplx> a, std::span<const cplx> b, double n_mean,
                                                 double eta, double eps_th,
                                                 GainNormalization norm = GainNormalization::energy) {
  if (a.size() != b.size() || a.size() < 2) fail(ErrorKind::invalid_argument, "need two equal sequences of N >= 2");
  const double n = static_cast<double>(a.size());
  double cross = 0, ea = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cross += std::real(a[i] * std::conj(b[i]));
    ea += std::norm(a[i]);
  }
  if (!(ea > 0)) fail(ErrorKind::degenerate_input, "reference symbols have zero energy");
  if (!(n_mean > 0 && eta > 0)) fail(ErrorKind::invalid_argument, "n_mean and eta must be positive");
  LinearModelEstimate r;
  r.t = norm == GainNormalization::energy ? cross / ea : cross / n;
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::norm(b[i] - r.t * a[i]);
  r.sigma2 = s / n;
  // With the energy form, t estimates sqrt(eta T) directly; the 2<n> factor of
  // the printed transmission formula refers to a gain measured on unit-energy
  // symbols, i.e. t * sqrt(2<n>).
  r.T = norm == GainNormalization::energy ? r.t * r.t / eta : r.t * r.t / (2 * n_mean * eta);
  r.eps = r.T > 0 ? (r.sigma2 - 1 - eps_th) / (eta * r.T) : std::nan("");
  return r;
}

// ---------------------------------------------------------------------------
// Watchdogs

struct WatchdogReport {
  double out_of_band_power_db = 0;
  double clip_fraction = 0;
  bool oob_alarm = false;
  bool clip_alarm = false;

  bool any() const { return oob_alarm || clip_alarm; }
};

struct WatchdogConfig {
  double oob_baseline_db = 0.0;  // blinding-free fixture
  double oob_margin_db = 6.0;
  double clip_threshold = 1e-4;
  double full_scale_code = 2048;
};

inline WatchdogReport watchdog_from_chain(const ChainProcessor& cp, const Band& band, const WatchdogConfig& wc) {
  WatchdogReport r;
  r.out_of_band_power_db = cp.out_of_band_db(band);
  r.oob_alarm = r.out_of_band_power_db > wc.oob_baseline_db + wc.oob_margin_db;
  r.clip_fraction = cp.clip_fraction();
  r.clip_alarm = r.clip_fraction > wc.clip_threshold;
  return r;
}

inline WatchdogReport watchdog_out_of_band(const WaveformPair& p, const Band& band, const WatchdogConfig& wc = {},
                                           const DspConfig& cfg = {}) {
  if (!(band.lo < band.hi && band.hi <= p.sample_rate / 2)) fail(ErrorKind::invalid_argument, "band outside Nyquist");
  DspConfig c = cfg;
  c.sample_rate = p.sample_rate;
  WatchdogReport r = watchdog_from_chain(process_pair(p, c, wc.full_scale_code), band, wc);
  r.clip_alarm = false;
  r.clip_fraction = 0;
  return r;
}

inline WatchdogReport watchdog_clipping(const WaveformPair& p, const WatchdogConfig& wc = {}) {
  p.validate(static_cast<int>(wc.full_scale_code));
  std::size_t c = 0;
  for (const auto* arm : {&p.h, &p.v})
    for (double x : *arm)
      if (std::abs(x) >= wc.full_scale_code) ++c;
  WatchdogReport r;
  const double n = static_cast<double>(2 * p.size());
  r.clip_fraction = n > 0 ? static_cast<double>(c) / n : 0.0;
  r.clip_alarm = r.clip_fraction > wc.clip_threshold;
  return r;
}

}  // namespace cvblind
