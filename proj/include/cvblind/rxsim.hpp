#pragma once

// Polarization-diverse balanced receiver: LO shot noise, electronic noise,
// ASE-LO beat noise and blinding light summed as differential voltages, then
// analog low-pass, AC coupling, ADC clipping and quantization.

#include <boost/random/normal_distribution.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvblind/binio.hpp"
#include "cvblind/blindwave.hpp"
#include "cvblind/error.hpp"
#include "cvblind/fft.hpp"
#include "cvblind/units.hpp"

namespace cvblind {

enum class Mode : std::uint8_t { thermal = 0, shot = 1, noisy = 2 };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::thermal: return "thermal";
    case Mode::shot: return "shot";
    case Mode::noisy: return "noisy";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "thermal") return Mode::thermal;
  if (s == "shot") return Mode::shot;
  if (s == "noisy") return Mode::noisy;
  fail(ErrorKind::invalid_mode, "unknown acquisition mode '" + s + "'");
}

struct DetectorChainConfig {
  double analog_bandwidth = 1.6e9;
  int lowpass_order = 4;
  int lowpass_taps = 24;
  double ac_cutoff = 3.0e5;
  int highpass_order = 1;
  double eta = 0.90;
  double gain = 1.0;                   // V per W of differential optical power at lo_wavelength
  double thermal_noise_density = 0.0;  // V^2/Hz, one-sided
  double lo_power = 1e-3;              // W, split equally between the two arms
  double lo_wavelength = 1550e-9;
  std::array<int, 2> arm_polarity{+1, -1};  // photodiode orientation of the H and V detectors
  std::optional<double> tia_limit_v;        // optional limiter ahead of the AC coupling

  void validate() const {
    auto bad = [](const char* w) { fail(ErrorKind::config, w); };
    if (!(analog_bandwidth > 0 && ac_cutoff > 0 && eta > 0 && gain > 0 && lo_power > 0 && lo_wavelength > 0))
      bad("detector parameters must be positive");
    if (!(thermal_noise_density >= 0)) bad("thermal_noise_density must be >= 0");
    if (!(ac_cutoff < analog_bandwidth)) bad("ac_cutoff must be below analog_bandwidth");
    if (lowpass_order < 1 || lowpass_taps < 8) bad("low-pass order/taps too small");
    if (highpass_order != 1) bad("only a first-order high-pass is modelled");
    for (int p : arm_polarity)
      if (p != 1 && p != -1) bad("arm_polarity entries must be +1 or -1");
    if (tia_limit_v && !(*tia_limit_v > 0)) bad("tia_limit_v must be positive");
  }
};

struct AdcConfig {
  int bits = 12;
  int full_scale_code = 2048;
  double sample_rate = 3.2e9;
  double v_fullscale = 0.4;

  void validate() const {
    if (bits < 2 || full_scale_code != (1 << (bits - 1))) fail(ErrorKind::config, "full_scale_code must be 2^(bits-1)");
    if (!(sample_rate > 0 && v_fullscale > 0)) fail(ErrorKind::config, "ADC rate and full scale must be positive");
  }
};

struct AttackSourceConfig {
  std::optional<double> ase_power_dbm;
  std::optional<double> blind_power_dbm;  // average optical power at the receiver input
  std::shared_ptr<const BlindWaveform> blind_waveform;
  double bs_imbalance_r = 0.75;  // fraction of 1344 nm light on the "+" photodiode
  double pol_mismatch_phi = 0.0;
  double blind_wavelength = 1344e-9;
  double ase_coupling = 1.0;              // ASE power reaching the detectors per watt at the reference point
  double ase_optical_bandwidth = 4.37e12; // Hz, flat-top equivalent
  bool blind_all_modes = false;           // also blind the thermal and shot calibration acquisitions

  void validate() const {
    if (!(bs_imbalance_r > 0.5 && bs_imbalance_r <= 1)) fail(ErrorKind::config, "bs_imbalance_r must lie in (0.5, 1]");
    if (!(blind_wavelength > 0 && ase_coupling >= 0 && ase_optical_bandwidth > 0))
      fail(ErrorKind::config, "attack source parameters out of range");
    if (blind_power_dbm && !blind_waveform) fail(ErrorKind::config, "blind_power_dbm set without a waveform");
  }
};

struct WaveformPair {
  std::vector<double> h, v;
  double sample_rate = 3.2e9;

  std::size_t size() const { return h.size(); }
  void validate(std::optional<int> code_bound = std::nullopt) const {
    if (h.size() != v.size()) fail(ErrorKind::invalid_argument, "arm lengths differ");
    for (const auto* arm : {&h, &v})
      for (double x : *arm) {
        if (!std::isfinite(x)) fail(ErrorKind::invalid_argument, "non-finite sample");
        if (code_bound && std::abs(x) > *code_bound) fail(ErrorKind::invalid_argument, "code outside ADC range");
      }
  }
};

// ---------------------------------------------------------------------------
// Elementary stages

inline double saturate(double v, double v_ll, double v_ul) {
  if (!(v_ll < v_ul)) fail(ErrorKind::invalid_limits, "v_ll must be below v_ul");
  return std::clamp(v, v_ll, v_ul);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  return splitmix64(splitmix64(splitmix64(master ^ splitmix64(a)) ^ splitmix64(b + 0x100)) ^ splitmix64(c + 0x200));
}

// Circular complex Gaussian field of the given mean power, band-limited to
// |f| <= bandwidth/2 by spectral masking when narrower than the sample rate.
inline std::vector<cplx> ase_noise_field(double power_dbm, double bandwidth, std::size_t n, std::uint64_t seed,
                                         double rate = 3.2e9) {
  std::vector<cplx> e(n, cplx(0, 0));
  const double p = dbm_to_watts(power_dbm);
  if (p <= 0 || n == 0) return e;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& x : e) {
    const double re = nd(rng);
    x = cplx(re, nd(rng));
  }
  if (bandwidth < rate) {
    auto s = fft(e);
    for (std::size_t k = 0; k < n; ++k)
      if (std::abs(bin_frequency(k, n, rate)) > bandwidth / 2) s[k] = 0;
    e = ifft(s);
  }
  double m = 0;
  for (const auto& x : e) m += std::norm(x);
  m /= static_cast<double>(n);
  const double g = m > 0 ? std::sqrt(p / m) : 0.0;
  for (auto& x : e) x *= g;
  return e;
}

// First-order high-pass, bilinear transform with the cutoff prewarped.
class HighPass {
 public:
  HighPass(double cutoff, double rate) {
    if (!(cutoff > 0 && cutoff < rate / 2)) fail(ErrorKind::invalid_argument, "cutoff must lie below Nyquist");
    const double k = std::tan(kPi * cutoff / rate);
    a_ = 1.0 / (1.0 + k);
    b_ = (1.0 - k) / (1.0 + k);
  }
  double step(double x) {
    y_ = a_ * (x - x1_) + b_ * y_;
    x1_ = x;
    return y_;
  }
  double time_constant_samples() const { return -1.0 / std::log(b_); }

 private:
  double a_ = 1, b_ = 0, x1_ = 0, y_ = 0;
};

inline std::vector<double> ac_couple(std::span<const double> x, double cutoff, double rate = 3.2e9) {
  HighPass hp(cutoff, rate);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = hp.step(x[i]);
  return y;
}

// Butterworth magnitude/phase response of the given order.
inline cplx butterworth_response(double f, double cutoff, int order) {
  const cplx s(0, f / cutoff);
  cplx h(1, 0);
  for (int k = 1; k <= order; ++k) {
    const double th = kPi * (2.0 * k + order - 1) / (2.0 * order);
    h /= (s - cplx(std::cos(th), std::sin(th)));
  }
  return h;
}

// FIR stand-in for the analog low-pass: the analog response sampled densely on
// the discrete frequency grid, inverse transformed, and cut to ntaps with a few
// precursor taps (the constant delay is harmless).
inline std::vector<double> analog_lowpass_taps(double cutoff, int order, double rate, int ntaps) {
  const std::size_t m = 8192;
  std::vector<cplx> hf(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double f = bin_frequency(k, m, rate);
    hf[k] = butterworth_response(f, cutoff, order);
    if (k == m / 2) hf[k] = hf[k].real();
  }
  const auto h = ifft(hf);
  const int pre = 4;
  std::vector<double> taps(ntaps);
  for (int i = 0; i < ntaps; ++i) taps[i] = h[(i - pre + static_cast<long>(m)) % m].real();
  return taps;
}

class FirFilter {
 public:
  explicit FirFilter(std::vector<double> taps) : taps_(std::move(taps)), hist_(taps_.size(), 0.0) {}

  // In-place block filtering with carried state.
  void process(std::span<double> x) {
    const std::size_t l = taps_.size();
    buf_.resize(l - 1 + x.size());
    std::copy(hist_.begin() + 1, hist_.end(), buf_.begin());
    std::copy(x.begin(), x.end(), buf_.begin() + (l - 1));
    std::fill(x.begin(), x.end(), 0.0);
    for (std::size_t k = 0; k < l; ++k) {
      const double t = taps_[k];
      const double* p = buf_.data() + (l - 1 - k);
      double* y = x.data();
      for (std::size_t i = 0; i < x.size(); ++i) y[i] += t * p[i];
    }
    std::copy(buf_.end() - static_cast<std::ptrdiff_t>(l), buf_.end(), hist_.begin());
  }
  const std::vector<double>& taps() const { return taps_; }

 private:
  std::vector<double> taps_, hist_, buf_;
};

inline std::vector<double> analog_lowpass(std::span<const double> x, const DetectorChainConfig& det,
                                          double rate = 3.2e9) {
  FirFilter f(analog_lowpass_taps(det.analog_bandwidth, det.lowpass_order, rate, det.lowpass_taps));
  std::vector<double> y(x.begin(), x.end());
  f.process(y);
  return y;
}

inline double adc_code(double v, const AdcConfig& adc, double v_fullscale) {
  const double fs = adc.full_scale_code;
  return saturate(std::round(v / v_fullscale * fs), -fs, fs);
}

inline std::vector<double> adc_quantize(std::span<const double> volts, const AdcConfig& adc, double v_fullscale) {
  if (!(v_fullscale > 0)) fail(ErrorKind::invalid_argument, "v_fullscale must be positive");
  std::vector<double> c(volts.size());
  for (std::size_t i = 0; i < volts.size(); ++i) c[i] = adc_code(volts[i], adc, v_fullscale);
  return c;
}

// ---------------------------------------------------------------------------
// Noise and blinding levels (white, per sample, before the analog filters)

inline double lo_power_per_arm(const DetectorChainConfig& det) { return 0.5 * det.lo_power; }

inline double thermal_variance(const DetectorChainConfig& det, double rate) {
  return det.thermal_noise_density * rate / 2;
}

inline double shot_variance(const DetectorChainConfig& det, double rate) {
  const double r = responsivity(det.eta, det.lo_wavelength);
  return det.gain * det.gain * 2 * kElectronCharge * lo_power_per_arm(det) * (rate / 2) / r;
}

// ASE power per polarization that falls within the simulated band.
inline double ase_in_band_power(const AttackSourceConfig& atk, double rate) {
  if (!atk.ase_power_dbm) return 0.0;
  const double frac = std::min(1.0, rate / atk.ase_optical_bandwidth);
  return 0.5 * atk.ase_coupling * dbm_to_watts(*atk.ase_power_dbm) * frac;
}

// Differential voltage per unit of in-phase ASE field: gain * 2 sqrt(P_LO).
inline double ase_beat_scale(const DetectorChainConfig& det) { return det.gain * 2 * std::sqrt(lo_power_per_arm(det)); }

inline std::array<double, 2> blinding_arm_fraction(double phi) {
  const double c = std::cos(kPi / 4 + phi);
  return {c * c, 1 - c * c};
}

// Volts per watt of 1344 nm light reaching one arm.
inline double blinding_gain(const DetectorChainConfig& det, const AttackSourceConfig& atk) {
  return (2 * atk.bs_imbalance_r - 1) * det.gain * (atk.blind_wavelength / det.lo_wavelength);
}

inline double mean_intensity(const BlindWaveform& w) {
  double m = 0;
  for (const auto& e : w.envelope) m += std::norm(e);
  return m / static_cast<double>(w.envelope.size());
}

// Differential voltage added to one arm for samples [start, start+n). The
// configured power is the average optical power, so the envelope intensity is
// normalized by its period mean. No LO beat term: the 1344/1550 nm detuning is
// far outside the detector bandwidth.
inline std::vector<double> inject_blinding(const AttackSourceConfig& atk, const DetectorChainConfig& det, int arm,
                                           std::size_t start, std::size_t n) {
  std::vector<double> out(n, 0.0);
  if (!atk.blind_power_dbm || !atk.blind_waveform) return out;
  const BlindWaveform& w = *atk.blind_waveform;
  const double p = dbm_to_watts(*atk.blind_power_dbm);
  const double scale = det.arm_polarity[arm] * blinding_gain(det, atk) * p *
                       blinding_arm_fraction(atk.pol_mismatch_phi)[arm] / mean_intensity(w);
  const std::size_t per = w.envelope.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = scale * std::norm(w.envelope[(start + i) % per]);
  return out;
}

// ---------------------------------------------------------------------------
// Acquisition

inline constexpr std::size_t kMinAcquisitionSamples = std::size_t{1} << 16;

// Streams one acquisition in blocks so long records never need to be stored.
// Each arm owns its own generators; a warm-up period lets the AC coupling
// reach steady state before the first stored sample.
class AcquisitionStream {
 public:
  AcquisitionStream(Mode mode, const DetectorChainConfig& det, const AdcConfig& adc, const AttackSourceConfig& atk,
                    std::size_t n_samples, std::uint64_t seed)
      : mode_(mode), det_(det), adc_(adc), atk_(atk), n_(n_samples) {
    det.validate();
    adc.validate();
    atk.validate();
    if (n_samples < kMinAcquisitionSamples) fail(ErrorKind::trace_too_short, "acquisition shorter than 2^16 samples");
    const double rate = adc.sample_rate;
    const bool blind = atk.blind_power_dbm && (mode == Mode::noisy || atk.blind_all_modes);
    double white = thermal_variance(det, rate);
    if (mode != Mode::thermal) white += shot_variance(det, rate);
    const double ase = mode == Mode::noisy ? ase_in_band_power(atk, rate) : 0.0;
    const auto taps = analog_lowpass_taps(det.analog_bandwidth, det.lowpass_order, rate, det.lowpass_taps);
    for (int a = 0; a < 2; ++a) {
      // Electronic, shot and in-phase ASE beat noise are independent and white,
      // so one Gaussian draw with the summed variance is exact in distribution.
      // Only the in-phase field quadrature beats with a real LO.
      const double ase_v = ase_beat_scale(det) * ase_beat_scale(det) * ase / 2;
      arms_[a].sigma = std::sqrt(white + ase_v);
      arms_[a].rng.seed(derive_seed(seed, 1, a));
      arms_[a].lp = std::make_unique<FirFilter>(taps);
      arms_[a].hp = std::make_unique<HighPass>(det.ac_cutoff, rate);
    }
    if (blind) {
      const BlindWaveform& w = *atk.blind_waveform;
      if (std::abs(w.rate - rate) > 1e-6 * rate) fail(ErrorKind::config, "blinding waveform rate differs from ADC rate");
      for (int a = 0; a < 2; ++a) arms_[a].blind_period = inject_blinding(atk, det, a, 0, w.envelope.size());
    }
    warmup_ = static_cast<std::size_t>(std::ceil(10 * arms_[0].hp->time_constant_samples())) + 4 * taps.size();
    std::vector<double> dh(4096), dv(4096);
    std::size_t left = warmup_;
    while (left > 0) {
      const std::size_t k = std::min(left, dh.size());
      produce(std::span(dh.data(), k), std::span(dv.data(), k));
      left -= k;
    }
  }

  std::size_t size() const { return n_; }
  std::size_t remaining() const { return n_ - done_; }
  Mode mode() const { return mode_; }

  // Fills up to h.size() code samples per arm; returns the count written.
  std::size_t next(std::span<double> h, std::span<double> v) {
    const std::size_t k = std::min({h.size(), v.size(), remaining()});
    produce(h.first(k), v.first(k));
    done_ += k;
    return k;
  }

 private:
  struct Arm {
    double sigma = 0;
    std::mt19937_64 rng;
    boost::random::normal_distribution<double> nd{0.0, 1.0};  // ziggurat
    std::unique_ptr<FirFilter> lp;
    std::unique_ptr<HighPass> hp;
    std::vector<double> blind_period;
  };

  void produce(std::span<double> h, std::span<double> v) {
    for (int a = 0; a < 2; ++a) {
      Arm& arm = arms_[a];
      std::span<double> x = a == 0 ? h : v;
      for (auto& s : x) s = arm.sigma * arm.nd(arm.rng);
      if (!arm.blind_period.empty()) {
        const std::size_t per = arm.blind_period.size();
        std::size_t ph = clock_ % per;
        for (auto& s : x) {
          s += arm.blind_period[ph];
          if (++ph == per) ph = 0;
        }
      }
      arm.lp->process(x);
      const double fs = adc_.full_scale_code;
      const double k = fs / adc_.v_fullscale;
      for (auto& s : x) {
        double y = s;
        if (det_.tia_limit_v) y = std::clamp(y, -*det_.tia_limit_v, *det_.tia_limit_v);
        y = arm.hp->step(y);
        s = std::clamp(std::round(y * k), -fs, fs);
      }
    }
    clock_ += h.size();
  }

  Mode mode_;
  DetectorChainConfig det_;
  AdcConfig adc_;
  AttackSourceConfig atk_;
  std::size_t n_ = 0, done_ = 0, warmup_ = 0;
  std::uint64_t clock_ = 0;
  std::array<Arm, 2> arms_;
};

inline WaveformPair simulate_samples(Mode mode, const DetectorChainConfig& det, const AdcConfig& adc,
                                     const AttackSourceConfig& atk, std::size_t n, std::uint64_t seed) {
  AcquisitionStream s(mode, det, adc, atk, n, seed);
  WaveformPair p;
  p.sample_rate = adc.sample_rate;
  p.h.resize(n);
  p.v.resize(n);
  s.next(p.h, p.v);
  return p;
}

inline WaveformPair simulate_acquisition(Mode mode, const DetectorChainConfig& det, const AdcConfig& adc,
                                         const AttackSourceConfig& atk, double duration_s, std::uint64_t seed) {
  const double n = std::floor(duration_s * adc.sample_rate + 1e-9);
  if (!(n >= static_cast<double>(kMinAcquisitionSamples)))
    fail(ErrorKind::trace_too_short, "duration gives fewer than 2^16 samples");
  return simulate_samples(mode, det, adc, atk, static_cast<std::size_t>(n), seed);
}

// ---------------------------------------------------------------------------
// Binary trace dump
//
// Layout (little-endian): magic "CVBTRC01", u32 version=1, f64 sample_rate,
// u8 mode, 7 reserved bytes, u64 seed, u64 config_hash, u64 n, then n int16
// codes of the H arm followed by n int16 codes of the V arm.

inline constexpr char kTraceMagic[9] = "CVBTRC01";

struct TraceHeader {
  double sample_rate = 3.2e9;
  Mode mode = Mode::shot;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

inline void write_trace(const std::string& path, const WaveformPair& p, const TraceHeader& hdr) {
  p.validate(2048);
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot open " + path);
  binio::put_magic(os, kTraceMagic);
  binio::put_uint<std::uint32_t>(os, 1);
  binio::put_f64(os, hdr.sample_rate);
  binio::put_uint<std::uint8_t>(os, static_cast<std::uint8_t>(hdr.mode));
  for (int i = 0; i < 7; ++i) binio::put_uint<std::uint8_t>(os, 0);
  binio::put_uint<std::uint64_t>(os, hdr.seed);
  binio::put_uint<std::uint64_t>(os, hdr.config_hash);
  binio::put_uint<std::uint64_t>(os, p.size());
  for (const auto* arm : {&p.h, &p.v})
    for (double x : *arm) binio::put_i16(os, static_cast<std::int16_t>(std::lround(x)));
  if (!os) fail(ErrorKind::io, "write failed for " + path);
}

inline WaveformPair read_trace(const std::string& path, TraceHeader* hdr_out = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open " + path);
  binio::expect_magic(is, kTraceMagic);
  if (binio::get_uint<std::uint32_t>(is) != 1) fail(ErrorKind::io, "unsupported trace version");
  TraceHeader hdr;
  hdr.sample_rate = binio::get_f64(is);
  const auto m = binio::get_uint<std::uint8_t>(is);
  if (m > 2) fail(ErrorKind::io, "bad mode byte");
  hdr.mode = static_cast<Mode>(m);
  for (int i = 0; i < 7; ++i) binio::get_uint<std::uint8_t>(is);
  hdr.seed = binio::get_uint<std::uint64_t>(is);
  hdr.config_hash = binio::get_uint<std::uint64_t>(is);
  const auto n = binio::get_uint<std::uint64_t>(is);
  if (n > (1ull << 34)) fail(ErrorKind::io, "implausible trace length");
  WaveformPair p;
  p.sample_rate = hdr.sample_rate;
  p.h.resize(n);
  p.v.resize(n);
  for (auto* arm : {&p.h, &p.v})
    for (auto& x : *arm) x = binio::get_i16(is);
  if (hdr_out) *hdr_out = hdr;
  return p;
}

}  // namespace cvblind
