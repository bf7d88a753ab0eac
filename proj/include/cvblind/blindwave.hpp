#pragma once

// Blinding-laser modulation envelopes. One period is stored; the envelope is
// replayed cyclically by the receiver model.

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cvblind/binio.hpp"
#include "cvblind/error.hpp"
#include "cvblind/fft.hpp"
#include "cvblind/units.hpp"

namespace cvblind {

struct BlindWaveform {
  std::vector<cplx> envelope;  // one period, peak |envelope| = 1
  double rate = 3.2e9;
  double period_s = 1e-7;

  std::size_t samples_per_period() const { return envelope.size(); }
};

struct Band {
  double lo = 2.1e8;
  double hi = 7.5e8;
};

inline std::size_t period_samples(double freq, double rate) {
  const double n = rate / freq;
  const double r = std::round(n);
  if (std::abs(n - r) > 1e-6 * n)
    fail(ErrorKind::resolution, "rate/freq must be an integer number of samples per period");
  return static_cast<std::size_t>(r);
}

inline BlindWaveform square_wave(double freq = 1e7, double rate = 3.2e9, double duty = 0.5) {
  if (!(freq > 0) || freq > rate / 20) fail(ErrorKind::resolution, "frequency above a tenth of Nyquist");
  if (!(duty > 0 && duty <= 1)) fail(ErrorKind::invalid_argument, "duty must lie in (0, 1]");
  const std::size_t n = period_samples(freq, rate);
  const auto on = static_cast<std::size_t>(std::llround(duty * static_cast<double>(n)));
  BlindWaveform w;
  w.rate = rate;
  w.period_s = static_cast<double>(n) / rate;
  w.envelope.assign(n, cplx(0, 0));
  for (std::size_t i = 0; i < std::max<std::size_t>(on, 1); ++i) w.envelope[i] = 1.0;
  return w;
}

inline void normalize_peak(BlindWaveform& w) {
  double peak = 0;
  for (const auto& e : w.envelope) peak = std::max(peak, std::abs(e));
  if (!(peak > 0)) fail(ErrorKind::invalid_argument, "envelope is identically zero");
  for (auto& e : w.envelope) e /= peak;
}

inline bool in_band(double f, const Band& b, bool two_sided) {
  const double x = two_sided ? std::abs(f) : f;
  return x >= b.lo && x <= b.hi;
}

// Zeroes the band over one period (circular semantics) and renormalizes to unit
// peak. One-sided by default: only the positive-frequency side of the field is
// cleared, which is what makes the envelope complex.
inline BlindWaveform notch_filter(const BlindWaveform& w, Band band = {}, bool two_sided = false) {
  if (!(band.lo < band.hi) || band.hi > w.rate / 2) fail(ErrorKind::invalid_argument, "band must lie within Nyquist");
  const std::size_t n = w.envelope.size();
  auto spec = fft(w.envelope);
  for (std::size_t k = 0; k < n; ++k)
    if (in_band(bin_frequency(k, n, w.rate), band, two_sided)) spec[k] = 0;
  BlindWaveform out = w;
  out.envelope = ifft(spec);
  normalize_peak(out);
  return out;
}

inline double band_power(const BlindWaveform& w, const Band& band, bool two_sided = false) {
  const auto spec = fft(w.envelope);
  double p = 0;
  for (std::size_t k = 0; k < spec.size(); ++k)
    if (in_band(bin_frequency(k, spec.size(), w.rate), band, two_sided)) p += std::norm(spec[k]);
  return p / static_cast<double>(spec.size() * spec.size());
}

inline constexpr double kSuppressionFloorDb = -120.0;

inline double verify_notch(const BlindWaveform& w, const BlindWaveform& reference, Band band = {},
                           bool two_sided = false) {
  const double pr = band_power(reference, band, two_sided);
  const double pw = band_power(w, band, two_sided);
  if (!(pr > 0)) fail(ErrorKind::invalid_argument, "reference has no power in the band");
  if (!(pw > 0)) return kSuppressionFloorDb;
  return std::max(kSuppressionFloorDb, db10(pw / pr));
}

// Against a 50% square wave of the same period and rate.
inline double verify_notch(const BlindWaveform& w, Band band = {}, bool two_sided = false) {
  return verify_notch(w, square_wave(1.0 / w.period_s, w.rate, 0.5), band, two_sided);
}

// ---------------------------------------------------------------------------
// Export

inline void write_envelope_csv(const BlindWaveform& w, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::io, "cannot open " + path);
  os << "time_s,re,im\n" << std::setprecision(17);
  for (std::size_t i = 0; i < w.envelope.size(); ++i)
    os << static_cast<double>(i) / w.rate << ',' << w.envelope[i].real() << ',' << w.envelope[i].imag() << '\n';
  if (!os) fail(ErrorKind::io, "write failed for " + path);
}

inline constexpr char kEnvelopeMagic[9] = "CVBENV01";

// Layout (little-endian): magic[8], u32 version=1, f64 rate, f64 period_s,
// u64 n, then n pairs of f64 (re, im).
inline void write_envelope_binary(const BlindWaveform& w, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot open " + path);
  binio::put_magic(os, kEnvelopeMagic);
  binio::put_uint<std::uint32_t>(os, 1);
  binio::put_f64(os, w.rate);
  binio::put_f64(os, w.period_s);
  binio::put_uint<std::uint64_t>(os, w.envelope.size());
  for (const auto& e : w.envelope) {
    binio::put_f64(os, e.real());
    binio::put_f64(os, e.imag());
  }
  if (!os) fail(ErrorKind::io, "write failed for " + path);
}

inline BlindWaveform read_envelope_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open " + path);
  binio::expect_magic(is, kEnvelopeMagic);
  if (binio::get_uint<std::uint32_t>(is) != 1) fail(ErrorKind::io, "unsupported envelope version");
  BlindWaveform w;
  w.rate = binio::get_f64(is);
  w.period_s = binio::get_f64(is);
  const auto n = binio::get_uint<std::uint64_t>(is);
  if (n == 0 || n > (1ull << 32)) fail(ErrorKind::io, "implausible envelope length");
  w.envelope.resize(n);
  for (auto& e : w.envelope) {
    const double re = binio::get_f64(is);
    e = cplx(re, binio::get_f64(is));
  }
  return w;
}

}  // namespace cvblind
