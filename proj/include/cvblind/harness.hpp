#pragma once

// Experiment orchestration: noise-source characterization, the blinding-power
// by noise-power sweep, hiding-threshold extraction and report emission.
//
// Seeding uses common random numbers. Every acquisition seed is
// derive_seed(master, group, mode). In the sweep, the group is the noise-level
// index, so all blinding powers of one noise level share their noise draws.
// In the characterization the group is 1000 + repeat, so all ASE powers of one
// repeat share them. Curves are then smooth in the swept parameter, and the
// repeats stay independent.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "cvblind/config.hpp"
#include "cvblind/dsp.hpp"
#include "cvblind/error.hpp"
#include "cvblind/rxsim.hpp"

namespace cvblind {

inline std::vector<double> default_blind_grid() {
  std::vector<double> g{-15.64536, -15.14536, -14.64536};
  for (int i = 0; i <= 17; ++i) g.push_back(-14.5 + 0.1 * i);
  g.push_back(-12.53858);
  return g;
}

inline std::vector<double> default_characterization_grid() {
  return {-51.25, -50.0, -47.5, -45.0, -42.5, -40.0, -37.0, -34.0, -31.8,
          -30.8,  -29.9, -28.3, -27.0, -25.0, -22.0, -19.0, -16.0, -13.6};
}

struct CharacterizationConfig {
  std::vector<double> powers_dbm = default_characterization_grid();
  int repeats = 4;
  std::size_t samples = std::size_t{1} << 25;
};

struct SweepConfig {
  std::vector<double> blind_powers_dbm = default_blind_grid();
  std::vector<double> noise_powers_dbm{-27.0, -28.3, -29.9, -30.8, -31.8};
  std::size_t samples_per_point = std::size_t{1} << 22;
  std::uint64_t seed = 0x5eed2024;
  double threshold_snu = 0.126;
  bool refresh_calibration = true;  // re-acquire thermal/shot references for every point
  CharacterizationConfig characterization;

  void validate() const {
    auto sorted = [](const std::vector<double>& v) { return std::adjacent_find(v.begin(), v.end(), std::greater_equal<double>()) == v.end(); };
    if (blind_powers_dbm.empty() || noise_powers_dbm.empty()) fail(ErrorKind::config, "sweep grids must be non-empty");
    // Noise levels keep their listed order (it fixes the seed groups); they only need to be distinct.
    std::vector<double> n = noise_powers_dbm;
    std::sort(n.begin(), n.end());
    if (!sorted(blind_powers_dbm) || !sorted(n)) fail(ErrorKind::config, "sweep grids must be strictly sorted and distinct");
    if (samples_per_point < (std::size_t{1} << 20)) fail(ErrorKind::config, "samples_per_point must be at least 2^20");
    if (!(threshold_snu > 0)) fail(ErrorKind::config, "threshold_snu must be positive");
    if (characterization.repeats < 1) fail(ErrorKind::config, "characterization.repeats must be >= 1");
    if (characterization.samples < kMinAcquisitionSamples) fail(ErrorKind::config, "characterization.samples too small");
  }
};

inline json to_json(const SweepConfig& s) {
  return {{"blind_powers_dbm", s.blind_powers_dbm},
          {"noise_powers_dbm", s.noise_powers_dbm},
          {"samples_per_point", s.samples_per_point},
          {"seed", s.seed},
          {"threshold_snu", s.threshold_snu},
          {"refresh_calibration", s.refresh_calibration},
          {"characterization",
           {{"powers_dbm", s.characterization.powers_dbm},
            {"repeats", s.characterization.repeats},
            {"samples", s.characterization.samples}}}};
}

inline SweepConfig sweep_config_from_json(const json& j) {
  cfgio::check_keys(j, "sweep",
                    {"blind_powers_dbm", "noise_powers_dbm", "samples_per_point", "seed", "threshold_snu",
                     "refresh_calibration", "characterization"});
  SweepConfig s;
  cfgio::get(j, "blind_powers_dbm", s.blind_powers_dbm);
  cfgio::get(j, "noise_powers_dbm", s.noise_powers_dbm);
  cfgio::get(j, "samples_per_point", s.samples_per_point);
  cfgio::get(j, "seed", s.seed);
  cfgio::get(j, "threshold_snu", s.threshold_snu);
  cfgio::get(j, "refresh_calibration", s.refresh_calibration);
  if (j.contains("characterization")) {
    const json& c = j["characterization"];
    cfgio::check_keys(c, "characterization", {"powers_dbm", "repeats", "samples"});
    cfgio::get(c, "powers_dbm", s.characterization.powers_dbm);
    cfgio::get(c, "repeats", s.characterization.repeats);
    cfgio::get(c, "samples", s.characterization.samples);
  }
  s.validate();
  return s;
}

inline SweepConfig load_sweep_config(const std::string& path) { return sweep_config_from_json(load_json_file(path)); }

// ---------------------------------------------------------------------------
// Single acquisitions

struct Measurement {
  double variance = 0;  // combined filtered variance, code units squared
  double clip_fraction = 0;
  double out_of_band_db = std::numeric_limits<double>::quiet_NaN();
};

inline Measurement measure(Mode mode, const Calibration& cal, const AttackSourceConfig& atk, std::size_t n,
                           std::uint64_t seed, bool spectrum = false) {
  AcquisitionStream s(mode, cal.detector, cal.adc, atk, n, seed);
  const auto cp = process_stream(s, cal.dsp, cal.adc.full_scale_code, {4096, spectrum});
  Measurement m;
  m.variance = combined_variance(cp.moments(), cal.combine);
  m.clip_fraction = cp.clip_fraction();
  if (spectrum) m.out_of_band_db = cp.out_of_band_db(cal.dsp.signal_band());
  return m;
}

inline std::uint64_t acquisition_seed(std::uint64_t master, std::uint64_t group, Mode mode) {
  return derive_seed(master, group, static_cast<std::uint64_t>(mode));
}

// Memoizes acquisitions that are bit-identical by construction (same mode,
// seed, length and optical inputs).
class AcquisitionCache {
 public:
  Measurement get(Mode mode, const Calibration& cal, const AttackSourceConfig& atk, std::size_t n, std::uint64_t seed,
                  bool spectrum) {
    const bool blinded = atk.blind_power_dbm && (mode == Mode::noisy || atk.blind_all_modes);
    const double ase = mode == Mode::noisy && atk.ase_power_dbm ? *atk.ase_power_dbm : -1e300;
    const Key k{static_cast<int>(mode), seed, n, blinded ? *atk.blind_power_dbm : -1e300, ase, spectrum};
    auto it = memo_.find(k);
    if (it != memo_.end()) return it->second;
    const Measurement m = measure(mode, cal, atk, n, seed, spectrum);
    memo_.emplace(k, m);
    return m;
  }

 private:
  using Key = std::tuple<int, std::uint64_t, std::size_t, double, double, bool>;
  std::map<Key, Measurement> memo_;
};

// ---------------------------------------------------------------------------
// Noise-source characterization

struct CharacterizationPoint {
  double power_dbm = 0;
  std::vector<double> eps;  // one value per repeat
  double mean() const {
    double s = 0;
    for (double e : eps) s += e;
    return s / static_cast<double>(eps.size());
  }
  double spread() const {
    const auto [lo, hi] = std::minmax_element(eps.begin(), eps.end());
    return *hi - *lo;
  }
};

inline std::vector<CharacterizationPoint> run_noise_characterization(
    const std::vector<double>& powers_dbm, int repeats, const Calibration& cal, std::size_t samples,
    std::uint64_t seed, const std::function<void(int, double, double)>& progress = {}) {
  if (powers_dbm.empty()) fail(ErrorKind::empty_input, "no characterization powers");
  if (repeats < 1) fail(ErrorKind::invalid_argument, "repeats must be >= 1");
  std::vector<CharacterizationPoint> out(powers_dbm.size());
  for (std::size_t i = 0; i < powers_dbm.size(); ++i) out[i].power_dbm = powers_dbm[i];
  for (int r = 0; r < repeats; ++r) {
    const std::uint64_t group = 1000 + static_cast<std::uint64_t>(r);
    const AttackSourceConfig dark = cal.attack_for(std::nullopt, std::nullopt);
    const double vt = measure(Mode::thermal, cal, dark, samples, acquisition_seed(seed, group, Mode::thermal)).variance;
    const double vs = measure(Mode::shot, cal, dark, samples, acquisition_seed(seed, group, Mode::shot)).variance;
    for (std::size_t i = 0; i < powers_dbm.size(); ++i) {
      const AttackSourceConfig atk = cal.attack_for(powers_dbm[i], std::nullopt);
      const double vn = measure(Mode::noisy, cal, atk, samples, acquisition_seed(seed, group, Mode::noisy)).variance;
      const double e = estimate_from_variances(vt, vs, vn, cal.estimator).eps_est;
      out[i].eps.push_back(e);
      if (progress) progress(r, powers_dbm[i], e);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Blinding sweep

struct SweepRecord {
  double noise_power_dbm = 0;
  double blind_power_dbm = 0;
  double snu = std::numeric_limits<double>::quiet_NaN();
  double eps_th = std::numeric_limits<double>::quiet_NaN();
  double eps_est = std::numeric_limits<double>::quiet_NaN();
  double clip_fraction = std::numeric_limits<double>::quiet_NaN();
  bool oob_alarm = false;
  std::uint64_t seed = 0;
  bool clip_alarm = false;
  double out_of_band_db = std::numeric_limits<double>::quiet_NaN();
  std::string error;  // non-empty marks a failed point

  bool ok() const { return error.empty(); }
  bool any_alarm() const { return oob_alarm || clip_alarm; }
};

struct SweepResult {
  std::vector<SweepRecord> records;
  std::vector<SweepRecord> references;  // one blinding-free point per noise level, same seeds
};

namespace detail {

inline SweepRecord sweep_point(const Calibration& cal, const SweepConfig& cfg, AcquisitionCache& cache,
                               std::size_t noise_idx, std::optional<double> blind_dbm) {
  SweepRecord r;
  r.noise_power_dbm = cfg.noise_powers_dbm[noise_idx];
  r.blind_power_dbm = blind_dbm.value_or(-std::numeric_limits<double>::infinity());
  r.seed = acquisition_seed(cfg.seed, noise_idx, Mode::noisy);
  try {
    const AttackSourceConfig atk = cal.attack_for(r.noise_power_dbm, blind_dbm);
    const std::size_t n = cfg.samples_per_point;
    // Without refresh, references are taken once per noise level, blinding-free.
    const AttackSourceConfig& ref_atk = cfg.refresh_calibration ? atk : cal.attack_for(r.noise_power_dbm, std::nullopt);
    const auto vt = cache.get(Mode::thermal, cal, ref_atk, n, acquisition_seed(cfg.seed, noise_idx, Mode::thermal), false);
    const auto vs = cache.get(Mode::shot, cal, ref_atk, n, acquisition_seed(cfg.seed, noise_idx, Mode::shot), false);
    const auto vn = cache.get(Mode::noisy, cal, atk, n, r.seed, true);
    const VarianceReport rep = estimate_from_variances(vt.variance, vs.variance, vn.variance, cal.estimator);
    r.snu = rep.snu;
    r.eps_th = rep.eps_th;
    r.eps_est = rep.eps_est;
    r.clip_fraction = vn.clip_fraction;
    r.out_of_band_db = vn.out_of_band_db;
    r.oob_alarm = r.out_of_band_db > cal.watchdog.oob_baseline_db + cal.watchdog.oob_margin_db;
    r.clip_alarm = r.clip_fraction > cal.watchdog.clip_threshold;
  } catch (const Error& e) {
    r.error = std::string(to_string(e.kind())) + ": " + e.what();
  }
  return r;
}

}  // namespace detail

inline SweepResult run_blinding_sweep(const SweepConfig& cfg, const Calibration& cal,
                                      const std::function<void(const SweepRecord&)>& progress = {}) {
  cfg.validate();
  SweepResult out;
  for (std::size_t k = 0; k < cfg.noise_powers_dbm.size(); ++k) {
    AcquisitionCache cache;  // per noise level; seed groups differ between levels
    out.references.push_back(detail::sweep_point(cal, cfg, cache, k, std::nullopt));
    for (double b : cfg.blind_powers_dbm) {
      out.records.push_back(detail::sweep_point(cal, cfg, cache, k, b));
      if (progress) progress(out.records.back());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hiding threshold

struct HidingThreshold {
  double power_dbm = 0;    // interpolated crossing
  double bracket_lo = 0;   // last grid power at or above the threshold
  double bracket_hi = 0;   // first grid power below it
  bool at_grid_minimum = false;
};

// Smallest blinding power at which eps_est drops below the threshold, linearly
// interpolated between the bracketing grid points. nullopt when the curve never crosses.
inline std::optional<HidingThreshold> find_hiding_threshold(const std::vector<SweepRecord>& records,
                                                            double noise_power_dbm, double threshold_snu = 0.126) {
  std::vector<const SweepRecord*> pts;
  for (const auto& r : records)
    if (r.ok() && std::abs(r.noise_power_dbm - noise_power_dbm) < 1e-9 && std::isfinite(r.blind_power_dbm))
      pts.push_back(&r);
  if (pts.empty()) fail(ErrorKind::empty_input, "no sweep records at this noise power");
  std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->blind_power_dbm < b->blind_power_dbm; });
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!(pts[i]->eps_est < threshold_snu)) continue;
    HidingThreshold h;
    h.bracket_hi = pts[i]->blind_power_dbm;
    if (i == 0) {
      h.power_dbm = h.bracket_lo = h.bracket_hi;
      h.at_grid_minimum = true;
      return h;
    }
    const SweepRecord& a = *pts[i - 1];
    const SweepRecord& b = *pts[i];
    h.bracket_lo = a.blind_power_dbm;
    const double f = (a.eps_est - threshold_snu) / (a.eps_est - b.eps_est);
    h.power_dbm = a.blind_power_dbm + f * (b.blind_power_dbm - a.blind_power_dbm);
    return h;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Reports

inline constexpr const char* kSweepCsvHeader = "# cvblind-sweep v1";

namespace detail {

inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char c : s) o += c == '"' ? std::string("\"\"") : std::string(1, c == '\n' ? ' ' : c);
  return o + "\"";
}

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> xy;
};

// Minimal line chart: axes with ticks, one polyline per series, optional horizontal rule.
inline std::string svg_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                             const std::vector<Series>& series, std::optional<double> hline,
                             const std::string& hlabel) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (auto [x, y] : s.xy) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (hline) y0 = std::min(y0, *hline), y1 = std::max(y1, *hline);
  if (!(x1 > x0)) x0 -= 1, x1 += 1;
  if (!(y1 > y0)) y0 -= 1, y1 += 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad, y1 += pad;
  const double W = 800, H = 500, L = 80, R = 180, T = 40, B = 60;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5, yv = y0 + (y1 - y0) * i / 5;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << fmt(std::round(xv * 100) / 100) << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(std::round(yv * 1000) / 1000) << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv) << "\" stroke=\"#ddd\"/>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  o << "<text transform=\"translate(20," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << ylabel << "</text>\n";
  if (hline) {
    o << "<line x1=\"" << L << "\" y1=\"" << py(*hline) << "\" x2=\"" << W - R << "\" y2=\"" << py(*hline)
      << "\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n";
    o << "<text x=\"" << W - R + 6 << "\" y=\"" << py(*hline) + 4 << "\">" << hlabel << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* c = colors[k % 7];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (auto [x, y] : series[k].xy)
      if (std::isfinite(x) && std::isfinite(y)) o << px(x) << ',' << py(y) << ' ';
    o << "\"/>\n";
    for (auto [x, y] : series[k].xy)
      if (std::isfinite(x) && std::isfinite(y))
        o << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"2.5\" fill=\"" << c << "\"/>\n";
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 30 + 18 * k << "\" fill=\"" << c << "\">" << series[k].label << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + p.string());
  f << s;
  if (!f) fail(ErrorKind::io, "write failed for " + p.string());
}

}  // namespace detail

inline std::string sweep_csv(const std::vector<SweepRecord>& records) {
  std::ostringstream o;
  o << kSweepCsvHeader << '\n';
  o << "noise_power_dbm,blind_power_dbm,snu,eps_th,eps_est,clip_fraction,oob_alarm,seed,clip_alarm,out_of_band_db,error\n";
  for (const auto& r : records)
    o << detail::fmt(r.noise_power_dbm) << ',' << detail::fmt(r.blind_power_dbm) << ',' << detail::fmt(r.snu) << ','
      << detail::fmt(r.eps_th) << ',' << detail::fmt(r.eps_est) << ',' << detail::fmt(r.clip_fraction) << ','
      << (r.oob_alarm ? 1 : 0) << ',' << r.seed << ',' << (r.clip_alarm ? 1 : 0) << ','
      << detail::fmt(r.out_of_band_db) << ',' << detail::csv_escape(r.error) << '\n';
  return o.str();
}

inline std::string characterization_csv(const std::vector<CharacterizationPoint>& curve) {
  std::ostringstream o;
  o << "# cvblind-characterization v1\npower_dbm,repeat,eps_est\n";
  for (const auto& p : curve)
    for (std::size_t r = 0; r < p.eps.size(); ++r) o << detail::fmt(p.power_dbm) << ',' << r << ',' << detail::fmt(p.eps[r]) << '\n';
  return o.str();
}

struct ReportFiles {
  std::filesystem::path sweep_csv, characterization_csv, sweep_plot, characterization_plot;
};

inline ReportFiles emit_report(const std::vector<SweepRecord>& records, const std::vector<CharacterizationPoint>& curve,
                               const std::filesystem::path& out_dir, double threshold_snu = 0.126) {
  if (records.empty()) fail(ErrorKind::empty_input, "no sweep records to report");
  if (curve.empty()) fail(ErrorKind::empty_input, "no characterization curve to report");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + out_dir.string() + ": " + ec.message());

  ReportFiles f{out_dir / "sweep.csv", out_dir / "characterization.csv", out_dir / "blinding_sweep.svg",
                out_dir / "noise_characterization.svg"};
  detail::write_text(f.sweep_csv, sweep_csv(records));
  detail::write_text(f.characterization_csv, characterization_csv(curve));

  std::vector<detail::Series> s;
  for (const auto& r : records) {
    if (s.empty() || s.back().label != detail::fmt(r.noise_power_dbm) + " dBm")
      s.push_back({detail::fmt(r.noise_power_dbm) + " dBm", {}});
    if (r.ok()) s.back().xy.emplace_back(r.blind_power_dbm, r.eps_est);
  }
  detail::write_text(f.sweep_plot, detail::svg_chart("Estimated excess noise under blinding", "blinding power [dBm]",
                                                     "estimated excess noise [SNU]", s, threshold_snu,
                                                     detail::fmt(threshold_snu) + " SNU"));

  std::vector<detail::Series> c;
  const std::size_t reps = curve.front().eps.size();
  for (std::size_t r = 0; r < reps; ++r) {
    detail::Series one{"repeat " + std::to_string(r + 1), {}};
    for (const auto& p : curve)
      if (r < p.eps.size()) one.xy.emplace_back(p.power_dbm, p.eps[r]);
    c.push_back(std::move(one));
  }
  detail::write_text(f.characterization_plot,
                     detail::svg_chart("Noise source characterization", "ASE power [dBm]",
                                       "estimated excess noise [SNU]", c, std::nullopt, ""));
  return f;
}

}  // namespace cvblind
