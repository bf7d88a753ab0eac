#pragma once

// JSON configuration for every config record, and the calibration bundle that
// pins the receiver gain chain, attack-source constants, DSP and watchdog
// thresholds.

#include "json.hpp"

#include <fstream>
#include <initializer_list>
#include <memory>
#include <string>

#include "cvblind/binio.hpp"
#include "cvblind/blindwave.hpp"
#include "cvblind/constellation.hpp"
#include "cvblind/dsp.hpp"
#include "cvblind/error.hpp"
#include "cvblind/rxsim.hpp"
#include "cvblind/secproof.hpp"

#ifndef CVBLIND_DEFAULT_CALIBRATION
#define CVBLIND_DEFAULT_CALIBRATION "config/calibration.json"
#endif

namespace cvblind {

using json = nlohmann::json;

namespace cfgio {

inline void require_object(const json& j, const char* what) {
  if (!j.is_object()) fail(ErrorKind::config, std::string(what) + " must be a JSON object");
}

// Rejects keys outside the allowed set so that typos do not silently fall back to defaults.
inline void check_keys(const json& j, const char* what, std::initializer_list<const char*> allowed) {
  require_object(j, what);
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) fail(ErrorKind::config, std::string("unknown key '") + k + "' in " + what);
  }
}

template <class T>
void get(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("bad value for '") + key + "': " + e.what());
  }
}

template <class T>
void get_opt(const json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  T v{};
  get(j, key, v);
  out = v;
}

inline cplx get_complex(const json& j) {
  if (j.is_number()) return {j.get<double>(), 0.0};
  if (!j.is_array() || j.size() != 2) fail(ErrorKind::config, "complex values are [re, im]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace cfgio

inline json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::io, "cannot open " + path);
  try {
    return json::parse(f, nullptr, true, true);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::config, path + ": " + e.what());
  }
}

inline void save_json_file(const json& j, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail(ErrorKind::io, "cannot write " + path);
  f << j.dump(2) << '\n';
  if (!f) fail(ErrorKind::io, "write failed for " + path);
}

// ---------------------------------------------------------------------------
// secproof / constellation

inline json to_json(const ChannelParams& p) {
  return {{"T", p.T}, {"eta", p.eta}, {"eps", p.eps}, {"eps_th", p.eps_th}, {"n_mean", p.n_mean}, {"beta", p.beta}};
}

inline ChannelParams channel_params_from_json(const json& j) {
  cfgio::check_keys(j, "channel", {"T", "eta", "eps", "eps_th", "n_mean", "beta"});
  ChannelParams p;
  cfgio::get(j, "T", p.T);
  cfgio::get(j, "eta", p.eta);
  cfgio::get(j, "eps", p.eps);
  cfgio::get(j, "eps_th", p.eps_th);
  cfgio::get(j, "n_mean", p.n_mean);
  if (!j.contains("beta")) fail(ErrorKind::config, "channel.beta is required");
  cfgio::get(j, "beta", p.beta);
  return p;
}

inline const char* to_string(NoiseModel m) {
  return m == NoiseModel::channel_only ? "channel_only" : "trusted_detector";
}

inline NoiseModel parse_noise_model(const std::string& s) {
  if (s == "channel_only") return NoiseModel::channel_only;
  if (s == "trusted_detector") return NoiseModel::trusted_detector;
  fail(ErrorKind::config, "unknown noise model '" + s + "'");
}

inline json to_json(const ConstellationSpec& s) {
  json j{{"order", s.order}, {"scale", s.scale}};
  if (s.nu) j["nu"] = *s.nu;
  if (s.target_n_mean) j["target_n_mean"] = *s.target_n_mean;
  return j;
}

inline ConstellationSpec constellation_spec_from_json(const json& j) {
  cfgio::check_keys(j, "constellation", {"order", "nu", "target_n_mean", "scale"});
  ConstellationSpec s;
  cfgio::get(j, "order", s.order);
  cfgio::get_opt(j, "nu", s.nu);
  cfgio::get_opt(j, "target_n_mean", s.target_n_mean);
  cfgio::get(j, "scale", s.scale);
  return s;
}

// Inputs of the keyrate and max-noise commands. channel.n_mean is replaced by
// the constellation's own mean photon number.
struct KeyRateConfig {
  ConstellationSpec constellation;
  ChannelParams channel;
  NoiseModel model = NoiseModel::trusted_detector;
};

inline json to_json(const KeyRateConfig& k) {
  return {{"constellation", to_json(k.constellation)}, {"channel", to_json(k.channel)}, {"model", to_string(k.model)}};
}

inline KeyRateConfig keyrate_config_from_json(const json& j) {
  cfgio::check_keys(j, "keyrate config", {"constellation", "channel", "model"});
  KeyRateConfig k;
  if (j.contains("constellation")) k.constellation = constellation_spec_from_json(j["constellation"]);
  if (!j.contains("channel")) fail(ErrorKind::config, "keyrate config needs a channel block");
  k.channel = channel_params_from_json(j["channel"]);
  if (j.contains("model")) k.model = parse_noise_model(j["model"].get<std::string>());
  return k;
}

// ---------------------------------------------------------------------------
// rxsim

inline json to_json(const DetectorChainConfig& d) {
  json j{{"analog_bandwidth", d.analog_bandwidth},
         {"lowpass_order", d.lowpass_order},
         {"lowpass_taps", d.lowpass_taps},
         {"ac_cutoff", d.ac_cutoff},
         {"highpass_order", d.highpass_order},
         {"eta", d.eta},
         {"gain", d.gain},
         {"thermal_noise_density", d.thermal_noise_density},
         {"lo_power", d.lo_power},
         {"lo_wavelength", d.lo_wavelength},
         {"arm_polarity", d.arm_polarity}};
  j["tia_limit_v"] = d.tia_limit_v ? json(*d.tia_limit_v) : json(nullptr);
  return j;
}

inline DetectorChainConfig detector_from_json(const json& j) {
  cfgio::check_keys(j, "detector",
                    {"analog_bandwidth", "lowpass_order", "lowpass_taps", "ac_cutoff", "highpass_order", "eta", "gain",
                     "thermal_noise_density", "lo_power", "lo_wavelength", "arm_polarity", "tia_limit_v"});
  DetectorChainConfig d;
  cfgio::get(j, "analog_bandwidth", d.analog_bandwidth);
  cfgio::get(j, "lowpass_order", d.lowpass_order);
  cfgio::get(j, "lowpass_taps", d.lowpass_taps);
  cfgio::get(j, "ac_cutoff", d.ac_cutoff);
  cfgio::get(j, "highpass_order", d.highpass_order);
  cfgio::get(j, "eta", d.eta);
  cfgio::get(j, "gain", d.gain);
  cfgio::get(j, "thermal_noise_density", d.thermal_noise_density);
  cfgio::get(j, "lo_power", d.lo_power);
  cfgio::get(j, "lo_wavelength", d.lo_wavelength);
  cfgio::get(j, "arm_polarity", d.arm_polarity);
  cfgio::get_opt(j, "tia_limit_v", d.tia_limit_v);
  d.validate();
  return d;
}

inline json to_json(const AdcConfig& a) {
  return {{"bits", a.bits},
          {"full_scale_code", a.full_scale_code},
          {"sample_rate", a.sample_rate},
          {"v_fullscale", a.v_fullscale}};
}

inline AdcConfig adc_from_json(const json& j) {
  cfgio::check_keys(j, "adc", {"bits", "full_scale_code", "sample_rate", "v_fullscale"});
  AdcConfig a;
  cfgio::get(j, "bits", a.bits);
  cfgio::get(j, "full_scale_code", a.full_scale_code);
  cfgio::get(j, "sample_rate", a.sample_rate);
  cfgio::get(j, "v_fullscale", a.v_fullscale);
  a.validate();
  return a;
}

// The waveform is described, not stored; it is synthesized on load.
struct WaveformSpec {
  std::string kind = "square";  // "square" or "file"
  double freq_hz = 1e7;
  double duty = 0.5;
  bool notch = false;
  Band band{};
  std::string path;  // binary envelope when kind == "file"
};

inline BlindWaveform build_waveform(const WaveformSpec& s, double rate) {
  BlindWaveform w;
  if (s.kind == "square") {
    w = square_wave(s.freq_hz, rate, s.duty);
  } else if (s.kind == "file") {
    w = read_envelope_binary(s.path);
  } else {
    fail(ErrorKind::config, "waveform.kind must be 'square' or 'file'");
  }
  if (s.notch) w = notch_filter(w, s.band);
  return w;
}

inline json to_json(const WaveformSpec& s) {
  json j{{"kind", s.kind}, {"freq_hz", s.freq_hz}, {"duty", s.duty}, {"notch", s.notch},
         {"band_hz", {s.band.lo, s.band.hi}}};
  if (!s.path.empty()) j["path"] = s.path;
  return j;
}

inline WaveformSpec waveform_spec_from_json(const json& j) {
  cfgio::check_keys(j, "waveform", {"kind", "freq_hz", "duty", "notch", "band_hz", "path"});
  WaveformSpec s;
  cfgio::get(j, "kind", s.kind);
  cfgio::get(j, "freq_hz", s.freq_hz);
  cfgio::get(j, "duty", s.duty);
  cfgio::get(j, "notch", s.notch);
  if (j.contains("band_hz")) {
    const auto b = j["band_hz"].get<std::vector<double>>();
    if (b.size() != 2 || !(b[0] < b[1])) fail(ErrorKind::config, "band_hz must be [lo, hi] with lo < hi");
    s.band = {b[0], b[1]};
  }
  cfgio::get(j, "path", s.path);
  return s;
}

// Attack-source constants; the two powers are per-run settings and optional here.
inline json to_json(const AttackSourceConfig& a) {
  json j{{"bs_imbalance_r", a.bs_imbalance_r},
         {"pol_mismatch_phi", a.pol_mismatch_phi},
         {"blind_wavelength", a.blind_wavelength},
         {"ase_coupling", a.ase_coupling},
         {"ase_optical_bandwidth", a.ase_optical_bandwidth},
         {"blind_all_modes", a.blind_all_modes}};
  if (a.ase_power_dbm) j["ase_power_dbm"] = *a.ase_power_dbm;
  if (a.blind_power_dbm) j["blind_power_dbm"] = *a.blind_power_dbm;
  return j;
}

inline AttackSourceConfig attack_from_json(const json& j) {
  cfgio::check_keys(j, "attack",
                    {"bs_imbalance_r", "pol_mismatch_phi", "blind_wavelength", "ase_coupling", "ase_optical_bandwidth",
                     "blind_all_modes", "ase_power_dbm", "blind_power_dbm"});
  AttackSourceConfig a;
  cfgio::get(j, "bs_imbalance_r", a.bs_imbalance_r);
  cfgio::get(j, "pol_mismatch_phi", a.pol_mismatch_phi);
  cfgio::get(j, "blind_wavelength", a.blind_wavelength);
  cfgio::get(j, "ase_coupling", a.ase_coupling);
  cfgio::get(j, "ase_optical_bandwidth", a.ase_optical_bandwidth);
  cfgio::get(j, "blind_all_modes", a.blind_all_modes);
  cfgio::get_opt(j, "ase_power_dbm", a.ase_power_dbm);
  cfgio::get_opt(j, "blind_power_dbm", a.blind_power_dbm);
  return a;
}

// ---------------------------------------------------------------------------
// dsp

inline json to_json(const DspConfig& c) {
  return {{"downconvert_hz", c.downconvert_hz},
          {"rrc_rolloff", c.rrc_rolloff},
          {"symbol_rate", c.symbol_rate},
          {"rrc_span_symbols", c.rrc_span_symbols},
          {"sample_rate", c.sample_rate}};
}

inline DspConfig dsp_from_json(const json& j) {
  cfgio::check_keys(j, "dsp", {"downconvert_hz", "rrc_rolloff", "symbol_rate", "rrc_span_symbols", "sample_rate"});
  DspConfig c;
  cfgio::get(j, "downconvert_hz", c.downconvert_hz);
  cfgio::get(j, "rrc_rolloff", c.rrc_rolloff);
  cfgio::get(j, "symbol_rate", c.symbol_rate);
  cfgio::get(j, "rrc_span_symbols", c.rrc_span_symbols);
  cfgio::get(j, "sample_rate", c.sample_rate);
  c.validate();
  return c;
}

inline json to_json(const EstimatorConfig& e) { return {{"t_assumed", e.t_assumed}, {"eta", e.eta}}; }

inline EstimatorConfig estimator_from_json(const json& j) {
  cfgio::check_keys(j, "estimator", {"t_assumed", "eta"});
  EstimatorConfig e;
  cfgio::get(j, "t_assumed", e.t_assumed);
  cfgio::get(j, "eta", e.eta);
  if (!(e.t_assumed > 0 && e.eta > 0)) fail(ErrorKind::config, "estimator t_assumed and eta must be positive");
  return e;
}

inline json to_json(const CombineOptions& c) {
  return {{"mode", c.mode == CombineMode::fixed ? "fixed" : "adaptive"},
          {"w_h", {c.w_h.real(), c.w_h.imag()}},
          {"w_v", {c.w_v.real(), c.w_v.imag()}}};
}

inline CombineOptions combine_from_json(const json& j) {
  cfgio::check_keys(j, "combine", {"mode", "w_h", "w_v"});
  CombineOptions c;
  if (j.contains("mode")) {
    const auto m = j["mode"].get<std::string>();
    if (m == "fixed") c.mode = CombineMode::fixed;
    else if (m == "adaptive") c.mode = CombineMode::adaptive;
    else fail(ErrorKind::config, "combine.mode must be 'fixed' or 'adaptive'");
  }
  if (j.contains("w_h")) c.w_h = cfgio::get_complex(j["w_h"]);
  if (j.contains("w_v")) c.w_v = cfgio::get_complex(j["w_v"]);
  return c;
}

inline json to_json(const WatchdogConfig& w) {
  return {{"oob_baseline_db", w.oob_baseline_db},
          {"oob_margin_db", w.oob_margin_db},
          {"clip_threshold", w.clip_threshold},
          {"full_scale_code", w.full_scale_code}};
}

inline WatchdogConfig watchdog_from_json(const json& j) {
  cfgio::check_keys(j, "watchdog", {"oob_baseline_db", "oob_margin_db", "clip_threshold", "full_scale_code"});
  WatchdogConfig w;
  cfgio::get(j, "oob_baseline_db", w.oob_baseline_db);
  cfgio::get(j, "oob_margin_db", w.oob_margin_db);
  cfgio::get(j, "clip_threshold", w.clip_threshold);
  cfgio::get(j, "full_scale_code", w.full_scale_code);
  return w;
}

// ---------------------------------------------------------------------------
// Calibration bundle

struct Calibration {
  DetectorChainConfig detector;
  AdcConfig adc;
  AttackSourceConfig attack;
  WaveformSpec waveform;
  DspConfig dsp;
  EstimatorConfig estimator;
  CombineOptions combine;
  WatchdogConfig watchdog;

  // Attack config with the waveform synthesized and both powers set (nullopt = source off).
  AttackSourceConfig attack_for(std::optional<double> ase_dbm, std::optional<double> blind_dbm) const {
    AttackSourceConfig a = attack;
    a.ase_power_dbm = ase_dbm;
    a.blind_power_dbm = blind_dbm;
    if (!a.blind_waveform) a.blind_waveform = std::make_shared<const BlindWaveform>(build_waveform(waveform, adc.sample_rate));
    return a;
  }
};

inline json to_json(const Calibration& c) {
  return {{"detector", to_json(c.detector)}, {"adc", to_json(c.adc)},           {"attack", to_json(c.attack)},
          {"waveform", to_json(c.waveform)}, {"dsp", to_json(c.dsp)},           {"estimator", to_json(c.estimator)},
          {"combine", to_json(c.combine)},   {"watchdog", to_json(c.watchdog)}};
}

inline Calibration calibration_from_json(const json& j) {
  cfgio::check_keys(j, "calibration",
                    {"detector", "adc", "attack", "waveform", "dsp", "estimator", "combine", "watchdog", "comment"});
  Calibration c;
  if (j.contains("detector")) c.detector = detector_from_json(j["detector"]);
  if (j.contains("adc")) c.adc = adc_from_json(j["adc"]);
  if (j.contains("attack")) c.attack = attack_from_json(j["attack"]);
  if (j.contains("waveform")) c.waveform = waveform_spec_from_json(j["waveform"]);
  if (j.contains("dsp")) c.dsp = dsp_from_json(j["dsp"]);
  if (j.contains("estimator")) c.estimator = estimator_from_json(j["estimator"]);
  if (j.contains("combine")) c.combine = combine_from_json(j["combine"]);
  if (j.contains("watchdog")) c.watchdog = watchdog_from_json(j["watchdog"]);
  if (std::abs(c.dsp.sample_rate - c.adc.sample_rate) > 1e-6 * c.adc.sample_rate)
    fail(ErrorKind::config, "dsp.sample_rate must equal adc.sample_rate");
  c.attack.validate();
  return c;
}

inline Calibration load_calibration(const std::string& path = CVBLIND_DEFAULT_CALIBRATION) {
  return calibration_from_json(load_json_file(path));
}

// Identifies the receiver and attack settings behind a stored trace.
inline std::uint64_t config_hash(const Calibration& c, const AttackSourceConfig& atk) {
  json j = to_json(c);
  j["attack"] = to_json(atk);
  return binio::fnv1a(j.dump());
}

inline KeyRateConfig load_keyrate_config(const std::string& path) { return keyrate_config_from_json(load_json_file(path)); }

}  // namespace cvblind
