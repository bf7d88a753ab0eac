// cvblind: command-line front end for the key-rate calculator, the receiver
// simulator, the DSP estimators and the blinding experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cvblind/cvblind.hpp"

using namespace cvblind;

namespace {

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

void append_csv(const std::string& path, const std::string& header, const std::string& row) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream f(path, std::ios::app);
  if (!f) fail(ErrorKind::io, "cannot write " + path);
  if (fresh) f << header << '\n';
  f << row << '\n';
}

std::string num(double x) {
  char b[32];
  std::snprintf(b, sizeof b, "%.10g", x);
  return b;
}

struct KeyRateArgs {
  std::string config;
  std::optional<double> eps, beta, eps_th, T, eta;
  std::string model;
  std::string csv;
};

void add_keyrate_options(CLI::App* c, KeyRateArgs& a) {
  c->add_option("--config", a.config, "keyrate JSON config")->required()->check(CLI::ExistingFile);
  c->add_option("--beta", a.beta, "override reconciliation efficiency");
  c->add_option("--eps-th", a.eps_th, "override trusted electronic noise [SNU]");
  c->add_option("--T", a.T, "override channel transmission");
  c->add_option("--eta", a.eta, "override detector efficiency");
  c->add_option("--model", a.model, "channel_only or trusted_detector");
  c->add_option("--csv", a.csv, "append a CSV row to this file");
}

struct ResolvedKeyRate {
  KeyRateConfig cfg;
  Constellation constellation;
  KeyRateOptions opt;
};

ResolvedKeyRate resolve(const KeyRateArgs& a) {
  ResolvedKeyRate r;
  r.cfg = load_keyrate_config(a.config);
  if (a.beta) r.cfg.channel.beta = *a.beta;
  if (a.eps_th) r.cfg.channel.eps_th = *a.eps_th;
  if (a.T) r.cfg.channel.T = *a.T;
  if (a.eta) r.cfg.channel.eta = *a.eta;
  if (!a.model.empty()) r.cfg.model = parse_noise_model(a.model);
  r.constellation = build(r.cfg.constellation);
  r.cfg.channel.n_mean = mean_photon_number(r.constellation);
  r.opt.model = r.cfg.model;
  return r;
}

Calibration calibration_from(const std::string& path) {
  return path.empty() ? load_calibration() : load_calibration(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coherent-receiver blinding attack simulator and CV-QKD key-rate tools"};
  app.require_subcommand(1);

  // keyrate ------------------------------------------------------------------
  KeyRateArgs kr;
  auto* c_kr = app.add_subcommand("keyrate", "asymptotic key rate for one excess-noise value");
  add_keyrate_options(c_kr, kr);
  c_kr->add_option("--eps", kr.eps, "excess noise [SNU] (default: config channel.eps)");
  c_kr->callback([&] {
    auto r = resolve(kr);
    if (kr.eps) r.cfg.channel.eps = *kr.eps;
    const auto f = compute_correlations(r.constellation, adaptive_cutoff(r.constellation));
    const double k = key_rate(r.cfg.channel, r.cfg.channel.n_mean, f, r.opt);
    const double iab = mutual_information(r.cfg.channel);
    print({{"n_mean", r.cfg.channel.n_mean}, {"n_cut", f.n_cut}, {"z", z_from_correlations(f, r.cfg.channel.eps)},
           {"w", f.w}, {"I_BA", iab}, {"chi_BE", r.cfg.channel.beta * iab - k}, {"key_rate", k},
           {"model", to_string(r.cfg.model)}, {"channel", to_json(r.cfg.channel)}});
    if (!kr.csv.empty())
      append_csv(kr.csv, "n_mean,T,eta,eps,eps_th,beta,key_rate",
                 num(r.cfg.channel.n_mean) + "," + num(r.cfg.channel.T) + "," + num(r.cfg.channel.eta) + "," +
                     num(r.cfg.channel.eps) + "," + num(r.cfg.channel.eps_th) + "," + num(r.cfg.channel.beta) + "," +
                     num(k));
  });

  // max-noise ----------------------------------------------------------------
  KeyRateArgs mn;
  auto* c_mn = app.add_subcommand("max-noise", "largest excess noise with a positive key rate");
  add_keyrate_options(c_mn, mn);
  c_mn->callback([&] {
    auto r = resolve(mn);
    const double e = max_tolerable_noise(r.cfg.channel, r.constellation, r.opt);
    print({{"n_mean", r.cfg.channel.n_mean}, {"max_tolerable_noise_snu", e}, {"model", to_string(r.cfg.model)},
           {"channel", to_json(r.cfg.channel)}});
    if (!mn.csv.empty())
      append_csv(mn.csv, "n_mean,T,eta,eps_th,beta,max_tolerable_noise",
                 num(r.cfg.channel.n_mean) + "," + num(r.cfg.channel.T) + "," + num(r.cfg.channel.eta) + "," +
                     num(r.cfg.channel.eps_th) + "," + num(r.cfg.channel.beta) + "," + num(e));
  });

  // watchdog -----------------------------------------------------------------
  std::string wd_trace, wd_cal;
  auto* c_wd = app.add_subcommand("watchdog", "run both saturation monitors on a stored trace");
  c_wd->add_option("trace", wd_trace, "binary trace file")->required()->check(CLI::ExistingFile);
  c_wd->add_option("--calibration", wd_cal, "calibration JSON");
  c_wd->callback([&] {
    const Calibration cal = calibration_from(wd_cal);
    TraceHeader hdr;
    const WaveformPair p = read_trace(wd_trace, &hdr);
    DspConfig d = cal.dsp;
    d.sample_rate = p.sample_rate;
    const auto cp = process_pair(p, d, cal.watchdog.full_scale_code);
    const WatchdogReport r = watchdog_from_chain(cp, d.signal_band(), cal.watchdog);
    print({{"trace", wd_trace}, {"mode", to_string(hdr.mode)}, {"samples", p.size()},
           {"out_of_band_power_db", r.out_of_band_power_db}, {"clip_fraction", r.clip_fraction},
           {"oob_alarm", r.oob_alarm}, {"clip_alarm", r.clip_alarm}, {"alarm", r.any()}});
  });

  // design-blindwave ---------------------------------------------------------
  double bw_freq = 1e7, bw_rate = 3.2e9, bw_duty = 0.5;
  std::vector<double> bw_band{2.1e8, 7.5e8};
  bool bw_plain = false;
  std::string bw_csv, bw_bin;
  auto* c_bw = app.add_subcommand("design-blindwave", "synthesize the square and notched blinding envelopes");
  c_bw->add_option("--freq", bw_freq, "square-wave frequency [Hz]");
  c_bw->add_option("--band", bw_band, "notch band edges [Hz]")->expected(2);
  c_bw->add_option("--duty", bw_duty, "duty cycle");
  c_bw->add_option("--rate", bw_rate, "sample rate [Hz]");
  c_bw->add_flag("--plain", bw_plain, "skip the notch");
  c_bw->add_option("--csv", bw_csv, "write the envelope as CSV");
  c_bw->add_option("--bin", bw_bin, "write the envelope in the binary envelope format");
  c_bw->callback([&] {
    const Band band{bw_band.at(0), bw_band.at(1)};
    const BlindWaveform sq = square_wave(bw_freq, bw_rate, bw_duty);
    const BlindWaveform w = bw_plain ? sq : notch_filter(sq, band);
    double max_im = 0;
    for (const auto& e : w.envelope) max_im = std::max(max_im, std::abs(e.imag()));
    print({{"samples_per_period", w.envelope.size()}, {"period_s", w.period_s}, {"notched", !bw_plain},
           {"band_hz", {band.lo, band.hi}}, {"suppression_db", verify_notch(w, sq, band)},
           {"max_abs_imag", max_im}});
    if (!bw_csv.empty()) write_envelope_csv(w, bw_csv);
    if (!bw_bin.empty()) write_envelope_binary(w, bw_bin);
  });

  // simulate -----------------------------------------------------------------
  std::string sim_mode = "shot", sim_out, sim_cal;
  double sim_duration = 0;
  std::size_t sim_samples = std::size_t{1} << 20;
  std::uint64_t sim_seed = 1;
  std::optional<double> sim_ase, sim_blind;
  auto* c_sim = app.add_subcommand("simulate", "generate one acquisition and store it as a binary trace");
  c_sim->add_option("--mode", sim_mode, "thermal, shot or noisy");
  c_sim->add_option("--samples", sim_samples, "samples per arm");
  c_sim->add_option("--duration", sim_duration, "duration [s]; overrides --samples");
  c_sim->add_option("--seed", sim_seed, "generator seed");
  c_sim->add_option("--ase-dbm", sim_ase, "ASE power [dBm]");
  c_sim->add_option("--blind-dbm", sim_blind, "average blinding power [dBm]");
  c_sim->add_option("--calibration", sim_cal, "calibration JSON");
  c_sim->add_option("--out", sim_out, "output trace file")->required();
  c_sim->callback([&] {
    const Calibration cal = calibration_from(sim_cal);
    const Mode m = parse_mode(sim_mode);
    const AttackSourceConfig atk = cal.attack_for(sim_ase, sim_blind);
    const WaveformPair p = sim_duration > 0 ? simulate_acquisition(m, cal.detector, cal.adc, atk, sim_duration, sim_seed)
                                            : simulate_samples(m, cal.detector, cal.adc, atk, sim_samples, sim_seed);
    write_trace(sim_out, p, {cal.adc.sample_rate, m, sim_seed, config_hash(cal, atk)});
    print({{"out", sim_out}, {"mode", sim_mode}, {"samples", p.size()}, {"seed", sim_seed}});
  });

  // estimate -----------------------------------------------------------------
  std::string est_t, est_s, est_n, est_cal;
  auto* c_est = app.add_subcommand("estimate", "SNU calibration and excess-noise estimate from three traces");
  c_est->add_option("--thermal", est_t, "thermal trace")->required()->check(CLI::ExistingFile);
  c_est->add_option("--shot", est_s, "shot trace")->required()->check(CLI::ExistingFile);
  c_est->add_option("--noisy", est_n, "noisy trace")->required()->check(CLI::ExistingFile);
  c_est->add_option("--calibration", est_cal, "calibration JSON");
  c_est->callback([&] {
    const Calibration cal = calibration_from(est_cal);
    const VarianceReport r = calibrate_and_estimate(read_trace(est_t), read_trace(est_s), read_trace(est_n), cal.dsp,
                                                    cal.estimator, cal.combine);
    print({{"var_thermal", r.var_thermal}, {"var_shot", r.var_shot}, {"var_noisy", r.var_noisy}, {"snu", r.snu},
           {"eps_th", r.eps_th}, {"sigma2", r.sigma2}, {"eps_est", r.eps_est}});
  });

  // sweep / characterize-noise / threshold ----------------------------------
  std::string sw_config, sw_out = "report", sw_cal;
  bool sw_quiet = false;
  auto progress = [&](const SweepRecord& r) {
    if (!sw_quiet)
      std::fprintf(stderr, "noise %7.2f dBm  blind %9.5f dBm  eps %8.4f  clip %.4f%s\n", r.noise_power_dbm,
                   r.blind_power_dbm, r.eps_est, r.clip_fraction, r.ok() ? "" : "  (failed)");
  };
  auto char_progress = [&](int rep, double p, double e) {
    if (!sw_quiet) std::fprintf(stderr, "repeat %d  ASE %7.2f dBm  eps %.4f\n", rep + 1, p, e);
  };
  auto load_sweep = [&] { return sw_config.empty() ? SweepConfig{} : load_sweep_config(sw_config); };

  auto* c_sw = app.add_subcommand("sweep", "blinding sweep plus noise characterization, with CSV and SVG report");
  c_sw->add_option("--config", sw_config, "sweep JSON")->required()->check(CLI::ExistingFile);
  c_sw->add_option("--out", sw_out, "report directory")->required();
  c_sw->add_option("--calibration", sw_cal, "calibration JSON");
  c_sw->add_flag("--quiet", sw_quiet, "no progress output");
  c_sw->callback([&] {
    const Calibration cal = calibration_from(sw_cal);
    const SweepConfig sc = load_sweep();
    const SweepResult res = run_blinding_sweep(sc, cal, progress);
    const auto curve = run_noise_characterization(sc.characterization.powers_dbm, sc.characterization.repeats, cal,
                                                  sc.characterization.samples, sc.seed, char_progress);
    const ReportFiles f = emit_report(res.records, curve, sw_out, sc.threshold_snu);
    json thr = json::array();
    for (double n : sc.noise_powers_dbm) {
      const auto h = find_hiding_threshold(res.records, n, sc.threshold_snu);
      json t{{"noise_power_dbm", n}};
      for (const auto& r : res.references)
        if (r.noise_power_dbm == n) t["eps_no_blinding"] = r.eps_est;
      if (h) t.update({{"threshold_dbm", h->power_dbm}, {"bracket_dbm", {h->bracket_lo, h->bracket_hi}}});
      else t["threshold_dbm"] = nullptr;
      thr.push_back(t);
    }
    print({{"records", res.records.size()}, {"thresholds", thr}, {"sweep_csv", f.sweep_csv.string()},
           {"sweep_plot", f.sweep_plot.string()}, {"characterization_plot", f.characterization_plot.string()}});
  });

  auto* c_ch = app.add_subcommand("characterize-noise", "ASE power to estimated excess noise curve");
  c_ch->add_option("--config", sw_config, "sweep JSON (characterization block)")->check(CLI::ExistingFile);
  c_ch->add_option("--calibration", sw_cal, "calibration JSON");
  c_ch->add_flag("--quiet", sw_quiet, "no progress output");
  c_ch->callback([&] {
    const Calibration cal = calibration_from(sw_cal);
    const SweepConfig sc = load_sweep();
    const auto curve = run_noise_characterization(sc.characterization.powers_dbm, sc.characterization.repeats, cal,
                                                  sc.characterization.samples, sc.seed, char_progress);
    json out = json::array();
    for (const auto& p : curve)
      out.push_back({{"power_dbm", p.power_dbm}, {"eps_mean", p.mean()}, {"spread", p.spread()}, {"eps", p.eps}});
    print(out);
  });

  double th_noise = -27.0;
  std::string th_records;
  auto* c_th = app.add_subcommand("threshold", "hiding threshold for one noise level");
  c_th->add_option("--noise-dbm", th_noise, "ASE power [dBm]")->required();
  c_th->add_option("--config", sw_config, "sweep JSON")->check(CLI::ExistingFile);
  c_th->add_option("--records", th_records, "reuse a sweep.csv instead of simulating")->check(CLI::ExistingFile);
  c_th->add_option("--calibration", sw_cal, "calibration JSON");
  c_th->add_flag("--quiet", sw_quiet, "no progress output");
  c_th->callback([&] {
    SweepConfig sc = load_sweep();
    std::vector<SweepRecord> recs;
    if (!th_records.empty()) {
      std::ifstream f(th_records);
      std::string line;
      while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("noise_power_dbm", 0) == 0) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> c;
        while (std::getline(ss, cell, ',')) c.push_back(cell);
        if (c.size() < 8) fail(ErrorKind::io, "malformed sweep row: " + line);
        SweepRecord r;
        r.noise_power_dbm = std::stod(c[0]);
        r.blind_power_dbm = std::stod(c[1]);
        r.eps_est = std::stod(c[4]);
        if (c.size() > 10 && !c[10].empty()) r.error = c[10];
        recs.push_back(r);
      }
    } else {
      sc.noise_powers_dbm = {th_noise};
      recs = run_blinding_sweep(sc, calibration_from(sw_cal), progress).records;
    }
    const auto h = find_hiding_threshold(recs, th_noise, sc.threshold_snu);
    if (h)
      print({{"noise_power_dbm", th_noise}, {"threshold_snu", sc.threshold_snu}, {"threshold_dbm", h->power_dbm},
             {"bracket_dbm", {h->bracket_lo, h->bracket_hi}}, {"at_grid_minimum", h->at_grid_minimum}});
    else
      print({{"noise_power_dbm", th_noise}, {"threshold_snu", sc.threshold_snu}, {"threshold_dbm", nullptr},
             {"note", "no threshold: the estimate never falls below the threshold on this grid"}});
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
