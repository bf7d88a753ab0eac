#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "cvblind/config.hpp"
#include "cvblind/harness.hpp"
#include "cvblind/rxsim.hpp"

using namespace cvblind;

namespace {

const Calibration& cal() {
  static const Calibration c = load_calibration();
  return c;
}

double mean(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double var(const std::vector<double>& x) {
  const double m = mean(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

// Amplitude of the component at frequency f (least-squares projection on whole periods).
double tone_amplitude(std::span<const double> x, double f, double rate) {
  cplx acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * std::polar(1.0, -2 * kPi * f * i / rate);
  return 2 * std::abs(acc) / static_cast<double>(x.size());
}

}  // namespace

TEST(Saturate, LinearRegionAndUpperBranch) {
  EXPECT_EQ(saturate(0, -1, 1), 0);
  EXPECT_EQ(saturate(5, -1, 1), 1);
  EXPECT_EQ(saturate(-5, -1, 1), -1);
}

TEST(Saturate, Idempotent) {
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(g);
    EXPECT_EQ(saturate(saturate(v, -2, 3), -2, 3), saturate(v, -2, 3));
  }
}

TEST(Saturate, InvalidLimits) {
  try {
    saturate(0, 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_limits);
  }
}

TEST(AseNoiseField, SwitchClosedIsZero) {
  const auto e = ase_noise_field(-std::numeric_limits<double>::infinity(), 1e9, 1024, 1);
  for (const auto& x : e) EXPECT_EQ(x, cplx(0, 0));
}

TEST(AseNoiseField, PowerMatchesConfiguredValue) {
  const std::size_t n = std::size_t{1} << 20;
  const auto e = ase_noise_field(-27.0, 1.0e9, n, 5);
  double p = 0;
  for (const auto& x : e) p += std::norm(x);
  EXPECT_NEAR(p / n, dbm_to_watts(-27.0), 0.01 * dbm_to_watts(-27.0));
}

TEST(AseNoiseField, BandLimitedAndCircular) {
  const std::size_t n = 1 << 16;
  const auto e = ase_noise_field(-20.0, 0.8e9, n, 9);
  const auto s = fft(e);
  double out = 0, tot = 0;
  for (std::size_t k = 0; k < n; ++k) {
    tot += std::norm(s[k]);
    if (std::abs(bin_frequency(k, n, 3.2e9)) > 0.4e9) out += std::norm(s[k]);
  }
  EXPECT_LT(out / tot, 1e-20);
  double re = 0, im = 0;
  for (const auto& x : e) re += x.real() * x.real(), im += x.imag() * x.imag();
  EXPECT_NEAR(re / im, 1.0, 0.03);
}

TEST(AseNoiseField, DifferentSeedsUncorrelated) {
  const std::size_t n = 1 << 18;
  const auto a = ase_noise_field(-20.0, 3.2e9, n, 1);
  const auto b = ase_noise_field(-20.0, 3.2e9, n, 2);
  cplx c = 0;
  for (std::size_t i = 0; i < n; ++i) c += a[i] * std::conj(b[i]);
  const double p = dbm_to_watts(-20.0);
  EXPECT_LT(std::abs(c / double(n)), 3 * p / std::sqrt(double(n)));
}

TEST(AcCouple, ConstantDecays) {
  const double rate = 3.2e9, fc = 3e5;
  HighPass hp(fc, rate);
  const double tau = hp.time_constant_samples();
  std::vector<double> x(static_cast<std::size_t>(5 * tau) + 10, 1.0);
  const auto y = ac_couple(x, fc, rate);
  EXPECT_LT(std::abs(y.back()), 0.01);
  EXPECT_NEAR(tau, rate / (2 * kPi * fc), 0.01 * tau);
}

TEST(AcCouple, TenMegahertzPreserved) {
  const double rate = 3.2e9;
  std::vector<double> x(3200 * 400);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2 * kPi * 1e7 * i / rate);
  const auto y = ac_couple(x, 3e5, rate);
  const std::span<const double> tail(y.data() + 3200 * 300, 3200 * 100);
  EXPECT_NEAR(tone_amplitude(tail, 1e7, rate), 1.0, 1e-3);
}

TEST(AcCouple, ThirtyKilohertzAttenuated) {
  const double rate = 3.2e9, f = 3e4;
  const std::size_t per = static_cast<std::size_t>(rate / f);
  std::vector<double> x(per * 12);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2 * kPi * f * i / rate);
  const auto y = ac_couple(x, 3e5, rate);
  const std::span<const double> tail(y.data() + per * 8, per * 4);
  EXPECT_LE(db10(std::pow(tone_amplitude(tail, f, rate), 2)), -18.0);
}

TEST(InjectBlinding, BalancedSplitCancels) {
  AttackSourceConfig a = cal().attack_for(std::nullopt, -10.0);
  a.bs_imbalance_r = 0.5;
  for (int arm = 0; arm < 2; ++arm)
    for (double v : inject_blinding(a, cal().detector, arm, 0, 640)) EXPECT_EQ(v, 0.0);
}

TEST(InjectBlinding, ArmsSplitByPolarizationAndOppositeSign) {
  AttackSourceConfig a = cal().attack_for(std::nullopt, -13.0);
  a.pol_mismatch_phi = 0.2;
  const auto h = inject_blinding(a, cal().detector, 0, 0, 320);
  const auto v = inject_blinding(a, cal().detector, 1, 0, 320);
  const auto fr = blinding_arm_fraction(0.2);
  EXPECT_NEAR(fr[0] + fr[1], 1.0, 1e-15);
  EXPECT_NEAR(h[0] / -v[0], fr[0] / fr[1], 1e-12);
  // Average-power convention: the period mean of the injected voltage is gain * P.
  const double expect = blinding_gain(cal().detector, a) * dbm_to_watts(-13.0) * fr[0];
  EXPECT_NEAR(mean(h), expect, 1e-12 * std::abs(expect));
}

TEST(InjectBlinding, UnmodulatedEnvelopeRemovedByAcCoupling) {
  AttackSourceConfig a = cal().attack_for(std::nullopt, -13.0);
  a.blind_waveform = std::make_shared<BlindWaveform>(square_wave(1e7, 3.2e9, 1.0));
  const std::size_t n = 200000;
  const auto x = inject_blinding(a, cal().detector, 0, 0, n);
  const auto y = ac_couple(x, cal().detector.ac_cutoff);
  EXPECT_LT(std::abs(y.back()), 0.01 * std::abs(x.back()));
}

TEST(InjectBlinding, SquareFundamentalSurvivesAcCoupling) {
  const AttackSourceConfig a = cal().attack_for(std::nullopt, -13.0);
  const std::size_t per = 320, n = per * 4000;
  const auto x = inject_blinding(a, cal().detector, 0, 0, n);
  const auto y = ac_couple(x, cal().detector.ac_cutoff);
  const std::span<const double> xs(x.data() + n - per * 500, per * 500), ys(y.data() + n - per * 500, per * 500);
  EXPECT_GE(tone_amplitude(ys, 1e7, 3.2e9) / tone_amplitude(xs, 1e7, 3.2e9), 0.95);
}

TEST(InjectBlinding, CalibratedMinus13DbmAlternatesFullScale) {
  const AttackSourceConfig a = cal().attack_for(-27.0, -13.0);
  const auto p = simulate_samples(Mode::noisy, cal().detector, cal().adc, a, 1 << 16, 3);
  std::size_t pos = 0, neg = 0, flips = 0;
  int last = 0;
  for (double c : p.h) {
    const int s = c >= 2048 ? 1 : c <= -2048 ? -1 : 0;
    pos += s == 1;
    neg += s == -1;
    if (s != 0 && last != 0 && s != last) ++flips;
    if (s != 0) last = s;
  }
  const double n = static_cast<double>(p.size());
  EXPECT_GT((pos + neg) / n, 0.99);
  EXPECT_NEAR(pos / n, 0.5, 0.02);
  // One transition per half period of the 10 MHz envelope.
  EXPECT_NEAR(static_cast<double>(flips), 2.0 * n / 320, 2.0);
}

TEST(AdcQuantize, ZeroFullScaleAndStaircase) {
  const AdcConfig adc;
  EXPECT_EQ(adc_code(0, adc, 0.4), 0);
  EXPECT_EQ(adc_code(0.4, adc, 0.4), 2048);
  EXPECT_EQ(adc_code(3.0, adc, 0.4), 2048);
  EXPECT_EQ(adc_code(-3.0, adc, 0.4), -2048);
  std::vector<double> ramp(200001);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = -0.5 + 1e-6 * double(i) * 5;
  const auto c = adc_quantize(ramp, adc, 0.4);
  for (std::size_t i = 1; i < c.size(); ++i) {
    EXPECT_GE(c[i], c[i - 1]);
    EXPECT_LE(c[i] - c[i - 1], 1.0);
  }
  EXPECT_THROW(adc_quantize(ramp, adc, 0.0), Error);
}

TEST(SimulateAcquisition, ThermalBelowShot) {
  const auto a = cal().attack_for(std::nullopt, std::nullopt);
  for (double lo : {1e-5, 7.23e-5}) {
    DetectorChainConfig d = cal().detector;
    d.lo_power = lo;
    const auto t = simulate_samples(Mode::thermal, d, cal().adc, a, 1 << 17, 1);
    const auto s = simulate_samples(Mode::shot, d, cal().adc, a, 1 << 17, 2);
    EXPECT_LT(var(t.h), var(s.h));
    EXPECT_LT(var(t.v), var(s.v));
  }
}

TEST(SimulateAcquisition, ShotVarianceLinearInLoPower) {
  const auto a = cal().attack_for(std::nullopt, std::nullopt);
  DetectorChainConfig d = cal().detector;
  d.gain = 1.2e4;  // keep the 10x range well inside full scale
  std::vector<double> lo{1e-4, 2e-4, 4e-4, 7e-4, 1e-3}, dv;
  const double vt = var(simulate_samples(Mode::thermal, d, cal().adc, a, 1 << 18, 10).h);
  for (std::size_t i = 0; i < lo.size(); ++i) {
    d.lo_power = lo[i];
    dv.push_back(var(simulate_samples(Mode::shot, d, cal().adc, a, 1 << 18, 20 + i).h) - vt);
    EXPECT_GT(dv.back(), 0);
  }
  EXPECT_NEAR((dv.back() / dv.front()) / 10.0, 1.0, 0.02);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lo.size(); ++i) mx += lo[i], my += dv[i];
  mx /= lo.size(), my /= lo.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < lo.size(); ++i) {
    sxy += (lo[i] - mx) * (dv[i] - my);
    sxx += (lo[i] - mx) * (lo[i] - mx);
    syy += (dv[i] - my) * (dv[i] - my);
  }
  EXPECT_GT(sxy * sxy / (sxx * syy), 0.999);
}

TEST(SimulateAcquisition, AseAtMinus27DbmGivesCalibratedExcessNoise) {
  const auto dark = cal().attack_for(std::nullopt, std::nullopt);
  const auto ase = cal().attack_for(-27.0, std::nullopt);
  const std::size_t n = std::size_t{1} << 22;
  const double vt = measure(Mode::thermal, cal(), dark, n, 101).variance;
  const double vs = measure(Mode::shot, cal(), dark, n, 102).variance;
  const double vn = measure(Mode::noisy, cal(), ase, n, 103).variance;
  EXPECT_NEAR(estimate_from_variances(vt, vs, vn, cal().estimator).eps_est, 2.49, 0.05);
}

TEST(SimulateAcquisition, TooShortAndInvalidMode) {
  const auto a = cal().attack_for(std::nullopt, std::nullopt);
  try {
    simulate_acquisition(Mode::shot, cal().detector, cal().adc, a, 1e-6, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::trace_too_short);
  }
  try {
    parse_mode("dark");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_mode);
  }
  const auto p = simulate_acquisition(Mode::shot, cal().detector, cal().adc, a, 25e-6, 1);
  EXPECT_EQ(p.size(), 80000u);
}

TEST(Invariants, CodesBoundedUnderHeavyBlinding) {
  const auto a = cal().attack_for(-27.0, -10.0);
  const auto p = simulate_samples(Mode::noisy, cal().detector, cal().adc, a, 1 << 16, 4);
  EXPECT_NO_THROW(p.validate(2048));
  for (double c : p.h) EXPECT_EQ(c, std::round(c));
}

TEST(Invariants, DeterministicGivenSeed) {
  const auto a = cal().attack_for(-29.9, -13.5);
  const auto p = simulate_samples(Mode::noisy, cal().detector, cal().adc, a, 1 << 16, 77);
  const auto q = simulate_samples(Mode::noisy, cal().detector, cal().adc, a, 1 << 16, 77);
  const auto r = simulate_samples(Mode::noisy, cal().detector, cal().adc, a, 1 << 16, 78);
  EXPECT_EQ(p.h, q.h);
  EXPECT_EQ(p.v, q.v);
  EXPECT_NE(p.h, r.h);
}

TEST(Invariants, StreamingMatchesOneShot) {
  const auto a = cal().attack_for(-29.9, -13.5);
  const auto p = simulate_samples(Mode::noisy, cal().detector, cal().adc, a, 1 << 16, 5);
  AcquisitionStream s(Mode::noisy, cal().detector, cal().adc, a, 1 << 16, 5);
  std::vector<double> h(1000), v(1000), hh, vv;
  while (s.remaining()) {
    const auto k = s.next(h, v);
    hh.insert(hh.end(), h.begin(), h.begin() + k);
    vv.insert(vv.end(), v.begin(), v.begin() + k);
  }
  EXPECT_EQ(hh, p.h);
  EXPECT_EQ(vv, p.v);
}

// The +-0.01 SNU bound is about two standard deviations of a single estimate
// at 2^22 samples, so the single-run check uses the harness default seed and
// the bias is checked separately on the mean of several independent runs.
TEST(Invariants, CleanChainEstimatesZeroExcessNoise) {
  const auto a = cal().attack_for(std::nullopt, std::nullopt);
  const std::size_t n = std::size_t{1} << 22;
  const std::uint64_t master = SweepConfig{}.seed;
  auto run = [&](std::uint64_t group) {
    const double vt = measure(Mode::thermal, cal(), a, n, acquisition_seed(master, group, Mode::thermal)).variance;
    const double vs = measure(Mode::shot, cal(), a, n, acquisition_seed(master, group, Mode::shot)).variance;
    const double vn = measure(Mode::noisy, cal(), a, n, acquisition_seed(master, group, Mode::noisy)).variance;
    return estimate_from_variances(vt, vs, vn, cal().estimator).eps_est;
  };
  EXPECT_NEAR(run(0), 0.0, 0.01);
  double s = 0;
  const int k = 6;
  for (int g = 1; g <= k; ++g) s += run(g);
  EXPECT_NEAR(s / k, 0.0, 0.01);
}

TEST(TraceFormat, RoundTripAndHeader) {
  const auto a = cal().attack_for(-27.0, std::nullopt);
  const auto p = simulate_samples(Mode::noisy, cal().detector, cal().adc, a, 1 << 16, 9);
  const auto path = std::filesystem::temp_directory_path() / "cvblind_trace_test.bin";
  write_trace(path.string(), p, {3.2e9, Mode::noisy, 9, 1234});
  TraceHeader h;
  const auto q = read_trace(path.string(), &h);
  EXPECT_EQ(q.h, p.h);
  EXPECT_EQ(q.v, p.v);
  EXPECT_EQ(h.mode, Mode::noisy);
  EXPECT_EQ(h.seed, 9u);
  EXPECT_EQ(h.config_hash, 1234u);
  EXPECT_EQ(h.sample_rate, 3.2e9);
  std::filesystem::remove(path);
  EXPECT_THROW(read_trace(path.string()), Error);
}

TEST(LowPass, UnitDcGainAndBandwidth) {
  const auto taps = analog_lowpass_taps(1.6e9, 4, 3.2e9, cal().detector.lowpass_taps);
  double dc = 0;
  for (double t : taps) dc += t;
  EXPECT_NEAR(dc, 1.0, 2.5e-3);  // 24-tap truncation of the analog response
  // Passband magnitude matches the analog prototype at 500 MHz.
  cplx h = 0;
  for (std::size_t i = 0; i < taps.size(); ++i) h += taps[i] * std::polar(1.0, -2 * kPi * 0.5e9 * i / 3.2e9);
  EXPECT_NEAR(std::abs(h), std::abs(butterworth_response(0.5e9, 1.6e9, 4)), 0.01);
}
