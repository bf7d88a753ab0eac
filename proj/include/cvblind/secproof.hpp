#pragma once

// Asymptotic key rate for discrete-modulated CV-QKD with heterodyne detection
// and reverse reconciliation: K = beta * I_BA - chi_BE.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>

#include "cvblind/constellation.hpp"
#include "cvblind/error.hpp"

namespace cvblind {

struct ChannelParams {
  double T = 0.5;
  double eta = 0.9;
  double eps = 0.0;
  double eps_th = 0.0;
  double n_mean = 0.5;
  double beta = 0.95;
  bool eps_is_estimate = false;  // estimates may be negative

  void validate() const {
    auto bad = [](const char* what) { fail(ErrorKind::invalid_argument, what); };
    if (!(T >= 0 && T <= 1)) bad("T must lie in [0, 1]");
    if (!(eta > 0 && eta <= 1)) bad("eta must lie in (0, 1]");
    if (!std::isfinite(eps) || (!eps_is_estimate && eps < 0)) bad("eps must be finite and >= 0");
    if (!(eps_th >= 0) || !std::isfinite(eps_th)) bad("eps_th must be >= 0");
    if (!(n_mean >= 0) || !std::isfinite(n_mean)) bad("n_mean must be >= 0");
    if (!(beta > 0 && beta <= 1)) bad("beta must lie in (0, 1]");
  }
};

// How Bob's own detector inefficiency and electronic noise enter chi_BE.
//   channel_only:     chi from the two-mode channel covariance alone.
//   trusted_detector: eta and eps_th modelled as a beam splitter fed by one arm
//                     of a thermal EPR pair held by neither party.
enum class NoiseModel { channel_only, trusted_detector };

struct TwoModeCovariance {
  double a = 1, b = 1, c = 0;

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d g = Eigen::Matrix4d::Zero();
    g(0, 0) = g(1, 1) = a;
    g(2, 2) = g(3, 3) = b;
    g(0, 2) = g(2, 0) = c;
    g(1, 3) = g(3, 1) = -c;
    return g;
  }
};

// g(x) = (x+1)log2(x+1) - x log2 x, with g(0) = 0. Round-off below zero is absorbed.
inline double entropy_g(double x) {
  if (x < -1e-9) fail(ErrorKind::unphysical_state, "entropy argument below zero");
  if (x <= 0) return 0.0;
  return (x + 1) * std::log2(x + 1) - x * std::log2(x);
}

inline double mutual_information(const ChannelParams& p) {
  p.validate();
  return std::log2(1 + 2 * p.T * p.eta * p.n_mean / (2 + p.T * p.eta * p.eps + 2 * p.eps_th));
}

inline std::array<double, 2> symplectic_eigenvalues(const TwoModeCovariance& m) {
  const double delta = m.a * m.a + m.b * m.b - 2 * m.c * m.c;
  const double d = m.a * m.b - m.c * m.c;
  double disc = delta * delta - 4 * d * d;
  if (disc < -1e-9) fail(ErrorKind::unphysical_state, "negative symplectic discriminant");
  disc = std::max(0.0, disc);
  const double r = std::sqrt(disc);
  const double lo = (delta - r) / 2;
  if (lo < 0) fail(ErrorKind::unphysical_state, "negative symplectic eigenvalue squared");
  return {std::sqrt((delta + r) / 2), std::sqrt(lo)};
}

// Symplectic spectrum of an arbitrary 2n x 2n covariance (xpxp ordering) from
// the moduli of the eigenvalues of i*Omega*gamma, sorted descending.
inline Eigen::VectorXd symplectic_spectrum(const Eigen::MatrixXd& gamma) {
  const Eigen::Index n = gamma.rows() / 2;
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  for (Eigen::Index k = 0; k < n; ++k) {
    omega(2 * k, 2 * k + 1) = 1;
    omega(2 * k + 1, 2 * k) = -1;
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(omega * gamma, false);
  if (es.info() != Eigen::Success) fail(ErrorKind::unphysical_state, "symplectic eigensolver failed");
  Eigen::VectorXd mods = es.eigenvalues().cwiseAbs();
  std::sort(mods.data(), mods.data() + mods.size(), std::greater<double>());
  Eigen::VectorXd out(n);
  for (Eigen::Index k = 0; k < n; ++k) out(k) = 0.5 * (mods(2 * k) + mods(2 * k + 1));
  return out;
}

inline TwoModeCovariance covariance_matrix(double n_mean, double T, double eps, double Z) {
  if (!(T >= 0 && T <= 1)) fail(ErrorKind::invalid_argument, "T must lie in [0, 1]");
  if (!std::isfinite(Z) || !std::isfinite(eps) || !(n_mean >= 0))
    fail(ErrorKind::invalid_argument, "non-finite covariance input");
  TwoModeCovariance m;
  m.a = 2 * n_mean + 1;
  m.b = T * m.a + 1 - T + T * eps;
  m.c = std::sqrt(T) * Z;
  const auto nu = symplectic_eigenvalues(m);
  if (nu[1] < 1 - 1e-9) fail(ErrorKind::unphysical_state, "symplectic eigenvalue below 1");
  return m;
}

namespace detail {

inline double entropy_sum(const Eigen::VectorXd& nu) {
  double s = 0;
  for (Eigen::Index i = 0; i < nu.size(); ++i) s += entropy_g((nu(i) - 1) / 2);
  return s;
}

inline double holevo_channel_only(const TwoModeCovariance& m) {
  const auto nu = symplectic_eigenvalues(m);
  const double nu3 = m.a - m.c * m.c / (m.b + 1);
  return entropy_g((nu[0] - 1) / 2) + entropy_g((nu[1] - 1) / 2) - entropy_g((nu3 - 1) / 2);
}

// Modes A, B, F, G. B passes a beam splitter (transmission eta) with F, one half
// of an EPR pair of variance v; Bob heterodynes the output B1.
inline double holevo_trusted(const TwoModeCovariance& m, double eta, double eps_th) {
  if (eta >= 1.0) {
    if (eps_th > 0) fail(ErrorKind::invalid_argument, "trusted electronic noise needs eta < 1");
    return holevo_channel_only(m);
  }
  // Chosen so the heterodyne noise of B1 matches 2 + 2 eps_th in the I_BA denominator.
  const double v = 1 + 2 * eps_th / (1 - eta);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(8, 8);
  auto put2 = [&](int r, int c, double d0, double d1) {
    g(r, c) = d0;
    g(r + 1, c + 1) = d1;
  };
  put2(0, 0, m.a, m.a);
  put2(2, 2, m.b, m.b);
  put2(0, 2, m.c, -m.c);
  put2(2, 0, m.c, -m.c);
  const double cc = std::sqrt(v * v - 1);
  put2(4, 4, v, v);
  put2(6, 6, v, v);
  put2(4, 6, cc, -cc);
  put2(6, 4, cc, -cc);

  Eigen::MatrixXd s = Eigen::MatrixXd::Identity(8, 8);
  const double t = std::sqrt(eta), r = std::sqrt(1 - eta);
  s(2, 2) = s(3, 3) = t;
  s(2, 4) = s(3, 5) = r;
  s(4, 2) = s(5, 3) = -r;
  s(4, 4) = s(5, 5) = t;
  g = s * g * s.transpose();

  const int rest[6] = {0, 1, 4, 5, 6, 7};
  Eigen::MatrixXd gx(6, 6), cxb(6, 2);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) gx(i, j) = g(rest[i], rest[j]);
    cxb(i, 0) = g(rest[i], 2);
    cxb(i, 1) = g(rest[i], 3);
  }
  const Eigen::Matrix2d gb = g.block<2, 2>(2, 2) + Eigen::Matrix2d::Identity();
  const Eigen::MatrixXd cond = gx - cxb * gb.inverse() * cxb.transpose();

  const auto nu = symplectic_eigenvalues(m);
  return entropy_g((nu[0] - 1) / 2) + entropy_g((nu[1] - 1) / 2) - entropy_sum(symplectic_spectrum(cond));
}

}  // namespace detail

inline double holevo_bound(const TwoModeCovariance& m, const ChannelParams& p,
                           NoiseModel model = NoiseModel::trusted_detector) {
  if (model == NoiseModel::channel_only) return detail::holevo_channel_only(m);
  return detail::holevo_trusted(m, p.eta, p.eps_th);
}

struct KeyRateOptions {
  NoiseModel model = NoiseModel::trusted_detector;
  double n_mean_tolerance = 1e-6;
};

// Key rate from precomputed Fock correlations of a constellation with mean photon number n.
inline double key_rate(const ChannelParams& p, double n_mean, const FockCorrelations& f,
                       const KeyRateOptions& opt = {}) {
  p.validate();
  if (std::abs(p.n_mean - n_mean) > opt.n_mean_tolerance * std::max(1.0, n_mean))
    fail(ErrorKind::invalid_argument, "ChannelParams.n_mean does not match the constellation");
  const double z = z_from_correlations(f, std::max(0.0, p.eps));
  const TwoModeCovariance m = covariance_matrix(n_mean, p.T, p.eps, z);
  return p.beta * mutual_information(p) - holevo_bound(m, p, opt.model);
}

inline double key_rate(const ChannelParams& p, const Constellation& c, const KeyRateOptions& opt = {}) {
  return key_rate(p, mean_photon_number(c), compute_correlations(c, adaptive_cutoff(c)), opt);
}

struct RootOptions {
  double lo = 0.0;
  double hi = 2.0;
  double tol = 1e-6;
  double hi_limit = 64.0;  // the bracket is doubled up to this if K(hi) > 0
};

inline double max_tolerable_noise(ChannelParams p, const Constellation& c, const KeyRateOptions& opt = {},
                                  const RootOptions& ro = {}) {
  const double n = mean_photon_number(c);
  const FockCorrelations f = compute_correlations(c, adaptive_cutoff(c));
  p.eps_is_estimate = false;
  auto k = [&](double eps) {
    p.eps = eps;
    return key_rate(p, n, f, opt);
  };
  if (!(k(ro.lo) > 0)) fail(ErrorKind::no_positive_rate, "key rate is not positive at zero excess noise");
  double lo = ro.lo, hi = ro.hi;
  while (k(hi) > 0) {
    lo = hi;
    hi *= 2;
    if (hi > ro.hi_limit) fail(ErrorKind::no_positive_rate, "key rate stays positive over the whole bracket");
  }
  while (hi - lo > ro.tol) {
    const double mid = 0.5 * (lo + hi);
    (k(mid) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace cvblind
