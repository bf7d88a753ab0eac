#pragma once

// Discrete coherent-state constellations and their truncated Fock-space
// density operators.
//
// Amplitude convention: a symbol alpha has mean photon number |alpha|^2 and the
// shot-noise-unit quadrature data built from it has E[|a|^2] = 2<n>.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <vector>

#include "cvblind/error.hpp"

namespace cvblind {

using cplx = std::complex<double>;

struct Constellation {
  std::vector<cplx> points;
  std::vector<double> probs;

  std::size_t size() const { return points.size(); }
};

// Checks the constellation invariants and throws invalid_constellation on failure.
inline void validate(const Constellation& c) {
  if (c.points.empty() || c.points.size() != c.probs.size())
    fail(ErrorKind::invalid_constellation, "points and probs must be non-empty and of equal length");
  double s = 0;
  for (double p : c.probs) {
    if (!(p > 0) || !std::isfinite(p)) fail(ErrorKind::invalid_constellation, "every probability must be positive");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-12) fail(ErrorKind::invalid_constellation, "probabilities do not sum to 1");
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    if (!std::isfinite(c.points[i].real()) || !std::isfinite(c.points[i].imag()))
      fail(ErrorKind::invalid_constellation, "non-finite point");
    for (std::size_t j = i + 1; j < c.points.size(); ++j)
      if (c.points[i] == c.points[j]) fail(ErrorKind::invalid_constellation, "duplicate points");
  }
}

// Normalizes probs in place (Kahan-free: sizes here are small) and validates.
inline Constellation make_constellation(std::vector<cplx> points, std::vector<double> weights) {
  double s = 0;
  for (double w : weights) s += w;
  if (!(s > 0)) fail(ErrorKind::invalid_constellation, "weights must have a positive sum");
  for (double& w : weights) w /= s;
  Constellation c{std::move(points), std::move(weights)};
  validate(c);
  return c;
}

inline double mean_photon_number(const Constellation& c) {
  double n = 0;
  for (std::size_t k = 0; k < c.size(); ++k) n += c.probs[k] * std::norm(c.points[k]);
  return n;
}

// Square QAM on the odd-integer grid, scaled, with Maxwell-Boltzmann weights
// exp(-nu |alpha|^2).
inline Constellation make_ps_qam(int order, double nu, double scale) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(order))));
  if (order < 4 || side * side != order || side % 2 != 0)
    fail(ErrorKind::invalid_constellation, "order must be the square of an even side (4, 16, 64, 256, ...)");
  if (!(nu >= 0) || !std::isfinite(nu)) fail(ErrorKind::invalid_constellation, "nu must be finite and >= 0");
  if (!(scale > 0) || !std::isfinite(scale)) fail(ErrorKind::invalid_constellation, "scale must be positive");
  std::vector<cplx> pts;
  std::vector<double> w;
  pts.reserve(order);
  w.reserve(order);
  for (int i = 0; i < side; ++i) {
    for (int q = 0; q < side; ++q) {
      const cplx a(scale * (2 * i - side + 1), scale * (2 * q - side + 1));
      pts.push_back(a);
      w.push_back(std::exp(-nu * std::norm(a)));
    }
  }
  return make_constellation(std::move(pts), std::move(w));
}

// Bisection on nu for a target mean photon number at fixed scale; tolerance on <n>.
inline double solve_nu(int order, double scale, double target_n, double tol = 1e-9) {
  const double n_uniform = mean_photon_number(make_ps_qam(order, 0.0, scale));
  if (!(target_n > 0) || target_n > n_uniform + tol)
    fail(ErrorKind::invalid_constellation, "target <n> must lie in (0, uniform mean] at this scale");
  if (std::abs(target_n - n_uniform) <= tol) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (mean_photon_number(make_ps_qam(order, hi, scale)) > target_n) {
    hi *= 2;
    if (hi > 1e6) fail(ErrorKind::invalid_constellation, "target <n> too small for this scale");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double n = mean_photon_number(make_ps_qam(order, mid, scale));
    if (std::abs(n - target_n) <= tol) return mid;
    (n > target_n ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline Constellation make_ps_qam_for_mean(int order, double target_n, double scale) {
  return make_ps_qam(order, solve_nu(order, scale, target_n), scale);
}

// Config-level description; either nu or target_n_mean is given.
struct ConstellationSpec {
  int order = 64;
  std::optional<double> nu;
  std::optional<double> target_n_mean;
  double scale = 0.25;
};

inline Constellation build(const ConstellationSpec& s) {
  if (s.nu && s.target_n_mean) fail(ErrorKind::config, "give either nu or target_n_mean, not both");
  if (s.target_n_mean) return make_ps_qam_for_mean(s.order, *s.target_n_mean, s.scale);
  return make_ps_qam(s.order, s.nu.value_or(0.0), s.scale);
}

// ---------------------------------------------------------------------------
// Fock space

struct FockOperator {
  Eigen::MatrixXcd m;
  int dim() const { return static_cast<int>(m.rows()); }
};

inline constexpr double kTailTolerance = 1e-10;

// P(N >= n_cut) for N ~ Poisson(mu), summed directly from the tail to avoid cancellation.
inline double poisson_tail(double mu, int n_cut) {
  if (mu <= 0) return n_cut <= 0 ? 1.0 : 0.0;
  if (n_cut <= 0) return 1.0;
  if (static_cast<double>(n_cut) <= mu) {
    double head = 0, term = std::exp(-mu);
    for (int n = 0; n < n_cut; ++n) {
      head += term;
      term *= mu / (n + 1);
    }
    return std::max(0.0, 1.0 - head);
  }
  double term = std::exp(-mu + n_cut * std::log(mu) - std::lgamma(n_cut + 1.0));
  double tail = 0;
  for (int n = n_cut; term > 1e-300; ++n) {
    tail += term;
    term *= mu / (n + 1);
    if (term < tail * 1e-17) break;
  }
  return tail;
}

inline double truncation_deficit(const Constellation& c, int n_cut) {
  double d = 0;
  for (std::size_t k = 0; k < c.size(); ++k) d += c.probs[k] * poisson_tail(std::norm(c.points[k]), n_cut);
  return d;
}

inline int adaptive_cutoff(const Constellation& c, double tol = kTailTolerance) {
  int n = 1;
  while (truncation_deficit(c, n) >= tol) {
    ++n;
    if (n > 4096) fail(ErrorKind::truncation, "constellation energy too large for Fock truncation");
  }
  return n;
}

// <n|alpha> for n < n_cut.
inline Eigen::VectorXcd coherent_vector(cplx alpha, int n_cut) {
  Eigen::VectorXcd v(n_cut);
  cplx c = std::exp(-0.5 * std::norm(alpha));
  for (int n = 0; n < n_cut; ++n) {
    v(n) = c;
    c *= alpha / std::sqrt(static_cast<double>(n + 1));
  }
  return v;
}

inline Eigen::MatrixXcd annihilation_operator(int n_cut) {
  Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(n_cut, n_cut);
  for (int n = 1; n < n_cut; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  return a;
}

inline FockOperator density_operator(const Constellation& c, int n_cut) {
  if (n_cut < 1) fail(ErrorKind::truncation, "n_cut must be positive");
  if (truncation_deficit(c, n_cut) >= kTailTolerance)
    fail(ErrorKind::truncation, "n_cut too small for the 1e-10 tail tolerance");
  Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(n_cut, n_cut);
  for (std::size_t k = 0; k < c.size(); ++k) {
    const Eigen::VectorXcd v = coherent_vector(c.points[k], n_cut);
    rho.noalias() += c.probs[k] * (v * v.adjoint());
  }
  return {rho};
}

// Z at zero excess noise and W share one eigendecomposition of rho.
struct FockCorrelations {
  double z0 = 0;  // 2 tr(rho^1/2 a rho^1/2 a^dagger)
  double w = 0;
  int n_cut = 0;
};

inline constexpr double kSupportCutoff = 1e-12;

inline FockCorrelations compute_correlations(const Constellation& c, int n_cut) {
  validate(c);
  const FockOperator rho = density_operator(c, n_cut);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho.m);
  if (es.info() != Eigen::Success) fail(ErrorKind::ill_conditioned_state, "eigendecomposition of rho failed");
  const Eigen::VectorXd lam = es.eigenvalues();
  const Eigen::MatrixXcd& u = es.eigenvectors();
  const double lmax = lam.maxCoeff();
  if (!(lmax > 0)) fail(ErrorKind::ill_conditioned_state, "rho has no positive spectrum");
  const double cut = kSupportCutoff * lmax;

  Eigen::VectorXd sq(n_cut), isq(n_cut);
  for (int i = 0; i < n_cut; ++i) {
    const bool in = lam(i) > cut;
    sq(i) = in ? std::sqrt(lam(i)) : 0.0;
    isq(i) = in ? 1.0 / std::sqrt(lam(i)) : 0.0;
  }

  const Eigen::MatrixXcd a = annihilation_operator(n_cut);
  const Eigen::MatrixXcd m = u.adjoint() * a * u;
  double tr = 0;
  for (int j = 0; j < n_cut; ++j)
    for (int i = 0; i < n_cut; ++i) tr += sq(i) * sq(j) * std::norm(m(i, j));

  // a_rho |alpha> = U S M S^-1 U^dagger |alpha>
  double w = 0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    const Eigen::VectorXcd ck = u.adjoint() * coherent_vector(c.points[k], n_cut);
    const Eigen::VectorXcd y = (isq.array() * ck.array()).matrix();
    const Eigen::VectorXcd x = (sq.array() * (m * y).array()).matrix();
    const double second = x.squaredNorm();
    const cplx first = ck.dot(x);
    w += c.probs[k] * (second - std::norm(first));
  }
  if (!std::isfinite(tr) || !std::isfinite(w)) fail(ErrorKind::ill_conditioned_state, "non-finite correlation");
  return {2.0 * tr, std::max(0.0, w), n_cut};
}

inline double compute_W(const Constellation& c, int n_cut) { return compute_correlations(c, n_cut).w; }
inline double compute_W(const Constellation& c) { return compute_W(c, adaptive_cutoff(c)); }

inline double z_from_correlations(const FockCorrelations& f, double eps) {
  if (!(eps >= 0)) fail(ErrorKind::invalid_argument, "excess noise must be >= 0");
  return f.z0 - std::sqrt(2.0 * eps * f.w);
}

inline double compute_Z(const Constellation& c, int n_cut, double eps) {
  return z_from_correlations(compute_correlations(c, n_cut), eps);
}
inline double compute_Z(const Constellation& c, double eps) { return compute_Z(c, adaptive_cutoff(c), eps); }

inline double gaussian_limit_z(double n_mean) { return 2.0 * std::sqrt(n_mean * n_mean + n_mean); }

}  // namespace cvblind
