#pragma once

#include <cmath>
#include <limits>

namespace cvblind {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kPlanck = 6.62607015e-34;
inline constexpr double kLightSpeed = 299792458.0;
inline constexpr double kElectronCharge = 1.602176634e-19;

// -inf dBm (a closed switch) maps to exactly 0 W.
inline double dbm_to_watts(double dbm) {
  if (std::isinf(dbm) && dbm < 0) return 0.0;
  return 1e-3 * std::pow(10.0, dbm / 10.0);
}

inline double watts_to_dbm(double w) {
  if (w <= 0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(w / 1e-3);
}

inline double photon_energy(double wavelength_m) { return kPlanck * kLightSpeed / wavelength_m; }

// A/W for a photodiode of quantum efficiency eta.
inline double responsivity(double eta, double wavelength_m) {
  return eta * kElectronCharge / photon_energy(wavelength_m);
}

inline double db10(double ratio) { return 10.0 * std::log10(ratio); }

}  // namespace cvblind
