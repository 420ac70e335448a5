#pragma once

#include <cmath>
#include <complex>
#include <numbers>

namespace kerrmech {

using cplx = std::complex<double>;

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;
inline constexpr cplx im{0.0, 1.0};

// CODATA 2018 exact values (SI).
inline constexpr double hbar = 1.054571817e-34;          // J s
inline constexpr double planck_h = 6.62607015e-34;       // J s
inline constexpr double elementary_charge = 1.602176634e-19; // C
inline constexpr double boltzmann_kB = 1.380649e-23;     // J/K
inline constexpr double flux_quantum = planck_h / (2.0 * elementary_charge); // Wb

// All library internals work in angular frequency. Configs and CLI speak Hz
// and convert exactly once at the boundary.
inline constexpr double hz_to_rad(double f) { return two_pi * f; }
inline constexpr double rad_to_hz(double w) { return w / two_pi; }

inline double dbm_to_watt(double p_dbm) { return 1e-3 * std::pow(10.0, p_dbm / 10.0); }
inline double watt_to_dbm(double p_w) { return 10.0 * std::log10(p_w / 1e-3); }

} // namespace kerrmech
