#pragma once

// Driven Kerr resonator steady state: the photon-number cubic and its
// branches, the power- and detuning-dependent TLS linewidth, flux-noise
// broadening, the self-consistent operating point and the single-tone
// transmission.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "constants.hpp"

namespace kerrmech {

struct Tone {
  double frequency = 0.0;         // [rad/s]
  double on_feedline_power = 0.0; // [W], referred to the device feedline
  double phase = 0.0;             // [rad]

  // |S|^2 in photons/s.
  double photon_flux() const { return on_feedline_power / (hbar * frequency); }
};

// Internal loss: power-saturable two-level-system bath on top of a constant
// floor, plus optional low-frequency flux-noise broadening.
struct LinewidthModel {
  double kappa0 = 0.0;     // saturated floor [rad/s]
  double kappa1 = 0.0;     // TLS contribution at zero photons [rad/s]
  double n_crit = 1.0;     // TLS saturation photon number
  double gamma2 = 1.0;     // TLS dephasing rate [rad/s]
  double kappa_e = 0.0;    // external linewidth [rad/s]
  double sigma_flux = 0.0; // flux-noise amplitude [Phi_0]

  // kappa_i(n_d, Delta_d). Detuning enters through the TLS lineshape.
  double tls_linewidth(double n_d, double delta_d) const {
    if (kappa1 == 0.0) return kappa0;
    if (n_crit <= 0.0 || gamma2 <= 0.0)
      throw std::invalid_argument("LinewidthModel: n_crit and gamma2 must be > 0");
    const double x = std::max(0.0, n_d) / n_crit;
    const double s = std::sqrt(1.0 + x);
    const double d = delta_d / gamma2;
    const double suppression = (x / s) * (1.0 + s) / (d * d + (1.0 + s) * (1.0 + s));
    return kappa0 + kappa1 * (1.0 - suppression);
  }
};

// Quadrature combination of the intrinsic linewidth with the first-order
// flux-noise dephasing rate |F| sigma_Phi; exact at both limits.
inline double noise_broadened_linewidth(double kappa_i, double responsivity,
                                        double sigma_flux) {
  return std::hypot(kappa_i, std::abs(responsivity) * sigma_flux);
}

struct KerrRoot {
  double photon_number = 0.0;
  bool stable = true;
  int branch = 0; // 0 lower, 1 middle, 2 upper when bistable
};

// Real positive roots of
//   K^2 n^3 - 2 K Delta_d n^2 + (Delta_d^2 + kappa^2/4) n - (kappa_e/2)|S|^2 = 0,
// ascending. With three distinct roots the middle one is dynamically
// unstable. Companion-matrix eigenvalues plus Newton polish.
inline std::vector<KerrRoot> solve_kerr_cubic(double kerr, double delta_d,
                                              double kappa, double kappa_e,
                                              double photon_flux) {
  if (kappa <= 0.0 || kappa_e < 0.0 || photon_flux < 0.0)
    throw std::invalid_argument("solve_kerr_cubic: bad linewidths or photon flux");
  const double drive = 0.5 * kappa_e * photon_flux;
  const double lorentz = delta_d * delta_d + 0.25 * kappa * kappa;
  if (drive == 0.0) return {{0.0, true, 0}};
  if (kerr == 0.0) return {{drive / lorentz, true, 0}};

  // Monic form n^3 + a2 n^2 + a1 n + a0.
  const double k2 = kerr * kerr;
  const double a2 = -2.0 * delta_d / kerr;
  const double a1 = lorentz / k2;
  const double a0 = -drive / k2;

  Eigen::Matrix3d companion = Eigen::Matrix3d::Zero();
  companion(1, 0) = 1.0;
  companion(2, 1) = 1.0;
  companion(0, 2) = -a0;
  companion(1, 2) = -a1;
  companion(2, 2) = -a2;
  const Eigen::Vector3cd ev = companion.eigenvalues();

  auto poly = [&](double n) { return ((n + a2) * n + a1) * n + a0; };
  auto dpoly = [&](double n) { return (3.0 * n + 2.0 * a2) * n + a1; };

  std::vector<double> real_roots;
  for (int i = 0; i < 3; ++i) {
    const double re = ev(i).real(), im_part = ev(i).imag();
    if (std::abs(im_part) > 1e-6 * std::max(1.0, std::abs(re))) continue;
    double n = re;
    for (int it = 0; it < 4; ++it) {
      const double dp = dpoly(n);
      if (dp == 0.0) break;
      n -= poly(n) / dp;
    }
    if (n > -1e-12) real_roots.push_back(std::max(0.0, n));
  }
  std::sort(real_roots.begin(), real_roots.end());
  // Collapse near-degenerate pairs from a grazing fold.
  real_roots.erase(std::unique(real_roots.begin(), real_roots.end(),
                               [](double a, double b) {
                                 return std::abs(a - b) <=
                                        1e-9 * std::max(1.0, std::abs(b));
                               }),
                   real_roots.end());

  std::vector<KerrRoot> out;
  for (std::size_t i = 0; i < real_roots.size(); ++i) {
    const bool middle = (real_roots.size() == 3 && i == 1);
    out.push_back({real_roots[i], !middle, static_cast<int>(
                       real_roots.size() == 3 ? i : 0)});
  }
  if (out.empty())
    throw std::runtime_error("solve_kerr_cubic: no real root (conditioning)");
  return out;
}

// Intracavity phase of the driven steady state.
inline double drive_phase(double delta_d, double kerr, double n_d, double kappa) {
  return std::atan2(-0.5 * kappa, delta_d - kerr * n_d);
}

enum class BranchPolicy { continuity, low, high };

struct KerrSteadyState {
  std::vector<KerrRoot> roots;  // ascending photon number
  double photon_number = 0.0;   // selected root
  double phase = 0.0;           // phi_d of the selected root
  double kappa_internal = 0.0;  // kappa_i at the operating point
  double kappa_total = 0.0;     // kappa_i (+ broadening) + kappa_e
  bool bistable = false;
  bool converged = true;
  int iterations = 0;
};

namespace detail {

inline double select_root(const std::vector<KerrRoot>& roots, BranchPolicy policy,
                          double prev_n) {
  double low = -1.0, high = -1.0, nearest = -1.0, best = 1e300;
  for (const auto& r : roots) {
    if (!r.stable) continue;
    if (low < 0.0) low = r.photon_number;
    high = r.photon_number;
    const double d = std::abs(r.photon_number - prev_n);
    if (d < best) {
      best = d;
      nearest = r.photon_number;
    }
  }
  if (low < 0.0) return roots.front().photon_number; // all flagged unstable
  switch (policy) {
    case BranchPolicy::low: return low;
    case BranchPolicy::high: return high;
    case BranchPolicy::continuity:
      return std::isfinite(prev_n) ? nearest : low;
  }
  return low;
}

} // namespace detail

// Operating point with the photon-number-dependent linewidth folded in:
// iterate n_d -> cubic(kappa(n_d)) to a 1e-9 relative fixed point. The
// intrinsic linewidth entering the cubic is the TLS value; flux-noise
// broadening is applied only when a responsivity is supplied.
inline KerrSteadyState self_consistent_steady_state(
    double kerr, double delta_d, const Tone& drive, const LinewidthModel& lw,
    BranchPolicy policy = BranchPolicy::continuity,
    double prev_n = std::numeric_limits<double>::quiet_NaN(),
    double responsivity = 0.0) {
  const double flux2 = drive.photon_flux();
  KerrSteadyState st;
  double n = std::isfinite(prev_n) ? prev_n : 0.0;
  double damping = 1.0;
  int it = 0;
  const int max_it = 200;
  double last_step = 0.0;
  int flips = 0;
  for (; it < max_it; ++it) {
    const double ki = lw.tls_linewidth(n, delta_d);
    const double ki_eff = responsivity != 0.0
                              ? noise_broadened_linewidth(ki, responsivity,
                                                          lw.sigma_flux)
                              : ki;
    const double kap = ki_eff + lw.kappa_e;
    const auto roots = solve_kerr_cubic(kerr, delta_d, kap, lw.kappa_e, flux2);
    const double target =
        detail::select_root(roots, policy, it == 0 ? prev_n : n);
    const double step = target - n;
    if (std::abs(step) <= 1e-9 * std::max(target, 1e-30)) {
      n = target;
      st.roots = roots;
      st.kappa_internal = ki;
      st.kappa_total = kap;
      st.converged = true;
      break;
    }
    if (last_step * step < 0.0 && ++flips >= 2) damping = 0.5;
    last_step = step;
    n += damping * step;
    if (it == max_it - 1) {
      st.roots = solve_kerr_cubic(kerr, delta_d, kap, lw.kappa_e, flux2);
      st.kappa_internal = ki;
      st.kappa_total = kap;
      st.converged = false;
    }
  }
  st.photon_number = n;
  st.phase = drive_phase(delta_d, kerr, n, st.kappa_total);
  st.bistable = st.roots.size() == 3;
  st.iterations = it + 1;
  return st;
}

// Side-coupled transmission at the drive tone,
// S21 = 1 + i sqrt(kappa_e/2) sqrt(hbar w_d n_d / P_d) e^{-i phi_d}.
inline cplx single_tone_response(const KerrSteadyState& st, const Tone& drive,
                                 double kappa_e) {
  if (drive.on_feedline_power <= 0.0)
    throw std::invalid_argument("single_tone_response: nonpositive drive power");
  const double amp = std::sqrt(hbar * drive.frequency * st.photon_number /
                               drive.on_feedline_power);
  return 1.0 + im * std::sqrt(0.5 * kappa_e) * amp * std::exp(-im * st.phase);
}

} // namespace kerrmech
