#pragma once

// Flux-dependent SQUID LC circuit: total-flux self-consistency (with
// hysteresis branch tracking), resonance-frequency arch, flux responsivity,
// Kerr anharmonicity and the optomechanical single-photon coupling rate.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "constants.hpp"

namespace kerrmech {

enum class SweepDirection { up, down };

struct CircuitParams {
  double capacitance = 0.0;              // C, per feedline side [F]; C_tot = 2C + Cc
  double coupling_capacitance = 0.0;     // Cc [F]
  double linear_inductance = 0.0;        // L [H]
  double junction_critical_current = 0.0; // Ic per junction [A]
  double loop_inductance = 0.0;          // L_loop, geometric + kinetic [H]
  double feedline_impedance = 50.0;      // Z0 [ohm]

  double beta_L() const {
    return 2.0 * loop_inductance * junction_critical_current / flux_quantum;
  }
  // Single-junction inductance at zero flux.
  double junction_inductance0() const {
    return flux_quantum / (two_pi * junction_critical_current);
  }
  // Two junctions in parallel.
  double squid_inductance0() const { return 0.5 * junction_inductance0(); }
  double squid_inductance(double total_flux_phi0) const {
    return squid_inductance0() / std::cos(pi * total_flux_phi0);
  }
  double total_capacitance() const { return 2.0 * capacitance + coupling_capacitance; }
  double total_inductance0() const { return linear_inductance + squid_inductance0(); }
  // Linear inductance participation ratio of the resonator, Lambda in (0,1).
  double participation_ratio() const {
    return linear_inductance / (linear_inductance + squid_inductance0());
  }
  double sweet_spot_frequency() const {
    return 1.0 / std::sqrt(total_capacitance() * total_inductance0());
  }
  // External (feedline) coupling rate of the side-coupled resonator.
  double external_linewidth(double w0) const {
    const double cc = coupling_capacitance;
    return w0 * w0 * cc * cc * feedline_impedance / (2.0 * total_capacitance());
  }

  void validate() const {
    if (capacitance <= 0 || coupling_capacitance <= 0 || linear_inductance <= 0 ||
        junction_critical_current <= 0 || loop_inductance < 0 || feedline_impedance <= 0)
      throw std::invalid_argument("CircuitParams: all elements must be positive");
    const double lam = participation_ratio();
    if (!(lam > 0.0 && lam < 1.0))
      throw std::invalid_argument("CircuitParams: participation ratio outside (0,1)");
  }
};

struct MechanicalParams {
  double resonance_frequency = 0.0; // Omega_m [rad/s]
  double intrinsic_linewidth = 0.0; // Gamma_m [rad/s]
  double effective_mass = 0.0;      // m [kg]
  double mode_shape_factor = 1.0;   // order-unity beam mode-shape scaling
  double beam_length = 0.0;         // l_m [m]
  double in_plane_field = 0.0;      // B_parallel [T]
  double thermal_occupation = 0.0;  // n_m^th

  double zero_point_amplitude() const {
    return std::sqrt(hbar / (2.0 * effective_mass * resonance_frequency));
  }
  double quality_factor() const { return resonance_frequency / intrinsic_linewidth; }
};

struct FluxSolution {
  double bias_flux = 0.0;  // Phi_b/Phi_0
  double total_flux = 0.0; // Phi/Phi_0
  double residual = 0.0;   // self-consistency residual, Phi_0 units
  int jumps = 0;           // fold jumps taken since the sweep anchor
};

namespace detail {

inline double flux_residual(double phi, double phib, double beta_L) {
  return phi - phib + 0.5 * beta_L * std::sin(pi * phi);
}

inline double flux_slope(double phi, double beta_L) {
  return 1.0 + 0.5 * beta_L * pi * std::cos(pi * phi);
}

// Nearest dynamically stable self-consistency root to `guess`. Roots live in
// [phib - betaL/2, phib + betaL/2]; a stable root crosses with positive
// slope. This is the fold-safe slow path: near a fold the contraction of any
// fixed-point map degrades, while the sign scan stays exact. When the branch
// root annihilates at a fold, the nearest surviving root is the far branch,
// which is precisely the physical jump.
inline double flux_root_scan(double phib, double beta_L, double guess) {
  auto f = [=](double p) { return flux_residual(p, phib, beta_L); };
  const double lo = phib - 0.5 * beta_L - 1e-3, hi = phib + 0.5 * beta_L + 1e-3;
  const int n = 256;
  double best = guess;
  double best_dist = 1e300;
  double x0 = lo, f0 = f(lo);
  for (int i = 1; i <= n; ++i) {
    const double x1 = lo + (hi - lo) * i / n;
    const double f1 = f(x1);
    if (f0 * f1 <= 0.0 && f0 != f1) {
      double a = x0, b = x1, fa = f0;
      for (int it = 0; it < 80; ++it) {
        const double m = 0.5 * (a + b);
        const double fm = f(m);
        if (fm == 0.0 || 0.5 * (b - a) < 1e-15) break;
        if (fa * fm < 0.0) {
          b = m;
        } else {
          a = m;
          fa = fm;
        }
      }
      double root = 0.5 * (a + b);
      // Newton polish; skip if marginally stable (fold).
      for (int it = 0; it < 3; ++it) {
        const double s = flux_slope(root, beta_L);
        if (s < 1e-6) break;
        root -= f(root) / s;
      }
      if (flux_slope(root, beta_L) > 0.0) {
        const double d = std::abs(root - guess);
        if (d < best_dist) {
          best_dist = d;
          best = root;
        }
      }
    }
    x0 = x1;
    f0 = f1;
  }
  if (best_dist == 1e300)
    throw std::runtime_error("total_flux: no stable root located");
  return best;
}

// One self-consistency root near `guess`. Fast path: damped fixed-point
// iteration phi <- (1-lambda) phi + lambda (phib - (betaL/2) sin(pi phi))
// with lambda = 1/(1 + betaL*pi/2), contractive on stable branch segments.
// Accepted only if it converged without leaving the neighbourhood of the
// guess; otherwise (fold nearby) the sign scan decides.
inline double flux_fixed_point(double phib, double beta_L, double guess) {
  const double lambda = 1.0 / (1.0 + 0.5 * beta_L * pi);
  double phi = guess;
  for (int it = 0; it < 60; ++it) {
    const double target = phib - 0.5 * beta_L * std::sin(pi * phi);
    const double next = (1.0 - lambda) * phi + lambda * target;
    const bool done = std::abs(next - phi) < 1e-14;
    phi = next;
    if (done) {
      if (std::abs(phi - guess) < 0.2 && flux_slope(phi, beta_L) > 1e-9 &&
          std::abs(flux_residual(phi, phib, beta_L)) < 1e-13)
        return phi;
      break;
    }
  }
  return flux_root_scan(phib, beta_L, guess);
}

} // namespace detail

// Sweep the self-consistency relation Phi = Phi_b - (betaL/2) sin(pi Phi)
// along a monotone bias grid, warm-starting each point from the previous
// root. A fold of the relation shows up as a jump of the converged root
// across the unstable segment; the jump count is reported per point.
// The sweep must start on a known branch point (anchor phi at grid.front()).
inline std::vector<FluxSolution> flux_sweep_from(const std::vector<double>& bias_grid,
                                                 double beta_L, double anchor_phi) {
  std::vector<FluxSolution> out;
  out.reserve(bias_grid.size());
  double phi = anchor_phi;
  int jumps = 0;
  double prev_b = bias_grid.empty() ? 0.0 : bias_grid.front();
  const double max_step = 1e-3;
  for (double b : bias_grid) {
    const double span = b - prev_b;
    const int nsub = std::max(1, static_cast<int>(std::ceil(std::abs(span) / max_step)));
    for (int k = 1; k <= nsub; ++k) {
      const double bk = prev_b + span * k / nsub;
      const double next = detail::flux_fixed_point(bk, beta_L, phi);
      if (std::abs(next - phi) > 0.25) ++jumps; // crossed a fold
      phi = next;
    }
    prev_b = b;
    out.push_back({b, phi, std::abs(detail::flux_residual(phi, b, beta_L)), jumps});
  }
  return out;
}

// Total flux for a single bias point with hysteresis-branch semantics.
// Up-sweep: continuation from (Phi_b, Phi) = (0, 0). Down-sweep: the state
// reached by sweeping up past the target by one period (2 Phi_0 in the root
// structure) and coming back down.
inline FluxSolution total_flux(double bias_phi0, double beta_L,
                               SweepDirection dir = SweepDirection::up) {
  if (!(beta_L >= 0.0) || !std::isfinite(bias_phi0))
    throw std::invalid_argument("total_flux: need betaL >= 0 and finite bias");
  if (beta_L == 0.0) return {bias_phi0, bias_phi0, 0.0, 0};
  if (dir == SweepDirection::up) {
    return flux_sweep_from({0.0, bias_phi0}, beta_L, 0.0).back();
  }
  const double top = bias_phi0 + 2.0;
  const FluxSolution at_top = flux_sweep_from({0.0, top}, beta_L, 0.0).back();
  return flux_sweep_from({top, bias_phi0}, beta_L, at_top.total_flux).back();
}

// Resonance frequency on the flux arch,
// w0(Phi) = w0(0) / sqrt(Lambda + (1 - Lambda)/cos(pi Phi)).
inline double resonance_frequency(double total_flux_phi0, const CircuitParams& c) {
  const double cosv = std::cos(pi * total_flux_phi0);
  if (cosv <= 1e-12)
    throw std::domain_error("resonance_frequency: cos(pi*Phi) <= 0 (arch edge)");
  const double lam = c.participation_ratio();
  return c.sweet_spot_frequency() / std::sqrt(lam + (1.0 - lam) / cosv);
}

// dw0/dPhi_b through the self-consistency relation (chain rule), in rad/s
// per Phi_0 of bias flux.
inline double flux_responsivity(double total_flux_phi0, double beta_L,
                                const CircuitParams& c) {
  const double cosv = std::cos(pi * total_flux_phi0);
  if (cosv <= 1e-12) throw std::domain_error("flux_responsivity: arch edge");
  const double lam = c.participation_ratio();
  const double u = lam + (1.0 - lam) / cosv;
  const double dw_dphi = -c.sweet_spot_frequency() * pi * (1.0 - lam) *
                         std::sin(pi * total_flux_phi0) /
                         (2.0 * cosv * cosv * std::pow(u, 1.5));
  const double dphi_dphib = 1.0 / (1.0 + 0.5 * beta_L * pi * cosv);
  return dw_dphi * dphi_dphib;
}

// Kerr anharmonicity K(Phi) = -(e^2 / 2 hbar C_tot) (L_S/L_tot)^3, K < 0.
inline double kerr_anharmonicity(double total_flux_phi0, const CircuitParams& c) {
  const double cosv = std::cos(pi * total_flux_phi0);
  if (cosv <= 1e-12) throw std::domain_error("kerr_anharmonicity: arch edge");
  const double ls = c.squid_inductance(total_flux_phi0);
  const double ratio = ls / (c.linear_inductance + ls);
  return -(elementary_charge * elementary_charge /
           (2.0 * hbar * c.total_capacitance())) *
         ratio * ratio * ratio;
}

// g0 = gamma * F * B_par * l_m * x_zpf. F carries rad/s per Phi_0, the
// motional flux B*l*x is converted to Phi_0 units here.
inline double single_photon_coupling(double responsivity, const MechanicalParams& m) {
  const double motional_flux_phi0 =
      m.in_plane_field * m.beam_length * m.zero_point_amplitude() / flux_quantum;
  return std::abs(m.mode_shape_factor * responsivity * motional_flux_phi0);
}

struct FluxState {
  double bias_flux = 0.0;           // Phi_b/Phi_0
  double total_flux = 0.0;          // Phi/Phi_0
  double resonance_frequency = 0.0; // w0 [rad/s]
  double flux_responsivity = 0.0;   // F [rad/s per Phi_0]
  double kerr_anharmonicity = 0.0;  // K [rad/s], negative
  double single_photon_coupling = 0.0; // g0 [rad/s]
};

inline FluxState flux_state(double bias_phi0, const CircuitParams& c,
                            const MechanicalParams& m,
                            SweepDirection dir = SweepDirection::up) {
  const FluxSolution sol = total_flux(bias_phi0, c.beta_L(), dir);
  FluxState st;
  st.bias_flux = sol.bias_flux;
  st.total_flux = sol.total_flux;
  st.resonance_frequency = resonance_frequency(sol.total_flux, c);
  st.flux_responsivity = flux_responsivity(sol.total_flux, c.beta_L(), c);
  st.kerr_anharmonicity = kerr_anharmonicity(sol.total_flux, c);
  st.single_photon_coupling = single_photon_coupling(st.flux_responsivity, m);
  return st;
}

} // namespace kerrmech
