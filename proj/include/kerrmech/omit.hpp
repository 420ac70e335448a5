#pragma once

// Four-wave optomechanically induced transparency: probe response of the
// doubly-driven Kerr cavity with the mechanical resonance embedded, for a
// pump on the red sideband of the signal quasimode or on the blue sideband
// of the idler quasimode.
//
// All probe frequencies are pump-anchored, Omega = omega - omega_p. The
// transparency window sits at Omega ~ Omega_m (red) or Omega ~ 2 Omega_dp +
// Omega_m (blue); in the blue scheme the probe is therefore not a mechanical
// frequency away from the pump but 2|Omega_dp| - Omega_m below it.

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "kerrmech/backaction.hpp"
#include "kerrmech/quasimode.hpp"
#include "kerrmech/squid.hpp"

namespace kerrmech {

enum class PumpingScheme { red_signal_sideband, blue_idler_sideband };

// probe_offsets lists probe-minus-pump frequencies; leave it empty to get a
// window auto-centred on the transparency feature. The quasimode state fixes
// the pump placement; pump_detuning records the offset delta_p from the
// scheme's sideband that produced it.
struct OmitConfig {
  PumpingScheme scheme = PumpingScheme::red_signal_sideband;
  double pump_detuning = 0.0;  // delta_p [rad/s], bookkeeping for sweeps
  std::vector<double> probe_offsets;
  FluxState flux;  // supplies kerr_anharmonicity and single_photon_coupling
  QuasiModeState quasimode;
  MechanicalParams mechanics;
  double kappa_e = 0.0;
  bool include_cross_mixing = true;
  bool force_unit_probe_factors = false;  // ablation: P, Q forced to 1
  double window_halfwidth = 0.0;          // auto grid; 0 -> 40 linewidths
  std::size_t window_points = 801;
};

struct OmitResponse {
  PumpingScheme scheme = PumpingScheme::red_signal_sideband;
  std::vector<double> probe_offset;  // omega - omega_p [rad/s]
  std::vector<cplx> s21;
  double window_center = 0.0;  // probe offset of the transparency feature
  BackactionResult backaction; // four-wave self-energy assembled at Omega_m
};

namespace detail {

// The component equations drop mechanical driving forces at the pump beats;
// that needs Omega_dp and 2 Omega_dp well separated from Omega_m.
inline bool pump_beat_near_mechanics(double omega_dp, double omega_m) {
  const double d1 = std::abs(std::abs(omega_dp) - omega_m);
  const double d2 = std::abs(2.0 * std::abs(omega_dp) - omega_m);
  return std::min(d1, d2) < 0.01 * omega_m;
}

}  // namespace detail

inline std::vector<double> omit_probe_grid(double center, double halfwidth,
                                           std::size_t points) {
  if (points < 2) return {center};
  std::vector<double> grid(points);
  const double step = 2.0 * halfwidth / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i)
    grid[i] = center - halfwidth + step * static_cast<double>(i);
  return grid;
}

// Probe factors of both schemes, each evaluated at its own window centre
// (P at Omega_m, Q at 2 Omega_dp + Omega_m). Only p_* and q_* of the result
// are meaningful; the remaining members keep their defaults. n_d is taken
// from the argument so a caller can probe the dependence explicitly.
inline InterferenceFactors pq_factors(const QuasiModeState& qs, double kerr,
                                      double n_d, double omega_m) {
  InterferenceFactors out;
  if (kerr == 0.0 || n_d == 0.0) return out;
  if (qs.gamma_minus == cplx{0.0, 0.0})
    throw std::invalid_argument(
        "pq_factors: gamma_minus vanishes but the probe-factor ratios divide "
        "by it");
  if (qs.gamma_plus == cplx{0.0, 0.0})
    throw std::invalid_argument(
        "pq_factors: gamma_plus vanishes but the probe-factor ratios divide "
        "by it");
  const DriveFrame f{qs.delta_d, kerr, n_d, qs.kappa_prime};
  const PumpFrame pf{f, qs.omega_dp};
  const InterferenceFactors at_red =
      interference_factors(pf, qs.gamma_minus, qs.gamma_plus, omega_m);
  const InterferenceFactors at_blue = interference_factors(
      pf, qs.gamma_minus, qs.gamma_plus, 2.0 * qs.omega_dp + omega_m);
  out.p_minus = at_red.p_minus;
  out.p_plus = at_red.p_plus;
  out.q_minus = at_blue.q_minus;
  out.q_plus = at_blue.q_plus;
  return out;
}

// Probe transmission across the transparency window,
//   S21 = 1 - (kappa_e/2) chi_g(Omega) [1 - g (force) J chi_eff],
// with the probe-driven mechanical force bracket
//   red:  g_-^* chi_g(Omega) P_- + g_+ chi_g_bar_2(Omega) A_0(Omega) P_+
//   blue: g_+^* chi_g(Omega) Q_+ + g_- chi_g_bar_2(Omega) A_0(Omega) Q_-
// and chi_eff carrying the four-wave self-energy pinned at Omega_m. Pure.
inline OmitResponse omit_response(const OmitConfig& cfg) {
  const QuasiModeState& qs = cfg.quasimode;
  if (cfg.kappa_e <= 0.0)
    throw std::invalid_argument("omit_response: kappa_e must be positive");
  const bool red = cfg.scheme == PumpingScheme::red_signal_sideband;
  if (red && qs.omega_dp <= 0.0)
    throw std::invalid_argument(
        "omit_response: red_signal_sideband expects the pump below the drive "
        "(omega_dp > 0)");
  if (!red && qs.omega_dp >= 0.0)
    throw std::invalid_argument(
        "omit_response: blue_idler_sideband expects the pump above the drive "
        "(omega_dp < 0)");

  const DriveFrame f{qs.delta_d, cfg.flux.kerr_anharmonicity, qs.n_d,
                     qs.kappa_prime};
  const PumpFrame pf{f, qs.omega_dp};
  const double g0 = cfg.flux.single_photon_coupling;
  const double omega_m = cfg.mechanics.resonance_frequency;
  const double gamma_m = cfg.mechanics.intrinsic_linewidth;

  const cplx sigma =
      sigma_four_wave_value(pf, qs.gamma_minus, qs.gamma_plus, g0, omega_m,
                            cfg.include_cross_mixing);
  const bool warn =
      qs.hierarchy_warning ||
      detail::backaction_validity_warning(std::sqrt(qs.n_d) * g0,
                                          qs.kappa_prime, omega_m, gamma_m) ||
      detail::pump_beat_near_mechanics(qs.omega_dp, omega_m);

  OmitResponse out;
  out.scheme = cfg.scheme;
  out.backaction = assemble_backaction(sigma, omega_m, gamma_m, warn);

  const double shift = red ? 0.0 : 2.0 * qs.omega_dp;
  out.window_center = shift + out.backaction.effective_frequency;

  if (!cfg.probe_offsets.empty()) {
    double lo = cfg.probe_offsets.front();
    double hi = lo;
    for (const double w : cfg.probe_offsets) {
      lo = std::min(lo, w);
      hi = std::max(hi, w);
    }
    if (out.window_center < lo || out.window_center > hi)
      throw std::invalid_argument(
          "omit_response: probe grid does not cover the scheme's transparency "
          "window");
    out.probe_offset = cfg.probe_offsets;
  } else {
    const double half =
        cfg.window_halfwidth > 0.0
            ? cfg.window_halfwidth
            : 40.0 * std::max(std::abs(out.backaction.effective_linewidth),
                              10.0 * gamma_m);
    out.probe_offset =
        omit_probe_grid(out.window_center, half, cfg.window_points);
  }

  const cplx gm = qs.gamma_minus;
  const cplx gp = qs.gamma_plus;
  const cplx g_minus = g0 * gm;
  const cplx g_plus = g0 * gp;
  auto chi_eff = [&](double x) {
    return 1.0 / (0.5 * gamma_m + im * (x - omega_m) + sigma);
  };

  out.s21.reserve(out.probe_offset.size());
  for (const double w : out.probe_offset) {
    InterferenceFactors fac =
        interference_factors(pf, gm, gp, w, cfg.include_cross_mixing);
    if (cfg.force_unit_probe_factors)
      fac.p_minus = fac.p_plus = fac.q_minus = fac.q_plus = cplx{1.0, 0.0};
    const cplx cg0 = pf.chi_g(0, w);
    const cplx cb2 = pf.chi_g_bar(2, w);
    const cplx a0 = pf.mix_a(0, w);
    cplx inner;
    if (red) {
      const cplx force = std::conj(g_minus) * cg0 * fac.p_minus +
                         g_plus * cb2 * a0 * fac.p_plus;
      inner = 1.0 - g_minus * force * fac.j_minus * chi_eff(w);
    } else {
      const cplx force = std::conj(g_plus) * cg0 * fac.q_plus +
                         g_minus * cb2 * a0 * fac.q_minus;
      inner =
          1.0 - g_plus * force * fac.j_plus * chi_eff(w - 2.0 * qs.omega_dp);
    }
    out.s21.push_back(1.0 - 0.5 * cfg.kappa_e * cg0 * inner);
  }
  return out;
}

struct OmitSweepPoint {
  double pump_detuning = 0.0;
  QuasiModeState quasimode;
  OmitResponse response;  // backaction member carries (Omega_eff, Gamma_eff)
};

// Re-places the pump at delta_p from the scheme's sideband, holding the
// drive state and the on-feedline pump power fixed: the pump photon flux is
// recovered from the base state's gamma_minus, and the drive frequency from
// the quasimode pair, omega_d = (omega_s + omega_i)/2. Per-point probe
// windows are auto-centred. Pure; points are independent.
inline std::vector<OmitSweepPoint> omit_sweep(
    const std::vector<double>& pump_detunings, const OmitConfig& base) {
  if (base.kappa_e <= 0.0)
    throw std::invalid_argument("omit_sweep: kappa_e must be positive");
  const QuasiModeState& qs0 = base.quasimode;
  const DriveFrame f{qs0.delta_d, base.flux.kerr_anharmonicity, qs0.n_d,
                     qs0.kappa_prime};
  const double omega_d = 0.5 * (qs0.omega_s + qs0.omega_i);
  const bool red = base.scheme == PumpingScheme::red_signal_sideband;
  const double omega_m = base.mechanics.resonance_frequency;
  const double sideband = red ? qs0.omega_s - omega_m : qs0.omega_i + omega_m;
  const double pump_flux =
      std::norm(qs0.gamma_minus) /
      (0.5 * base.kappa_e * std::norm(f.chi_g(-qs0.omega_dp)));

  std::vector<OmitSweepPoint> out;
  out.reserve(pump_detunings.size());
  for (const double dp : pump_detunings) {
    const double omega_p = sideband + dp;
    OmitSweepPoint pt;
    pt.pump_detuning = dp;
    pt.quasimode =
        quasimode_state(f, omega_d, omega_d - omega_p, base.kappa_e,
                        pump_flux);
    OmitConfig cfg = base;
    cfg.pump_detuning = dp;
    cfg.quasimode = pt.quasimode;
    cfg.probe_offsets.clear();
    pt.response = omit_response(cfg);
    out.push_back(std::move(pt));
  }
  return out;
}

}  // namespace kerrmech
