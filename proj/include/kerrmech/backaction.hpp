#pragma once

// Dynamical backaction of a driven Kerr cavity on the mechanical mode.
//
// Single-tone: the drive's red/blue mechanical sidebands interfere through
// degenerate four-wave mixing (the A factors). Three-tone: the drive plus a
// pump and its mixing image produce a sideband ladder whose couplings are
// bookkept by the B/D/J/P/Q factors below. All factors are evaluated in the
// pump-anchored frame of PumpFrame; the only frequency-index convention
// lives there, never here.

#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <vector>

#include "kerrmech/kerr_steady.hpp"
#include "kerrmech/quasimode.hpp"
#include "kerrmech/squid.hpp"

namespace kerrmech {

// Mixing factors of the truncated sideband ladder at one evaluation
// frequency. b_*/d_* weigh how a mechanical sideband of one tone leaks into
// the ladder component next to another tone; j_* collect everything that
// multiplies the three direct scattering channels; p_*/q_* weigh the probe
// force terms for pumping below (p) or above (q) the drive. In the linear
// limit (zero anharmonicity) b -> 1, d -> 0, j -> 1, p -> 1, q -> 1.
struct InterferenceFactors {
  cplx b_minus1{1.0}, b_plus1{1.0}, b_bar1{1.0}, b_bar3{1.0};
  cplx d_minus1{0.0}, d_plus1{0.0}, d_bar1{0.0}, d_bar3{0.0};
  cplx j_minus{1.0}, j_alpha{1.0}, j_plus{1.0};
  cplx p_minus{1.0}, p_plus{1.0};
  cplx q_minus{1.0}, q_plus{1.0};
};

namespace detail {

// gamma ratios appear only multiplied by |gamma|^2 weights, so a vanishing
// denominator always belongs to a vanishing term.
inline cplx ratio_or_zero(cplx num, cplx den) {
  return den == cplx{0.0, 0.0} ? cplx{0.0, 0.0} : num / den;
}

// Ladder constituents cached at one pump-frame frequency.
struct LadderAt {
  cplx a0, a1, am1;          // direct mixing, components 0, 1, -1
  cplx ab1, ab2, ab3;        // mirrored mixing, components 1, 2, 3
  cplx cg0, cg1, cgm1;       // dressed susceptibility, components 0, 1, -1
  cplx cb1, cb2, cb3;        // mirrored dressed susceptibility, 1, 2, 3
  cplx t;                    // i 2 K n_d
  cplx s;                    // i 2 K

  LadderAt(const PumpFrame& pf, double omega)
      : a0(pf.mix_a(0, omega)),
        a1(pf.mix_a(1, omega)),
        am1(pf.mix_a(-1, omega)),
        ab1(pf.mix_a_bar(1, omega)),
        ab2(pf.mix_a_bar(2, omega)),
        ab3(pf.mix_a_bar(3, omega)),
        cg0(pf.chi_g(0, omega)),
        cg1(pf.chi_g(1, omega)),
        cgm1(pf.chi_g(-1, omega)),
        cb1(pf.chi_g_bar(1, omega)),
        cb2(pf.chi_g_bar(2, omega)),
        cb3(pf.chi_g_bar(3, omega)),
        t(im * 2.0 * pf.drive.kerr * pf.drive.n_d),
        s(im * 2.0 * pf.drive.kerr) {}
};

}  // namespace detail

// All ladder factors at pump-frame frequency omega. The cross-mixing flag
// keeps (true) or drops (false) the non-degenerate four-wave mixing terms;
// the b/d factors are definitions independent of that choice.
inline InterferenceFactors interference_factors(const PumpFrame& pf,
                                                cplx gamma_minus,
                                                cplx gamma_plus, double omega,
                                                bool include_cross_mixing =
                                                    true) {
  using detail::ratio_or_zero;
  const detail::LadderAt L(pf, omega);
  const cplx one{1.0, 0.0};
  const cplx gm = gamma_minus;
  const cplx gp = gamma_plus;

  InterferenceFactors f;
  f.b_minus1 =
      one - L.t * ((one - L.ab3) * (one - L.a0) * L.cb2 -
                   (one - L.ab2) * L.cg0);
  f.d_minus1 =
      L.ab3 - L.t * ((one - L.ab3) * (one - L.ab2) * L.cg0 +
                     L.ab3 * (one - L.a0) * L.cb2);
  f.b_plus1 =
      one - L.t * ((one - L.ab1) * (one - L.a0) * L.cb2 -
                   (one - L.ab2) * L.cg0);
  f.d_plus1 =
      L.ab1 - L.t * ((one - L.ab1) * (one - L.ab2) * L.cg0 +
                     L.ab1 * (one - L.a0) * L.cb2);
  f.b_bar3 =
      one + L.t * ((one - L.am1) * (one - L.ab2) * L.cg0 -
                   (one - L.a0) * L.cb2);
  f.d_bar3 =
      L.am1 + L.t * ((one - L.am1) * (one - L.a0) * L.cb2 +
                     L.am1 * (one - L.ab2) * L.cg0);
  f.b_bar1 =
      one + L.t * ((one - L.a1) * (one - L.ab2) * L.cg0 -
                   (one - L.a0) * L.cb2);
  f.d_bar1 =
      L.a1 + L.t * ((one - L.a1) * (one - L.a0) * L.cb2 +
                    L.a1 * (one - L.ab2) * L.cg0);

  const cplx r_mp = ratio_or_zero(std::conj(gp), gm);  // gamma_+^*/gamma_-
  const cplx r_pm = ratio_or_zero(std::conj(gm), gp);  // gamma_-^*/gamma_+
  f.j_minus = one - r_mp * L.ab2;
  f.j_plus = one - r_pm * L.ab2;
  f.j_alpha = one - L.ab2;
  f.p_minus = one;
  f.p_plus = one;
  f.q_minus = one;
  f.q_plus = one;
  if (!include_cross_mixing) return f;

  f.j_minus += L.t * L.cg1 * (one + r_mp * (one - L.ab2)) * (one - L.ab1) -
               L.t * L.cb1 * (one - L.ab2 - r_mp * L.ab2) * (one - L.a1);
  f.j_plus += L.t * L.cgm1 * (one + r_pm * (one - L.ab2)) * (one - L.ab3) -
              L.t * L.cb3 * (one - L.ab2 - r_pm * L.ab2) * (one - L.am1);
  f.j_alpha +=
      L.s * L.cg1 * (gm + std::conj(gp) * (one - L.ab2)) *
          (gp * f.b_plus1 - std::conj(gm) * f.d_plus1) -
      L.s * L.cb1 * (gm * (one - L.ab2) - std::conj(gp) * L.ab2) *
          (std::conj(gm) * f.b_bar1 - gp * f.d_bar1) +
      L.s * L.cgm1 * (gp + std::conj(gm) * (one - L.ab2)) *
          (gm * f.b_minus1 - std::conj(gp) * f.d_minus1) -
      L.s * L.cb3 * (gp * (one - L.ab2) - std::conj(gm) * L.ab2) *
          (std::conj(gp) * f.b_bar3 - gm * f.d_bar3);

  const cplx r_p = ratio_or_zero(gp, std::conj(gm));  // gamma_+/gamma_-^*
  const cplx r_m = ratio_or_zero(gm, std::conj(gp));  // gamma_-/gamma_+^*
  f.p_minus = one + L.t * L.cg1 * (one - L.ab1 + r_p) -
              L.t * L.cb1 * (one - L.a1 - r_p * L.a1);
  f.p_plus = one - L.t * L.cb1 * (one - L.a1 + r_pm) +
             L.t * L.cg1 * (one - L.ab1 - r_pm * L.ab1);
  f.q_plus = one + L.t * L.cgm1 * (one - L.ab3 + r_m) -
             L.t * L.cb3 * (one - L.am1 - r_m * L.am1);
  f.q_minus = one - L.t * L.cb3 * (one - L.am1 + r_mp) +
              L.t * L.cgm1 * (one - L.ab3 - r_mp * L.ab3);
  return f;
}

// Self-energy added to the mechanical susceptibility,
// 1/chi_eff(W) = Gamma_m/2 + i(W - Omega_m) + Sigma(Omega_m).
struct BackactionResult {
  cplx self_energy{0.0, 0.0};      // Sigma(Omega_m) [rad/s]
  double optical_spring = 0.0;     // -Im Sigma
  double optical_damping = 0.0;    // 2 Re Sigma
  double effective_frequency = 0.0;  // Omega_m + optical_spring
  double effective_linewidth = 0.0;  // Gamma_m + optical_damping
  bool stable = true;                // effective_linewidth > 0
  bool validity_warning = false;     // weak-coupling / high-Q / hierarchy
};

inline BackactionResult assemble_backaction(cplx sigma, double omega_m,
                                            double gamma_m,
                                            bool validity_warning = false) {
  BackactionResult r;
  r.self_energy = sigma;
  r.optical_spring = -sigma.imag();
  r.optical_damping = 2.0 * sigma.real();
  r.effective_frequency = omega_m + r.optical_spring;
  r.effective_linewidth = gamma_m + r.optical_damping;
  r.stable = r.effective_linewidth > 0.0;
  r.validity_warning = validity_warning;
  return r;
}

namespace detail {

inline bool backaction_validity_warning(double g_alpha, double kappa,
                                        double omega_m, double gamma_m) {
  const bool weak_coupling = 10.0 * g_alpha <= kappa;
  const bool high_q = 100.0 * gamma_m <= omega_m;
  return !(weak_coupling && high_q);
}

}  // namespace detail

// Single-tone self-energy, drive-anchored frequencies.
inline cplx sigma_single_tone_value(const DriveFrame& f, double g_alpha_sq,
                                    double omega_m) {
  const cplx one{1.0, 0.0};
  return g_alpha_sq * (f.chi_g(omega_m) * (one - f.mix_a_bar(omega_m)) -
                       f.chi_g_bar(omega_m) * (one - f.mix_a(omega_m)));
}

inline BackactionResult sigma_single_tone(double g0, double n_d,
                                          double delta_d, double kerr,
                                          double kappa, double omega_m,
                                          double gamma_m) {
  const DriveFrame f{delta_d, kerr, n_d, kappa};
  const double g_alpha_sq = n_d * g0 * g0;
  const cplx sigma = sigma_single_tone_value(f, g_alpha_sq, omega_m);
  const bool warn = detail::backaction_validity_warning(
      std::sqrt(g_alpha_sq), kappa, omega_m, gamma_m);
  return assemble_backaction(sigma, omega_m, gamma_m, warn);
}

// Three-tone self-energy. Each channel contributes
// weight * [chi_g(W) J(W) - conj(chi_g(-W') J(-W'))] with the channel's
// ladder shift kept in both the direct and the mirrored argument.
// Exact in the sideband-field ratios and in the degenerate mixing, but the
// non-degenerate (cross) terms are kept to leading order in the sideband
// fields: the remainder is O(|gamma|^4) and grows with |gamma_+/gamma_-|,
// another reason the sideband hierarchy |gamma|^2 << n_d must hold.
inline cplx sigma_four_wave_value(const PumpFrame& pf, cplx gamma_minus,
                                  cplx gamma_plus, double g0, double omega_m,
                                  bool include_cross_mixing = true) {
  const double g0_sq = g0 * g0;
  const double wdp = pf.omega_dp;

  enum class Channel { minus, alpha, plus };
  auto dressed = [&](Channel c, double w) {
    const InterferenceFactors f = interference_factors(
        pf, gamma_minus, gamma_plus, w, include_cross_mixing);
    const cplx j = c == Channel::minus
                       ? f.j_minus
                       : (c == Channel::alpha ? f.j_alpha : f.j_plus);
    return pf.chi_g(0, w) * j;
  };
  auto channel = [&](Channel c, double shift, double weight) {
    return weight * (dressed(c, omega_m + shift) -
                     std::conj(dressed(c, -omega_m + shift)));
  };

  return channel(Channel::minus, 0.0, g0_sq * std::norm(gamma_minus)) +
         channel(Channel::alpha, wdp, g0_sq * pf.drive.n_d) +
         channel(Channel::plus, 2.0 * wdp, g0_sq * std::norm(gamma_plus));
}

inline BackactionResult sigma_four_wave(double g0, const QuasiModeState& qs,
                                        double kerr, double kappa,
                                        double omega_m, double gamma_m,
                                        bool include_cross_mixing = true) {
  const DriveFrame f{qs.delta_d, kerr, qs.n_d, kappa};
  const PumpFrame pf{f, qs.omega_dp};
  const cplx sigma =
      sigma_four_wave_value(pf, qs.gamma_minus, qs.gamma_plus, g0, omega_m,
                            include_cross_mixing);
  const bool warn =
      qs.hierarchy_warning ||
      detail::backaction_validity_warning(std::sqrt(qs.n_d) * g0, kappa,
                                          omega_m, gamma_m);
  return assemble_backaction(sigma, omega_m, gamma_m, warn);
}

// ---------------------------------------------------------------------------
// Stability maps

struct StabilityInterval {
  double lower = 0.0;
  double upper = 0.0;
};

namespace detail {

// Contiguous ranges of the grid where gamma_eff < 0, endpoints refined by
// bisection of gamma_at to 1e-4 of the local grid spacing. gamma_at must be
// evaluable anywhere between adjacent grid points.
template <typename F>
std::vector<StabilityInterval> refine_unstable_intervals(
    const std::vector<double>& grid, const std::vector<double>& gamma_eff,
    F&& gamma_at) {
  std::vector<StabilityInterval> out;
  if (grid.size() < 2) {
    if (grid.size() == 1 && gamma_eff[0] < 0.0)
      out.push_back({grid[0], grid[0]});
    return out;
  }
  auto crossing = [&](double lo, double hi, bool lo_unstable) {
    const double tol = 1e-4 * std::abs(hi - lo);
    while (std::abs(hi - lo) > tol) {
      const double mid = 0.5 * (lo + hi);
      if ((gamma_at(mid) < 0.0) == lo_unstable)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  };

  bool inside = gamma_eff[0] < 0.0;
  double lower = grid.front();
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const bool next_inside = gamma_eff[i + 1] < 0.0;
    if (next_inside == inside) continue;
    const double edge = crossing(grid[i], grid[i + 1], inside);
    if (next_inside)
      lower = edge;
    else
      out.push_back({lower, edge});
    inside = next_inside;
  }
  if (inside) out.push_back({lower, grid.back()});
  return out;
}

}  // namespace detail

struct StabilityMap {
  std::vector<double> parameter;
  std::vector<BackactionResult> results;
  std::vector<StabilityInterval> unstable;
};

// eval: swept parameter value -> BackactionResult, evaluable anywhere in the
// grid's span.
template <typename Eval>
StabilityMap stability_map(const std::vector<double>& grid, Eval&& eval) {
  StabilityMap map;
  map.parameter = grid;
  map.results.reserve(grid.size());
  std::vector<double> gamma_eff;
  gamma_eff.reserve(grid.size());
  for (const double x : grid) {
    map.results.push_back(eval(x));
    gamma_eff.push_back(map.results.back().effective_linewidth);
  }
  map.unstable = detail::refine_unstable_intervals(
      grid, gamma_eff, [&](double x) { return eval(x).effective_linewidth; });
  return map;
}

// ---------------------------------------------------------------------------
// Flux-swept single-tone stability map

struct FluxBackactionPoint {
  double bias_flux = 0.0;  // applied flux [Phi0]
  FluxState flux;
  KerrSteadyState steady;
  BackactionResult backaction;
};

struct FluxStabilityResult {
  std::vector<FluxBackactionPoint> points;
  std::vector<StabilityInterval> unstable;  // in bias flux [Phi0]
};

// Sweeps the bias flux with a fixed drive tone: per point the SQUID branch is
// continued from the previous point, the cavity photon number is continued
// through the Kerr steady state, and the single-tone self-energy decides
// stability. A zero lw.kappa_e means "derive kappa_e from the circuit".
inline FluxStabilityResult flux_stability_map(
    const std::vector<double>& bias_grid, const CircuitParams& circuit,
    const MechanicalParams& mech, const LinewidthModel& lw, const Tone& drive,
    SweepDirection direction = SweepDirection::up) {
  FluxStabilityResult out;
  if (bias_grid.empty()) return out;

  const double beta = circuit.beta_L();
  const FluxSolution anchor = total_flux(bias_grid.front(), beta, direction);
  const std::vector<FluxSolution> swept =
      flux_sweep_from(bias_grid, beta, anchor.total_flux);

  auto evaluate = [&](double bias, double phi, double prev_n) {
    FluxBackactionPoint p;
    p.bias_flux = bias;
    p.flux.bias_flux = bias;
    p.flux.total_flux = phi;
    p.flux.resonance_frequency = resonance_frequency(phi, circuit);
    p.flux.flux_responsivity = flux_responsivity(phi, beta, circuit);
    p.flux.kerr_anharmonicity = kerr_anharmonicity(phi, circuit);
    p.flux.single_photon_coupling =
        single_photon_coupling(p.flux.flux_responsivity, mech);

    LinewidthModel local = lw;
    if (local.kappa_e <= 0.0)
      local.kappa_e = circuit.external_linewidth(p.flux.resonance_frequency);
    const double delta_d = drive.frequency - p.flux.resonance_frequency;
    p.steady = self_consistent_steady_state(
        p.flux.kerr_anharmonicity, delta_d, drive, local,
        BranchPolicy::continuity, prev_n, p.flux.flux_responsivity);

    const double g0 = p.flux.single_photon_coupling;
    const DriveFrame f{delta_d, p.flux.kerr_anharmonicity,
                       p.steady.photon_number, p.steady.kappa_total};
    const cplx sigma = sigma_single_tone_value(
        f, p.steady.photon_number * g0 * g0, mech.resonance_frequency);
    const bool warn = detail::backaction_validity_warning(
        std::sqrt(p.steady.photon_number) * g0, p.steady.kappa_total,
        mech.resonance_frequency, mech.intrinsic_linewidth);
    p.backaction = assemble_backaction(sigma, mech.resonance_frequency,
                                       mech.intrinsic_linewidth, warn);
    return p;
  };

  out.points.reserve(bias_grid.size());
  std::vector<double> gamma_eff;
  gamma_eff.reserve(bias_grid.size());
  double prev_n = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < bias_grid.size(); ++i) {
    out.points.push_back(
        evaluate(bias_grid[i], swept[i].total_flux, prev_n));
    prev_n = out.points.back().steady.photon_number;
    gamma_eff.push_back(out.points.back().backaction.effective_linewidth);
  }

  // Refinement warm-starts from the grid point opening the bisected segment.
  auto gamma_at = [&](double bias) {
    std::size_t seg = bias_grid.size() - 2;
    for (std::size_t i = 0; i + 1 < bias_grid.size(); ++i)
      if ((bias - bias_grid[i]) * (bias - bias_grid[i + 1]) <= 0.0) {
        seg = i;
        break;
      }
    const std::vector<double> leg{bias_grid[seg], bias};
    const FluxSolution sol =
        flux_sweep_from(leg, beta, swept[seg].total_flux).back();
    return evaluate(bias, sol.total_flux,
                    out.points[seg].steady.photon_number)
        .backaction.effective_linewidth;
  };
  out.unstable =
      detail::refine_unstable_intervals(bias_grid, gamma_eff, gamma_at);
  return out;
}

// ---------------------------------------------------------------------------
// Detuning-swept backaction with and without the anharmonicity

struct DetuningBackactionSweep {
  std::vector<double> detuning;  // drive minus zero-power resonance [rad/s]
  std::vector<BackactionResult> kerr;
  std::vector<BackactionResult> linear;
  std::vector<double> photons_kerr;
  std::vector<double> photons_linear;
};

// Same input tone applied to the anharmonic cavity and to its linearized
// twin; the sideband-unresolved regime (kappa >> Omega_m) is where the two
// backaction curves differ most.
inline DetuningBackactionSweep zoepfl_regime_backaction(
    const std::vector<double>& detuning_grid, double kerr, const Tone& drive,
    const LinewidthModel& lw, double g0, double omega_m, double gamma_m) {
  DetuningBackactionSweep out;
  out.detuning = detuning_grid;
  out.kerr.reserve(detuning_grid.size());
  out.linear.reserve(detuning_grid.size());
  out.photons_kerr.reserve(detuning_grid.size());
  out.photons_linear.reserve(detuning_grid.size());

  double prev_nk = std::numeric_limits<double>::quiet_NaN();
  double prev_nl = std::numeric_limits<double>::quiet_NaN();
  for (const double delta : detuning_grid) {
    const KerrSteadyState sk = self_consistent_steady_state(
        kerr, delta, drive, lw, BranchPolicy::continuity, prev_nk);
    const KerrSteadyState sl = self_consistent_steady_state(
        0.0, delta, drive, lw, BranchPolicy::continuity, prev_nl);
    prev_nk = sk.photon_number;
    prev_nl = sl.photon_number;

    const DriveFrame fk{delta, kerr, sk.photon_number, sk.kappa_total};
    const DriveFrame fl{delta, 0.0, sl.photon_number, sl.kappa_total};
    const bool warn_k = detail::backaction_validity_warning(
        std::sqrt(sk.photon_number) * g0, sk.kappa_total, omega_m, gamma_m);
    const bool warn_l = detail::backaction_validity_warning(
        std::sqrt(sl.photon_number) * g0, sl.kappa_total, omega_m, gamma_m);
    out.kerr.push_back(assemble_backaction(
        sigma_single_tone_value(fk, sk.photon_number * g0 * g0, omega_m),
        omega_m, gamma_m, warn_k));
    out.linear.push_back(assemble_backaction(
        sigma_single_tone_value(fl, sl.photon_number * g0 * g0, omega_m),
        omega_m, gamma_m, warn_l));
    out.photons_kerr.push_back(sk.photon_number);
    out.photons_linear.push_back(sl.photon_number);
  }
  return out;
}

}  // namespace kerrmech
