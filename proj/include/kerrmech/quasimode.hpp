#pragma once

// Linear response of the driven Kerr mode about its steady state: the bare
// and four-wave-dressed susceptibilities, the two quasimodes, and the
// intracavity sideband fields generated by a second (pump) tone.

#include <cmath>
#include <complex>

#include "constants.hpp"
#include "kerr_steady.hpp"

namespace kerrmech {

// Response functions anchored to the drive: every frequency argument is
// Omega = omega - omega_d. Barred quantities follow the mirror rule
// X_bar(Omega) = conj(X(-Omega)); keep all conjugation inside this struct.
struct DriveFrame {
  double delta_d = 0.0; // w_d - w_0 [rad/s]
  double kerr = 0.0;    // K [rad/s]
  double n_d = 0.0;     // drive photon number
  double kappa = 0.0;   // total (possibly noise-broadened) linewidth [rad/s]

  // Kerr-shifted detuning seen by fluctuations.
  double pulled_detuning() const { return delta_d - 2.0 * kerr * n_d; }

  cplx chi_p(double omega) const {
    return 1.0 / (0.5 * kappa + im * (pulled_detuning() + omega));
  }
  cplx chi_p_bar(double omega) const { return std::conj(chi_p(-omega)); }

  // Dressed by the degenerate four-wave (self-mixing) process.
  cplx chi_g(double omega) const {
    const cplx cp = chi_p(omega);
    const double kn = kerr * n_d;
    return cp / (1.0 - kn * kn * cp * chi_p_bar(omega));
  }
  cplx chi_g_bar(double omega) const { return std::conj(chi_g(-omega)); }

  // Field-mixing amplitude A(Omega) = -i K n_d chi_p(Omega).
  cplx mix_a(double omega) const { return -im * kerr * n_d * chi_p(omega); }
  cplx mix_a_bar(double omega) const { return std::conj(mix_a(-omega)); }
};

// The same response functions in the pump-anchored indexing used by the
// four-wave expressions: X_j(Omega) = X_drive(Omega + (j-1) Omega_dp) with
// Omega now measured from the pump, Omega_dp = omega_d - omega_p. Barred
// members are conjugates evaluated at -Omega before shifting.
struct PumpFrame {
  DriveFrame drive;
  double omega_dp = 0.0; // w_d - w_p [rad/s]

  double shifted(int j, double omega) const {
    return omega + (j - 1) * omega_dp;
  }
  cplx chi_p(int j, double omega) const { return drive.chi_p(shifted(j, omega)); }
  cplx chi_p_bar(int j, double omega) const {
    return std::conj(drive.chi_p(shifted(j, -omega)));
  }
  cplx chi_g(int j, double omega) const { return drive.chi_g(shifted(j, omega)); }
  cplx chi_g_bar(int j, double omega) const {
    return std::conj(drive.chi_g(shifted(j, -omega)));
  }
  cplx mix_a(int j, double omega) const { return drive.mix_a(shifted(j, omega)); }
  cplx mix_a_bar(int j, double omega) const {
    return std::conj(drive.mix_a(shifted(j, -omega)));
  }
};

inline DriveFrame drive_frame(const KerrSteadyState& st, double delta_d,
                              double kerr) {
  return {delta_d, kerr, st.photon_number, st.kappa_total};
}

// Bare and dressed susceptibilities evaluated at the pump tone
// (Omega = -Omega_dp) and at its mirror about the drive.
struct Susceptibilities {
  cplx chi_p;       // at the pump
  cplx chi_p_prime; // mirrored about the drive
  cplx chi_g;       // dressed, at the pump
};

inline Susceptibilities susceptibilities(const DriveFrame& f, double omega_dp) {
  return {f.chi_p(-omega_dp), f.chi_p(omega_dp), f.chi_g(-omega_dp)};
}

// Quasimode pair of the dressed response: poles at
// omega_d + i kappa/2 -+ sqrt((Delta_d - K n_d)(Delta_d - 3 K n_d)).
// A negative radicand means the two modes have merged on the real axis.
struct QuasimodeSplitting {
  double omega_s = 0.0; // signal (lower) quasimode [rad/s]
  double omega_i = 0.0; // idler (upper) quasimode [rad/s]
  bool degenerate = false;
};

inline QuasimodeSplitting quasimode_frequencies(double omega_d, double delta_d,
                                                double kerr, double n_d) {
  const double radicand =
      (delta_d - kerr * n_d) * (delta_d - 3.0 * kerr * n_d);
  if (radicand < 0.0) return {omega_d, omega_d, true};
  const double split = std::sqrt(radicand);
  return {omega_d - split, omega_d + split, false};
}

// Intracavity sideband amplitudes seeded by a pump of photon-flux amplitude
// S_p at omega_p = omega_d - Omega_dp:
//   gamma_- = i chi_g(-Omega_dp) sqrt(kappa_e/2) S_p   (at the pump)
//   gamma_+ = i K n_d chi_p(+Omega_dp) gamma_-^*        (at the idler mirror)
struct SidebandFields {
  cplx gamma_minus;
  cplx gamma_plus;
};

inline SidebandFields sideband_fields(const DriveFrame& f, double omega_dp,
                                      double kappa_e, double pump_flux) {
  const cplx gm =
      im * f.chi_g(-omega_dp) * std::sqrt(0.5 * kappa_e * pump_flux);
  const cplx gp = im * f.kerr * f.n_d * f.chi_p(omega_dp) * std::conj(gm);
  return {gm, gp};
}

// Probe transmission past the driven Kerr mode (no mechanics),
// S21(omega) = 1 - (kappa_e/2) chi_g(omega - omega_d).
inline cplx two_tone_response(const DriveFrame& f, double kappa_e,
                              double omega_from_drive) {
  return 1.0 - 0.5 * kappa_e * f.chi_g(omega_from_drive);
}

struct QuasiModeState {
  double delta_d = 0.0;
  double n_d = 0.0;
  double omega_dp = 0.0;
  cplx gamma_minus;
  cplx gamma_plus;
  double omega_s = 0.0;
  double omega_i = 0.0;
  double kappa_prime = 0.0;     // linewidth entering the dressed response
  double sideband_photons = 0.0; // |gamma_-|^2 + |gamma_+|^2
  bool degenerate = false;
  bool hierarchy_warning = false; // sideband photons not << drive photons
};

inline QuasiModeState quasimode_state(const DriveFrame& f, double omega_d,
                                      double omega_dp, double kappa_e,
                                      double pump_flux,
                                      double hierarchy_threshold = 0.1) {
  const SidebandFields sb = sideband_fields(f, omega_dp, kappa_e, pump_flux);
  const QuasimodeSplitting qs =
      quasimode_frequencies(omega_d, f.delta_d, f.kerr, f.n_d);
  QuasiModeState st;
  st.delta_d = f.delta_d;
  st.n_d = f.n_d;
  st.omega_dp = omega_dp;
  st.gamma_minus = sb.gamma_minus;
  st.gamma_plus = sb.gamma_plus;
  st.omega_s = qs.omega_s;
  st.omega_i = qs.omega_i;
  st.kappa_prime = f.kappa;
  st.sideband_photons =
      std::norm(sb.gamma_minus) + std::norm(sb.gamma_plus);
  st.degenerate = qs.degenerate;
  st.hierarchy_warning = st.sideband_photons > hierarchy_threshold * f.n_d;
  return st;
}

} // namespace kerrmech
