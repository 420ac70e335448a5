#pragma once

// Quantum noise spectra of the driven Kerr cavity coupled to the mechanical
// mode: phonon-number PSDs for single-tone and four-wave pumping, the noise
// spectrum of the cavity output field, occupation integrals, and the HEMT
// calibration line.
//
// Conventions: spectra are dimensionless (quanta per unit angular frequency
// when integrated with dOmega/2pi). Phonon PSD grids use the same frequency
// anchoring as the corresponding response: offsets from the drive for single
// tone, offsets from the pump for four-wave. Output spectra are reported as
// S(omega)/(hbar omega), so a vacuum-terminated feedline sits at
// detection_added_noise + 1/2.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "kerrmech/backaction.hpp"
#include "kerrmech/constants.hpp"
#include "kerrmech/omit.hpp"
#include "kerrmech/quasimode.hpp"

namespace kerrmech {

// Bath occupations seen by the cavity and the mechanics. The effective
// cavity occupation must equal the coupling-weighted combination of the
// internal and external baths; build instances through
// make_noise_environment to keep that invariant.
struct NoiseEnvironment {
  double cavity_internal_occupation = 0.0;  // n_i
  double cavity_external_occupation = 0.0;  // n_e
  double effective_cavity_occupation = 0.0; // n_c
  double mechanical_bath_occupation = 0.0;  // n_m^th
  double bath_temperature = 0.0;            // [K], bookkeeping only
  double detection_added_noise = 0.0;       // n_add, output-referred quanta
};

inline double bose_occupation(double omega, double temperature) {
  if (!(omega > 0.0))
    throw std::invalid_argument("bose_occupation: omega must be positive");
  if (temperature < 0.0)
    throw std::invalid_argument("bose_occupation: negative temperature");
  if (temperature == 0.0) return 0.0;
  return 1.0 / std::expm1(hbar * omega / (boltzmann_kB * temperature));
}

inline double effective_cavity_occupation(double kappa_e, double kappa_i,
                                          double n_e, double n_i) {
  if (!(kappa_e > 0.0) || kappa_i < 0.0)
    throw std::invalid_argument(
        "effective_cavity_occupation: needs kappa_e > 0 and kappa_i >= 0");
  return (kappa_e * n_e + kappa_i * n_i) / (kappa_e + kappa_i);
}

inline NoiseEnvironment make_noise_environment(double kappa_e, double kappa_i,
                                               double n_e, double n_i,
                                               double n_m_th,
                                               double bath_temperature = 0.0,
                                               double detection_added_noise = 0.0) {
  if (n_e < 0.0 || n_i < 0.0 || n_m_th < 0.0 || detection_added_noise < 0.0)
    throw std::invalid_argument(
        "make_noise_environment: occupations must be non-negative");
  NoiseEnvironment env;
  env.cavity_internal_occupation = n_i;
  env.cavity_external_occupation = n_e;
  env.effective_cavity_occupation =
      effective_cavity_occupation(kappa_e, kappa_i, n_e, n_i);
  env.mechanical_bath_occupation = n_m_th;
  env.bath_temperature = bath_temperature;
  env.detection_added_noise = detection_added_noise;
  return env;
}

struct Spectrum {
  std::vector<double> frequency; // [rad/s], strictly increasing
  std::vector<double> psd;       // dimensionless, >= 0
  std::string scheme;
  double resolution_bandwidth = 0.0; // [rad/s], 0 means unfiltered
};

inline const char* scheme_name(PumpingScheme s) {
  return s == PumpingScheme::red_signal_sideband ? "red_signal_sideband"
                                                 : "blue_idler_sideband";
}

namespace detail {

inline void check_spectrum_grid(const std::vector<double>& grid,
                                const char* who) {
  if (grid.empty())
    throw std::invalid_argument(std::string(who) + ": empty frequency grid");
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    if (!(grid[i] < grid[i + 1]))
      throw std::invalid_argument(std::string(who) +
                                  ": frequency grid must strictly increase");
}

inline void check_noise(const NoiseEnvironment& n, const char* who) {
  if (n.cavity_internal_occupation < 0.0 ||
      n.cavity_external_occupation < 0.0 ||
      n.effective_cavity_occupation < 0.0 ||
      n.mechanical_bath_occupation < 0.0 || n.detection_added_noise < 0.0)
    throw std::invalid_argument(std::string(who) +
                                ": occupations must be non-negative");
}

// Centred boxcar of the requested width on a uniform grid; the window is
// truncated at the edges. Width is rounded to an odd number of samples.
inline std::vector<double> moving_average(const std::vector<double>& grid,
                                          const std::vector<double>& values,
                                          double width) {
  const std::size_t n = grid.size();
  if (n < 2) return values;
  const double step = (grid.back() - grid.front()) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i)
    if (std::abs((grid[i + 1] - grid[i]) - step) > 1e-9 * step)
      throw std::invalid_argument(
          "moving_average: resolution-bandwidth filtering needs a uniform "
          "frequency grid");
  const auto half = static_cast<std::size_t>(std::floor(0.5 * width / step));
  if (half == 0) return values;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i > half ? i - half : 0;
    const std::size_t hi = std::min(n - 1, i + half);
    double acc = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) acc += values[k];
    out[i] = acc / static_cast<double>(hi - lo + 1);
  }
  return out;
}

} // namespace detail

// Phonon-number PSD <b'b>(Omega) under a single drive tone, including the
// counter-rotating mechanical channel and the Kerr mixing of the drive.
// Frequencies are drive-anchored. The four noise terms share the effective
// mechanical susceptibility; their peak weights reproduce the cavity
// cooling, quantum-backaction and thermal rates of the linear theory.
inline Spectrum phonon_psd_single_tone(const DriveFrame& f, double g0,
                                       double omega_m, double gamma_m,
                                       const NoiseEnvironment& noise,
                                       const std::vector<double>& grid) {
  detail::check_spectrum_grid(grid, "phonon_psd_single_tone");
  detail::check_noise(noise, "phonon_psd_single_tone");
  if (!(f.kappa > 0.0) || !(omega_m > 0.0) || !(gamma_m > 0.0) || g0 < 0.0 ||
      f.n_d < 0.0)
    throw std::invalid_argument("phonon_psd_single_tone: bad parameters");
  const double ga2 = g0 * g0 * f.n_d;
  const double n_c = noise.effective_cavity_occupation;
  const double n_th = noise.mechanical_bath_occupation;
  Spectrum out;
  out.frequency = grid;
  out.psd.resize(grid.size());
  out.scheme = "single_tone";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double w = grid[i];
    const cplx chi_k = f.chi_g(w) * (1.0 - f.mix_a_bar(w));
    const cplx chi_kb = f.chi_g_bar(w) * (1.0 - f.mix_a(w));
    const cplx diff = chi_k - chi_kb;
    const cplx chi0 = 1.0 / cplx{0.5 * gamma_m, w - omega_m};
    const cplx chi0b = 1.0 / cplx{0.5 * gamma_m, -(w + omega_m)};
    const cplx chi0eff = chi0 / (1.0 + ga2 * (chi0 - chi0b) * diff);
    const double w2 = std::norm(chi0eff);
    const double cooling = ga2 * std::norm(chi_k) * f.kappa * n_c;
    const double quantum = ga2 * std::norm(chi_kb) * f.kappa * (n_c + 1.0);
    const double thermal =
        std::norm(1.0 - ga2 * chi0b * diff) * gamma_m * n_th;
    const double counter =
        ga2 * ga2 * std::norm(chi0b) * std::norm(diff) * gamma_m * (n_th + 1.0);
    out.psd[i] = w2 * (cooling + quantum + thermal + counter);
  }
  return out;
}

// Four-wave phonon PSD of the sideband mode read out by the scheme (b_0 for
// red pumping, b_-2 for blue), split into its three additive noise channels.
struct PhononSpectra {
  Spectrum total;
  Spectrum cavity_noise;      // cavity cooling channel, weight kappa n_c
  Spectrum amplified_vacuum;  // amplified quantum noise, kappa (n_c + 1)
  Spectrum thermal;           // mechanical bath, Gamma_m n_m^th
};

// The backaction argument must hold the four-wave self-energy of the same
// configuration (sigma_four_wave at Omega_m); the bare mechanics are
// recovered from it. Grid offsets are pump-anchored; the resonance sits at
// Omega_m (red) or 2 Omega_dp + Omega_m (blue).
inline PhononSpectra phonon_psd_four_wave(PumpingScheme scheme,
                                          const QuasiModeState& qs,
                                          double kerr, double g0,
                                          const BackactionResult& backaction,
                                          const NoiseEnvironment& noise,
                                          const std::vector<double>& grid,
                                          bool include_cross_mixing = true) {
  detail::check_spectrum_grid(grid, "phonon_psd_four_wave");
  detail::check_noise(noise, "phonon_psd_four_wave");
  const double gamma_m =
      backaction.effective_linewidth - backaction.optical_damping;
  const double omega_m =
      backaction.effective_frequency - backaction.optical_spring;
  if (!(gamma_m > 0.0) || !(omega_m > 0.0))
    throw std::invalid_argument(
        "phonon_psd_four_wave: backaction does not define positive bare "
        "mechanics");
  if (!(qs.kappa_prime > 0.0) || g0 < 0.0)
    throw std::invalid_argument("phonon_psd_four_wave: bad parameters");
  if (scheme == PumpingScheme::red_signal_sideband && !(qs.omega_dp > 0.0))
    throw std::invalid_argument(
        "phonon_psd_four_wave: red-sideband pumping needs omega_dp > 0");
  if (scheme == PumpingScheme::blue_idler_sideband && !(qs.omega_dp < 0.0))
    throw std::invalid_argument(
        "phonon_psd_four_wave: blue-sideband pumping needs omega_dp < 0");
  const DriveFrame f{qs.delta_d, kerr, qs.n_d, qs.kappa_prime};
  const PumpFrame pf{f, qs.omega_dp};
  const cplx g_minus = g0 * qs.gamma_minus;
  const cplx g_plus = g0 * qs.gamma_plus;
  const bool red = scheme == PumpingScheme::red_signal_sideband;
  const double shift = red ? 0.0 : 2.0 * qs.omega_dp;
  const double n_c = noise.effective_cavity_occupation;
  const double n_th = noise.mechanical_bath_occupation;

  PhononSpectra out;
  for (Spectrum* s :
       {&out.total, &out.cavity_noise, &out.amplified_vacuum, &out.thermal}) {
    s->frequency = grid;
    s->psd.resize(grid.size());
    s->scheme = scheme_name(scheme);
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double w = grid[i];
    const InterferenceFactors fac = interference_factors(
        pf, qs.gamma_minus, qs.gamma_plus, w, include_cross_mixing);
    const cplx cg0 = pf.chi_g(0, w);
    const cplx cb2 = pf.chi_g_bar(2, w);
    const cplx a0 = pf.mix_a(0, w);
    const cplx ab2 = pf.mix_a_bar(2, w);
    const cplx chi_eff =
        1.0 / (cplx{0.5 * gamma_m, w - shift - omega_m} + backaction.self_energy);
    cplx amp_cool, amp_gain;
    if (red) {
      amp_cool = std::conj(g_minus) * fac.p_minus * cg0 +
                 g_plus * fac.p_plus * a0 * cb2;
      amp_gain = std::conj(g_minus) * fac.p_minus * ab2 * cg0 +
                 g_plus * fac.p_plus * cb2;
    } else {
      amp_cool = std::conj(g_plus) * fac.q_plus * cg0 +
                 g_minus * fac.q_minus * a0 * cb2;
      amp_gain = std::conj(g_plus) * fac.q_plus * ab2 * cg0 +
                 g_minus * fac.q_minus * cb2;
    }
    const double w2 = std::norm(chi_eff);
    out.cavity_noise.psd[i] = w2 * std::norm(amp_cool) * qs.kappa_prime * n_c;
    out.amplified_vacuum.psd[i] =
        w2 * std::norm(amp_gain) * qs.kappa_prime * (n_c + 1.0);
    out.thermal.psd[i] = w2 * gamma_m * n_th;
    out.total.psd[i] = out.cavity_noise.psd[i] + out.amplified_vacuum.psd[i] +
                       out.thermal.psd[i];
  }
  return out;
}

// Occupation n = Integral S dOmega / 2pi of a sampled spectrum. The grid must
// extend until the spectrum has decayed: both edge tails are extrapolated
// with a local power law and the integral is rejected when their estimated
// weight exceeds 1e-6 of the total.
inline double occupation(const Spectrum& s) {
  detail::check_spectrum_grid(s.frequency, "occupation");
  const std::size_t n = s.frequency.size();
  if (s.psd.size() != n)
    throw std::invalid_argument("occupation: frequency/psd size mismatch");
  if (n < 5) throw std::invalid_argument("occupation: grid too short");
  for (double v : s.psd)
    if (!(v >= 0.0))
      throw std::invalid_argument("occupation: spectrum must be non-negative");

  double total = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i)
    total += 0.5 * (s.psd[i] + s.psd[i + 1]) *
             (s.frequency[i + 1] - s.frequency[i]);
  if (total == 0.0) return 0.0;

  const std::size_t pk = static_cast<std::size_t>(
      std::max_element(s.psd.begin(), s.psd.end()) - s.psd.begin());
  const double inf = std::numeric_limits<double>::infinity();
  // distance-from-peak power law through the outermost two samples; p <= 1
  // integrates to a divergent tail
  auto edge_tail = [&](std::size_t outer, std::size_t inner) {
    const double d_out = std::abs(s.frequency[outer] - s.frequency[pk]);
    const double d_in = std::abs(s.frequency[inner] - s.frequency[pk]);
    const double v_out = s.psd[outer];
    const double v_in = s.psd[inner];
    if (v_out == 0.0) return 0.0;
    if (!(d_out > d_in) || !(d_in > 0.0) || !(v_in > v_out)) return inf;
    const double p = std::log(v_in / v_out) / std::log(d_out / d_in);
    if (p <= 1.0) return inf;
    return v_out * d_out / (p - 1.0);
  };
  const double tail =
      (pk < 2 || pk + 2 >= n ? inf : edge_tail(0, 1) + edge_tail(n - 1, n - 2));
  if (!(tail < 1e-6 * total)) {
    std::ostringstream msg;
    msg << "occupation: spectrum has not decayed at the grid edges "
           "(estimated tail fraction "
        << tail / total << ", required < 1e-6); extend the frequency grid";
    throw std::runtime_error(msg.str());
  }
  return total / two_pi;
}

namespace detail {

// One adaptive pass over the merged windows. Each window is split a few
// linewidths either side of every peak centre, so a resonance far narrower
// than the window sits mid-subinterval where the quadrature nodes sample it.
// core_widths sets those split distances in units of the linewidth.
template <typename F>
double windowed_integral(const F& psd,
                         const std::vector<std::pair<double, double>>& merged,
                         const std::vector<double>& peak_centers,
                         double linewidth, double core_widths, double tol) {
  using quad = boost::math::quadrature::gauss_kronrod<double, 15>;
  const double core = core_widths * linewidth;
  double total = 0.0;
  for (const auto& [a, b] : merged) {
    std::vector<double> cuts{a};
    for (double c : peak_centers)
      for (double x : {c - core, c + core})
        if (x > a && x < b) cuts.push_back(x);
    cuts.push_back(b);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
      total += quad::integrate(psd, cuts[i], cuts[i + 1], 24, tol);
  }
  return total;
}

}  // namespace detail

// Occupation of a spectrum given as a callable, integrated adaptively over a
// window of +-max(50 Gamma_eff, 10 kappa) around each listed peak
// (overlapping windows are merged). The integral is evaluated on two
// unrelated subdivision layouts whose node sets are disjoint; the built-in
// quadrature error estimate is both too optimistic for spikes at interval
// ends and orders of magnitude too pessimistic for narrow centred lines, so
// agreement of the layouts to rel_tol is the convergence certificate.
template <typename F>
double occupation(const F& psd, const std::vector<double>& peak_centers,
                  double effective_linewidth, double kappa,
                  double rel_tol = 1e-8) {
  if (peak_centers.empty())
    throw std::invalid_argument("occupation: no peak centers given");
  const double hw =
      std::max(50.0 * std::abs(effective_linewidth), 10.0 * std::abs(kappa));
  if (!(hw > 0.0))
    throw std::invalid_argument("occupation: window width must be positive");
  std::vector<std::pair<double, double>> windows;
  windows.reserve(peak_centers.size());
  for (double c : peak_centers) windows.emplace_back(c - hw, c + hw);
  std::sort(windows.begin(), windows.end());
  std::vector<std::pair<double, double>> merged{windows.front()};
  for (std::size_t i = 1; i < windows.size(); ++i) {
    if (windows[i].first <= merged.back().second)
      merged.back().second = std::max(merged.back().second, windows[i].second);
    else
      merged.push_back(windows[i]);
  }
  const double lw = std::abs(effective_linewidth);
  const double tol = 0.25 * rel_tol;
  const double first =
      detail::windowed_integral(psd, merged, peak_centers, lw, 4.0, tol);
  const double second =
      detail::windowed_integral(psd, merged, peak_centers, lw, 13.0, tol);
  const double scale = std::max({std::abs(first), std::abs(second), 1e-300});
  if (!(std::abs(first - second) <= rel_tol * scale)) {
    std::ostringstream msg;
    msg << "occupation: adaptive quadrature did not converge (subdivision "
           "layouts give "
        << first << " and " << second << ")";
    throw std::runtime_error(msg.str());
  }
  return 0.5 * (first + second) / two_pi;
}

// Scattering amplitudes from each noise input to the left-moving output at
// one probe offset. left carries the coherent response (it equals the
// four-wave transparency S21); internal_idler and external_idler multiply
// daggered inputs, so their squared moduli add as amplified vacuum.
struct OutputChannels {
  cplx left;
  cplx right;
  cplx internal_signal;
  cplx internal_idler;
  cplx external_idler;
  cplx mechanical;
};

inline OutputChannels output_channels(PumpingScheme scheme, const PumpFrame& pf,
                                      const QuasiModeState& qs, double g0,
                                      double kappa_e, const cplx& sigma,
                                      double omega_m, double gamma_m,
                                      double omega,
                                      bool include_cross_mixing = true) {
  const double kappa_i = qs.kappa_prime - kappa_e;
  const InterferenceFactors fac = interference_factors(
      pf, qs.gamma_minus, qs.gamma_plus, omega, include_cross_mixing);
  const cplx cg0 = pf.chi_g(0, omega);
  const cplx cb2 = pf.chi_g_bar(2, omega);
  const cplx a0 = pf.mix_a(0, omega);
  const cplx ab2 = pf.mix_a_bar(2, omega);
  const bool red = scheme == PumpingScheme::red_signal_sideband;
  const double shift = red ? 0.0 : 2.0 * qs.omega_dp;
  const cplx chi_eff =
      1.0 / (cplx{0.5 * gamma_m, omega - shift - omega_m} + sigma);
  const cplx g_minus = g0 * qs.gamma_minus;
  const cplx g_plus = g0 * qs.gamma_plus;
  const cplx lead = red ? g_minus : g_plus;
  const cplx other = red ? g_plus : g_minus;
  const cplx j = red ? fac.j_minus : fac.j_plus;
  const cplx probe_lead = red ? fac.p_minus : fac.q_plus;
  const cplx probe_other = red ? fac.p_plus : fac.q_minus;
  const cplx window =
      1.0 - lead * j * chi_eff *
                (std::conj(lead) * cg0 * probe_lead +
                 other * cb2 * a0 * probe_other);
  const cplx idler =
      ab2 - lead * j * chi_eff *
                (std::conj(lead) * ab2 * cg0 * probe_lead +
                 other * cb2 * probe_other);
  const double half_ke = 0.5 * kappa_e;
  const double rt_half_ke = std::sqrt(half_ke);
  OutputChannels ch;
  ch.left = 1.0 - half_ke * cg0 * window;
  ch.right = half_ke * cg0 * window;
  ch.internal_signal = rt_half_ke * cg0 * window * std::sqrt(kappa_i);
  ch.internal_idler = rt_half_ke * cg0 * idler * std::sqrt(kappa_i);
  ch.external_idler = rt_half_ke * cg0 * idler * std::sqrt(kappa_e);
  ch.mechanical = rt_half_ke * lead * j * cg0 * chi_eff * std::sqrt(gamma_m);
  return ch;
}

// Symmetrised noise spectrum of the left-moving output field near the
// detection sideband, in units of hbar omega: detection_added_noise plus
// sum |c|^2 (n + 1/2) over the six inputs. An optional moving-average filter
// of the given resolution bandwidth mimics the spectrum analyser.
inline Spectrum output_psd(PumpingScheme scheme, const QuasiModeState& qs,
                           double kerr, double g0, double kappa_e,
                           const BackactionResult& backaction,
                           const NoiseEnvironment& noise,
                           const std::vector<double>& grid,
                           double resolution_bandwidth = 0.0,
                           bool include_cross_mixing = true) {
  detail::check_spectrum_grid(grid, "output_psd");
  detail::check_noise(noise, "output_psd");
  if (!(kappa_e > 0.0) || kappa_e > qs.kappa_prime)
    throw std::invalid_argument(
        "output_psd: kappa_e must be positive and within the total linewidth");
  if (resolution_bandwidth < 0.0)
    throw std::invalid_argument("output_psd: negative resolution bandwidth");
  if (scheme == PumpingScheme::red_signal_sideband && !(qs.omega_dp > 0.0))
    throw std::invalid_argument(
        "output_psd: red-sideband pumping needs omega_dp > 0");
  if (scheme == PumpingScheme::blue_idler_sideband && !(qs.omega_dp < 0.0))
    throw std::invalid_argument(
        "output_psd: blue-sideband pumping needs omega_dp < 0");
  const double gamma_m =
      backaction.effective_linewidth - backaction.optical_damping;
  const double omega_m =
      backaction.effective_frequency - backaction.optical_spring;
  if (!(gamma_m > 0.0) || !(omega_m > 0.0))
    throw std::invalid_argument(
        "output_psd: backaction does not define positive bare mechanics");
  const double kappa_i = qs.kappa_prime - kappa_e;
  const double n_c_check = effective_cavity_occupation(
      kappa_e, kappa_i, noise.cavity_external_occupation,
      noise.cavity_internal_occupation);
  if (std::abs(n_c_check - noise.effective_cavity_occupation) >
      1e-12 * std::max(1.0, n_c_check))
    throw std::invalid_argument(
        "output_psd: effective_cavity_occupation is inconsistent with the "
        "coupling-weighted bath occupations");

  const DriveFrame f{qs.delta_d, kerr, qs.n_d, qs.kappa_prime};
  const PumpFrame pf{f, qs.omega_dp};
  const double n_e = noise.cavity_external_occupation;
  const double n_i = noise.cavity_internal_occupation;
  const double n_th = noise.mechanical_bath_occupation;
  Spectrum out;
  out.frequency = grid;
  out.psd.resize(grid.size());
  out.scheme = scheme_name(scheme);
  out.resolution_bandwidth = resolution_bandwidth;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const OutputChannels ch = output_channels(
        scheme, pf, qs, g0, kappa_e, backaction.self_energy, omega_m, gamma_m,
        grid[i], include_cross_mixing);
    out.psd[i] =
        noise.detection_added_noise +
        (n_e + 0.5) * (std::norm(ch.left) + std::norm(ch.right) +
                       std::norm(ch.external_idler)) +
        (n_i + 0.5) * (std::norm(ch.internal_signal) +
                       std::norm(ch.internal_idler)) +
        (n_th + 0.5) * std::norm(ch.mechanical);
  }
  if (resolution_bandwidth > 0.0)
    out.psd = detail::moving_average(grid, out.psd, resolution_bandwidth);
  return out;
}

// Johnson noise power of a matched resistor at the given temperature in a
// given bandwidth, in dBm: the HEMT calibration line 10 log10(kB T df / 1mW).
inline double hemt_noise_power(double temperature, double bandwidth) {
  if (!(temperature > 0.0) || !(bandwidth > 0.0))
    throw std::invalid_argument(
        "hemt_noise_power: temperature and bandwidth must be positive");
  return watt_to_dbm(boltzmann_kB * temperature * bandwidth);
}

} // namespace kerrmech
