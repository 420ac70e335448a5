#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kerrmech/backaction.hpp"
#include "kerrmech/constants.hpp"
#include "kerrmech/fitting.hpp"
#include "kerrmech/omit.hpp"
#include "kerrmech/quasimode.hpp"

using namespace kerrmech;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

constexpr double tp = two_pi;

std::vector<double> uniform_grid(double center, double halfwidth,
                                 std::size_t points) {
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = center - halfwidth +
           2.0 * halfwidth * static_cast<double>(i) /
               static_cast<double>(points - 1);
  return g;
}

ResponseTrace resonance_trace(double w0, double ki, double ke,
                              const FitBackground& bg, double halfwidths,
                              std::size_t points) {
  ResponseTrace t;
  t.frequency = uniform_grid(w0, halfwidths * (ki + ke), points);
  t.s21.reserve(points);
  for (double f : t.frequency)
    t.s21.push_back(linear_resonance_model(f, w0, ki, ke, bg));
  return t;
}

ResponseTrace window_trace(double weff, double geff, double depth,
                           const FitBackground& bg, double halfwidths,
                           std::size_t points) {
  ResponseTrace t;
  t.frequency = uniform_grid(weff, halfwidths * geff, points);
  t.s21.reserve(points);
  for (double f : t.frequency)
    t.s21.push_back(omit_window_model(f, weff, geff, depth, bg));
  return t;
}

void add_noise(ResponseTrace& t, double sigma, std::mt19937& rng) {
  std::normal_distribution<double> g;
  for (cplx& s : t.s21) s += sigma * cplx{g(rng), g(rng)};
}

double rel_err(double a, double b) { return std::abs(a - b) / std::abs(b); }

double wrap_diff(double a, double b) {
  return std::abs(detail::wrap_angle(a - b));
}

// Moves the background reference so fitted and injected conventions align.
FitBackground rebase(const FitBackground& bg, double reference) {
  FitBackground out = bg;
  const double u = reference - bg.reference_frequency;
  out.reference_frequency = reference;
  out.amplitude_offset = bg.amplitude_offset + bg.amplitude_slope * u;
  out.phase_offset = bg.phase_offset + bg.phase_slope * u;
  return out;
}

// Sideband fields scaled so |gamma_-|^2 hits the requested value.
double flux_for(const DriveFrame& f, double omega_dp, double kappa_e,
                double gamma_minus_sq) {
  const SidebandFields unit = sideband_fields(f, omega_dp, kappa_e, 1.0);
  return gamma_minus_sq / std::norm(unit.gamma_minus);
}

struct Placement {
  QuasiModeState state;
  double omega_dp = 0.0;
};

Placement place_pump(const DriveFrame& f, bool blue, double omega_m,
                     double delta_p, double kappa_e, double gamma_minus_sq) {
  const QuasimodeSplitting split =
      quasimode_frequencies(0.0, f.delta_d, f.kerr, f.n_d);
  REQUIRE_FALSE(split.degenerate);
  const double omega_p = blue ? split.omega_i + omega_m + delta_p
                              : split.omega_s - omega_m + delta_p;
  Placement out;
  out.omega_dp = -omega_p;
  out.state = quasimode_state(f, 0.0, out.omega_dp, kappa_e,
                              flux_for(f, out.omega_dp, kappa_e,
                                       gamma_minus_sq));
  return out;
}

OmitConfig config_for(const DriveFrame& f, const QuasiModeState& qs, bool blue,
                      double g0, double omega_m, double gamma_m,
                      double kappa_e) {
  OmitConfig cfg;
  cfg.scheme = blue ? PumpingScheme::blue_idler_sideband
                    : PumpingScheme::red_signal_sideband;
  cfg.quasimode = qs;
  cfg.flux.kerr_anharmonicity = f.kerr;
  cfg.flux.single_photon_coupling = g0;
  cfg.mechanics.resonance_frequency = omega_m;
  cfg.mechanics.intrinsic_linewidth = gamma_m;
  cfg.kappa_e = kappa_e;
  return cfg;
}

CircuitParams design_circuit() {
  CircuitParams c;
  c.capacitance = 824e-15;
  c.coupling_capacitance = 6.5e-15;
  c.linear_inductance = 489e-12;
  c.junction_critical_current = 2.6e-6;
  c.loop_inductance = 278e-12;
  c.feedline_impedance = 50.0;
  return c;
}

struct ArchTruth {
  double ic = 0.0, beta_l = 0.0, scale = 0.0;
};

FluxArchData arch_data(const ArchTruth& truth, std::size_t points) {
  CircuitParams c = design_circuit();
  c.junction_critical_current = truth.ic;
  c.loop_inductance = truth.beta_l * flux_quantum / (2.0 * truth.ic);
  const double edge =
      (0.46 + 0.5 * truth.beta_l * std::sin(pi * 0.46)) / truth.scale;
  FluxArchData data;
  data.up_bias = uniform_grid(0.0, edge, points);
  data.up_frequency = arch_frequency_sweep(data.up_bias, SweepDirection::up,
                                           truth.scale, truth.beta_l, c);
  std::vector<double> down = uniform_grid(0.0, edge * 0.98, points - 1);
  std::reverse(down.begin(), down.end());
  data.down_bias = down;
  data.down_frequency = arch_frequency_sweep(data.down_bias,
                                             SweepDirection::down, truth.scale,
                                             truth.beta_l, c);
  for (double f : data.up_frequency) REQUIRE(std::isfinite(f));
  for (double f : data.down_frequency) REQUIRE(std::isfinite(f));
  return data;
}

}  // namespace

TEST_CASE("background conventions", "[fitting]") {
  FitBackground bg;
  bg.reference_frequency = tp * 5e9;
  bg.amplitude_offset = 1.3;
  bg.amplitude_slope = 2e-9;
  bg.phase_offset = 0.7;
  bg.phase_slope = 3e-10;

  SECTION("value at the reference is the offset pair") {
    const cplx v = bg.value(bg.reference_frequency);
    CHECK(std::abs(v - 1.3 * std::exp(im * 0.7)) < 1e-14);
  }
  SECTION("rebasing moves the reference without moving the curve") {
    const FitBackground moved = rebase(bg, tp * 5.001e9);
    for (double f : uniform_grid(tp * 5e9, tp * 5e6, 7))
      CHECK(std::abs(moved.value(f) - bg.value(f)) <= 1e-12 * std::abs(bg.value(f)));
  }
  SECTION("division then multiplication reconstructs the raw trace") {
    std::mt19937 rng(5);
    std::normal_distribution<double> g;
    ResponseTrace t;
    t.frequency = uniform_grid(tp * 5e9, tp * 4e6, 64);
    for (std::size_t i = 0; i < t.frequency.size(); ++i)
      t.s21.push_back(cplx{1.0 + 0.1 * g(rng), 0.1 * g(rng)});
    ResponseTrace divided = t;
    divided.s21 = background_divide(t, bg);
    const std::vector<cplx> back = background_multiply(divided, bg);
    for (std::size_t i = 0; i < t.s21.size(); ++i)
      CHECK(std::abs(back[i] - t.s21[i]) <= 1e-12 * std::abs(t.s21[i]));
  }
  SECTION("vanishing background is rejected") {
    FitBackground dead = bg;
    dead.amplitude_offset = 0.0;
    dead.amplitude_slope = 0.0;
    ResponseTrace t;
    t.frequency = {tp * 5e9, tp * 5.1e9};
    t.s21 = {cplx{1.0}, cplx{1.0}};
    CHECK_THROWS_AS(background_divide(t, dead), std::runtime_error);
  }
}

TEST_CASE("linear resonance fit round trip", "[fitting]") {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int draw = 0; draw < 20; ++draw) {
    const double w0 = tp * (4.5e9 + 1.0e9 * u(rng));
    const double ki = tp * (150e3 + 250e3 * u(rng));
    const double ke = tp * (80e3 + 80e3 * u(rng));
    const double kp = ki + ke;
    const double span = 16.0 * kp;
    FitBackground bg;
    bg.reference_frequency = w0;
    bg.amplitude_offset = 0.5 + 1.5 * u(rng);
    bg.amplitude_slope =
        (u(rng) < 0.5 ? -1.0 : 1.0) * (0.1 + 0.2 * u(rng)) *
        bg.amplitude_offset / span;
    bg.phase_offset = -pi + tp * u(rng);
    bg.phase_slope = (u(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + 2.5 * u(rng)) / span;
    bg.circle_rotation = -0.4 + 0.8 * u(rng);

    const ResponseTrace t = resonance_trace(w0, ki, ke, bg, 8.0, 321);
    const FitResult res = fit_linear_resonance(t);
    REQUIRE(res.converged);
    CHECK(std::abs(res.parameters.at("omega_0") - w0) < 1e-6 * kp);
    CHECK(rel_err(res.parameters.at("kappa_i"), ki) < 1e-6);
    CHECK(rel_err(res.parameters.at("kappa_e"), ke) < 1e-6);
    CHECK(wrap_diff(res.parameters.at("theta"), bg.circle_rotation) < 1e-6);
    const FitBackground moved =
        rebase(bg, res.parameters.at("reference_frequency"));
    CHECK(rel_err(res.parameters.at("alpha_0"), moved.amplitude_offset) < 1e-6);
    CHECK(rel_err(res.parameters.at("alpha_1"), moved.amplitude_slope) < 1e-6);
    CHECK(wrap_diff(res.parameters.at("beta_0"), moved.phase_offset) < 1e-6);
    CHECK(rel_err(res.parameters.at("beta_1"), moved.phase_slope) < 1e-6);
    CHECK(res.standard_errors.count("kappa_i") == 1);
  }
}

TEST_CASE("linear resonance fit near the sweet spot with noise", "[fitting]") {
  const double w0 = tp * 5.2672e9;
  const double ki = tp * 269e3;
  const double ke = tp * 111e3;
  FitBackground bg;
  bg.reference_frequency = w0;
  bg.amplitude_offset = 1.05;
  bg.amplitude_slope = 0.02 / (16.0 * (ki + ke));
  bg.phase_offset = 0.4;
  bg.phase_slope = 1.2 / (16.0 * (ki + ke));
  bg.circle_rotation = 0.15;
  std::mt19937 rng(23);

  ResponseTrace t = resonance_trace(w0, ki, ke, bg, 8.0, 401);
  add_noise(t, 0.01, rng);
  const FitResult res = fit_linear_resonance(t);
  REQUIRE(res.converged);
  REQUIRE(res.standard_errors.count("omega_0") == 1);
  CHECK(std::abs(res.parameters.at("omega_0") - w0) <
        3.0 * res.standard_errors.at("omega_0"));
  CHECK(std::abs(res.parameters.at("kappa_i") - ki) <
        3.0 * res.standard_errors.at("kappa_i"));
  CHECK(std::abs(res.parameters.at("kappa_e") - ke) <
        3.0 * res.standard_errors.at("kappa_e"));
  CHECK(res.standard_errors.at("kappa_i") > 0.0);
  CHECK(res.residual_rms == Approx(0.01).margin(0.002));

  SECTION("standard errors shrink with the square root of the points") {
    ResponseTrace big = resonance_trace(w0, ki, ke, bg, 8.0, 1604);
    add_noise(big, 0.01, rng);
    const FitResult res4 = fit_linear_resonance(big);
    REQUIRE(res4.converged);
    REQUIRE(res4.standard_errors.count("kappa_i") == 1);
    const double ratio =
        res.standard_errors.at("kappa_i") / res4.standard_errors.at("kappa_i");
    CHECK(ratio > 1.5);
    CHECK(ratio < 2.5);
  }
}

TEST_CASE("linear resonance fit error handling", "[fitting]") {
  const double w0 = tp * 5e9;
  FitBackground bg;
  bg.reference_frequency = w0;

  SECTION("no dip") {
    ResponseTrace flat;
    flat.frequency = uniform_grid(w0, tp * 4e6, 101);
    for (double f : flat.frequency)
      flat.s21.push_back(bg.value(f));
    CHECK_THROWS_WITH(fit_linear_resonance(flat),
                      ContainsSubstring("no resonance dip"));
  }
  SECTION("trace narrower than five linewidths") {
    const ResponseTrace t =
        resonance_trace(w0, tp * 270e3, tp * 110e3, bg, 1.0, 101);
    CHECK_THROWS_WITH(fit_linear_resonance(t),
                      ContainsSubstring("five linewidths"));
  }
  SECTION("descending axis") {
    ResponseTrace t = resonance_trace(w0, tp * 270e3, tp * 110e3, bg, 8.0, 32);
    std::reverse(t.frequency.begin(), t.frequency.end());
    CHECK_THROWS_WITH(fit_linear_resonance(t), ContainsSubstring("ascending"));
  }
  SECTION("length mismatch") {
    ResponseTrace t = resonance_trace(w0, tp * 270e3, tp * 110e3, bg, 8.0, 32);
    t.s21.pop_back();
    CHECK_THROWS_WITH(fit_linear_resonance(t),
                      ContainsSubstring("lengths differ"));
  }
}

TEST_CASE("transparency window fit round trip", "[fitting]") {
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int draw = 0; draw < 20; ++draw) {
    const double weff = tp * (4e6 + 2e6 * u(rng));
    const double geff = tp * (300.0 + 3700.0 * u(rng));
    const double depth = 0.3 + 1.0 * u(rng);
    const double span = 80.0 * geff;
    FitBackground bg;
    bg.reference_frequency = weff;
    bg.amplitude_offset = 0.7 + 0.8 * u(rng);
    bg.amplitude_slope = (u(rng) < 0.5 ? -1.0 : 1.0) * (0.1 + 0.2 * u(rng)) *
                         bg.amplitude_offset / span;
    bg.phase_offset = -pi + tp * u(rng);
    bg.phase_slope = (u(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + 2.5 * u(rng)) / span;
    bg.circle_rotation = -0.5 + 1.0 * u(rng);

    const ResponseTrace t = window_trace(weff, geff, depth, bg, 40.0, 401);
    const FitResult res = fit_omit_window(t);
    REQUIRE(res.converged);
    CHECK(std::abs(res.parameters.at("omega_eff") - weff) < 1e-6 * geff);
    CHECK(rel_err(res.parameters.at("gamma_eff"), geff) < 1e-6);
    CHECK(rel_err(res.parameters.at("depth"), depth) < 1e-6);
    CHECK(wrap_diff(res.parameters.at("theta"), bg.circle_rotation) < 1e-6);

    ResponseTrace noisy = t;
    add_noise(noisy, 0.005 * bg.amplitude_offset, rng);
    const FitResult nres = fit_omit_window(noisy);
    REQUIRE(nres.converged);
    REQUIRE(nres.standard_errors.count("gamma_eff") == 1);
    CHECK(std::abs(nres.parameters.at("omega_eff") - weff) <
          3.0 * nres.standard_errors.at("omega_eff"));
    CHECK(std::abs(nres.parameters.at("gamma_eff") - geff) <
          3.0 * nres.standard_errors.at("gamma_eff"));
    CHECK(std::abs(nres.parameters.at("depth") - depth) <
          3.0 * nres.standard_errors.at("depth"));
    CHECK(rel_err(nres.parameters.at("gamma_eff"), geff) < 5e-3);
    CHECK(std::abs(nres.parameters.at("omega_eff") - weff) < 1e-3 * weff);
  }
}

TEST_CASE("transparency window fit flags bad traces", "[fitting]") {
  SECTION("no window") {
    FitBackground bg;
    bg.reference_frequency = tp * 5e6;
    bg.amplitude_offset = 1.1;
    ResponseTrace flat;
    flat.frequency = uniform_grid(tp * 5e6, tp * 40e3, 101);
    for (double f : flat.frequency) flat.s21.push_back(bg.value(f));
    CHECK_THROWS_WITH(fit_omit_window(flat),
                      ContainsSubstring("no transparency window"));
  }
  SECTION("too few points") {
    ResponseTrace t;
    t.frequency = uniform_grid(tp * 5e6, tp * 1e3, 8);
    t.s21.assign(8, cplx{1.0});
    CHECK_THROWS_WITH(fit_omit_window(t), ContainsSubstring("too few"));
  }
}

TEST_CASE("transparency window fit matches the four-wave response", "[fitting]") {
  const double omega_m = tp * 5.32e6;
  const double gamma_m = tp * 15.0;
  const double kappa_e = tp * 110e3;
  const DriveFrame f{-tp * 2.3e6, -tp * 40e3, 60.0, tp * 380e3};

  SECTION("red scheme dip") {
    const Placement pl = place_pump(f, false, omega_m, tp * 40.0, kappa_e, 0.4);
    OmitConfig cfg =
        config_for(f, pl.state, false, tp * 3.4e3, omega_m, gamma_m, kappa_e);
    const OmitResponse resp = omit_response(cfg);
    const double geff = resp.backaction.effective_linewidth;
    REQUIRE(geff > gamma_m);

    ResponseTrace t;
    t.frequency = resp.probe_offset;
    t.s21 = resp.s21;
    const FitResult res = fit_omit_window(t);
    REQUIRE(res.converged);
    CHECK(rel_err(res.parameters.at("gamma_eff"), geff) < 0.02);
    CHECK(std::abs(res.parameters.at("omega_eff") - resp.window_center) <
          0.25 * geff);
    const double gopt_fit = res.parameters.at("gamma_eff") - gamma_m;
    const double se = res.standard_errors.count("gamma_eff")
                          ? res.standard_errors.at("gamma_eff")
                          : 0.0;
    CHECK(std::abs(gopt_fit - resp.backaction.optical_damping) <
          std::max(3.0 * se, 0.02 * resp.backaction.optical_damping));
  }

  SECTION("blue scheme window") {
    // four-wave mixing damps on the blue side too in the central window
    const Placement pl = place_pump(f, true, omega_m, tp * 40.0, kappa_e, 0.4);
    OmitConfig cfg =
        config_for(f, pl.state, true, tp * 3.4e3, omega_m, gamma_m, kappa_e);
    const OmitResponse resp = omit_response(cfg);
    const double geff = resp.backaction.effective_linewidth;
    REQUIRE(resp.backaction.optical_damping > 0.0);

    ResponseTrace t;
    t.frequency = resp.probe_offset;
    t.s21 = resp.s21;
    const FitResult res = fit_omit_window(t);
    REQUIRE(res.converged);
    CHECK(rel_err(res.parameters.at("gamma_eff"), geff) < 0.02);
    CHECK(std::abs(res.parameters.at("omega_eff") - resp.window_center) <
          0.25 * geff);
  }
}

TEST_CASE("kerr response fit recovers the drive chain", "[fitting][slow]") {
  KerrResponseInputs in;
  in.kerr = -tp * 30e3;
  in.omega0 = tp * 5.2672e9;
  in.kappa_e = tp * 106.5e3;
  in.gamma2 = tp * 300e3;
  in.attenuation_db_guess = -89.0;
  in.n_crit_guess = 0.3;

  std::mt19937 rng(41);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int draw = 0; draw < 6; ++draw) {
    LinewidthModel truth;
    truth.kappa0 = tp * (180e3 + 50e3 * u(rng));
    truth.kappa1 = tp * (120e3 + 50e3 * u(rng));
    truth.n_crit = 0.15 + 0.3 * u(rng);
    truth.gamma2 = in.gamma2;
    truth.kappa_e = in.kappa_e;
    const double att = -92.0 + 6.0 * u(rng);

    const double kappa_typ = in.kappa_e + truth.kappa0 + truth.kappa1;
    const std::vector<double> grid = uniform_grid(in.omega0, 6.0 * kappa_typ, 81);
    const double chip_knee = truth.n_crit * kappa_typ * kappa_typ /
                             (2.0 * in.kappa_e) * hbar * in.omega0;
    KerrResponseSeries series;
    series.sweep_upward = true;
    for (double e : {-1.5, -0.5, 0.5, 1.5}) {
      const double inst =
          chip_knee * std::pow(10.0, e) / std::pow(10.0, att / 10.0);
      ResponseTrace t;
      t.frequency = grid;
      t.s21 = kerr_response_trace(grid, inst, att, truth, in.kerr, in.omega0,
                                  true);
      series.traces.push_back(t);
      series.drive_power.push_back(inst);
    }

    const FitResult res = fit_kerr_response(series, in);
    REQUIRE(res.converged);
    CHECK(rel_err(res.parameters.at("attenuation_db"), att) < 1e-4);
    CHECK(rel_err(res.parameters.at("kappa_0"), truth.kappa0) < 1e-4);
    CHECK(rel_err(res.parameters.at("kappa_1"), truth.kappa1) < 1e-4);
    CHECK(rel_err(res.parameters.at("n_crit"), truth.n_crit) < 1e-4);
    CHECK(res.parameters.at("n_powers") == 4.0);
    CHECK(res.parameters.count("n_d_3") == 1);
    CHECK(res.parameters.count("kerr") == 0);

    if (draw < 2) {
      KerrResponseSeries noisy = series;
      for (ResponseTrace& t : noisy.traces) add_noise(t, 0.005, rng);
      const FitResult nres = fit_kerr_response(noisy, in);
      REQUIRE(nres.converged);
      REQUIRE(nres.standard_errors.count("attenuation_db") == 1);
      CHECK(std::abs(nres.parameters.at("attenuation_db") - att) <
            3.0 * nres.standard_errors.at("attenuation_db"));
      CHECK(std::abs(nres.parameters.at("kappa_0") - truth.kappa0) <
            3.0 * nres.standard_errors.at("kappa_0"));
      CHECK(std::abs(nres.parameters.at("kappa_1") - truth.kappa1) <
            3.0 * nres.standard_errors.at("kappa_1"));
      CHECK(std::abs(nres.parameters.at("n_crit") - truth.n_crit) <
            3.0 * nres.standard_errors.at("n_crit"));
      CHECK(rel_err(nres.parameters.at("kappa_0"), truth.kappa0) < 0.05);
      CHECK(rel_err(nres.parameters.at("kappa_1"), truth.kappa1) < 0.05);
      CHECK(rel_err(nres.parameters.at("n_crit"), truth.n_crit) < 0.05);
    }
  }
}

TEST_CASE("kerr response fit demands a direction when bistable", "[fitting][slow]") {
  KerrResponseInputs in;
  in.kerr = -tp * 250e3;
  in.omega0 = tp * 5.2672e9;
  in.kappa_e = tp * 106.5e3;
  in.gamma2 = tp * 300e3;
  in.attenuation_db_guess = -89.0;
  LinewidthModel truth;
  truth.kappa0 = tp * 210e3;
  truth.kappa1 = 0.0;
  truth.gamma2 = in.gamma2;
  truth.kappa_e = in.kappa_e;
  const double att = -89.0;
  const double kappa_typ = in.kappa_e + truth.kappa0;

  const std::vector<double> grid =
      uniform_grid(in.omega0 - 2.0 * kappa_typ, 8.0 * kappa_typ, 101);
  const double chip = 10.0 * kappa_typ * kappa_typ / (2.0 * in.kappa_e) *
                      hbar * in.omega0;
  KerrResponseSeries series;
  for (double mul : {0.5, 1.0, 2.0}) {
    const double inst = chip * mul / std::pow(10.0, att / 10.0);
    ResponseTrace t;
    t.frequency = grid;
    t.s21 =
        kerr_response_trace(grid, inst, att, truth, in.kerr, in.omega0, true);
    series.traces.push_back(t);
    series.drive_power.push_back(inst);
  }
  REQUIRE_THROWS_WITH(fit_kerr_response(series, in),
                      ContainsSubstring("sweep direction"));
}

TEST_CASE("flux arch fit recovers the squid parameters", "[fitting][slow]") {
  std::mt19937 rng(53);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const CircuitParams design = design_circuit();
  for (int draw = 0; draw < 8; ++draw) {
    ArchTruth truth;
    truth.ic = 1.8e-6 + 1.7e-6 * u(rng);
    truth.beta_l = 0.35 + 0.6 * u(rng);
    truth.scale = 0.6 + 1.2 * u(rng);
    const FluxArchData data = arch_data(truth, 41);

    const FitResult res = fit_flux_arch(data, design);
    REQUIRE(res.converged);
    CHECK(rel_err(res.parameters.at("critical_current"), truth.ic) < 1e-4);
    CHECK(rel_err(res.parameters.at("beta_l"), truth.beta_l) < 1e-4);
    CHECK(rel_err(res.parameters.at("flux_scale"), truth.scale) < 1e-4);

    if (draw < 3) {
      FluxArchData noisy = data;
      double fmax = 0.0, fmin = 1e300;
      for (double f : noisy.up_frequency) {
        fmax = std::max(fmax, f);
        fmin = std::min(fmin, f);
      }
      std::normal_distribution<double> g(0.0, 0.005 * (fmax - fmin));
      for (double& f : noisy.up_frequency) f += g(rng);
      for (double& f : noisy.down_frequency) f += g(rng);
      const FitResult nres = fit_flux_arch(noisy, design);
      REQUIRE(nres.converged);
      REQUIRE(nres.standard_errors.count("beta_l") == 1);
      CHECK(std::abs(nres.parameters.at("critical_current") - truth.ic) <
            3.0 * nres.standard_errors.at("critical_current"));
      CHECK(std::abs(nres.parameters.at("beta_l") - truth.beta_l) <
            3.0 * nres.standard_errors.at("beta_l"));
      CHECK(std::abs(nres.parameters.at("flux_scale") - truth.scale) <
            3.0 * nres.standard_errors.at("flux_scale"));
    }
  }

  SECTION("device values") {
    for (double bl : {0.699, 0.82}) {
      const ArchTruth truth{2.6e-6, bl, 1.0};
      const FluxArchData data = arch_data(truth, 41);
      const FitResult res = fit_flux_arch(data, design);
      REQUIRE(res.converged);
      CHECK(rel_err(res.parameters.at("critical_current"), truth.ic) < 1e-5);
      CHECK(rel_err(res.parameters.at("beta_l"), bl) < 1e-5);
      CHECK(rel_err(res.parameters.at("flux_scale"), 1.0) < 1e-5);
      CHECK(res.parameters.at("loop_inductance") ==
            Approx(bl * flux_quantum / (2.0 * 2.6e-6)).epsilon(1e-4));
    }
  }
}

TEST_CASE("flux arch sweep model and fit flags", "[fitting]") {
  const CircuitParams design = design_circuit();

  SECTION("beyond the arch edge the model reports no resonance") {
    const std::vector<double> bias{0.0, 0.3, 0.9};
    const std::vector<double> f =
        arch_frequency_sweep(bias, SweepDirection::up, 1.0, 0.7, design);
    CHECK(std::isfinite(f[0]));
    CHECK(std::isfinite(f[1]));
    CHECK_FALSE(std::isfinite(f[2]));
  }
  SECTION("monotonicity is enforced per direction") {
    CHECK_THROWS_WITH(arch_frequency_sweep({0.0, 0.2, 0.1}, SweepDirection::up,
                                           1.0, 0.7, design),
                      ContainsSubstring("monotone"));
    CHECK_THROWS_WITH(arch_frequency_sweep({0.1, 0.2}, SweepDirection::down,
                                           1.0, 0.7, design),
                      ContainsSubstring("monotone"));
  }
  SECTION("flat arch cannot calibrate the axis") {
    FluxArchData flat;
    flat.up_bias = uniform_grid(0.0, 1.0, 21);
    flat.up_frequency.assign(21, tp * 5e9);
    CHECK_THROWS_WITH(fit_flux_arch(flat, design), ContainsSubstring("flat"));
  }
  SECTION("too few points") {
    FluxArchData tiny;
    tiny.up_bias = {0.0, 0.1, 0.2};
    tiny.up_frequency = {tp * 5e9, tp * 4.9e9, tp * 4.8e9};
    CHECK_THROWS_WITH(fit_flux_arch(tiny, design), ContainsSubstring("too few"));
  }
  SECTION("length mismatch") {
    FluxArchData bad;
    bad.up_bias = uniform_grid(0.0, 1.0, 12);
    bad.up_frequency.assign(11, tp * 5e9);
    CHECK_THROWS_WITH(fit_flux_arch(bad, design),
                      ContainsSubstring("lengths differ"));
  }
}

TEST_CASE("fits are deterministic and idempotent", "[fitting]") {
  const double w0 = tp * 5.2672e9;
  const double ki = tp * 269e3;
  const double ke = tp * 111e3;
  FitBackground bg;
  bg.reference_frequency = w0;
  bg.amplitude_offset = 1.1;
  bg.amplitude_slope = 0.03 / (16.0 * (ki + ke));
  bg.phase_offset = -0.8;
  bg.phase_slope = 0.9 / (16.0 * (ki + ke));
  bg.circle_rotation = 0.1;
  std::mt19937 rng(61);
  ResponseTrace t = resonance_trace(w0, ki, ke, bg, 8.0, 301);
  add_noise(t, 0.005, rng);

  const FitResult first = fit_linear_resonance(t);
  const FitResult again = fit_linear_resonance(t);
  REQUIRE(first.converged);
  CHECK(first.parameters == again.parameters);
  CHECK(first.standard_errors == again.standard_errors);

  // Refitting the model built from the fit returns the same parameters.
  FitBackground fitted;
  fitted.reference_frequency = first.parameters.at("reference_frequency");
  fitted.amplitude_offset = first.parameters.at("alpha_0");
  fitted.amplitude_slope = first.parameters.at("alpha_1");
  fitted.phase_offset = first.parameters.at("beta_0");
  fitted.phase_slope = first.parameters.at("beta_1");
  fitted.circle_rotation = first.parameters.at("theta");
  ResponseTrace ideal;
  ideal.frequency = t.frequency;
  for (double f : ideal.frequency)
    ideal.s21.push_back(linear_resonance_model(
        f, first.parameters.at("omega_0"), first.parameters.at("kappa_i"),
        first.parameters.at("kappa_e"), fitted));
  const FitResult refit = fit_linear_resonance(ideal);
  REQUIRE(refit.converged);
  const double kp = first.parameters.at("kappa_i") + first.parameters.at("kappa_e");
  CHECK(std::abs(refit.parameters.at("omega_0") -
                 first.parameters.at("omega_0")) < 1e-10 * kp);
  CHECK(rel_err(refit.parameters.at("kappa_i"), first.parameters.at("kappa_i")) <
        1e-10);
  CHECK(rel_err(refit.parameters.at("kappa_e"), first.parameters.at("kappa_e")) <
        1e-10);
  CHECK(wrap_diff(refit.parameters.at("theta"), first.parameters.at("theta")) <
        1e-10);
}
