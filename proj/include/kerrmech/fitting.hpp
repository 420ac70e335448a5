#pragma once
// Least-squares fits for the measured responses. One damped Gauss-Newton
// engine with numerical Jacobians drives four staged operations: the linear
// resonance circle, the Kerr single-tone power series, the mechanical
// transparency window, and the flux arch. Staging follows the measurement
// chain: fit the slowly varying background away from the feature, divide it
// off, fit the feature alone, then refit everything jointly from those
// starting values.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "constants.hpp"
#include "kerr_steady.hpp"
#include "squid.hpp"

namespace kerrmech {

struct ResponseTrace {
  std::vector<double> frequency;  // [rad/s] absolute or probe offset, ascending
  std::vector<cplx> s21;
};

// Slowly varying transmission background (a0 + a1 u) e^{i (b1 u + b0)} with
// u = omega - reference_frequency. The reference keeps the linear terms
// conditioned; reference 0 recovers the absolute-frequency convention.
struct FitBackground {
  double reference_frequency = 0.0;
  double amplitude_offset = 1.0;
  double amplitude_slope = 0.0;  // per rad/s
  double phase_offset = 0.0;     // [rad]
  double phase_slope = 0.0;      // [s]
  double circle_rotation = 0.0;  // theta of the resonance circle [rad]

  cplx value(double omega) const {
    const double u = omega - reference_frequency;
    return (amplitude_offset + amplitude_slope * u) *
           std::exp(im * (phase_slope * u + phase_offset));
  }
};

struct FitResult {
  std::map<std::string, double> parameters;
  std::map<std::string, double> standard_errors;  // filled only on convergence
  double residual_rms = 0.0;
  bool converged = false;
  int iterations = 0;
};

inline std::vector<cplx> background_divide(const ResponseTrace& trace,
                                           const FitBackground& bg) {
  std::vector<cplx> out(trace.s21.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const cplx v = bg.value(trace.frequency[i]);
    if (std::abs(v) < 1e-300)
      throw std::runtime_error("background_divide: background vanishes on the grid");
    out[i] = trace.s21[i] / v;
  }
  return out;
}

inline std::vector<cplx> background_multiply(const ResponseTrace& trace,
                                             const FitBackground& bg) {
  std::vector<cplx> out(trace.s21.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = trace.s21[i] * bg.value(trace.frequency[i]);
  return out;
}

// Side-coupled notch with a rotated coupling circle on the linear background.
inline cplx linear_resonance_model(double omega, double omega0, double kappa_i,
                                   double kappa_e, const FitBackground& bg) {
  const cplx circle = 1.0 - kappa_e * std::exp(im * bg.circle_rotation) /
                                cplx{kappa_i + kappa_e, 2.0 * (omega - omega0)};
  return bg.value(omega) * circle;
}

// Single-pole transparency window at the mechanical scale; theta near pi
// turns the red-scheme dip into a blue-scheme gain peak.
inline cplx omit_window_model(double offset, double omega_eff, double gamma_eff,
                              double depth, const FitBackground& bg) {
  const cplx pole = 1.0 - depth * gamma_eff * std::exp(im * bg.circle_rotation) /
                              cplx{gamma_eff, 2.0 * (offset - omega_eff)};
  return bg.value(offset) * pole;
}

namespace detail {

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Box constraints plus a typical magnitude per parameter. All step sizes and
// the convergence test are relative to the scales.
struct FitBox {
  Eigen::VectorXd lower, upper, scale;
};

inline Eigen::VectorXd clamp_box(Eigen::VectorXd x, const FitBox& box) {
  for (Eigen::Index k = 0; k < x.size(); ++k)
    x(k) = std::clamp(x(k), box.lower(k), box.upper(k));
  return x;
}

inline Eigen::MatrixXd numerical_jacobian(const ResidualFn& f,
                                          const Eigen::VectorXd& x,
                                          const FitBox& box, Eigen::Index m) {
  const Eigen::Index k = x.size();
  Eigen::MatrixXd jac(m, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double h = 1e-6 * box.scale(j);
    Eigen::VectorXd xp = x, xm = x;
    xp(j) = std::min(x(j) + h, box.upper(j));
    xm(j) = std::max(x(j) - h, box.lower(j));
    const double denom = xp(j) - xm(j);
    if (denom <= 0.0) {
      jac.col(j).setZero();
      continue;
    }
    jac.col(j) = (f(xp) - f(xm)) / denom;
  }
  return jac;
}

// Nelder-Mead on the clamped sum of squares; rescue path for starts the
// damped step cannot improve.
inline Eigen::VectorXd nelder_mead(const ResidualFn& f, const Eigen::VectorXd& x0,
                                   const FitBox& box, int budget) {
  const Eigen::Index k = x0.size();
  auto cost = [&](const Eigen::VectorXd& x) {
    const double s = f(clamp_box(x, box)).squaredNorm();
    return std::isfinite(s) ? s : std::numeric_limits<double>::max();
  };
  std::vector<Eigen::VectorXd> v(static_cast<std::size_t>(k) + 1,
                                 clamp_box(x0, box));
  for (Eigen::Index j = 0; j < k; ++j)
    v[static_cast<std::size_t>(j) + 1](j) += 0.05 * box.scale(j);
  std::vector<double> c(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) c[j] = cost(v[j]);
  for (int it = 0; it < budget; ++it) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return c[a] < c[b]; });
    std::vector<Eigen::VectorXd> vs(v.size());
    std::vector<double> cs(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) {
      vs[j] = v[order[j]];
      cs[j] = c[order[j]];
    }
    v.swap(vs);
    c.swap(cs);
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(k);
    for (std::size_t j = 0; j + 1 < v.size(); ++j) centroid += v[j];
    centroid /= static_cast<double>(k);
    const Eigen::VectorXd reflected = centroid + (centroid - v.back());
    const double cr = cost(reflected);
    if (cr < c.front()) {
      const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - v.back());
      const double ce = cost(expanded);
      if (ce < cr) {
        v.back() = expanded;
        c.back() = ce;
      } else {
        v.back() = reflected;
        c.back() = cr;
      }
    } else if (cr < c[v.size() - 2]) {
      v.back() = reflected;
      c.back() = cr;
    } else {
      const Eigen::VectorXd contracted = centroid + 0.5 * (v.back() - centroid);
      const double cc = cost(contracted);
      if (cc < c.back()) {
        v.back() = contracted;
        c.back() = cc;
      } else {
        for (std::size_t j = 1; j < v.size(); ++j) {
          v[j] = v.front() + 0.5 * (v[j] - v.front());
          c[j] = cost(v[j]);
        }
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < v.size(); ++j)
    if (c[j] < c[best]) best = j;
  return clamp_box(v[best], box);
}

struct SolverResult {
  Eigen::VectorXd x;
  Eigen::VectorXd standard_errors;  // size 0 when unavailable
  double rms = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Levenberg-Marquardt with box clamping. The normal equations are solved in
// scale units (column-scaled Jacobian): mixed raw magnitudes such as rad/s
// offsets against phase slopes would otherwise exhaust double precision.
// Accepts non-increasing steps so a zero-residual optimum terminates through
// the step test; falls back to the simplex once if no damping produces an
// acceptable step.
inline SolverResult levenberg_marquardt(const ResidualFn& f,
                                        const Eigen::VectorXd& x0,
                                        const FitBox& box,
                                        int max_iterations = 500,
                                        double step_tolerance = 1e-10) {
  SolverResult out;
  Eigen::VectorXd x = clamp_box(x0, box);
  Eigen::VectorXd r = f(x);
  const Eigen::Index m = r.size(), k = x.size();
  double ssq = r.squaredNorm();
  if (!std::isfinite(ssq)) {
    x = nelder_mead(f, x, box, 50 * static_cast<int>(k) + 150);
    r = f(x);
    ssq = r.squaredNorm();
  }
  double lambda = 1e-3;
  bool fallback_used = false;
  int it = 0;
  for (; it < max_iterations; ++it) {
    Eigen::MatrixXd jac = numerical_jacobian(f, x, box, m);
    for (Eigen::Index j = 0; j < k; ++j) jac.col(j) *= box.scale(j);
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd grad = jac.transpose() * r;
    Eigen::VectorXd damp = jtj.diagonal();
    const double dmax = std::max(damp.maxCoeff(), 1e-300);
    for (Eigen::Index j = 0; j < k; ++j)
      damp(j) = std::max(damp(j), 1e-12 * dmax);
    bool accepted = false;
    double step_rel = 0.0;
    for (int trial = 0; trial < 25 && !accepted; ++trial) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * damp;
      const Eigen::VectorXd delta = a.ldlt().solve(-grad);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd xn =
          clamp_box(x + delta.cwiseProduct(box.scale), box);
      const Eigen::VectorXd rn = f(xn);
      const double sn = rn.squaredNorm();
      if (std::isfinite(sn) && sn <= ssq * (1.0 + 1e-14)) {
        step_rel = 0.0;
        for (Eigen::Index j = 0; j < k; ++j)
          step_rel = std::max(step_rel, std::abs(xn(j) - x(j)) / box.scale(j));
        x = xn;
        r = rn;
        ssq = sn;
        lambda = std::max(lambda / 3.0, 1e-14);
        accepted = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) {
      if (!fallback_used) {
        fallback_used = true;
        x = nelder_mead(f, x, box, 50 * static_cast<int>(k) + 150);
        r = f(x);
        ssq = r.squaredNorm();
        lambda = 1e-3;
        continue;
      }
      ++it;
      break;
    }
    if (step_rel < step_tolerance) {
      out.converged = true;
      ++it;
      break;
    }
  }
  out.x = x;
  out.rms = std::sqrt(ssq / static_cast<double>(m));
  out.iterations = it;
  if (out.converged && m > k) {
    Eigen::MatrixXd jac = numerical_jacobian(f, x, box, m);
    for (Eigen::Index j = 0; j < k; ++j) jac.col(j) *= box.scale(j);
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const double sigma2 = ssq / static_cast<double>(m - k);
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(jtj);
    if (ldlt.info() == Eigen::Success) {
      const Eigen::MatrixXd cov =
          ldlt.solve(Eigen::MatrixXd::Identity(k, k));
      Eigen::VectorXd se(k);
      bool ok = true;
      for (Eigen::Index j = 0; j < k; ++j) {
        const double v = cov(j, j) * sigma2;
        if (!std::isfinite(v) || v < 0.0) {
          ok = false;
          break;
        }
        se(j) = std::sqrt(v) * box.scale(j);
      }
      if (ok) out.standard_errors = se;
    }
  }
  return out;
}

inline void require_trace(const ResponseTrace& t, std::size_t min_points,
                          const char* who) {
  if (t.frequency.size() != t.s21.size())
    throw std::invalid_argument(std::string(who) +
                                ": frequency and s21 lengths differ");
  if (t.frequency.size() < min_points)
    throw std::invalid_argument(std::string(who) + ": too few trace points");
  for (std::size_t i = 0; i + 1 < t.frequency.size(); ++i)
    if (!(t.frequency[i + 1] > t.frequency[i]))
      throw std::invalid_argument(std::string(who) +
                                  ": frequency axis must be ascending");
}

// Least-squares line y = a + b u.
inline std::pair<double, double> regress_line(const std::vector<double>& u,
                                              const std::vector<double>& y) {
  const double n = static_cast<double>(u.size());
  double su = 0.0, sy = 0.0, suu = 0.0, suy = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    su += u[i];
    sy += y[i];
    suu += u[i] * u[i];
    suy += u[i] * y[i];
  }
  const double det = n * suu - su * su;
  if (std::abs(det) < 1e-300) return {sy / std::max(n, 1.0), 0.0};
  return {(sy * suu - su * suy) / det, (n * suy - su * sy) / det};
}

inline double wrap_angle(double a) { return std::atan2(std::sin(a), std::cos(a)); }

struct FeatureEstimate {
  std::size_t index = 0;   // extremum sample
  double level = 0.0;      // background magnitude (median)
  double contrast = 0.0;   // |mag - level| / level at the extremum
  double width = 0.0;      // half-deviation full width [rad/s]
};

// Extremum of |S21| against a detrended magnitude line, so background slope
// does not masquerade as the feature. The second pass refits the line with
// the feature excluded.
inline FeatureEstimate locate_feature(const ResponseTrace& t) {
  const std::size_t n = t.s21.size();
  const double center = 0.5 * (t.frequency.front() + t.frequency.back());
  std::vector<double> u(n), mag(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = t.frequency[i] - center;
    mag[i] = std::abs(t.s21[i]);
  }
  FeatureEstimate est;
  std::vector<char> keep(n, 1);
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<double> uk, mk;
    for (std::size_t i = 0; i < n; ++i) {
      if (keep[i]) {
        uk.push_back(u[i]);
        mk.push_back(mag[i]);
      }
    }
    const auto [a, b] = regress_line(uk, mk);
    auto dev_at = [&, a = a, b = b](std::size_t i) {
      return std::abs(mag[i] - (a + b * u[i]));
    };
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (dev_at(i) > best) {
        best = dev_at(i);
        est.index = i;
      }
    }
    est.level = std::max(std::abs(a + b * u[est.index]), 1e-300);
    est.contrast = best / est.level;
    const double half = 0.5 * best;
    std::size_t l = est.index, r = est.index;
    while (l > 0 && dev_at(l) > half) --l;
    while (r + 1 < n && dev_at(r) > half) ++r;
    est.width = t.frequency[r] - t.frequency[l];
    if (!(est.width > 0.0))
      est.width = (t.frequency.back() - t.frequency.front()) / 8.0;
    if (pass == 0) {
      std::size_t kept = 0;
      for (std::size_t i = 0; i < n; ++i) {
        keep[i] = std::abs(t.frequency[i] - t.frequency[est.index]) >
                  2.0 * est.width;
        kept += keep[i];
      }
      if (kept < 8) break;  // feature fills the span, keep the first pass
    }
  }
  return est;
}

struct BackgroundStage {
  FitBackground bg;
  std::vector<std::size_t> mask;  // indices entering the background fit
  SolverResult sol;
};

// Stage one of every trace fit: the background away from the feature.
inline BackgroundStage fit_background_stage(const ResponseTrace& t, double center,
                                            double exclusion_halfwidth,
                                            const char* who) {
  BackgroundStage out;
  for (std::size_t i = 0; i < t.frequency.size(); ++i)
    if (std::abs(t.frequency[i] - center) > exclusion_halfwidth)
      out.mask.push_back(i);
  if (out.mask.size() < 8)
    throw std::invalid_argument(
        std::string(who) +
        ": too few background points outside the feature; widen the span");
  const double span = t.frequency.back() - t.frequency.front();
  std::vector<double> u, mag, ph;
  const std::vector<double> phase = unwrapped_phase(t.s21);
  for (std::size_t i : out.mask) {
    u.push_back(t.frequency[i] - center);
    mag.push_back(std::abs(t.s21[i]));
    ph.push_back(phase[i]);
  }
  const auto [a0, a1] = regress_line(u, mag);
  const auto [b0, b1] = regress_line(u, ph);

  auto residual = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(2 * static_cast<Eigen::Index>(out.mask.size()));
    Eigen::Index at = 0;
    for (std::size_t j = 0; j < out.mask.size(); ++j) {
      const cplx model = (p(0) + p(1) * u[j]) * std::exp(im * (p(3) * u[j] + p(2)));
      const cplx d = model - t.s21[out.mask[j]];
      r(at++) = d.real();
      r(at++) = d.imag();
    }
    return r;
  };
  const double a_scale = std::max(std::abs(a0), 1e-3);
  FitBox box;
  box.scale = Eigen::Vector4d(a_scale, a_scale / span, 1.0, 1.0 / span);
  box.lower = Eigen::Vector4d(-1e3 * a_scale, -1e3 * a_scale / span, -1e3,
                              -1e3 / span);
  box.upper = -box.lower;
  out.sol = levenberg_marquardt(residual, Eigen::Vector4d(a0, a1, b0, b1), box);
  out.bg.reference_frequency = center;
  out.bg.amplitude_offset = out.sol.x(0);
  out.bg.amplitude_slope = out.sol.x(1);
  out.bg.phase_offset = out.sol.x(2);
  out.bg.phase_slope = out.sol.x(3);
  return out;
}

inline void store_param(FitResult& res, const SolverResult& sol,
                        const std::string& name, double value, Eigen::Index j) {
  res.parameters[name] = value;
  if (sol.standard_errors.size() > j)
    res.standard_errors[name] = sol.standard_errors(j);
}

}  // namespace detail

// ------------------------------------------------------------------------
// Linear resonance: S21 = bg * (1 - kappa_e e^{i theta} / (kappa' + 2i Delta)).
// Background fit away from the dip, resonance fit on the divided data, then
// a joint refit of all eight parameters from those starting values.

struct ResonanceFitOptions {
  double exclusion_halfwidths = 3.0;  // background window, in linewidth units
  double minimum_dip_depth = 0.05;    // relative |S21| depth gate
};

inline FitResult fit_linear_resonance(const ResponseTrace& trace,
                                      const ResonanceFitOptions& opt = {}) {
  detail::require_trace(trace, 16, "fit_linear_resonance");
  const detail::FeatureEstimate est = detail::locate_feature(trace);
  const double dip_mag = std::abs(trace.s21[est.index]);
  if (!(dip_mag < est.level) || est.contrast < opt.minimum_dip_depth)
    throw std::runtime_error("fit_linear_resonance: no resonance dip in the trace");
  const double ref = trace.frequency[est.index];
  const double kappa_est = est.width;
  const double span = trace.frequency.back() - trace.frequency.front();
  if (span < 5.0 * kappa_est)
    throw std::invalid_argument(
        "fit_linear_resonance: trace must span at least five linewidths");

  detail::BackgroundStage bg = detail::fit_background_stage(
      trace, ref, opt.exclusion_halfwidths * kappa_est, "fit_linear_resonance");
  const std::vector<cplx> corrected = background_divide(trace, bg.bg);

  const cplx w = 1.0 - corrected[est.index];
  const double ke0 = std::clamp(kappa_est * std::abs(w), 0.02 * kappa_est,
                                0.98 * kappa_est);
  const double ki0 = std::max(kappa_est - ke0, 0.02 * kappa_est);
  const double th0 = std::arg(w);

  auto circle_residual = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(2 * static_cast<Eigen::Index>(corrected.size()));
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < corrected.size(); ++i) {
      const cplx model =
          1.0 - p(2) * std::exp(im * p(3)) /
                    cplx{p(1) + p(2), 2.0 * (trace.frequency[i] - ref - p(0))};
      const cplx d = model - corrected[i];
      r(at++) = d.real();
      r(at++) = d.imag();
    }
    return r;
  };
  detail::FitBox cbox;
  cbox.scale = Eigen::Vector4d(kappa_est, kappa_est, kappa_est, 1.0);
  cbox.lower = Eigen::Vector4d(-span, 1e-4 * kappa_est, 1e-4 * kappa_est, -two_pi);
  cbox.upper = Eigen::Vector4d(span, 1e4 * kappa_est, 1e4 * kappa_est, two_pi);
  const detail::SolverResult circle = detail::levenberg_marquardt(
      circle_residual, Eigen::Vector4d(0.0, ki0, ke0, th0), cbox);

  auto joint_residual = [&](const Eigen::VectorXd& p) {
    FitBackground b;
    b.reference_frequency = ref;
    b.amplitude_offset = p(4);
    b.amplitude_slope = p(5);
    b.phase_offset = p(6);
    b.phase_slope = p(7);
    b.circle_rotation = p(3);
    Eigen::VectorXd r(2 * static_cast<Eigen::Index>(trace.s21.size()));
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < trace.s21.size(); ++i) {
      const cplx d = linear_resonance_model(trace.frequency[i], ref + p(0), p(1),
                                            p(2), b) -
                     trace.s21[i];
      r(at++) = d.real();
      r(at++) = d.imag();
    }
    return r;
  };
  const double a_scale = std::max(std::abs(bg.bg.amplitude_offset), 1e-3);
  detail::FitBox jbox;
  jbox.scale.resize(8);
  jbox.scale << kappa_est, kappa_est, kappa_est, 1.0, a_scale, a_scale / span,
      1.0, 1.0 / span;
  jbox.lower.resize(8);
  jbox.lower << -span, 1e-4 * kappa_est, 1e-4 * kappa_est, -two_pi,
      -1e3 * a_scale, -1e3 * a_scale / span, -1e3, -1e3 / span;
  jbox.upper = -jbox.lower;
  jbox.upper(1) = 1e4 * kappa_est;
  jbox.upper(2) = 1e4 * kappa_est;
  jbox.lower(1) = 1e-4 * kappa_est;
  jbox.lower(2) = 1e-4 * kappa_est;
  Eigen::VectorXd start(8);
  start << circle.x(0), circle.x(1), circle.x(2), circle.x(3),
      bg.bg.amplitude_offset, bg.bg.amplitude_slope, bg.bg.phase_offset,
      bg.bg.phase_slope;
  const detail::SolverResult joint =
      detail::levenberg_marquardt(joint_residual, start, jbox);

  FitResult res;
  detail::store_param(res, joint, "omega_0", ref + joint.x(0), 0);
  detail::store_param(res, joint, "kappa_i", joint.x(1), 1);
  detail::store_param(res, joint, "kappa_e", joint.x(2), 2);
  detail::store_param(res, joint, "theta", detail::wrap_angle(joint.x(3)), 3);
  detail::store_param(res, joint, "alpha_0", joint.x(4), 4);
  detail::store_param(res, joint, "alpha_1", joint.x(5), 5);
  detail::store_param(res, joint, "beta_0", detail::wrap_angle(joint.x(6)), 6);
  detail::store_param(res, joint, "beta_1", joint.x(7), 7);
  res.parameters["reference_frequency"] = ref;
  res.residual_rms = joint.rms;
  res.converged = joint.converged;
  res.iterations = bg.sol.iterations + circle.iterations + joint.iterations;
  return res;
}

// ------------------------------------------------------------------------
// Transparency window at the mechanical scale: the same staged single-pole
// fit on a trace of probe offsets. The pump-drift nuisance (1 + x) e^{i beta}
// is absorbed into the background amplitude and phase offsets; the joint
// stage keeps them within 10 percent and 0.1 rad of the stage-one values.

struct WindowFitOptions {
  double exclusion_halfwidths = 4.0;  // background window, in window widths
  double minimum_contrast = 0.02;     // relative |S21| deviation gate
};

inline FitResult fit_omit_window(const ResponseTrace& trace,
                                 const WindowFitOptions& opt = {}) {
  detail::require_trace(trace, 10, "fit_omit_window");
  const detail::FeatureEstimate est = detail::locate_feature(trace);
  if (est.contrast < opt.minimum_contrast)
    throw std::runtime_error("fit_omit_window: no transparency window in the trace");
  const double ref = trace.frequency[est.index];
  const double gamma_est = est.width;
  const double span = trace.frequency.back() - trace.frequency.front();

  detail::BackgroundStage bg = detail::fit_background_stage(
      trace, ref, opt.exclusion_halfwidths * gamma_est, "fit_omit_window");
  const std::vector<cplx> corrected = background_divide(trace, bg.bg);

  const cplx w = 1.0 - corrected[est.index];
  const double d0 = std::max(std::abs(w), 1e-3);
  const double th0 = std::arg(w);

  auto pole_residual = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(2 * static_cast<Eigen::Index>(corrected.size()));
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < corrected.size(); ++i) {
      const cplx model =
          1.0 - p(2) * p(1) * std::exp(im * p(3)) /
                    cplx{p(1), 2.0 * (trace.frequency[i] - ref - p(0))};
      const cplx d = model - corrected[i];
      r(at++) = d.real();
      r(at++) = d.imag();
    }
    return r;
  };
  detail::FitBox pbox;
  pbox.scale = Eigen::Vector4d(gamma_est, gamma_est, std::max(d0, 0.1), 1.0);
  pbox.lower = Eigen::Vector4d(-span, 1e-4 * gamma_est, 1e-6, -two_pi);
  pbox.upper = Eigen::Vector4d(span, 1e4 * gamma_est, 1e3, two_pi);
  const detail::SolverResult pole = detail::levenberg_marquardt(
      pole_residual, Eigen::Vector4d(0.0, gamma_est, d0, th0), pbox);

  auto joint_residual = [&](const Eigen::VectorXd& p) {
    FitBackground b;
    b.reference_frequency = ref;
    b.amplitude_offset = p(4);
    b.amplitude_slope = p(5);
    b.phase_offset = p(6);
    b.phase_slope = p(7);
    b.circle_rotation = p(3);
    Eigen::VectorXd r(2 * static_cast<Eigen::Index>(trace.s21.size()));
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < trace.s21.size(); ++i) {
      const cplx d =
          omit_window_model(trace.frequency[i], ref + p(0), p(1), p(2), b) -
          trace.s21[i];
      r(at++) = d.real();
      r(at++) = d.imag();
    }
    return r;
  };
  const double a_ref = bg.bg.amplitude_offset;
  const double a_scale = std::max(std::abs(a_ref), 1e-3);
  detail::FitBox jbox;
  jbox.scale.resize(8);
  jbox.scale << gamma_est, gamma_est, std::max(d0, 0.1), 1.0, a_scale,
      a_scale / span, 1.0, 1.0 / span;
  jbox.lower.resize(8);
  jbox.upper.resize(8);
  jbox.lower << -span, 1e-4 * gamma_est, 1e-6, -two_pi,
      a_ref - 0.1 * std::abs(a_ref), -1e3 * a_scale / span,
      bg.bg.phase_offset - 0.1, -1e3 / span;
  jbox.upper << span, 1e4 * gamma_est, 1e3, two_pi,
      a_ref + 0.1 * std::abs(a_ref), 1e3 * a_scale / span,
      bg.bg.phase_offset + 0.1, 1e3 / span;
  Eigen::VectorXd start(8);
  start << pole.x(0), pole.x(1), pole.x(2), pole.x(3), bg.bg.amplitude_offset,
      bg.bg.amplitude_slope, bg.bg.phase_offset, bg.bg.phase_slope;
  const detail::SolverResult joint =
      detail::levenberg_marquardt(joint_residual, start, jbox);

  FitResult res;
  detail::store_param(res, joint, "omega_eff", ref + joint.x(0), 0);
  detail::store_param(res, joint, "gamma_eff", joint.x(1), 1);
  detail::store_param(res, joint, "depth", joint.x(2), 2);
  detail::store_param(res, joint, "theta", detail::wrap_angle(joint.x(3)), 3);
  detail::store_param(res, joint, "alpha_0", joint.x(4), 4);
  detail::store_param(res, joint, "alpha_1", joint.x(5), 5);
  detail::store_param(res, joint, "beta_0", detail::wrap_angle(joint.x(6)), 6);
  detail::store_param(res, joint, "beta_1", joint.x(7), 7);
  res.parameters["reference_frequency"] = ref;
  res.residual_rms = joint.rms;
  res.converged = joint.converged;
  res.iterations = bg.sol.iterations + pole.iterations + joint.iterations;
  return res;
}

// ------------------------------------------------------------------------
// Kerr single-tone power series. The Kerr coefficient comes from the flux
// operating point and is never fitted; the free parameters are the line
// attenuation and the TLS linewidth curve (kappa_0, kappa_1, n_crit).

struct KerrResponseSeries {
  std::vector<ResponseTrace> traces;  // background-corrected, one per power
  std::vector<double> drive_power;    // [W] at the instrument reference plane
  std::optional<bool> sweep_upward;   // traversal direction of every sweep
};

struct KerrResponseInputs {
  double kerr = 0.0;     // K [rad/s], fixed
  double omega0 = 0.0;   // undriven resonance [rad/s]
  double kappa_e = 0.0;  // [rad/s], fixed by the linear fit
  double gamma2 = 0.0;   // TLS lineshape scale [rad/s]
  double attenuation_db_guess = -90.0;
  double n_crit_guess = 0.5;
};

// Swept response of one power step. The sweep direction decides which branch
// the continuity rule tracks through a bistable region.
inline std::vector<cplx> kerr_response_trace(
    const std::vector<double>& frequency, double drive_power_w,
    double attenuation_db, const LinewidthModel& lw, double kerr, double omega0,
    bool sweep_upward, std::vector<double>* photons = nullptr,
    bool* bistable = nullptr) {
  if (!(drive_power_w > 0.0) || !std::isfinite(attenuation_db))
    throw std::invalid_argument("kerr_response_trace: bad drive power");
  const double chip = drive_power_w * std::pow(10.0, attenuation_db / 10.0);
  const std::size_t n = frequency.size();
  std::vector<cplx> out(n);
  if (photons) photons->assign(n, 0.0);
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t i = sweep_upward ? step : n - 1 - step;
    const Tone tone{frequency[i], chip, 0.0};
    const KerrSteadyState st = self_consistent_steady_state(
        kerr, frequency[i] - omega0, tone, lw, BranchPolicy::continuity, prev);
    prev = st.photon_number;
    if (photons) (*photons)[i] = st.photon_number;
    if (bistable && st.bistable) *bistable = true;
    out[i] = single_tone_response(st, tone, lw.kappa_e);
  }
  return out;
}

inline FitResult fit_kerr_response(const KerrResponseSeries& series,
                                   const KerrResponseInputs& in) {
  const std::size_t np = series.traces.size();
  if (np < 3)
    throw std::invalid_argument(
        "fit_kerr_response: need at least three drive powers across the "
        "saturation knee");
  if (series.drive_power.size() != np)
    throw std::invalid_argument("fit_kerr_response: one power per trace");
  for (double p : series.drive_power)
    if (!(p > 0.0))
      throw std::invalid_argument("fit_kerr_response: powers must be positive");
  for (const ResponseTrace& t : series.traces)
    detail::require_trace(t, 8, "fit_kerr_response");
  if (!(in.kappa_e > 0.0) || !(in.gamma2 > 0.0) || !(in.omega0 > 0.0))
    throw std::invalid_argument(
        "fit_kerr_response: kappa_e, gamma2 and omega0 must be set");
  const bool up = series.sweep_upward.value_or(true);

  auto model_lw = [&](double k0, double k1, double nc) {
    LinewidthModel lw;
    lw.kappa0 = k0;
    lw.kappa1 = k1;
    lw.n_crit = nc;
    lw.gamma2 = in.gamma2;
    lw.kappa_e = in.kappa_e;
    return lw;
  };

  // Stage one: a constant internal linewidth per power step.
  int iterations = 0;
  std::vector<double> kappa_j(np), n_j(np), delta_j(np);
  for (std::size_t j = 0; j < np; ++j) {
    const ResponseTrace& t = series.traces[j];
    const detail::FeatureEstimate est = detail::locate_feature(t);
    const double ki0 = std::max(est.width - in.kappa_e, 0.05 * in.kappa_e);
    auto residual = [&](const Eigen::VectorXd& p) {
      const std::vector<cplx> model =
          kerr_response_trace(t.frequency, series.drive_power[j],
                              in.attenuation_db_guess, model_lw(p(0), 0.0, 1.0),
                              in.kerr, in.omega0, up);
      Eigen::VectorXd r(2 * static_cast<Eigen::Index>(model.size()));
      Eigen::Index at = 0;
      for (std::size_t i = 0; i < model.size(); ++i) {
        const cplx d = model[i] - t.s21[i];
        r(at++) = d.real();
        r(at++) = d.imag();
      }
      return r;
    };
    detail::FitBox box;
    box.scale = Eigen::VectorXd::Constant(1, in.kappa_e);
    box.lower = Eigen::VectorXd::Constant(1, 1e-3 * in.kappa_e);
    box.upper = Eigen::VectorXd::Constant(1, 1e5 * in.kappa_e);
    const detail::SolverResult sol = detail::levenberg_marquardt(
        residual, Eigen::VectorXd::Constant(1, ki0), box);
    iterations += sol.iterations;
    kappa_j[j] = sol.x(0);
    std::vector<double> photons;
    kerr_response_trace(t.frequency, series.drive_power[j],
                        in.attenuation_db_guess, model_lw(sol.x(0), 0.0, 1.0),
                        in.kerr, in.omega0, up, &photons);
    const std::size_t peak = static_cast<std::size_t>(
        std::max_element(photons.begin(), photons.end()) - photons.begin());
    n_j[j] = photons[peak];
    delta_j[j] = t.frequency[peak] - in.omega0;
  }

  // Stage two: the saturation curve through the per-power linewidths.
  std::size_t lo = 0, hi = 0;
  for (std::size_t j = 1; j < np; ++j) {
    if (n_j[j] < n_j[lo]) lo = j;
    if (n_j[j] > n_j[hi]) hi = j;
  }
  const double k1_0 = std::max(kappa_j[lo] - kappa_j[hi], 0.02 * in.kappa_e);
  const double k0_0 = std::max(0.9 * kappa_j[hi], 1e-3 * in.kappa_e);
  auto tls_residual = [&](const Eigen::VectorXd& p) {
    const LinewidthModel lw = model_lw(p(0), p(1), p(2));
    Eigen::VectorXd r(static_cast<Eigen::Index>(np));
    for (std::size_t j = 0; j < np; ++j)
      r(static_cast<Eigen::Index>(j)) =
          (lw.tls_linewidth(n_j[j], delta_j[j]) - kappa_j[j]) / in.kappa_e;
    return r;
  };
  detail::FitBox tbox;
  tbox.scale = Eigen::Vector3d(in.kappa_e, in.kappa_e,
                               std::max(in.n_crit_guess, 1e-3));
  tbox.lower = Eigen::Vector3d(1e-3 * in.kappa_e, 0.0, 1e-6);
  tbox.upper = Eigen::Vector3d(1e5 * in.kappa_e, 1e5 * in.kappa_e, 1e9);
  const detail::SolverResult tls = detail::levenberg_marquardt(
      tls_residual, Eigen::Vector3d(k0_0, k1_0, in.n_crit_guess), tbox);
  iterations += tls.iterations;

  // Stage three: attenuation alone, then the joint refit of all four.
  auto series_residual = [&](double att, double k0, double k1, double nc) {
    Eigen::Index total = 0;
    for (const ResponseTrace& t : series.traces)
      total += 2 * static_cast<Eigen::Index>(t.s21.size());
    Eigen::VectorXd r(total);
    Eigen::Index at = 0;
    const LinewidthModel lw = model_lw(k0, k1, nc);
    for (std::size_t j = 0; j < np; ++j) {
      const ResponseTrace& t = series.traces[j];
      const std::vector<cplx> model = kerr_response_trace(
          t.frequency, series.drive_power[j], att, lw, in.kerr, in.omega0, up);
      for (std::size_t i = 0; i < model.size(); ++i) {
        const cplx d = model[i] - t.s21[i];
        r(at++) = d.real();
        r(at++) = d.imag();
      }
    }
    return r;
  };
  auto att_residual = [&](const Eigen::VectorXd& p) {
    return series_residual(p(0), tls.x(0), tls.x(1), tls.x(2));
  };
  detail::FitBox abox;
  abox.scale = Eigen::VectorXd::Constant(1, 5.0);
  abox.lower = Eigen::VectorXd::Constant(1, in.attenuation_db_guess - 40.0);
  abox.upper = Eigen::VectorXd::Constant(1, in.attenuation_db_guess + 40.0);
  const detail::SolverResult att = detail::levenberg_marquardt(
      att_residual, Eigen::VectorXd::Constant(1, in.attenuation_db_guess), abox);
  iterations += att.iterations;

  auto joint_residual = [&](const Eigen::VectorXd& p) {
    return series_residual(p(0), p(1), p(2), p(3));
  };
  detail::FitBox jbox;
  jbox.scale.resize(4);
  jbox.scale << 5.0, in.kappa_e, in.kappa_e, std::max(tls.x(2), 1e-3);
  jbox.lower.resize(4);
  jbox.upper.resize(4);
  jbox.lower << in.attenuation_db_guess - 40.0, 1e-3 * in.kappa_e, 0.0, 1e-6;
  jbox.upper << in.attenuation_db_guess + 40.0, 1e5 * in.kappa_e,
      1e5 * in.kappa_e, 1e9;
  Eigen::VectorXd start(4);
  start << att.x(0), tls.x(0), tls.x(1), tls.x(2);
  const detail::SolverResult joint =
      detail::levenberg_marquardt(joint_residual, start, jbox);
  iterations += joint.iterations;

  // Branch audit at the solution: a bistable sweep without a direction hint
  // is ambiguous data.
  const LinewidthModel lw_fit = model_lw(joint.x(1), joint.x(2), joint.x(3));
  bool bistable = false;
  std::vector<std::vector<double>> photons(np);
  for (std::size_t j = 0; j < np; ++j)
    kerr_response_trace(series.traces[j].frequency, series.drive_power[j],
                        joint.x(0), lw_fit, in.kerr, in.omega0, up, &photons[j],
                        &bistable);
  if (bistable && !series.sweep_upward.has_value())
    throw std::runtime_error(
        "fit_kerr_response: response is bistable; supply the sweep direction");

  FitResult res;
  detail::store_param(res, joint, "attenuation_db", joint.x(0), 0);
  detail::store_param(res, joint, "kappa_0", joint.x(1), 1);
  detail::store_param(res, joint, "kappa_1", joint.x(2), 2);
  detail::store_param(res, joint, "n_crit", joint.x(3), 3);
  res.parameters["n_powers"] = static_cast<double>(np);
  for (std::size_t j = 0; j < np; ++j) {
    const std::size_t peak = static_cast<std::size_t>(
        std::max_element(photons[j].begin(), photons[j].end()) -
        photons[j].begin());
    const double nd = photons[j][peak];
    const double dd = series.traces[j].frequency[peak] - in.omega0;
    const std::string suffix = "_" + std::to_string(j);
    res.parameters["n_d" + suffix] = nd;
    res.parameters["delta_d" + suffix] = dd;
    res.parameters["kappa_d" + suffix] = lw_fit.tls_linewidth(nd, dd);
  }
  res.residual_rms = joint.rms;
  res.converged = joint.converged;
  res.iterations = iterations;
  return res;
}

// ------------------------------------------------------------------------
// Flux arch: omega_0 against the raw bias axis, both sweep directions. The
// free parameters are the junction critical current, the screening parameter
// beta_L, and the bias-axis scale in Phi_0 per raw unit; the remaining
// circuit elements are design values and stay fixed.

struct FluxArchData {
  std::vector<double> up_bias;         // raw axis, ascending acquisition order
  std::vector<double> up_frequency;    // [rad/s]
  std::vector<double> down_bias;       // raw axis, descending acquisition order
  std::vector<double> down_frequency;  // [rad/s]
};

struct FluxArchOptions {
  double beta_l_guess = 0.5;
};

// Modelled arch frequencies for one monotone coil sweep. Up-sweeps continue
// the branch from the zero-bias anchor; down-sweeps first run one structure
// period past the rightmost point, faithful to the acquisition protocol.
// Points where the resonance leaves the visible arch come back as NaN.
inline std::vector<double> arch_frequency_sweep(const std::vector<double>& bias,
                                                SweepDirection dir,
                                                double flux_scale, double beta_l,
                                                const CircuitParams& circuit) {
  if (!(flux_scale > 0.0) || !(beta_l >= 0.0))
    throw std::invalid_argument(
        "arch_frequency_sweep: need flux_scale > 0 and beta_l >= 0");
  const std::size_t n = bias.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> out(n, nan);
  if (n == 0) return out;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const bool ok = dir == SweepDirection::up ? bias[i + 1] >= bias[i]
                                              : bias[i + 1] <= bias[i];
    if (!ok)
      throw std::invalid_argument(
          "arch_frequency_sweep: bias grid must be monotone in the sweep "
          "direction");
  }
  auto freq_at = [&](double phi_total) {
    try {
      return resonance_frequency(phi_total, circuit);
    } catch (const std::domain_error&) {
      return nan;
    }
  };
  if (dir == SweepDirection::up) {
    std::vector<double> grid_pos{0.0}, grid_neg{0.0};
    std::vector<std::size_t> idx_pos, idx_neg;
    for (std::size_t i = 0; i < n; ++i) {
      if (bias[i] >= 0.0) {
        grid_pos.push_back(flux_scale * bias[i]);
        idx_pos.push_back(i);
      }
    }
    for (std::size_t i = n; i-- > 0;) {
      if (bias[i] < 0.0) {
        grid_neg.push_back(flux_scale * bias[i]);
        idx_neg.push_back(i);
      }
    }
    const std::vector<FluxSolution> pos =
        flux_sweep_from(grid_pos, beta_l, 0.0);
    for (std::size_t j = 0; j < idx_pos.size(); ++j)
      out[idx_pos[j]] = freq_at(pos[j + 1].total_flux);
    const std::vector<FluxSolution> neg =
        flux_sweep_from(grid_neg, beta_l, 0.0);
    for (std::size_t j = 0; j < idx_neg.size(); ++j)
      out[idx_neg[j]] = freq_at(neg[j + 1].total_flux);
    return out;
  }
  const double top =
      flux_scale * *std::max_element(bias.begin(), bias.end()) + 2.0;
  const double anchor =
      flux_sweep_from({0.0, top}, beta_l, 0.0).back().total_flux;
  std::vector<double> grid{top};
  for (double b : bias) grid.push_back(flux_scale * b);
  const std::vector<FluxSolution> down = flux_sweep_from(grid, beta_l, anchor);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = freq_at(down[i + 1].total_flux);
  return out;
}

inline FitResult fit_flux_arch(const FluxArchData& data,
                               const CircuitParams& circuit,
                               const FluxArchOptions& opt = {}) {
  if (data.up_bias.size() != data.up_frequency.size() ||
      data.down_bias.size() != data.down_frequency.size())
    throw std::invalid_argument("fit_flux_arch: bias and frequency lengths differ");
  const std::size_t total = data.up_bias.size() + data.down_bias.size();
  if (total < 10)
    throw std::invalid_argument("fit_flux_arch: too few points across the arch");
  std::vector<double> bias_all = data.up_bias, freq_all = data.up_frequency;
  bias_all.insert(bias_all.end(), data.down_bias.begin(), data.down_bias.end());
  freq_all.insert(freq_all.end(), data.down_frequency.begin(),
                  data.down_frequency.end());
  for (double f : freq_all)
    if (!(f > 0.0) || !std::isfinite(f))
      throw std::invalid_argument("fit_flux_arch: frequencies must be positive");
  const double fmax = *std::max_element(freq_all.begin(), freq_all.end());
  const double fmin = *std::min_element(freq_all.begin(), freq_all.end());
  if (fmax - fmin < 1e-6 * fmax)
    throw std::runtime_error(
        "fit_flux_arch: flux arch is flat; the bias axis cannot be calibrated");
  const double bmax = *std::max_element(bias_all.begin(), bias_all.end());
  const double bmin = *std::min_element(bias_all.begin(), bias_all.end());
  if (!(bmax > bmin))
    throw std::invalid_argument("fit_flux_arch: bias axis has no extent");

  // Starting values: the sweet spot pins the squid inductance, the raw arch
  // width pins the axis scale once a screening guess widens it.
  const double ltot = 1.0 / (circuit.total_capacitance() * fmax * fmax);
  double lj = ltot - circuit.linear_inductance;
  if (!(lj > 0.0)) lj = 0.1 * circuit.linear_inductance;
  const double ic0 = flux_quantum / (2.0 * two_pi * lj);
  const double scale0 = (1.0 + opt.beta_l_guess) / (bmax - bmin);

  auto residual = [&](const Eigen::VectorXd& p) {
    CircuitParams c = circuit;
    c.junction_critical_current = p(0);
    c.loop_inductance = p(1) * flux_quantum / (2.0 * p(0));
    Eigen::VectorXd r(static_cast<Eigen::Index>(total));
    Eigen::Index at = 0;
    const std::vector<double> up = arch_frequency_sweep(
        data.up_bias, SweepDirection::up, p(2), p(1), c);
    for (std::size_t i = 0; i < up.size(); ++i)
      r(at++) = std::isfinite(up[i]) ? (up[i] - data.up_frequency[i]) / fmax : 1.0;
    const std::vector<double> dn = arch_frequency_sweep(
        data.down_bias, SweepDirection::down, p(2), p(1), c);
    for (std::size_t i = 0; i < dn.size(); ++i)
      r(at++) =
          std::isfinite(dn[i]) ? (dn[i] - data.down_frequency[i]) / fmax : 1.0;
    return r;
  };
  detail::FitBox box;
  box.scale = Eigen::Vector3d(ic0, 1.0, scale0);
  box.lower = Eigen::Vector3d(0.05 * ic0, 0.0, 0.1 * scale0);
  box.upper = Eigen::Vector3d(20.0 * ic0, 3.0, 10.0 * scale0);
  const detail::SolverResult sol = detail::levenberg_marquardt(
      residual, Eigen::Vector3d(ic0, opt.beta_l_guess, scale0), box);

  FitResult res;
  detail::store_param(res, sol, "critical_current", sol.x(0), 0);
  detail::store_param(res, sol, "beta_l", sol.x(1), 1);
  detail::store_param(res, sol, "flux_scale", sol.x(2), 2);
  res.parameters["loop_inductance"] = sol.x(1) * flux_quantum / (2.0 * sol.x(0));
  CircuitParams fitted = circuit;
  fitted.junction_critical_current = sol.x(0);
  res.parameters["sweet_spot_frequency"] = fitted.sweet_spot_frequency();
  res.residual_rms = sol.rms;
  res.converged = sol.converged;
  res.iterations = sol.iterations;
  return res;
}

}  // namespace kerrmech
