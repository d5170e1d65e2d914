#pragma once

// Builders for the DOPO-network protocol: pump and loss channels, the
// coherent Ising coupling, target states and the cyclic-pump calibration.

#include <cmath>
#include <complex>
#include <future>
#include <optional>
#include <vector>

#include "dopo/errors.hpp"
#include "dopo/fock.hpp"
#include "dopo/lindblad.hpp"

namespace dopo {

/// Physical parameters of an N-mode open-chain DOPO network (units of Gamma_d).
struct DopoParams {
  double S = -1.0;        // two-photon pump intensity
  double gamma_d = 1.0;   // two-photon loss rate
  double gamma_s = 0.0;   // single-photon loss rate
  double g_c = 1.0 / 3.0; // effective Ising strength
  double g_nl = 15.0;     // nonlinear signal-pump coupling
  int n_modes = 2;

  void validate() const {
    if (!(gamma_d > 0.0)) throw InvalidArgument("DopoParams: gamma_d must be > 0");
    if (n_modes < 1) throw InvalidArgument("DopoParams: n_modes must be >= 1");
    if (!(gamma_s >= 0.0)) throw InvalidArgument("DopoParams: gamma_s must be >= 0");
    for (double v : {S, gamma_d, gamma_s, g_c, g_nl}) {
      if (!std::isfinite(v)) throw InvalidArgument("DopoParams: all rates must be finite");
    }
  }
};

/// alpha = i sqrt(2S / Gamma_d) with the principal square root.
inline cplx steady_amplitude(double S, double gamma_d) {
  if (!(gamma_d > 0.0)) throw InvalidArgument("steady_amplitude: gamma_d must be > 0");
  return kI * std::sqrt(cplx(2.0 * S / gamma_d, 0.0));
}

/// Working amplitude used by every builder: |alpha| (real, positive).
inline double canonical_amplitude(cplx alpha) { return std::abs(alpha); }

/// -iS[(a^dagger)^2 - a^2] on `mode`.
inline QOperator two_photon_pump_h(const ModeLayout& layout, std::size_t mode, double S) {
  const QOperator a = annihilation(layout, mode);
  const QOperator ad = a.adjoint();
  return (ad * ad - a * a) * (-kI * S);
}

inline Dissipator two_photon_loss(const ModeLayout& layout, std::size_t mode, double gamma_d) {
  const QOperator a = annihilation(layout, mode);
  return {a * a, gamma_d};
}

/// One a_n channel per listed mode; empty when gamma_s == 0.
inline std::vector<Dissipator> single_photon_loss(const ModeLayout& layout, std::span<const std::size_t> modes,
                                                  double gamma_s) {
  if (gamma_s < 0.0) throw InvalidArgument("single_photon_loss: rate must be >= 0");
  std::vector<Dissipator> out;
  if (gamma_s == 0.0) return out;
  for (std::size_t m : modes) out.push_back({annihilation(layout, m), gamma_s});
  return out;
}

inline std::vector<Dissipator> single_photon_loss(const ModeLayout& layout, std::initializer_list<std::size_t> modes,
                                                  double gamma_s) {
  return single_photon_loss(layout, std::span<const std::size_t>(modes.begin(), modes.size()), gamma_s);
}

/// Delay-line coupling: collapse a_i + a_j at rate gamma_c.
inline Dissipator collective_loss(const ModeLayout& layout, std::size_t i, std::size_t j, double gamma_c) {
  if (i == j) throw InvalidArgument("collective_loss: modes must differ");
  return {annihilation(layout, i) + annihilation(layout, j), gamma_c};
}

/// Coherent Ising coupling on the open chain 0..N-1:
///
///   (g_c / 8a) sum_i [(-a_i^dagger - a_{i+1}^dagger + a_i a_{i+1}^dagger / a) + h.c.],  a = |alpha|
///
/// On the coherent-spin manifold {|+a>, |-a>} this acts as
/// (g_c/4) sum_i (-s_i - s_{i+1} + s_i s_{i+1}), so evolving for pi/g_c applies a
/// controlled-Z to every bond (cluster signs (-1)^{[s_i<0][s_{i+1}<0]}).
inline QOperator coherent_ising_h(const ModeLayout& layout, double g_c, cplx alpha, int n) {
  const double a = canonical_amplitude(alpha);
  if (a == 0.0) throw InvalidArgument("coherent_ising_h: alpha must be nonzero");
  if (n < 2) throw InvalidArgument("coherent_ising_h: need at least two modes");
  if (layout.size() < static_cast<std::size_t>(n)) throw LayoutError("coherent_ising_h: layout has too few modes");
  QOperator h = QOperator::zero(layout);
  for (int i = 0; i + 1 < n; ++i) {
    const QOperator ai = annihilation(layout, i);
    const QOperator aj = annihilation(layout, i + 1);
    const QOperator term = -ai.adjoint() - aj.adjoint() + (ai * aj.adjoint()) * (1.0 / a);
    h += term + term.adjoint();
  }
  return h * (g_c / (8.0 * a));
}

/// g_nl (b^dagger a^2 + b (a^dagger)^2) for signal a and pump b.
inline QOperator nonlinear_pump_h(const ModeLayout& layout, std::size_t signal_mode, std::size_t pump_mode,
                                  double g_nl) {
  if (signal_mode == pump_mode) throw InvalidArgument("nonlinear_pump_h: signal and pump must differ");
  const QOperator a = annihilation(layout, signal_mode);
  const QOperator b = annihilation(layout, pump_mode);
  const QOperator term = b.adjoint() * a * a;
  return (term + term.adjoint()) * g_nl;
}

// ---------------------------------------------------------------------------
// Target states
// ---------------------------------------------------------------------------

/// Cluster sign of a spin configuration: prod_i (-1)^{[s_i<0][s_{i+1}<0]}.
inline int cluster_sign(std::span<const int> spins) {
  int w = 1;
  for (std::size_t i = 0; i + 1 < spins.size(); ++i) {
    if (spins[i] < 0 && spins[i + 1] < 0) w = -w;
  }
  return w;
}

/// Unnormalized sum_s w(s) |s_1 a> (x) ... (x) |s_N a> built from exact
/// (untruncated-normalization) coherent amplitudes.
inline StateVector cluster_superposition(const ModeLayout& layout, cplx alpha, int n) {
  const double a = canonical_amplitude(alpha);
  if (a < 1e-3) throw InvalidArgument("ideal_cluster_state: |alpha| below 1e-3 has no usable normalization");
  if (n < 1 || layout.size() != static_cast<std::size_t>(n)) {
    throw LayoutError("ideal_cluster_state: layout must have exactly N modes");
  }
  for (std::size_t m = 0; m < layout.size(); ++m) {
    (void)coherent_state(ModeLayout{layout.cutoff(m)}, 0, a);  // truncation rule per mode
  }
  Vector total = Vector::Zero(layout.dimension());
  std::vector<int> spins(n);
  for (long mask = 0; mask < (1L << n); ++mask) {
    std::vector<StateVector> factors;
    for (int i = 0; i < n; ++i) {
      spins[i] = (mask >> (n - 1 - i)) & 1 ? -1 : 1;
      const int c = layout.cutoff(i);
      factors.emplace_back(ModeLayout{c}, detail::coherent_amplitudes(c, spins[i] * a));
    }
    total += static_cast<double>(cluster_sign(spins)) * tensor(std::span<const StateVector>(factors)).amplitudes();
  }
  return StateVector(layout, std::move(total));
}

/// Normalized coherent cluster state; for N = 2 the sign pattern over
/// (|a,a>, |a,-a>, |-a,a>, |-a,-a>) is (+, +, +, -).
inline StateVector ideal_cluster_state(const ModeLayout& layout, cplx alpha, int n) {
  return cluster_superposition(layout, alpha, n).normalized();
}

/// Tensor power of the even cat on each of the N modes.
inline StateVector cat_plus_state(const ModeLayout& layout, cplx alpha, int n) {
  if (n < 1 || layout.size() != static_cast<std::size_t>(n)) {
    throw LayoutError("cat_plus_state: layout must have exactly N modes");
  }
  const double a = canonical_amplitude(alpha);
  std::vector<StateVector> factors;
  for (int i = 0; i < n; ++i) factors.push_back(cat_state(ModeLayout{layout.cutoff(i)}, 0, a, +1));
  return tensor(std::span<const StateVector>(factors)).normalized();
}

// ---------------------------------------------------------------------------
// Stage models
// ---------------------------------------------------------------------------

/// Two-photon pump + two-photon loss on every mode, plus single-photon loss.
inline LindbladModel pump_stage_model(const ModeLayout& layout, const DopoParams& p) {
  QOperator h = QOperator::zero(layout);
  std::vector<Dissipator> dis;
  std::vector<std::size_t> modes;
  for (std::size_t m = 0; m < layout.size(); ++m) {
    h += two_photon_pump_h(layout, m, p.S);
    dis.push_back(two_photon_loss(layout, m, p.gamma_d));
    modes.push_back(m);
  }
  for (auto& d : single_photon_loss(layout, modes, p.gamma_s)) dis.push_back(std::move(d));
  return LindbladModel(std::move(h), std::move(dis));
}

/// Pump stage with the coherent Ising coupling switched on.
inline LindbladModel interaction_stage_model(const ModeLayout& layout, const DopoParams& p, cplx alpha) {
  const LindbladModel base = pump_stage_model(layout, p);
  QOperator h = base.hamiltonian() + coherent_ising_h(layout, p.g_c, alpha, static_cast<int>(layout.size()));
  return LindbladModel(std::move(h), base.dissipators());
}

/// One signal/pump pair inside a larger layout: H_nl plus single-photon loss
/// (rate gamma_s) on both the signal and the pump mode.
inline LindbladModel cyclic_pair_model(const ModeLayout& layout, std::size_t signal_mode, std::size_t pump_mode,
                                       double g_nl, double gamma_s) {
  return LindbladModel(nonlinear_pump_h(layout, signal_mode, pump_mode, g_nl),
                       single_photon_loss(layout, {signal_mode, pump_mode}, gamma_s));
}

// ---------------------------------------------------------------------------
// Cyclic pump calibration
// ---------------------------------------------------------------------------

struct CalibrationOptions {
  int signal_cutoff = 14;
  int reduced_pump_cutoff = 8;
  double bracket_hi = 4.0;
  double tolerance = 0.02;       // on |<a^dagger a> - |target|^2|
  double steady_tol = 1e-10;     // per-cycle change in <a^dagger a>
  int max_cycles = 20000;
  int scan_points = 17;
  int workers = 1;
  IntegratorConfig integrator{};
};

struct PumpCalibration {
  cplx alpha_p;                  // i |alpha_p| so the generated amplitude is real
  double photon_number = 0.0;    // steady <a^dagger a> at the reduced pump cutoff
  double verified_photon_number = 0.0;  // at the production pump cutoff
  int production_pump_cutoff = 0;
  std::vector<CalibrationSample> scan;
};

/// Pump cutoff that keeps |alpha_p> leakage below `tol`, never below `floor`.
inline int pump_cutoff_for(double abs_alpha_p, int floor, double tol = 1e-5) {
  int c = std::max(floor, 2);
  while (true) {
    const Vector amps = detail::coherent_amplitudes(c, abs_alpha_p);
    if (1.0 - amps.squaredNorm() <= tol) return c;
    ++c;
  }
}

/// Transfer matrix (on column-major vec) of one nonequilibrium pump cycle of
/// a single signal mode: attach |i alpha_p>, evolve H_nl with single-photon
/// loss gamma_s on signal and pump for t_nl, trace out the pump.
inline Matrix pump_cycle_transfer(double abs_alpha_p, double g_nl, double gamma_s, double t_nl, int signal_cutoff,
                                  int pump_cutoff, const IntegratorConfig& cfg = {}) {
  const ModeLayout joint{signal_cutoff, pump_cutoff};
  const LindbladModel model = cyclic_pair_model(joint, 0, 1, g_nl, gamma_s);
  const StateVector pump =
      coherent_state(ModeLayout{pump_cutoff}, 0, kI * abs_alpha_p, TruncationPolicy::leakage(1e-4));
  return channel_transfer_matrix(ModeLayout{signal_cutoff}, pump, model, t_nl, cfg);
}

/// Fixed point of repeated cycles started from vacuum.
inline DensityMatrix cyclic_steady_state(const Matrix& transfer, int signal_cutoff, double steady_tol = 1e-10,
                                         int max_cycles = 20000) {
  const Eigen::Index c = signal_cutoff;
  Vector v = Vector::Zero(c * c);
  v(0) = 1.0;
  auto photons = [&](const Vector& x) {
    double n = 0.0;
    for (Eigen::Index k = 0; k < c; ++k) n += k * x(k + c * k).real();
    return n;
  };
  double prev = 0.0;
  for (int cycle = 0; cycle < max_cycles; ++cycle) {
    v = transfer * v;
    const double now = photons(v);
    if (cycle > 2 && std::abs(now - prev) < steady_tol) break;
    prev = now;
  }
  Matrix m = Eigen::Map<const Matrix>(v.data(), c, c);
  return DensityMatrix(ModeLayout{signal_cutoff}, std::move(m), 1e-9, 1e-8);
}

inline double cyclic_steady_photon_number(double abs_alpha_p, double g_nl, double gamma_s, double t_nl,
                                          int signal_cutoff, int pump_cutoff, const CalibrationOptions& opt = {}) {
  if (abs_alpha_p == 0.0) return 0.0;
  const Matrix t = pump_cycle_transfer(abs_alpha_p, g_nl, gamma_s, t_nl, signal_cutoff, pump_cutoff, opt.integrator);
  const DensityMatrix rho = cyclic_steady_state(t, signal_cutoff, opt.steady_tol, opt.max_cycles);
  return expectation(rho, number(rho.layout(), 0)).real();
}

/// Finds |alpha_p| (phase i, so the generated signal amplitude is real) whose
/// cyclic steady state has <a^dagger a> = |target|^2 within opt.tolerance.
/// t_nl is the absolute cycle duration (e.g. 0.5 / g_nl).
/// Coarse scan over [0, bracket_hi], then bisection on the first crossing, at
/// the reduced pump cutoff; the result is re-checked at the production cutoff.
inline PumpCalibration pump_calibration(cplx target_amplitude, double g_nl, double gamma_s, double t_nl,
                                        const CalibrationOptions& opt = {}) {
  const double target_n = std::norm(target_amplitude);
  PumpCalibration out;
  if (target_n == 0.0) {
    out.alpha_p = 0.0;
    out.production_pump_cutoff = std::max(opt.reduced_pump_cutoff, 2);
    return out;
  }
  auto steady_n = [&](double amp) {
    return cyclic_steady_photon_number(amp, g_nl, gamma_s, t_nl, opt.signal_cutoff,
                                       pump_cutoff_for(amp, opt.reduced_pump_cutoff), opt);
  };

  // Scan the bracket upward in batches of `workers` points until the target is crossed.
  const int points = std::max(opt.scan_points, 2);
  const int batch = std::max(opt.workers, 1);
  std::vector<double> grid(points), values;
  for (int k = 0; k < points; ++k) grid[k] = opt.bracket_hi * k / (points - 1);
  int hi_idx = -1;
  for (int start = 0; start < points && hi_idx < 0; start += batch) {
    const int stop = std::min(points, start + batch);
    if (batch > 1) {
      std::vector<std::future<double>> futs;
      for (int k = start; k < stop; ++k) futs.push_back(std::async(std::launch::async, steady_n, grid[k]));
      for (auto& f : futs) values.push_back(f.get());
    } else {
      values.push_back(steady_n(grid[start]));
    }
    for (int k = start; k < stop; ++k) {
      out.scan.push_back({grid[k], values[k]});
      if (hi_idx < 0 && k > 0 && values[k - 1] <= target_n && values[k] >= target_n) hi_idx = k;
    }
  }
  if (hi_idx < 0) throw CalibrationFailed("pump_calibration: no crossing of the target photon number", out.scan);

  // Illinois-modified regula falsi on the crossing interval.
  double lo = grid[hi_idx - 1], hi = grid[hi_idx];
  double f_lo = values[hi_idx - 1] - target_n, f_hi = values[hi_idx] - target_n;
  double amp = hi, f = f_hi;
  int side = 0;
  for (int it = 0; it < 60; ++it) {
    amp = (f_hi != f_lo) ? lo - f_lo * (hi - lo) / (f_hi - f_lo) : 0.5 * (lo + hi);
    if (!(amp > lo && amp < hi)) amp = 0.5 * (lo + hi);
    const double n_amp = steady_n(amp);
    out.scan.push_back({amp, n_amp});
    f = n_amp - target_n;
    if (std::abs(f) <= 0.1 * opt.tolerance) break;
    if (f < 0.0) {
      lo = amp;
      f_lo = f;
      if (side == -1) f_hi *= 0.5;
      side = -1;
    } else {
      hi = amp;
      f_hi = f;
      if (side == 1) f_lo *= 0.5;
      side = 1;
    }
    if (hi - lo < 1e-9) break;
  }
  f += target_n;
  if (std::abs(f - target_n) > opt.tolerance) {
    throw CalibrationFailed("pump_calibration: root search did not reach the tolerance", out.scan);
  }
  out.alpha_p = kI * amp;
  out.photon_number = f;
  out.production_pump_cutoff = std::max(pump_cutoff_for(amp, opt.reduced_pump_cutoff), rule_cutoff(amp));
  out.verified_photon_number = cyclic_steady_photon_number(amp, g_nl, gamma_s, t_nl, opt.signal_cutoff,
                                                           out.production_pump_cutoff, opt);
  if (std::abs(out.verified_photon_number - target_n) > opt.tolerance) {
    throw CalibrationFailed("pump_calibration: production-cutoff verification missed the target", out.scan);
  }
  return out;
}

}  // namespace dopo
