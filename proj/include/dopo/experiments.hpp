#pragma once

// Scenario runner: the two-stage adiabatic protocol, the cyclic
// nonequilibrium protocol, and Cartesian parameter sweeps over either.

#include <atomic>
#include <chrono>
#include <exception>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/KroneckerProduct>

#include "dopo/config.hpp"
#include "dopo/dopo_model.hpp"
#include "dopo/errors.hpp"
#include "dopo/fock.hpp"
#include "dopo/lindblad.hpp"
#include "dopo/modular_spin.hpp"
#include "dopo/version.hpp"

namespace dopo {

struct Record {
  std::string name;
  double value = 0.0;

  bool operator==(const Record&) const = default;
};

/// Time series recorded across both stages (time in units of 1/Gamma_d).
struct TrajectorySeries {
  std::vector<double> times;
  std::vector<std::string> names;
  std::vector<std::vector<double>> values;  // values[series][sample]
};

struct PointResult {
  std::vector<double> axis_values;
  std::vector<Record> records;
  std::optional<TrajectorySeries> trajectory;
  double wall_seconds = 0.0;

  double get(const std::string& name) const {
    for (const auto& r : records) {
      if (r.name == name) return r.value;
    }
    throw InvalidArgument("PointResult: no record named '" + name + "'");
  }
};

struct SweepResult {
  ScenarioConfig config;
  std::string config_hash;
  std::string version = kVersion;
  std::vector<std::string> axis_names;
  std::vector<std::string> record_names;
  std::vector<PointResult> points;  // grid-index order, first axis slowest
};

/// A failure at one grid point; `numerical` separates integrator and
/// calibration failures from configuration problems.
class GridPointError : public Error {
 public:
  GridPointError(const std::string& what, std::size_t index, bool numerical)
      : Error(what), index_(index), numerical_(numerical) {}

  std::size_t index() const noexcept { return index_; }
  bool numerical() const noexcept { return numerical_; }

 private:
  std::size_t index_;
  bool numerical_;
};

namespace detail {

inline std::vector<Record> state_records(const DensityMatrix& rho, cplx alpha, int n_modes) {
  const ModeLayout& layout = rho.layout();
  const ModularCell cell{optimal_cell_length(alpha)};
  const StateVector ideal = ideal_cluster_state(layout, alpha, n_modes);
  const EffectiveSpinState es = effective_spin_state(rho, cell);
  const EffectiveSpinState es_ideal = effective_spin_state(DensityMatrix::pure(ideal), cell);
  std::vector<Record> out = {
      {"W", cluster_witness(es).value},
      {"purity", purity(rho)},
      {"fidelity_to_ideal", fidelity_to_pure(rho, ideal)},
      {"reduced_fidelity", spin_fidelity(es, es_ideal)},
  };
  for (std::size_t m = 0; m < layout.size(); ++m) {
    out.push_back({"n_" + std::to_string(m), expectation(rho, number(layout, m)).real()});
  }
  return out;
}

inline double quadratic_form(const StateVector& psi, const Matrix& rho) {
  return psi.amplitudes().dot(rho * psi.amplitudes()).real();
}

inline Matrix tensor_power(const Matrix& single, int n) {
  Matrix out = single;
  for (int k = 1; k < n; ++k) out = Eigen::kroneckerProduct(out, single).eval();
  return out;
}

inline int record_stride(const LindbladModel& model, double duration, const IntegratorConfig& cfg, int samples) {
  const long steps = Rk4Stepper(model, duration, cfg).steps();
  return static_cast<int>(std::max<long>(1, steps / std::max(samples, 1)));
}

inline void append_series(TrajectorySeries& series, const Trajectory& traj, double offset, bool skip_first) {
  for (std::size_t k = skip_first ? 1 : 0; k < traj.times.size(); ++k) {
    series.times.push_back(offset + traj.times[k]);
    for (std::size_t s = 0; s < series.names.size(); ++s) {
      series.values[s].push_back(traj.records[k].at(series.names[s]).real());
    }
  }
}

inline void check_final_positivity(const DensityMatrix& rho, double t) {
  const double lo = rho.min_eigenvalue();
  if (lo < kPositivityFail) throw IntegratorDiverged("final state eigenvalue " + std::to_string(lo), t);
  if (lo < kPositivityWarn) warn("final state eigenvalue " + std::to_string(lo));
}

// --- Adiabatic protocol ----------------------------------------------------

inline PointResult run_adiabatic(const ScenarioConfig& cfg) {
  const DopoParams p = cfg.dopo_params();
  const cplx alpha = steady_amplitude(p.S, p.gamma_d);
  const int n = cfg.n_modes;
  const int c = cfg.signal_cutoff;
  const ModeLayout single{c};
  const ModeLayout layout = ModeLayout::uniform(n, c);
  const StateVector ideal = ideal_cluster_state(layout, alpha, n);
  IntegratorConfig icfg = cfg.integrator();

  PointResult out;
  std::optional<TrajectorySeries> series;
  if (cfg.trajectory) series = TrajectorySeries{{}, {"fidelity", "purity"}, {{}, {}}};
  const int stage_samples = std::max(cfg.trajectory_samples / 2, 1);

  // Modes are uncoupled during the pump stage, so a product start stays a
  // product: evolve one mode and take the tensor power.
  const DensityMatrix start1 = cfg.initial == "cat" ? DensityMatrix::pure(cat_state(single, 0, alpha, +1))
                                                    : DensityMatrix::pure(vacuum(single));
  Matrix pumped1 = start1.matrix();
  if (cfg.t_p > 0.0) {
    const LindbladModel model1 = pump_stage_model(single, p);
    IntegratorConfig pcfg = icfg;
    Observables obs;
    if (series) {
      pcfg.record_every = record_stride(model1, cfg.t_p, pcfg, stage_samples);
      obs["fidelity"] = [&](const Matrix& r) { return cplx(quadratic_form(ideal, tensor_power(r, n))); };
      obs["purity"] = [&](const Matrix& r) { return cplx(std::pow(r.squaredNorm(), n)); };
    } else {
      pcfg.record_every = std::numeric_limits<int>::max();
    }
    const Trajectory traj = evolve(model1, start1, cfg.t_p, pcfg, obs);
    if (series) append_series(*series, traj, 0.0, false);
    pumped1 = traj.final_state.matrix();
  }
  DensityMatrix rho = finish(layout, tensor_power(pumped1, n));
  const double fidelity_after_pump = quadratic_form(ideal, rho.matrix());
  if (series && series->times.empty()) {
    series->times.push_back(0.0);
    series->values[0].push_back(fidelity_after_pump);
    series->values[1].push_back(purity(rho));
  }

  const double t_int = cfg.interaction_time();
  if (t_int > 0.0) {
    const LindbladModel model = interaction_stage_model(layout, p, alpha);
    IntegratorConfig scfg = icfg;
    Observables obs;
    if (series) {
      // Per-record eigendecompositions dominate at this dimension; positivity
      // is checked once on the final state instead.
      scfg.check_positivity = false;
      scfg.record_every = record_stride(model, t_int, scfg, stage_samples);
      obs["fidelity"] = [&](const Matrix& r) { return cplx(quadratic_form(ideal, r)); };
      obs["purity"] = [](const Matrix& r) { return cplx(r.squaredNorm()); };
    } else {
      scfg.record_every = std::numeric_limits<int>::max();
    }
    const Trajectory traj = evolve(model, rho, t_int, scfg, obs);
    if (series) append_series(*series, traj, cfg.t_p, true);
    rho = traj.final_state;
    if (!scfg.check_positivity) check_final_positivity(rho, cfg.t_p + t_int);
  }

  out.records = state_records(rho, alpha, n);
  out.records.push_back({"fidelity_after_pump", fidelity_after_pump});
  out.trajectory = std::move(series);
  return out;
}

// --- Nonequilibrium protocol -------------------------------------------------

struct PumpChannel {
  PumpCalibration calibration;
  Matrix transfer;  // one pump cycle on a single signal mode, production pump cutoff
};

inline std::string pump_channel_key(const ScenarioConfig& cfg) {
  const IntegratorConfig icfg = cfg.integrator();
  return detail::format_double(cfg.S) + '|' + detail::format_double(cfg.gamma_d) + '|' +
         detail::format_double(cfg.gamma_s) + '|' + detail::format_double(cfg.g_nl) + '|' +
         detail::format_double(cfg.t_nl) + '|' + std::to_string(cfg.signal_cutoff) + '|' +
         std::to_string(cfg.pump_cutoff) + '|' + detail::format_double(icfg.dt);
}

inline PumpChannel build_pump_channel(const ScenarioConfig& cfg) {
  const cplx target = steady_amplitude(cfg.S, cfg.gamma_d);
  const double t_nl = cfg.t_nl / cfg.g_nl;
  CalibrationOptions opt;
  opt.signal_cutoff = cfg.signal_cutoff;
  opt.reduced_pump_cutoff = cfg.pump_cutoff;
  opt.integrator = cfg.integrator();
  if (cfg.dt == 0.0) {
    // Positivity of the cycle channel needs |H| dt well below the RK4 stability edge.
    const ModeLayout joint{cfg.signal_cutoff, cfg.pump_cutoff};
    const double stiff = cyclic_pair_model(joint, 0, 1, cfg.g_nl, cfg.gamma_s).stiffness_bound();
    opt.integrator.dt = std::min(opt.integrator.dt, 1.0 / stiff);
  }
  PumpChannel ch;
  ch.calibration = pump_calibration(target, cfg.g_nl, cfg.gamma_s, t_nl, opt);
  ch.transfer = pump_cycle_transfer(std::abs(ch.calibration.alpha_p), cfg.g_nl, cfg.gamma_s, t_nl,
                                    cfg.signal_cutoff, ch.calibration.production_pump_cutoff, opt.integrator);
  return ch;
}

/// Calibrations are shared between grid points with the same physics; the
/// first requester computes, others wait on the same future.
inline std::shared_future<PumpChannel> pump_channel(const ScenarioConfig& cfg) {
  static std::mutex mutex;
  static std::map<std::string, std::shared_future<PumpChannel>> cache;
  const std::string key = pump_channel_key(cfg);
  std::promise<PumpChannel> promise;
  std::shared_future<PumpChannel> fut;
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    fut = cache.emplace(key, promise.get_future().share()).first->second;
  }
  try {
    promise.set_value(build_pump_channel(cfg));
  } catch (...) {
    promise.set_exception(std::current_exception());
  }
  return fut;
}

inline Matrix ising_unitary(const ModeLayout& layout, cplx alpha, int n, double phase) {
  const Matrix h = coherent_ising_h(layout, 1.0, alpha, n).dense();
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  const Vector phases = (es.eigenvalues().cast<cplx>() * (-kI * phase)).array().exp().matrix();
  return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

inline PointResult run_nonequilibrium(const ScenarioConfig& cfg) {
  const cplx alpha = steady_amplitude(cfg.S, cfg.gamma_d);
  const int n = cfg.n_modes;
  const ModeLayout layout = ModeLayout::uniform(n, cfg.signal_cutoff);
  const PumpChannel& ch = pump_channel(cfg).get();

  Matrix rho = DensityMatrix::pure(vacuum(layout)).matrix();
  auto pump_cycle = [&] {
    for (int m = 0; m < n; ++m) rho = apply_mode_channel(layout, rho, m, ch.transfer);
  };
  for (int k = 0; k < cfg.n_p; ++k) pump_cycle();
  // Lossless Ising segment of duration pi/(g_c N_i): the phase g_c t is pi/N_i.
  const Matrix u = ising_unitary(layout, alpha, n, M_PI / cfg.n_i);
  for (int k = 0; k < cfg.n_i; ++k) {
    pump_cycle();
    rho = (u * rho * u.adjoint()).eval();
    hermitize(rho);
  }
  const DensityMatrix final_state = finish(layout, std::move(rho));
  check_final_positivity(final_state, 0.0);

  PointResult out;
  out.records = state_records(final_state, alpha, n);
  out.records.push_back({"alpha_p", std::abs(ch.calibration.alpha_p)});
  return out;
}

}  // namespace detail

/// Runs one grid point (sweep axes are ignored).
inline PointResult run_protocol(const ScenarioConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  PointResult out = cfg.protocol == "nonequilibrium" ? detail::run_nonequilibrium(cfg) : detail::run_adiabatic(cfg);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline std::size_t grid_size(const ScenarioConfig& cfg) {
  std::size_t n = 1;
  for (const auto& axis : cfg.sweep) n *= axis.values.size();
  return n;
}

/// Axis values of grid point `index` (first axis slowest).
inline std::vector<double> grid_point(const ScenarioConfig& cfg, std::size_t index) {
  std::vector<double> v(cfg.sweep.size());
  for (std::size_t a = cfg.sweep.size(); a-- > 0;) {
    const std::size_t len = cfg.sweep[a].values.size();
    v[a] = cfg.sweep[a].values[index % len];
    index /= len;
  }
  return v;
}

/// The single-point config of grid point `index`.
inline ScenarioConfig resolve_point(const ScenarioConfig& cfg, std::size_t index) {
  ScenarioConfig out = cfg;
  const std::vector<double> v = grid_point(cfg, index);
  for (std::size_t a = 0; a < cfg.sweep.size(); ++a) set_config_number(out, cfg.sweep[a].key, v[a]);
  out.sweep.clear();
  return out;
}

/// Rough work estimate: sum over grid points of dimension^3 x steps.
inline double estimate_cost(const ScenarioConfig& cfg) {
  double total = 0.0;
  for (std::size_t i = 0; i < grid_size(cfg); ++i) {
    const ScenarioConfig p = resolve_point(cfg, i);
    const double dt = p.integrator().dt;
    if (p.protocol == "nonequilibrium") {
      const double pair = static_cast<double>(p.signal_cutoff) * p.pump_cutoff;
      const double cycle_steps = std::ceil(p.t_nl / p.g_nl / dt);
      const double dim = std::pow(static_cast<double>(p.signal_cutoff), p.n_modes);
      // Calibration: about a dozen transfer matrices of c_s^2 joint propagations.
      total += 12.0 * std::pow(pair, 3) * p.signal_cutoff * p.signal_cutoff * cycle_steps;
      total += std::pow(dim, 3) * (p.n_p + p.n_i);
    } else {
      const double dim = std::pow(static_cast<double>(p.signal_cutoff), p.n_modes);
      const double steps = std::ceil(p.t_p / dt) + std::ceil(p.interaction_time() / dt);
      total += std::pow(dim, 3) * steps;
    }
  }
  return total;
}

/// Runs every grid point on `cfg.workers` threads; results are in grid order
/// and independent of the worker count.
inline SweepResult run_sweep(const ScenarioConfig& cfg) {
  cfg.validate();
  SweepResult result;
  result.config = cfg;
  result.config_hash = config_hash(cfg);
  for (const auto& axis : cfg.sweep) result.axis_names.push_back(axis.key);

  const std::size_t n = grid_size(cfg);
  result.points.resize(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        PointResult r = run_protocol(resolve_point(cfg, i));
        r.axis_values = grid_point(cfg, i);
        result.points[i] = std::move(r);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int workers = static_cast<int>(std::min<std::size_t>(cfg.workers, std::max<std::size_t>(n, 1)));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    std::string where = "grid point " + std::to_string(i);
    const std::vector<double> v = grid_point(cfg, i);
    for (std::size_t a = 0; a < v.size(); ++a) where += " " + cfg.sweep[a].key + "=" + detail::format_double(v[a]);
    try {
      std::rethrow_exception(errors[i]);
    } catch (const ConfigError& e) {
      throw GridPointError(where + ": " + e.what(), i, false);
    } catch (const InvalidArgument& e) {
      throw GridPointError(where + ": " + e.what(), i, false);
    } catch (const std::exception& e) {
      throw GridPointError(where + ": " + e.what(), i, true);
    }
  }
  if (!result.points.empty()) {
    for (const auto& r : result.points.front().records) result.record_names.push_back(r.name);
  }
  return result;
}

}  // namespace dopo
