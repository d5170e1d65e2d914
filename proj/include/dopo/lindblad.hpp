#pragma once

// Lindblad master-equation assembly and propagation.
//
//   d rho/dt = -i[H, rho] + sum_k (r_k/2)(2 L_k rho L_k^dagger - {L_k^dagger L_k, rho})
//
// The superoperator is never formed: the right-hand side is applied as sparse
// left/right multiplications with the non-Hermitian effective Hamiltonian
// H_eff = H - (i/2) sum_k r_k L_k^dagger L_k.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "dopo/errors.hpp"
#include "dopo/fock.hpp"
#include "dopo/log.hpp"

namespace dopo {

struct Dissipator {
  QOperator collapse;
  double rate = 0.0;  // units of Gamma_d
};

class LindbladModel {
 public:
  using RowSparse = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;

  struct Jump {
    RowSparse op;
    SparseMatrix op_dagger;
    double rate;
    /// For operators with at most one entry per row (a, a^2, ...): column of
    /// that entry (-1 for an empty row) and its value.
    std::vector<Eigen::Index> source;
    Vector weight;
  };

  LindbladModel() = default;

  explicit LindbladModel(QOperator hamiltonian, std::vector<Dissipator> dissipators = {})
      : hamiltonian_(std::move(hamiltonian)), dissipators_(std::move(dissipators)) {
    const double defect = hamiltonian_.hermiticity_defect();
    if (defect > 1e-10) throw NotHermitian("LindbladModel: Hamiltonian Hermiticity defect " + std::to_string(defect));
    const ModeLayout& layout = hamiltonian_.layout();
    const auto d = layout.dimension();
    SparseMatrix decay(d, d);
    for (const Dissipator& dis : dissipators_) {
      require_same_layout(layout, dis.collapse.layout(), "LindbladModel dissipator");
      if (!(dis.rate >= 0.0) || !std::isfinite(dis.rate)) {
        throw InvalidArgument("LindbladModel: dissipator rate must be finite and >= 0");
      }
      if (dis.rate == 0.0) continue;
      const SparseMatrix& l = dis.collapse.matrix();
      SparseMatrix ld = l.adjoint();
      decay += dis.rate * SparseMatrix(ld * l);
      Jump j{RowSparse(l), std::move(ld), dis.rate, {}, {}};
      monomial_rows(j);
      jumps_.push_back(std::move(j));
    }
    SparseMatrix heff = hamiltonian_.matrix() - cplx(0.0, 0.5) * decay;
    heff_ = RowSparse(heff);
    heff_.makeCompressed();
    stiffness_ = inf_norm(decay) + 2.0 * inf_norm(hamiltonian_.matrix());
  }

  const ModeLayout& layout() const noexcept { return hamiltonian_.layout(); }
  const QOperator& hamiltonian() const noexcept { return hamiltonian_; }
  const std::vector<Dissipator>& dissipators() const noexcept { return dissipators_; }

  /// H - (i/2) sum_k r_k L_k^dagger L_k.
  const RowSparse& effective_hamiltonian() const noexcept { return heff_; }
  const std::vector<Jump>& jumps() const noexcept { return jumps_; }

  /// Upper bound on the generator's spectral radius, ||K||_inf + 2 ||H||_inf.
  double stiffness_bound() const noexcept { return stiffness_; }

 private:
  static void monomial_rows(Jump& j) {
    const Eigen::Index d = j.op.rows();
    std::vector<Eigen::Index> src(d, -1);
    Vector w = Vector::Zero(d);
    for (Eigen::Index r = 0; r < d; ++r) {
      int count = 0;
      for (RowSparse::InnerIterator it(j.op, r); it; ++it) {
        if (it.value() == cplx(0.0)) continue;
        if (++count > 1) return;
        src[r] = it.col();
        w(r) = it.value();
      }
    }
    j.source = std::move(src);
    j.weight = std::move(w);
  }

  static double inf_norm(const SparseMatrix& m) {
    Eigen::VectorXd rows = Eigen::VectorXd::Zero(m.rows());
    for (Eigen::Index k = 0; k < m.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(m, k); it; ++it) rows(it.row()) += std::abs(it.value());
    }
    return rows.size() ? rows.maxCoeff() : 0.0;
  }

  QOperator hamiltonian_;
  std::vector<Dissipator> dissipators_;
  RowSparse heff_;
  std::vector<Jump> jumps_;
  double stiffness_ = 0.0;
};

/// Reusable buffers for rhs evaluations inside one trajectory.
struct RhsWorkspace {
  Matrix x;
  Matrix t;
};

namespace detail {

inline void add_jumps(const LindbladModel& model, const Matrix& rho, Matrix& out, RhsWorkspace& ws) {
  for (const auto& j : model.jumps()) {
    if (j.source.empty()) {
      ws.t.noalias() = j.op * rho;
      out.noalias() += j.rate * (ws.t * j.op_dagger);
      continue;
    }
    // (L rho L^dagger)_{mn} = w_m conj(w_n) rho_{s(m), s(n)}
    const Eigen::Index d = rho.rows();
    for (Eigen::Index n = 0; n < d; ++n) {
      const Eigen::Index sn = j.source[n];
      if (sn < 0) continue;
      const cplx wn = j.rate * std::conj(j.weight(n));
      const cplx* col = rho.col(sn).data();
      cplx* dst = out.col(n).data();
      for (Eigen::Index m = 0; m < d; ++m) {
        const Eigen::Index sm = j.source[m];
        if (sm >= 0) dst[m] += j.weight(m) * wn * col[sm];
      }
    }
  }
}

}  // namespace detail

/// d rho/dt for a Hermitian rho: X + X^dagger + sum_k r_k L_k rho L_k^dagger with X = -i H_eff rho.
inline void rhs_into(const LindbladModel& model, const Matrix& rho, Matrix& out, RhsWorkspace& ws) {
  // Y = rho H_eff^dagger = X^dagger, accumulated as contiguous column updates.
  const auto& heff = model.effective_hamiltonian();
  const Eigen::Index d = rho.rows();
  ws.x.setZero(d, d);
  for (Eigen::Index r = 0; r < d; ++r) {
    for (LindbladModel::RowSparse::InnerIterator it(heff, r); it; ++it) {
      ws.x.col(r).noalias() += std::conj(it.value()) * rho.col(it.col());
    }
  }
  out = kI * (ws.x - ws.x.adjoint());
  detail::add_jumps(model, rho, out, ws);
}

/// d rho / dt for the model.
inline Matrix rhs(const LindbladModel& model, const Matrix& rho) {
  const auto d = model.layout().dimension();
  if (rho.rows() != d || rho.cols() != d) throw LayoutError("rhs: state dimension does not match model layout");
  Matrix out;
  RhsWorkspace ws;
  rhs_into(model, rho, out, ws);
  return out;
}

inline Matrix rhs(const LindbladModel& model, const DensityMatrix& rho) {
  require_same_layout(model.layout(), rho.layout(), "rhs");
  return rhs(model, rho.matrix());
}

// ---------------------------------------------------------------------------
// Propagation
// ---------------------------------------------------------------------------

struct IntegratorConfig {
  enum class Method { Rk4, Dopri5 };

  double dt = 1e-2;  // units of 1/Gamma_d; initial step for Dopri5
  Method method = Method::Rk4;
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  int record_every = 1;
  bool check_positivity = true;
  /// Shrink the RK4 step to 2.4 / stiffness_bound when dt is larger.
  bool stability_cap = true;

  void validate() const {
    if (!(dt > 0.0)) throw InvalidArgument("IntegratorConfig: dt must be > 0");
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) throw InvalidArgument("IntegratorConfig: tolerances must be > 0");
    if (record_every < 1) throw InvalidArgument("IntegratorConfig: record_every must be >= 1");
  }
};

using Observable = std::function<cplx(const Matrix&)>;
using Observables = std::map<std::string, Observable>;

inline Observable observable(QOperator op) {
  return [op = std::move(op)](const Matrix& rho) { return trace_product(rho, op.matrix()); };
}

inline Observables observables(const std::map<std::string, QOperator>& ops) {
  Observables out;
  for (const auto& [name, op] : ops) out.emplace(name, observable(op));
  return out;
}

struct Trajectory {
  std::vector<double> times;
  std::vector<std::map<std::string, cplx>> records;
  DensityMatrix final_state;
  long steps = 0;
  double worst_trace_drift = 0.0;
  double worst_hermiticity = 0.0;
  double min_eigenvalue = std::numeric_limits<double>::infinity();
  std::vector<std::string> warnings;

  std::vector<cplx> series(const std::string& name) const {
    std::vector<cplx> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.at(name));
    return out;
  }
};

inline constexpr double kTraceDriftTol = 1e-8;
inline constexpr double kHermiticityTol = 1e-9;
inline constexpr double kPositivityWarn = -1e-7;
inline constexpr double kPositivityFail = -1e-5;

namespace detail {

inline void check_and_record(const Matrix& rho, double t, const Observables& obs, const IntegratorConfig& cfg,
                             Trajectory& traj) {
  if (!rho.allFinite()) throw IntegratorDiverged("non-finite density matrix", t);
  const double drift = std::abs(rho.trace() - 1.0);
  const double herm = hermiticity_defect(rho);
  traj.worst_trace_drift = std::max(traj.worst_trace_drift, drift);
  traj.worst_hermiticity = std::max(traj.worst_hermiticity, herm);
  if (drift > kTraceDriftTol) throw IntegratorDiverged("trace drift " + std::to_string(drift), t);
  if (herm > kHermiticityTol) throw IntegratorDiverged("Hermiticity defect " + std::to_string(herm), t);
  if (cfg.check_positivity) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (rho + rho.adjoint()), Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    traj.min_eigenvalue = std::min(traj.min_eigenvalue, lo);
    if (lo < kPositivityFail) throw IntegratorDiverged("negative eigenvalue " + std::to_string(lo), t);
    if (lo < kPositivityWarn) {
      std::string msg = "eigenvalue " + std::to_string(lo) + " below -1e-7 at t = " + std::to_string(t);
      traj.warnings.push_back(msg);
      warn(msg);
    }
  }
  traj.times.push_back(t);
  std::map<std::string, cplx> rec;
  for (const auto& [name, f] : obs) rec.emplace(name, f(rho));
  traj.records.push_back(std::move(rec));
}

/// The rhs kernels assume a Hermitian argument (X + X^dagger form); projecting
/// after every step keeps round-off from seeding the anti-Hermitian sector.
inline void hermitize(Matrix& rho) {
  const Eigen::Index d = rho.rows();
  for (Eigen::Index c = 0; c < d; ++c) {
    rho(c, c) = rho(c, c).real();
    for (Eigen::Index r = c + 1; r < d; ++r) {
      const cplx v = 0.5 * (rho(r, c) + std::conj(rho(c, r)));
      rho(r, c) = v;
      rho(c, r) = std::conj(v);
    }
  }
}

inline DensityMatrix finish(const ModeLayout& layout, Matrix rho) {
  return DensityMatrix(layout, std::move(rho), kHermiticityTol, kTraceDriftTol);
}

/// Fixed-step classical RK4 over [0, duration] with n equal steps.
class Rk4Stepper {
 public:
  Rk4Stepper(const LindbladModel& model, double duration, const IntegratorConfig& cfg) : model_(model) {
    h_ = cfg.dt;
    if (cfg.stability_cap && model.stiffness_bound() > 0.0) h_ = std::min(h_, 2.4 / model.stiffness_bound());
    n_ = duration > 0.0 ? static_cast<long>(std::ceil(duration / h_ - 1e-9)) : 0;
    if (n_ > 0) h_ = duration / static_cast<double>(n_);
  }

  long steps() const noexcept { return n_; }
  double step_size() const noexcept { return h_; }

  void step(Matrix& rho) {
    rhs_into(model_, rho, k1_, ws_);
    tmp_ = rho + (0.5 * h_) * k1_;
    rhs_into(model_, tmp_, k2_, ws_);
    tmp_ = rho + (0.5 * h_) * k2_;
    rhs_into(model_, tmp_, k3_, ws_);
    tmp_ = rho + h_ * k3_;
    rhs_into(model_, tmp_, k4_, ws_);
    rho += (h_ / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
    hermitize(rho);
  }

 private:
  const LindbladModel& model_;
  double h_ = 0.0;
  long n_ = 0;
  RhsWorkspace ws_;
  Matrix k1_, k2_, k3_, k4_, tmp_;
};

inline Trajectory evolve_rk4(const LindbladModel& model, Matrix rho, double duration, const IntegratorConfig& cfg,
                             const Observables& obs) {
  Trajectory traj;
  Rk4Stepper stepper(model, duration, cfg);
  const long n = stepper.steps();
  check_and_record(rho, 0.0, obs, cfg, traj);
  for (long s = 1; s <= n; ++s) {
    stepper.step(rho);
    if (s % cfg.record_every == 0 || s == n) check_and_record(rho, s * stepper.step_size(), obs, cfg, traj);
  }
  traj.steps = n;
  traj.final_state = finish(model.layout(), std::move(rho));
  return traj;
}

/// Dormand-Prince 5(4) with standard step-size control.
inline Trajectory evolve_dopri5(const LindbladModel& model, Matrix rho, double duration, const IntegratorConfig& cfg,
                                const Observables& obs) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
  (void)c2, (void)c3, (void)c4, (void)c5;

  Trajectory traj;
  check_and_record(rho, 0.0, obs, cfg, traj);
  if (duration <= 0.0) {
    traj.final_state = finish(model.layout(), std::move(rho));
    return traj;
  }
  RhsWorkspace ws;
  Matrix k1, k2, k3, k4, k5, k6, k7, tmp, next, err;
  double t = 0.0;
  double h = std::min(cfg.dt, duration);
  long accepted = 0;
  rhs_into(model, rho, k1, ws);
  while (t < duration) {
    if (t + h > duration) h = duration - t;
    tmp = rho + h * a21 * k1;
    rhs_into(model, tmp, k2, ws);
    tmp = rho + h * (a31 * k1 + a32 * k2);
    rhs_into(model, tmp, k3, ws);
    tmp = rho + h * (a41 * k1 + a42 * k2 + a43 * k3);
    rhs_into(model, tmp, k4, ws);
    tmp = rho + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    rhs_into(model, tmp, k5, ws);
    tmp = rho + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    rhs_into(model, tmp, k6, ws);
    next = rho + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    rhs_into(model, next, k7, ws);
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double scale = cfg.abs_tol + cfg.rel_tol * std::max(rho.cwiseAbs().maxCoeff(), next.cwiseAbs().maxCoeff());
    const double enorm = err.cwiseAbs().maxCoeff() / scale;
    if (!std::isfinite(enorm)) throw IntegratorDiverged("non-finite error estimate", t);
    if (enorm <= 1.0) {
      t += h;
      rho.swap(next);
      hermitize(rho);
      k1.swap(k7);
      ++accepted;
      const bool last = t >= duration * (1.0 - 1e-14);
      if (last) t = duration;
      if (accepted % cfg.record_every == 0 || last) check_and_record(rho, t, obs, cfg, traj);
      if (last) break;
    }
    const double factor = enorm > 0.0 ? 0.9 * std::pow(enorm, -0.2) : 5.0;
    h *= std::clamp(factor, 0.2, 5.0);
    if (h < 1e-14 * std::max(1.0, duration)) throw IntegratorDiverged("step size underflow", t);
  }
  traj.steps = accepted;
  traj.final_state = finish(model.layout(), std::move(rho));
  return traj;
}

}  // namespace detail

/// Propagates rho0 for `duration`, recording observables at t = 0, every
/// `record_every` steps and at the end. Throws IntegratorDiverged when a
/// recorded state breaches the trace / Hermiticity / positivity tolerances.
inline Trajectory evolve(const LindbladModel& model, const DensityMatrix& rho0, double duration,
                         const IntegratorConfig& config, const Observables& observables = {}) {
  require_same_layout(model.layout(), rho0.layout(), "evolve");
  if (!(duration >= 0.0)) throw InvalidArgument("evolve: duration must be >= 0");
  config.validate();
  switch (config.method) {
    case IntegratorConfig::Method::Rk4:
      return detail::evolve_rk4(model, rho0.matrix(), duration, config, observables);
    case IntegratorConfig::Method::Dopri5:
      break;
  }
  return detail::evolve_dopri5(model, rho0.matrix(), duration, config, observables);
}

inline Trajectory evolve(const LindbladModel& model, const DensityMatrix& rho0, double duration,
                         const IntegratorConfig& config, const std::map<std::string, QOperator>& ops) {
  return evolve(model, rho0, duration, config, observables(ops));
}

/// True iff every recorded observable varies by less than `tol` over the
/// trailing `window` of the trajectory.
inline bool steady_reached(const Trajectory& traj, double window, double tol) {
  if (traj.times.size() < 2) throw InvalidArgument("steady_reached: trajectory has fewer than two records");
  const double t_end = traj.times.back();
  if (!(window > 0.0) || window >= t_end - traj.times.front()) {
    throw InvalidArgument("steady_reached: window must be positive and shorter than the trajectory");
  }
  const double t_start = t_end - window;
  std::size_t first = 0;
  while (first < traj.times.size() && traj.times[first] < t_start - 1e-12) ++first;
  for (const auto& [name, value] : traj.records.back()) {
    (void)value;
    double re_lo = std::numeric_limits<double>::infinity(), re_hi = -re_lo;
    double im_lo = re_lo, im_hi = -re_lo;
    for (std::size_t k = first; k < traj.records.size(); ++k) {
      const cplx v = traj.records[k].at(name);
      re_lo = std::min(re_lo, v.real());
      re_hi = std::max(re_hi, v.real());
      im_lo = std::min(im_lo, v.imag());
      im_hi = std::max(im_hi, v.imag());
    }
    if (re_hi - re_lo >= tol || im_hi - im_lo >= tol) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Cyclic attach - evolve - trace channel
// ---------------------------------------------------------------------------

using FreshFactor = std::variant<StateVector, DensityMatrix>;

/// rho -> Tr_{not keep}[ exp(t L_joint)(rho (x) fresh) ]. The joint layout must
/// be the system layout followed by the fresh factor's layout.
inline DensityMatrix cycle_channel(const DensityMatrix& system_rho, const FreshFactor& fresh,
                                   const LindbladModel& model_on_joint, double t_cycle,
                                   std::span<const std::size_t> keep, IntegratorConfig config = {}) {
  const DensityMatrix fresh_rho = std::holds_alternative<StateVector>(fresh)
                                      ? DensityMatrix::pure(std::get<StateVector>(fresh))
                                      : std::get<DensityMatrix>(fresh);
  const ModeLayout joint = system_rho.layout().concat(fresh_rho.layout());
  if (!(joint == model_on_joint.layout())) {
    throw LayoutError("cycle_channel: model layout " + to_string(model_on_joint.layout()) +
                      " is not system + fresh factor " + to_string(joint));
  }
  const DensityMatrix start = tensor({system_rho, fresh_rho});
  // Joint-space eigendecompositions are the expensive part; positivity is
  // spot-checked on the reduced output instead.
  config.check_positivity = false;
  config.record_every = std::numeric_limits<int>::max();
  const Trajectory traj = evolve(model_on_joint, start, t_cycle, config);
  DensityMatrix out = partial_trace(traj.final_state, keep);
  const double lo = out.min_eigenvalue();
  if (lo < kPositivityFail) throw IntegratorDiverged("cycle_channel output eigenvalue " + std::to_string(lo), t_cycle);
  if (lo < kPositivityWarn) warn("cycle_channel output eigenvalue " + std::to_string(lo));
  return out;
}

inline DensityMatrix cycle_channel(const DensityMatrix& system_rho, const FreshFactor& fresh,
                                   const LindbladModel& model_on_joint, double t_cycle,
                                   std::initializer_list<std::size_t> keep, IntegratorConfig config = {}) {
  return cycle_channel(system_rho, fresh, model_on_joint, t_cycle,
                       std::span<const std::size_t>(keep.begin(), keep.size()), config);
}

/// Linear RK4 propagation of any Hermitian matrix (no trace or positivity
/// checks); the building block for channel transfer matrices.
inline Matrix propagate(const LindbladModel& model, Matrix m, double duration, const IntegratorConfig& config = {}) {
  if (m.rows() != model.layout().dimension() || m.cols() != m.rows()) {
    throw LayoutError("propagate: matrix does not match model layout");
  }
  if (hermiticity_defect(m) > 1e-12) throw NotHermitian("propagate: argument must be Hermitian");
  config.validate();
  detail::Rk4Stepper stepper(model, duration, config);
  for (long s = 0; s < stepper.steps(); ++s) stepper.step(m);
  return m;
}

/// Matrix T of the cyclic channel on the system layout, acting on
/// column-major vec(rho): vec(channel(rho)) = T vec(rho). The joint layout is
/// the system layout followed by the fresh factor's layout; every system mode
/// is kept.
inline Matrix channel_transfer_matrix(const ModeLayout& system, const FreshFactor& fresh,
                                      const LindbladModel& model_on_joint, double t_cycle,
                                      IntegratorConfig config = {}) {
  const DensityMatrix fresh_rho = std::holds_alternative<StateVector>(fresh)
                                      ? DensityMatrix::pure(std::get<StateVector>(fresh))
                                      : std::get<DensityMatrix>(fresh);
  const ModeLayout joint = system.concat(fresh_rho.layout());
  if (!(joint == model_on_joint.layout())) {
    throw LayoutError("channel_transfer_matrix: model layout " + to_string(model_on_joint.layout()) +
                      " is not system + fresh factor " + to_string(joint));
  }
  std::vector<std::size_t> keep(system.size());
  std::iota(keep.begin(), keep.end(), std::size_t{0});
  const Eigen::Index d = system.dimension();
  auto image = [&](const Matrix& sys) {
    Matrix start = Eigen::kroneckerProduct(sys, fresh_rho.matrix()).eval();
    return partial_trace(joint, propagate(model_on_joint, std::move(start), t_cycle, config), keep);
  };
  // Hermitian basis: A = E_ij + E_ji and B = i(E_ij - E_ji); E_ij = (A - iB)/2.
  Matrix transfer(d * d, d * d);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = j; i < d; ++i) {
      Matrix a = Matrix::Zero(d, d);
      a(i, j) += 1.0;
      a(j, i) += 1.0;
      const Matrix ia = image(a);
      if (i == j) {
        transfer.col(i + d * j) = 0.5 * Eigen::Map<const Vector>(ia.data(), d * d);
        continue;
      }
      Matrix b = Matrix::Zero(d, d);
      b(i, j) = kI;
      b(j, i) = -kI;
      const Matrix ib = image(b);
      const Matrix eij = 0.5 * (ia - kI * ib);
      const Matrix eji = 0.5 * (ia + kI * ib);
      transfer.col(i + d * j) = Eigen::Map<const Vector>(eij.data(), d * d);
      transfer.col(j + d * i) = Eigen::Map<const Vector>(eji.data(), d * d);
    }
  }
  return transfer;
}

/// Applies a single-mode channel (transfer matrix on column-major vec) to one
/// mode of a multi-mode state.
inline Matrix apply_mode_channel(const ModeLayout& layout, const Matrix& rho, std::size_t mode, const Matrix& transfer) {
  layout.check_mode(mode);
  const Eigen::Index c = layout.cutoff(mode);
  if (transfer.rows() != c * c || transfer.cols() != c * c) {
    throw LayoutError("apply_mode_channel: transfer matrix does not match the mode cutoff");
  }
  const Eigen::Index d = layout.dimension();
  const Eigen::Index right = layout.stride(mode);
  const Eigen::Index left = d / (c * right);
  const Eigen::Index spectators = left * right;
  // Columns of g enumerate spectator (row, column) pairs; rows enumerate vec of the mode block.
  Matrix g(c * c, spectators * spectators);
  auto flat = [&](Eigen::Index s, Eigen::Index k) { return ((s / right) * c + k) * right + (s % right); };
  for (Eigen::Index sc = 0; sc < spectators; ++sc) {
    for (Eigen::Index sr = 0; sr < spectators; ++sr) {
      const Eigen::Index col = sr + spectators * sc;
      for (Eigen::Index l = 0; l < c; ++l) {
        for (Eigen::Index k = 0; k < c; ++k) g(k + c * l, col) = rho(flat(sr, k), flat(sc, l));
      }
    }
  }
  const Matrix h = transfer * g;
  Matrix out(d, d);
  for (Eigen::Index sc = 0; sc < spectators; ++sc) {
    for (Eigen::Index sr = 0; sr < spectators; ++sr) {
      const Eigen::Index col = sr + spectators * sc;
      for (Eigen::Index l = 0; l < c; ++l) {
        for (Eigen::Index k = 0; k < c; ++k) out(flat(sr, k), flat(sc, l)) = h(k + c * l, col);
      }
    }
  }
  return out;
}

inline DensityMatrix apply_mode_channel(const DensityMatrix& rho, std::size_t mode, const Matrix& transfer) {
  return detail::finish(rho.layout(), apply_mode_channel(rho.layout(), rho.matrix(), mode, transfer));
}

}  // namespace dopo
