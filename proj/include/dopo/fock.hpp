#pragma once

// Truncated Fock-space algebra: mode layouts, operators, states and the scalar
// functionals used throughout the toolkit.
//
// Basis ordering follows the Kronecker convention: for modes (m_0, ..., m_{k-1})
// the flat index is n_0 * stride_0 + ... + n_{k-1}, i.e. mode 0 is the most
// significant digit.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <unsupported/Eigen/KroneckerProduct>
#include <boost/math/special_functions/laguerre.hpp>

#include "dopo/errors.hpp"

namespace dopo {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using SparseMatrix = Eigen::SparseMatrix<cplx>;

inline constexpr cplx kI{0.0, 1.0};

// ---------------------------------------------------------------------------
// ModeLayout
// ---------------------------------------------------------------------------

/// Ordered list of bosonic modes, each truncated at `cutoff` Fock levels
/// (photon numbers 0 .. cutoff-1).
class ModeLayout {
 public:
  ModeLayout() = default;

  explicit ModeLayout(std::vector<int> cutoffs) : cutoffs_(std::move(cutoffs)) {
    for (int c : cutoffs_) {
      if (c < 2) throw LayoutError("ModeLayout: every cutoff must be >= 2, got " + std::to_string(c));
    }
  }

  ModeLayout(std::initializer_list<int> cutoffs) : ModeLayout(std::vector<int>(cutoffs)) {}

  static ModeLayout uniform(std::size_t modes, int cutoff) {
    return ModeLayout(std::vector<int>(modes, cutoff));
  }

  std::size_t size() const noexcept { return cutoffs_.size(); }
  const std::vector<int>& cutoffs() const noexcept { return cutoffs_; }

  int cutoff(std::size_t mode) const {
    check_mode(mode);
    return cutoffs_[mode];
  }

  Eigen::Index dimension() const noexcept {
    return std::accumulate(cutoffs_.begin(), cutoffs_.end(), Eigen::Index{1},
                           [](Eigen::Index acc, int c) { return acc * c; });
  }

  /// Distance in the flat index between consecutive Fock levels of `mode`.
  Eigen::Index stride(std::size_t mode) const {
    check_mode(mode);
    Eigen::Index s = 1;
    for (std::size_t k = mode + 1; k < cutoffs_.size(); ++k) s *= cutoffs_[k];
    return s;
  }

  ModeLayout concat(const ModeLayout& other) const {
    std::vector<int> c = cutoffs_;
    c.insert(c.end(), other.cutoffs_.begin(), other.cutoffs_.end());
    return ModeLayout(std::move(c));
  }

  ModeLayout select(std::span<const std::size_t> modes) const {
    std::vector<int> c;
    c.reserve(modes.size());
    for (std::size_t m : modes) c.push_back(cutoff(m));
    return ModeLayout(std::move(c));
  }

  void check_mode(std::size_t mode) const {
    if (mode >= cutoffs_.size()) {
      throw LayoutError("mode index " + std::to_string(mode) + " out of range for layout with " +
                        std::to_string(cutoffs_.size()) + " modes");
    }
  }

  friend bool operator==(const ModeLayout&, const ModeLayout&) = default;

 private:
  std::vector<int> cutoffs_;
};

inline std::string to_string(const ModeLayout& layout) {
  std::string s = "(";
  for (std::size_t k = 0; k < layout.size(); ++k) {
    if (k) s += ",";
    s += std::to_string(layout.cutoff(k));
  }
  return s + ")";
}

inline void require_same_layout(const ModeLayout& a, const ModeLayout& b, const char* where) {
  if (!(a == b)) {
    throw LayoutError(std::string(where) + ": layout mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

// ---------------------------------------------------------------------------
// QOperator
// ---------------------------------------------------------------------------

/// Max-abs Hermiticity defect max|M - M^dagger|.
inline double hermiticity_defect(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

inline double hermiticity_defect(const SparseMatrix& m) {
  SparseMatrix d = m - SparseMatrix(m.adjoint());
  double worst = 0.0;
  for (Eigen::Index k = 0; k < d.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(d, k); it; ++it) worst = std::max(worst, std::abs(it.value()));
  }
  return worst;
}

/// Complex square matrix tagged with the layout it acts on. Stored sparse;
/// dense results (spectral functions, displacements) are simply full.
class QOperator {
 public:
  QOperator() = default;

  QOperator(ModeLayout layout, SparseMatrix matrix) : layout_(std::move(layout)), matrix_(std::move(matrix)) {
    const auto d = layout_.dimension();
    if (matrix_.rows() != d || matrix_.cols() != d) {
      throw LayoutError("QOperator: matrix is " + std::to_string(matrix_.rows()) + "x" +
                        std::to_string(matrix_.cols()) + " but layout " + to_string(layout_) +
                        " has dimension " + std::to_string(d));
    }
    matrix_.makeCompressed();
  }

  QOperator(ModeLayout layout, const Matrix& dense) : QOperator(std::move(layout), SparseMatrix(dense.sparseView(cplx(0.0), 0.0))) {}

  static QOperator identity(const ModeLayout& layout) {
    SparseMatrix id(layout.dimension(), layout.dimension());
    id.setIdentity();
    return QOperator(layout, std::move(id));
  }

  static QOperator zero(const ModeLayout& layout) {
    return QOperator(layout, SparseMatrix(layout.dimension(), layout.dimension()));
  }

  const ModeLayout& layout() const noexcept { return layout_; }
  const SparseMatrix& matrix() const noexcept { return matrix_; }
  Matrix dense() const { return Matrix(matrix_); }
  Eigen::Index dimension() const noexcept { return matrix_.rows(); }

  QOperator adjoint() const { return QOperator(layout_, SparseMatrix(matrix_.adjoint())); }
  double hermiticity_defect() const { return dopo::hermiticity_defect(matrix_); }
  bool is_hermitian(double tol = 1e-12) const { return hermiticity_defect() <= tol; }

  /// Frobenius norm.
  double norm() const { return matrix_.norm(); }

  QOperator& operator+=(const QOperator& o) {
    require_same_layout(layout_, o.layout_, "QOperator +");
    matrix_ += o.matrix_;
    return *this;
  }
  QOperator& operator-=(const QOperator& o) {
    require_same_layout(layout_, o.layout_, "QOperator -");
    matrix_ -= o.matrix_;
    return *this;
  }
  QOperator& operator*=(cplx s) {
    matrix_ *= s;
    return *this;
  }

  friend QOperator operator+(QOperator a, const QOperator& b) { return a += b; }
  friend QOperator operator-(QOperator a, const QOperator& b) { return a -= b; }
  friend QOperator operator-(QOperator a) { return a *= -1.0; }
  friend QOperator operator*(QOperator a, cplx s) { return a *= s; }
  friend QOperator operator*(cplx s, QOperator a) { return a *= s; }
  friend QOperator operator*(QOperator a, double s) { return a *= cplx(s); }
  friend QOperator operator*(double s, QOperator a) { return a *= cplx(s); }
  friend QOperator operator*(const QOperator& a, const QOperator& b) {
    require_same_layout(a.layout_, b.layout_, "QOperator *");
    return QOperator(a.layout_, SparseMatrix(a.matrix_ * b.matrix_));
  }

 private:
  ModeLayout layout_;
  SparseMatrix matrix_;
};

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

class StateVector {
 public:
  StateVector() = default;

  StateVector(ModeLayout layout, Vector amplitudes, double leakage = 0.0)
      : layout_(std::move(layout)), amplitudes_(std::move(amplitudes)), leakage_(leakage) {
    if (amplitudes_.size() != layout_.dimension()) {
      throw LayoutError("StateVector: " + std::to_string(amplitudes_.size()) + " amplitudes for layout " +
                        to_string(layout_));
    }
  }

  const ModeLayout& layout() const noexcept { return layout_; }
  const Vector& amplitudes() const noexcept { return amplitudes_; }
  double norm() const { return amplitudes_.norm(); }

  /// Probability mass lost to truncation before normalization (0 when not tracked).
  double leakage() const noexcept { return leakage_; }

  StateVector normalized() const {
    const double n = norm();
    if (!(n > 0.0)) throw InvalidArgument("StateVector: cannot normalize a zero vector");
    return StateVector(layout_, amplitudes_ / n, leakage_);
  }

  /// <this|other>
  cplx inner(const StateVector& other) const {
    require_same_layout(layout_, other.layout_, "StateVector inner");
    return amplitudes_.dot(other.amplitudes_);
  }

  friend StateVector operator+(const StateVector& a, const StateVector& b) {
    require_same_layout(a.layout_, b.layout_, "StateVector +");
    return StateVector(a.layout_, a.amplitudes_ + b.amplitudes_, a.leakage_ + b.leakage_);
  }
  friend StateVector operator*(cplx s, const StateVector& a) {
    return StateVector(a.layout_, s * a.amplitudes_, a.leakage_);
  }

 private:
  ModeLayout layout_;
  Vector amplitudes_;
  double leakage_ = 0.0;
};

/// Hermitian unit-trace matrix on a layout. Construction checks the dimension,
/// Hermiticity (the stored matrix is symmetrized) and the trace; positivity is
/// checked on demand through min_eigenvalue().
class DensityMatrix {
 public:
  static constexpr double kHermitianTol = 1e-10;
  static constexpr double kTraceTol = 1e-8;

  DensityMatrix() = default;

  DensityMatrix(ModeLayout layout, Matrix m, double hermitian_tol = kHermitianTol, double trace_tol = kTraceTol)
      : layout_(std::move(layout)), matrix_(std::move(m)) {
    const auto d = layout_.dimension();
    if (matrix_.rows() != d || matrix_.cols() != d) {
      throw LayoutError("DensityMatrix: matrix side " + std::to_string(matrix_.rows()) + " does not match layout " +
                        to_string(layout_));
    }
    const double defect = hermiticity_defect(matrix_);
    if (defect > hermitian_tol) {
      throw NotHermitian("DensityMatrix: Hermiticity defect " + std::to_string(defect));
    }
    matrix_ = 0.5 * (matrix_ + matrix_.adjoint()).eval();
    const double tr_err = std::abs(matrix_.trace() - 1.0);
    if (tr_err > trace_tol) throw InvalidArgument("DensityMatrix: trace differs from 1 by " + std::to_string(tr_err));
  }

  static DensityMatrix pure(const StateVector& psi) {
    const StateVector n = psi.normalized();
    return DensityMatrix(n.layout(), n.amplitudes() * n.amplitudes().adjoint());
  }

  static DensityMatrix maximally_mixed(const ModeLayout& layout) {
    const auto d = layout.dimension();
    return DensityMatrix(layout, Matrix::Identity(d, d) / static_cast<double>(d));
  }

  const ModeLayout& layout() const noexcept { return layout_; }
  const Matrix& matrix() const noexcept { return matrix_; }
  Eigen::Index dimension() const noexcept { return matrix_.rows(); }

  double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Matrix> es(matrix_, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }

 private:
  ModeLayout layout_;
  Matrix matrix_;
};

// ---------------------------------------------------------------------------
// Elementary operators
// ---------------------------------------------------------------------------

namespace detail {

inline SparseMatrix single_mode_annihilation(int cutoff) {
  SparseMatrix a(cutoff, cutoff);
  std::vector<Eigen::Triplet<cplx>> t;
  for (int n = 1; n < cutoff; ++n) t.emplace_back(n - 1, n, std::sqrt(static_cast<double>(n)));
  a.setFromTriplets(t.begin(), t.end());
  return a;
}

inline SparseMatrix sparse_identity(Eigen::Index d) {
  SparseMatrix id(d, d);
  id.setIdentity();
  return id;
}

inline SparseMatrix kron(const SparseMatrix& a, const SparseMatrix& b) {
  SparseMatrix out = Eigen::kroneckerProduct(a, b).eval();
  out.makeCompressed();
  return out;
}

}  // namespace detail

/// Places a single-mode operator on `mode` with identities elsewhere.
inline QOperator embed(const ModeLayout& layout, std::size_t mode, const SparseMatrix& single) {
  layout.check_mode(mode);
  const int c = layout.cutoff(mode);
  if (single.rows() != c || single.cols() != c) {
    throw LayoutError("embed: single-mode operator side " + std::to_string(single.rows()) +
                      " does not match cutoff " + std::to_string(c));
  }
  Eigen::Index left = 1;
  for (std::size_t k = 0; k < mode; ++k) left *= layout.cutoff(k);
  const Eigen::Index right = layout.stride(mode);
  SparseMatrix m = detail::kron(detail::kron(detail::sparse_identity(left), single), detail::sparse_identity(right));
  return QOperator(layout, std::move(m));
}

inline QOperator embed(const ModeLayout& layout, std::size_t mode, const Matrix& single) {
  return embed(layout, mode, SparseMatrix(single.sparseView(cplx(0.0), 0.0)));
}

inline QOperator annihilation(const ModeLayout& layout, std::size_t mode) {
  layout.check_mode(mode);
  return embed(layout, mode, detail::single_mode_annihilation(layout.cutoff(mode)));
}

inline QOperator creation(const ModeLayout& layout, std::size_t mode) {
  return annihilation(layout, mode).adjoint();
}

inline QOperator number(const ModeLayout& layout, std::size_t mode) {
  const QOperator a = annihilation(layout, mode);
  return a.adjoint() * a;
}

/// x = (a + a^dagger) / sqrt(2)
inline QOperator position(const ModeLayout& layout, std::size_t mode) {
  const QOperator a = annihilation(layout, mode);
  return (a + a.adjoint()) * (1.0 / std::sqrt(2.0));
}

/// p = (a - a^dagger) / (i sqrt(2))
inline QOperator momentum(const ModeLayout& layout, std::size_t mode) {
  const QOperator a = annihilation(layout, mode);
  return (a - a.adjoint()) * (1.0 / (kI * std::sqrt(2.0)));
}

/// Single-mode displacement D(beta) = exp(beta a^dagger - beta* a) from the
/// closed-form Laguerre matrix elements, truncated to `cutoff` levels.
inline Matrix displacement_matrix(int cutoff, cplx beta) {
  Matrix d(cutoff, cutoff);
  const double x = std::norm(beta);
  for (int m = 0; m < cutoff; ++m) {
    for (int n = 0; n < cutoff; ++n) {
      const int lo = std::min(m, n);
      const int k = std::abs(m - n);
      // sqrt(lo!/hi!) * |beta|^k * exp(-|beta|^2/2) evaluated in log space
      const double log_mag = 0.5 * (std::lgamma(lo + 1.0) - std::lgamma(lo + k + 1.0)) - 0.5 * x;
      const cplx phase_factor = m >= n ? std::pow(beta, k) : std::pow(-std::conj(beta), k);
      const double lag = boost::math::laguerre(static_cast<unsigned>(lo), static_cast<unsigned>(k), x);
      d(m, n) = std::exp(log_mag) * phase_factor * lag;
    }
  }
  return d;
}

inline QOperator displacement(const ModeLayout& layout, std::size_t mode, cplx beta) {
  layout.check_mode(mode);
  return embed(layout, mode, displacement_matrix(layout.cutoff(mode), beta));
}

// ---------------------------------------------------------------------------
// Canonical states
// ---------------------------------------------------------------------------

/// Smallest cutoff satisfying |alpha|^2 + 5|alpha| + 4 <= cutoff.
inline int rule_cutoff(double abs_alpha) {
  return static_cast<int>(std::ceil(abs_alpha * abs_alpha + 5.0 * abs_alpha + 4.0 - 1e-12));
}

/// How coherent-state builders decide whether a cutoff is large enough.
struct TruncationPolicy {
  enum class Kind { Rule, Leakage } kind = Kind::Rule;
  double max_leakage = 1e-6;

  static TruncationPolicy rule() { return {}; }
  static TruncationPolicy leakage(double tol) { return {Kind::Leakage, tol}; }
};

namespace detail {

/// Unnormalized truncated amplitudes e^{-|a|^2/2} a^n / sqrt(n!).
inline Vector coherent_amplitudes(int cutoff, cplx alpha) {
  Vector c(cutoff);
  c(0) = std::exp(-0.5 * std::norm(alpha));
  for (int n = 1; n < cutoff; ++n) c(n) = c(n - 1) * alpha / std::sqrt(static_cast<double>(n));
  return c;
}

inline void check_truncation(int cutoff, cplx alpha, const Vector& amps, TruncationPolicy policy) {
  const double a = std::abs(alpha);
  if (policy.kind == TruncationPolicy::Kind::Rule) {
    if (a * a + 5.0 * a + 4.0 > cutoff + 1e-12) {
      throw CutoffTooSmall("cutoff " + std::to_string(cutoff) + " too small for |alpha| = " + std::to_string(a) +
                           " (truncation rule needs " + std::to_string(rule_cutoff(a)) + ")");
    }
  } else {
    const double leak = 1.0 - amps.squaredNorm();
    if (leak > policy.max_leakage) {
      throw CutoffTooSmall("cutoff " + std::to_string(cutoff) + " leaks " + std::to_string(leak) +
                           " of |alpha| = " + std::to_string(a));
    }
  }
}

/// Product state: `single` on `mode`, vacuum elsewhere.
inline Vector place_on_mode(const ModeLayout& layout, std::size_t mode, const Vector& single) {
  Vector v = Vector::Zero(layout.dimension());
  const Eigen::Index stride = layout.stride(mode);
  for (Eigen::Index n = 0; n < single.size(); ++n) v(n * stride) = single(n);
  return v;
}

}  // namespace detail

inline StateVector vacuum(const ModeLayout& layout) {
  Vector v = Vector::Zero(layout.dimension());
  v(0) = 1.0;
  return StateVector(layout, std::move(v));
}

/// Fock product state |n_0, n_1, ...>.
inline StateVector fock_state(const ModeLayout& layout, std::span<const int> occupations) {
  if (occupations.size() != layout.size()) throw LayoutError("fock_state: one occupation per mode required");
  Eigen::Index idx = 0;
  for (std::size_t k = 0; k < layout.size(); ++k) {
    if (occupations[k] < 0 || occupations[k] >= layout.cutoff(k)) throw LayoutError("fock_state: occupation out of range");
    idx += occupations[k] * layout.stride(k);
  }
  Vector v = Vector::Zero(layout.dimension());
  v(idx) = 1.0;
  return StateVector(layout, std::move(v));
}

inline StateVector fock_state(const ModeLayout& layout, std::initializer_list<int> occupations) {
  return fock_state(layout, std::span<const int>(occupations.begin(), occupations.size()));
}

/// Coherent state on `mode` (vacuum on the other modes), renormalized after
/// truncation. leakage() reports 1 - sum_n |<n|alpha>|^2.
inline StateVector coherent_state(const ModeLayout& layout, std::size_t mode, cplx alpha,
                                  TruncationPolicy policy = TruncationPolicy::rule()) {
  const int cutoff = layout.cutoff(mode);
  const Vector amps = detail::coherent_amplitudes(cutoff, alpha);
  detail::check_truncation(cutoff, alpha, amps, policy);
  const double leakage = std::max(0.0, 1.0 - amps.squaredNorm());
  return StateVector(layout, detail::place_on_mode(layout, mode, amps / amps.norm()), leakage);
}

/// Closed-form squared norm of |alpha> + sign |-alpha>: 2(1 + sign e^{-2|alpha|^2}).
inline double cat_norm_squared(cplx alpha, int sign) {
  return 2.0 * (1.0 + sign * std::exp(-2.0 * std::norm(alpha)));
}

/// Normalized (|alpha> + sign |-alpha>) on `mode`.
inline StateVector cat_state(const ModeLayout& layout, std::size_t mode, cplx alpha, int sign,
                             TruncationPolicy policy = TruncationPolicy::rule()) {
  if (sign != 1 && sign != -1) throw InvalidArgument("cat_state: sign must be +1 or -1");
  const int cutoff = layout.cutoff(mode);
  const Vector plus = detail::coherent_amplitudes(cutoff, alpha);
  detail::check_truncation(cutoff, alpha, plus, policy);
  const Vector minus = detail::coherent_amplitudes(cutoff, -alpha);
  const double norm_sq = cat_norm_squared(alpha, sign);
  if (norm_sq < 1e-24) throw InvalidArgument("cat_state: odd cat of vanishing amplitude has no normalization");
  Vector v = (plus + static_cast<double>(sign) * minus) / std::sqrt(norm_sq);
  const double leakage = std::max(0.0, 1.0 - v.squaredNorm());
  v /= v.norm();
  return StateVector(layout, detail::place_on_mode(layout, mode, v), leakage);
}

// ---------------------------------------------------------------------------
// Tensor composition
// ---------------------------------------------------------------------------

inline QOperator tensor(std::span<const QOperator> ops) {
  if (ops.empty()) throw InvalidArgument("tensor: nothing to compose");
  ModeLayout layout = ops[0].layout();
  SparseMatrix m = ops[0].matrix();
  for (std::size_t k = 1; k < ops.size(); ++k) {
    layout = layout.concat(ops[k].layout());
    m = detail::kron(m, ops[k].matrix());
  }
  return QOperator(std::move(layout), std::move(m));
}

inline QOperator tensor(std::initializer_list<QOperator> ops) {
  return tensor(std::span<const QOperator>(ops.begin(), ops.size()));
}

inline StateVector tensor(std::span<const StateVector> states) {
  if (states.empty()) throw InvalidArgument("tensor: nothing to compose");
  ModeLayout layout = states[0].layout();
  Vector v = states[0].amplitudes();
  for (std::size_t k = 1; k < states.size(); ++k) {
    layout = layout.concat(states[k].layout());
    Vector next(v.size() * states[k].amplitudes().size());
    const Vector& b = states[k].amplitudes();
    for (Eigen::Index i = 0; i < v.size(); ++i) next.segment(i * b.size(), b.size()) = v(i) * b;
    v = std::move(next);
  }
  return StateVector(std::move(layout), std::move(v));
}

inline StateVector tensor(std::initializer_list<StateVector> states) {
  return tensor(std::span<const StateVector>(states.begin(), states.size()));
}

inline DensityMatrix tensor(std::span<const DensityMatrix> states) {
  if (states.empty()) throw InvalidArgument("tensor: nothing to compose");
  ModeLayout layout = states[0].layout();
  Matrix m = states[0].matrix();
  for (std::size_t k = 1; k < states.size(); ++k) {
    layout = layout.concat(states[k].layout());
    m = Eigen::kroneckerProduct(m, states[k].matrix()).eval();
  }
  return DensityMatrix(std::move(layout), std::move(m));
}

inline DensityMatrix tensor(std::initializer_list<DensityMatrix> states) {
  return tensor(std::span<const DensityMatrix>(states.begin(), states.size()));
}

using TensorFactor = std::variant<QOperator, StateVector>;

/// Heterogeneous entry point: all factors must be of the same kind.
inline TensorFactor tensor(const std::vector<TensorFactor>& factors) {
  if (factors.empty()) throw InvalidArgument("tensor: nothing to compose");
  const std::size_t kind = factors.front().index();
  for (const auto& f : factors) {
    if (f.index() != kind) throw InvalidArgument("tensor: cannot mix operators and state vectors");
  }
  if (kind == 0) {
    std::vector<QOperator> ops;
    for (const auto& f : factors) ops.push_back(std::get<QOperator>(f));
    return tensor(std::span<const QOperator>(ops));
  }
  std::vector<StateVector> states;
  for (const auto& f : factors) states.push_back(std::get<StateVector>(f));
  return tensor(std::span<const StateVector>(states));
}

// ---------------------------------------------------------------------------
// Partial trace
// ---------------------------------------------------------------------------

inline Matrix partial_trace(const ModeLayout& layout, const Matrix& rho, std::span<const std::size_t> keep_in) {
  if (keep_in.empty()) throw InvalidArgument("partial_trace: keep set is empty");
  std::vector<std::size_t> keep(keep_in.begin(), keep_in.end());
  std::sort(keep.begin(), keep.end());
  if (std::adjacent_find(keep.begin(), keep.end()) != keep.end()) {
    throw InvalidArgument("partial_trace: duplicate index in keep set");
  }
  for (std::size_t m : keep) layout.check_mode(m);

  std::vector<bool> kept(layout.size(), false);
  for (std::size_t m : keep) kept[m] = true;

  const Eigen::Index d = layout.dimension();
  std::vector<Eigen::Index> kept_index(d), traced_index(d);
  Eigen::Index d_keep = 1, d_trace = 1;
  for (std::size_t m = 0; m < layout.size(); ++m) (kept[m] ? d_keep : d_trace) *= layout.cutoff(m);

  for (Eigen::Index f = 0; f < d; ++f) {
    Eigen::Index rem = f, ki = 0, ti = 0, kmul = 1, tmul = 1;
    for (std::size_t m = layout.size(); m-- > 0;) {
      const int c = layout.cutoff(m);
      const Eigen::Index digit = rem % c;
      rem /= c;
      if (kept[m]) {
        ki += digit * kmul;
        kmul *= c;
      } else {
        ti += digit * tmul;
        tmul *= c;
      }
    }
    kept_index[f] = ki;
    traced_index[f] = ti;
  }

  std::vector<std::vector<Eigen::Index>> groups(d_trace);
  for (Eigen::Index f = 0; f < d; ++f) groups[traced_index[f]].push_back(f);

  Matrix out = Matrix::Zero(d_keep, d_keep);
  for (const auto& g : groups) {
    for (Eigen::Index c : g) {
      for (Eigen::Index r : g) out(kept_index[r], kept_index[c]) += rho(r, c);
    }
  }
  return out;
}

inline DensityMatrix partial_trace(const DensityMatrix& rho, std::span<const std::size_t> keep) {
  std::vector<std::size_t> sorted(keep.begin(), keep.end());
  std::sort(sorted.begin(), sorted.end());
  Matrix out = partial_trace(rho.layout(), rho.matrix(), sorted);
  return DensityMatrix(rho.layout().select(sorted), std::move(out));
}

inline DensityMatrix partial_trace(const DensityMatrix& rho, std::initializer_list<std::size_t> keep) {
  return partial_trace(rho, std::span<const std::size_t>(keep.begin(), keep.size()));
}

// ---------------------------------------------------------------------------
// Scalar functionals
// ---------------------------------------------------------------------------

/// Tr(rho * op) for a dense rho and sparse op.
inline cplx trace_product(const Matrix& rho, const SparseMatrix& op) {
  cplx acc = 0.0;
  for (Eigen::Index k = 0; k < op.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(op, k); it; ++it) acc += rho(it.col(), it.row()) * it.value();
  }
  return acc;
}

inline cplx expectation(const DensityMatrix& rho, const QOperator& op) {
  require_same_layout(rho.layout(), op.layout(), "expectation");
  return trace_product(rho.matrix(), op.matrix());
}

inline cplx expectation(const StateVector& psi, const QOperator& op) {
  require_same_layout(psi.layout(), op.layout(), "expectation");
  return psi.amplitudes().dot(op.matrix() * psi.amplitudes());
}

/// <psi|rho|psi> for a normalized target psi.
inline double fidelity_to_pure(const DensityMatrix& rho, const StateVector& psi) {
  require_same_layout(rho.layout(), psi.layout(), "fidelity_to_pure");
  return psi.amplitudes().dot(rho.matrix() * psi.amplitudes()).real();
}

inline double purity(const DensityMatrix& rho) { return rho.matrix().squaredNorm(); }

/// f(op) by eigendecomposition. Inputs with Hermiticity defect <= 1e-10 are
/// symmetrized first; anything worse is rejected.
inline Matrix hermitian_function(const Matrix& m, const std::function<double(double)>& f) {
  const double defect = hermiticity_defect(m);
  if (defect > 1e-10) throw NotHermitian("hermitian_function: Hermiticity defect " + std::to_string(defect));
  const Matrix sym = 0.5 * (m + m.adjoint());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  Eigen::VectorXd fv = es.eigenvalues().unaryExpr(f);
  return es.eigenvectors() * fv.asDiagonal() * es.eigenvectors().adjoint();
}

inline QOperator hermitian_function(const QOperator& op, const std::function<double(double)>& f) {
  return QOperator(op.layout(), hermitian_function(op.dense(), f));
}

/// Debug dump: one line per row, "re im" pairs separated by spaces.
inline void write_matrix(std::ostream& os, const Matrix& m) {
  const auto old = os.precision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) os << ' ';
      os << m(r, c).real() << ' ' << m(r, c).imag();
    }
    os << '\n';
  }
  os.precision(old);
}

}  // namespace dopo
