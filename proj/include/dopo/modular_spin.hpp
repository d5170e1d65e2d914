#pragma once

// Modular-variable effective spins.
//
// Position is split as x = N_x l + xbar with xbar in (0, l]. Cells with even N_x
// carry spin up (sin(pi x / l) > 0), odd cells carry spin down, and cell 2m
// pairs with cell 2m - 1. With T = exp(i p l), which moves a wave packet by -l,
//
//   sigma_z = sign(sin(pi x / l)),   P_pm = (1 pm sigma_z) / 2
//   sigma_x = T P_+ + T^dagger P_-,  sigma_y = i T P_+ - i T^dagger P_-
//
// All three are built as Fock-space compressions evaluated by Gauss-Legendre
// quadrature on the cell grid. sigma_z is then replaced by the matrix sign of
// its compression so that it squares to the identity exactly.

#include <array>
#include <cmath>
#include <future>
#include <map>
#include <mutex>
#include <span>
#include <tuple>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "dopo/errors.hpp"
#include "dopo/fock.hpp"
#include "dopo/log.hpp"

namespace dopo {

struct ModularCell {
  double length = 4.0;

  ModularCell() = default;
  explicit ModularCell(double l) : length(l) {
    if (!(l > 0.0) || !std::isfinite(l)) throw InvalidArgument("ModularCell: length must be positive and finite");
  }
};

/// l = 2 sqrt(2) |alpha|: the coherent peaks at x = +-sqrt(2)|alpha| sit at cell centres.
inline double optimal_cell_length(cplx alpha) {
  const double a = std::abs(alpha);
  if (!(a > 0.0)) throw InvalidArgument("optimal_cell_length: alpha must be nonzero");
  return 2.0 * std::sqrt(2.0) * a;
}

enum class PauliAxis { X, Y, Z };

struct SingleModePaulis {
  Matrix x, y, z;
  /// Probability that a packet centred in a cell leaves the Fock cutoff when moved by one cell.
  double displacement_leakage = 0.0;
};

namespace detail {

/// Hermite functions psi_0 .. psi_{n-1} at the points; row k holds psi_k.
inline Eigen::MatrixXd hermite_functions(int n, const Eigen::VectorXd& x) {
  Eigen::MatrixXd p(n, x.size());
  p.row(0) = (std::pow(M_PI, -0.25) * (-0.5 * x.array().square()).exp()).matrix().transpose();
  if (n > 1) p.row(1) = std::sqrt(2.0) * x.transpose().cwiseProduct(p.row(0));
  for (int k = 2; k < n; ++k) {
    p.row(k) = std::sqrt(2.0 / k) * x.transpose().cwiseProduct(p.row(k - 1)) - std::sqrt((k - 1.0) / k) * p.row(k - 2);
  }
  return p;
}

inline SingleModePaulis build_paulis(int cutoff, double l) {
  using Quad = boost::math::quadrature::gauss<double, 30>;
  const auto& abscissa = Quad::abscissa();
  const auto& weights = Quad::weights();

  // Hermite functions up to cutoff-1 are negligible beyond sqrt(2 cutoff) + ~8.
  const double reach = std::sqrt(2.0 * cutoff + 1.0) + l + 10.0;
  const long kmin = static_cast<long>(std::floor(-reach / l));
  const long kmax = static_cast<long>(std::ceil(reach / l));
  const int pieces = std::max(1, static_cast<int>(std::ceil(l / 1.0)));
  const int per_piece = 2 * static_cast<int>(abscissa.size());

  Eigen::MatrixXd zc = Eigen::MatrixXd::Zero(cutoff, cutoff);
  Eigen::MatrixXd up = Eigen::MatrixXd::Zero(cutoff, cutoff);  // T P_+
  Eigen::MatrixXd dn = Eigen::MatrixXd::Zero(cutoff, cutoff);  // T^dagger P_-
  Eigen::VectorXd y(per_piece * pieces), w(per_piece * pieces);
  for (long k = kmin; k < kmax; ++k) {
    const bool is_up = (k % 2 + 2) % 2 == 0;
    const double a = k * l, h = l / pieces;
    Eigen::Index idx = 0;
    for (int p = 0; p < pieces; ++p) {
      const double mid = a + (p + 0.5) * h, half = 0.5 * h;
      for (std::size_t i = 0; i < abscissa.size(); ++i) {
        y(idx) = mid + half * abscissa[i];
        w(idx++) = half * weights[i];
        y(idx) = mid - half * abscissa[i];
        w(idx++) = half * weights[i];
      }
    }
    const Eigen::MatrixXd psi = hermite_functions(cutoff, y);
    const Eigen::MatrixXd weighted = psi * w.asDiagonal();
    zc += (is_up ? 1.0 : -1.0) * (weighted * psi.transpose());
    const Eigen::VectorXd moved = (y.array() + (is_up ? -l : l)).matrix();
    (is_up ? up : dn) += hermite_functions(cutoff, moved) * weighted.transpose();
  }

  SingleModePaulis out;
  const Matrix x = (up + dn).cast<cplx>();
  const Matrix yop = kI * (up - dn).cast<cplx>();
  for (const Matrix* m : {&x, &yop}) {
    const double defect = hermiticity_defect(*m);
    if (defect >= 1e-6) {
      throw CutoffTooSmall("modular_pauli: Hermiticity defect " + std::to_string(defect) + " at cutoff " +
                           std::to_string(cutoff));
    }
  }
  out.x = 0.5 * (x + x.adjoint());
  out.y = 0.5 * (yop + yop.adjoint());
  out.z = hermitian_function(Matrix(zc.cast<cplx>()), [](double v) { return v >= -1e-9 ? 1.0 : -1.0; });

  const double centre = l / (2.0 * std::sqrt(2.0));
  const Vector moved = displacement_matrix(cutoff, -l / std::sqrt(2.0)) * coherent_amplitudes(cutoff, centre);
  out.displacement_leakage = std::max(0.0, 1.0 - moved.squaredNorm());
  return out;
}

}  // namespace detail

/// Single-mode effective Paulis for a cutoff and cell length (memoized).
inline const SingleModePaulis& single_mode_paulis(int cutoff, double l) {
  static std::mutex mutex;
  static std::map<std::pair<int, double>, SingleModePaulis> cache;
  {
    std::lock_guard lock(mutex);
    auto it = cache.find({cutoff, l});
    if (it != cache.end()) return it->second;
  }
  if (cutoff < 2) throw LayoutError("single_mode_paulis: cutoff must be >= 2");
  SingleModePaulis built = detail::build_paulis(cutoff, ModularCell(l).length);
  if (built.displacement_leakage > 1e-4) {
    warn("modular_pauli: cell shift leaks " + std::to_string(built.displacement_leakage) + " at cutoff " +
         std::to_string(cutoff) + ", l = " + std::to_string(l));
  }
  std::lock_guard lock(mutex);
  return cache.emplace(std::make_pair(cutoff, l), std::move(built)).first->second;
}

inline const Matrix& single_mode_pauli(int cutoff, double l, PauliAxis axis) {
  const SingleModePaulis& p = single_mode_paulis(cutoff, l);
  return axis == PauliAxis::X ? p.x : axis == PauliAxis::Y ? p.y : p.z;
}

inline QOperator modular_pauli(const ModeLayout& layout, std::size_t mode, PauliAxis axis, ModularCell cell) {
  layout.check_mode(mode);
  return embed(layout, mode, single_mode_pauli(layout.cutoff(mode), cell.length, axis));
}

// ---------------------------------------------------------------------------
// Pauli-word expectations
// ---------------------------------------------------------------------------

/// Pauli word letters: 0 = I, 1 = X, 2 = Y, 3 = Z.
using PauliWord = std::vector<int>;

namespace detail {

inline const Matrix& spin_pauli(int letter) {
  static const std::array<Matrix, 4> p = [] {
    std::array<Matrix, 4> m;
    m[0] = Matrix::Identity(2, 2);
    m[1] = Matrix::Zero(2, 2);
    m[1](0, 1) = m[1](1, 0) = 1.0;
    m[2] = Matrix::Zero(2, 2);
    m[2](0, 1) = -kI;
    m[2](1, 0) = kI;
    m[3] = Matrix::Zero(2, 2);
    m[3](0, 0) = 1.0;
    m[3](1, 1) = -1.0;
    return m;
  }();
  return p[letter];
}

/// Tr(rho (P_0 (x) P_1 (x) ...)) for dense single-mode factors, contracting
/// mode 0 (the most significant index) first.
inline cplx word_trace(const Matrix& rho, std::span<const Matrix* const> factors) {
  if (factors.empty()) return rho(0, 0);
  const Matrix& p = *factors[0];
  const Eigen::Index c = p.rows();
  const Eigen::Index r = rho.rows() / c;
  Matrix reduced = Matrix::Zero(r, r);
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      const cplx coeff = p(j, i);
      if (coeff != 0.0) reduced += coeff * rho.block(i * r, j * r, r, r);
    }
  }
  return word_trace(reduced, factors.subspan(1));
}

inline std::vector<const Matrix*> mode_factors(const ModeLayout& layout, std::span<const ModularCell> cells,
                                               const PauliWord& word, std::vector<Matrix>& identities) {
  std::vector<const Matrix*> f;
  for (std::size_t m = 0; m < word.size(); ++m) {
    const int c = layout.cutoff(m);
    if (word[m] == 0) {
      f.push_back(&identities[m]);
    } else {
      const PauliAxis axis = word[m] == 1 ? PauliAxis::X : word[m] == 2 ? PauliAxis::Y : PauliAxis::Z;
      f.push_back(&single_mode_pauli(c, cells[m].length, axis));
    }
  }
  return f;
}

inline void check_cells(const ModeLayout& layout, std::span<const ModularCell> cells) {
  if (cells.size() != layout.size()) throw LayoutError("modular spin: one ModularCell per mode required");
}

}  // namespace detail

/// Tr(rho sigmabar_w) for a word with one letter per mode.
inline cplx pauli_word_expectation(const DensityMatrix& rho, std::span<const ModularCell> cells, const PauliWord& word) {
  detail::check_cells(rho.layout(), cells);
  if (word.size() != rho.layout().size()) throw LayoutError("pauli_word_expectation: one letter per mode required");
  std::vector<Matrix> ids;
  for (std::size_t m = 0; m < word.size(); ++m) ids.push_back(Matrix::Identity(rho.layout().cutoff(m), rho.layout().cutoff(m)));
  const auto f = detail::mode_factors(rho.layout(), cells, word, ids);
  return detail::word_trace(rho.matrix(), f);
}

// ---------------------------------------------------------------------------
// Effective spin state
// ---------------------------------------------------------------------------

struct EffectiveSpinState {
  int n_spins = 0;
  Matrix matrix;  // 2^N x 2^N, basis index bit (N-1-k) set <=> spin k down

  /// Tr(rho_es sigma_w).
  cplx expectation(const PauliWord& word) const {
    if (static_cast<int>(word.size()) != n_spins) throw LayoutError("EffectiveSpinState: word length mismatch");
    Matrix op = detail::spin_pauli(word[0]);
    for (std::size_t k = 1; k < word.size(); ++k) op = Eigen::kroneckerProduct(op, detail::spin_pauli(word[k])).eval();
    return (matrix * op).trace();
  }

  double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Matrix> es(matrix, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }
};

inline EffectiveSpinState make_spin_state(Matrix m) {
  const Eigen::Index d = m.rows();
  if (m.cols() != d || d < 2 || (d & (d - 1)) != 0) throw LayoutError("EffectiveSpinState: side must be 2^N");
  const double defect = hermiticity_defect(m);
  if (defect > 1e-9) throw NotHermitian("EffectiveSpinState: Hermiticity defect " + std::to_string(defect));
  const double tr = std::abs(m.trace() - 1.0);
  if (tr > 1e-8) throw InvalidArgument("EffectiveSpinState: trace differs from 1 by " + std::to_string(tr));
  EffectiveSpinState s;
  s.n_spins = 0;
  for (Eigen::Index k = d; k > 1; k >>= 1) ++s.n_spins;
  s.matrix = 0.5 * (m + m.adjoint());
  return s;
}

/// rho_es = 2^-N sum_w Tr(rho sigmabar_w) sigma_w over all 4^N words.
inline EffectiveSpinState effective_spin_state(const DensityMatrix& rho, std::span<const ModularCell> cells) {
  const ModeLayout& layout = rho.layout();
  detail::check_cells(layout, cells);
  const int n = static_cast<int>(layout.size());
  if (n < 1 || n > 6) throw InvalidArgument("effective_spin_state: supports 1..6 modes");
  for (std::size_t m = 0; m < layout.size(); ++m) (void)single_mode_paulis(layout.cutoff(m), cells[m].length);

  const long words = 1L << (2 * n);
  std::vector<Matrix> ids;
  for (int m = 0; m < n; ++m) ids.push_back(Matrix::Identity(layout.cutoff(m), layout.cutoff(m)));
  auto word_of = [n](long code) {
    PauliWord w(n);
    for (int k = n - 1; k >= 0; --k, code >>= 2) w[k] = static_cast<int>(code & 3);
    return w;
  };
  // One task per leading letter.
  auto block = [&](int lead) {
    std::vector<cplx> vals;
    const long per = words / 4;
    for (long c = lead * per; c < (lead + 1) * per; ++c) {
      const PauliWord w = word_of(c);
      const auto f = detail::mode_factors(layout, cells, w, ids);
      vals.push_back(detail::word_trace(rho.matrix(), f));
    }
    return vals;
  };
  std::vector<std::future<std::vector<cplx>>> futs;
  for (int lead = 0; lead < 4; ++lead) futs.push_back(std::async(std::launch::async, block, lead));
  std::vector<cplx> expect;
  for (auto& f : futs) {
    const auto v = f.get();
    expect.insert(expect.end(), v.begin(), v.end());
  }

  const Eigen::Index d = Eigen::Index{1} << n;
  Matrix es = Matrix::Zero(d, d);
  for (long c = 0; c < words; ++c) {
    const PauliWord w = word_of(c);
    Matrix op = detail::spin_pauli(w[0]);
    for (int k = 1; k < n; ++k) op = Eigen::kroneckerProduct(op, detail::spin_pauli(w[k])).eval();
    es += expect[c] * op;
  }
  es /= static_cast<double>(d);
  EffectiveSpinState s = make_spin_state(std::move(es));
  const double lo = s.min_eigenvalue();
  if (lo < -1e-6) warn("effective_spin_state: eigenvalue " + std::to_string(lo) + " below -1e-6");
  return s;
}

inline EffectiveSpinState effective_spin_state(const DensityMatrix& rho, ModularCell cell) {
  const std::vector<ModularCell> cells(rho.layout().size(), cell);
  return effective_spin_state(rho, cells);
}

// ---------------------------------------------------------------------------
// Witness and fidelity
// ---------------------------------------------------------------------------

struct WitnessResult {
  double value = 0.0;                  // W = sum_n <Z_{n-1} X_n Z_{n+1}>^2
  std::vector<double> stabilizers;     // per-site expectations
};

/// Open-chain cluster stabilizers Z_{n-1} X_n Z_{n+1} (identity past the ends).
inline std::vector<PauliWord> cluster_stabilizers(int n) {
  std::vector<PauliWord> out;
  for (int k = 0; k < n; ++k) {
    PauliWord w(n, 0);
    w[k] = 1;
    if (k > 0) w[k - 1] = 3;
    if (k + 1 < n) w[k + 1] = 3;
    out.push_back(std::move(w));
  }
  return out;
}

inline WitnessResult cluster_witness(const DensityMatrix& rho, std::span<const ModularCell> cells) {
  const int n = static_cast<int>(rho.layout().size());
  if (n < 2) throw InvalidArgument("cluster_witness: needs N >= 2");
  WitnessResult r;
  for (const PauliWord& w : cluster_stabilizers(n)) {
    const double e = pauli_word_expectation(rho, cells, w).real();
    r.stabilizers.push_back(e);
    r.value += e * e;
  }
  return r;
}

inline WitnessResult cluster_witness(const DensityMatrix& rho, ModularCell cell) {
  const std::vector<ModularCell> cells(rho.layout().size(), cell);
  return cluster_witness(rho, cells);
}

inline WitnessResult cluster_witness(const EffectiveSpinState& es) {
  if (es.n_spins < 2) throw InvalidArgument("cluster_witness: needs N >= 2");
  WitnessResult r;
  for (const PauliWord& w : cluster_stabilizers(es.n_spins)) {
    const double e = es.expectation(w).real();
    r.stabilizers.push_back(e);
    r.value += e * e;
  }
  return r;
}

/// Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))^2; negative eigenvalues are clamped.
inline double spin_fidelity(const EffectiveSpinState& a, const EffectiveSpinState& b) {
  if (a.n_spins != b.n_spins) throw LayoutError("spin_fidelity: spin counts differ");
  const auto clamp_sqrt = [](double v) { return std::sqrt(std::max(v, 0.0)); };
  const Matrix sa = hermitian_function(a.matrix, clamp_sqrt);
  Matrix m = sa * b.matrix * sa;
  m = 0.5 * (m + m.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  double t = 0.0;
  for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) t += clamp_sqrt(es.eigenvalues()(k));
  return t * t;
}

}  // namespace dopo
