#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dopo/dopo_model.hpp"
#include "dopo/modular_spin.hpp"
#include "oracles/position_grid.hpp"
#include "support.hpp"

using namespace dopo;

namespace {

const double kSqrt2 = std::sqrt(2.0);
const ModularCell kCell{4.0};

/// Integral of sign(sin(pi x / l)) against a Gaussian of the given mean and variance 1/2.
double gaussian_sign_average(double mean, double l) {
  double total = 0.0;
  for (int k = -40; k < 40; ++k) {
    const double a = k * l, b = (k + 1) * l;
    const double mass = 0.5 * (std::erf(b - mean) - std::erf(a - mean));
    total += (k % 2 == 0 ? 1.0 : -1.0) * mass;
  }
  return total;
}

DensityMatrix thermal(int cutoff, double nbar) {
  Matrix m = Matrix::Zero(cutoff, cutoff);
  const double q = nbar / (1.0 + nbar);
  for (int n = 0; n < cutoff; ++n) m(n, n) = std::pow(q, n);
  m /= m.trace();
  return DensityMatrix(ModeLayout{cutoff}, m);
}

}  // namespace

TEST(ModularCell, Validation) {
  EXPECT_THROW(ModularCell(0.0), InvalidArgument);
  EXPECT_THROW(ModularCell(-1.0), InvalidArgument);
  EXPECT_EQ(ModularCell(2.5).length, 2.5);
}

TEST(OptimalCellLength, Values) {
  EXPECT_NEAR(optimal_cell_length(kSqrt2), 4.0, 1e-14);
  EXPECT_NEAR(optimal_cell_length(1.0), 2.0 * kSqrt2, 1e-14);
  EXPECT_NEAR(optimal_cell_length(cplx(0.0, -kSqrt2)), 4.0, 1e-14);
  const double a = 1.3;
  EXPECT_NEAR(std::sin(M_PI * kSqrt2 * a / optimal_cell_length(a)), 1.0, 1e-14);
  EXPECT_THROW(optimal_cell_length(0.0), InvalidArgument);
}

TEST(ModularPauli, SigmaZOnCoherentAndVacuum) {
  const ModeLayout l{20};
  const QOperator z = modular_pauli(l, 0, PauliAxis::Z, kCell);
  const double coherent = expectation(coherent_state(l, 0, kSqrt2), z).real();
  EXPECT_NEAR(coherent, gaussian_sign_average(2.0, 4.0), 5e-3);
  EXPECT_GT(coherent, 0.99);
  EXPECT_NEAR(expectation(vacuum(l), z).real(), 0.0, 1e-10);
}

TEST(ModularPauli, SigmaXOnEvenCat) {
  const ModeLayout l{20};
  const QOperator x = modular_pauli(l, 0, PauliAxis::X, kCell);
  EXPECT_NEAR(std::abs(expectation(cat_state(l, 0, kSqrt2, +1), x)), 1.0, 0.05);
  EXPECT_NEAR(std::abs(expectation(cat_state(l, 0, kSqrt2, -1), x)), 1.0, 0.05);
}

TEST(ModularPauli, Hermitian) {
  for (PauliAxis axis : {PauliAxis::X, PauliAxis::Y, PauliAxis::Z}) {
    EXPECT_LE(modular_pauli(ModeLayout{20}, 0, axis, kCell).hermiticity_defect(), 1e-12);
  }
}

TEST(ModularPauli, TranslationConvention) {
  const int c = 30;
  const double l = 4.0;
  const ModeLayout layout{c};
  const Vector psi = detail::coherent_amplitudes(c, kSqrt2);
  const Vector moved = displacement_matrix(c, -l / kSqrt2) * psi;
  const QOperator x = position(layout, 0);
  const double before = StateVector(layout, psi).inner(StateVector(layout, x.matrix() * psi)).real();
  const double after = StateVector(layout, moved).inner(StateVector(layout, x.matrix() * moved)).real();
  EXPECT_NEAR(after - before, -l, 1e-6);
  // sigma_x carries the spin-up packet at +2 onto the spin-down packet at -2.
  const StateVector up = coherent_state(layout, 0, kSqrt2), down = coherent_state(layout, 0, -kSqrt2);
  const cplx el = down.inner(StateVector(layout, single_mode_pauli(c, l, PauliAxis::X) * up.amplitudes()));
  EXPECT_NEAR(el.real(), 1.0, 1e-2);
  EXPECT_GT(expectation(up, modular_pauli(layout, 0, PauliAxis::Z, ModularCell(l))).real(), 0.0);
}

TEST(ModularPauli, AlgebraAtCutoff30) {
  const int c = 30;
  const SingleModePaulis& p = single_mode_paulis(c, 4.0);
  EXPECT_LT((p.z * p.z - Matrix::Identity(c, c)).norm(), 1e-8);
  const Matrix comm = p.x * p.y - p.y * p.x - 2.0 * kI * p.z;
  const int interior = 6;
  EXPECT_LE(comm.topLeftCorner(interior, interior).norm(), 0.05 * p.z.norm());
}

TEST(ModularPauli, CacheReturnsSameObject) {
  EXPECT_EQ(&single_mode_paulis(20, 4.0), &single_mode_paulis(20, 4.0));
  EXPECT_THROW(single_mode_paulis(1, 4.0), LayoutError);
}

TEST(EffectiveSpinState, MatchesGridOracle) {
  const int c = 20;
  const ModeLayout l{c};
  const std::vector<DensityMatrix> inputs{
      DensityMatrix::pure(coherent_state(l, 0, kSqrt2)),
      DensityMatrix::pure(cat_state(l, 0, kSqrt2, +1)),
      DensityMatrix::pure(cat_state(l, 0, kSqrt2, -1)),
      thermal(c, 1.0),
      DensityMatrix::maximally_mixed(l),
  };
  for (const DensityMatrix& rho : inputs) {
    const EffectiveSpinState es = effective_spin_state(rho, kCell);
    const Matrix ref = oracle::grid_spin_state(rho.matrix(), 4.0);
    EXPECT_LT((es.matrix - ref).norm(), 1e-3);
  }
}

TEST(EffectiveSpinState, SpecExamples) {
  const int c = 20;
  const ModeLayout l{c};
  const EffectiveSpinState up = effective_spin_state(DensityMatrix::pure(coherent_state(l, 0, kSqrt2)), kCell);
  EXPECT_GE(up.matrix(0, 0).real(), 0.99);
  const EffectiveSpinState mixed = effective_spin_state(DensityMatrix::maximally_mixed(l), kCell);
  EXPECT_LT((mixed.matrix - 0.5 * Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.05);
  const EffectiveSpinState plus = effective_spin_state(DensityMatrix::pure(cat_state(l, 0, kSqrt2, +1)), kCell);
  Matrix target = Matrix::Constant(2, 2, 0.5);
  EXPECT_LT((plus.matrix - target).cwiseAbs().maxCoeff(), 0.05);
  EXPECT_GE(plus.min_eigenvalue(), -1e-6);
}

TEST(EffectiveSpinState, FactorizesOnProducts) {
  std::mt19937_64 rng(7);
  const ModeLayout single{14};
  for (int trial = 0; trial < 3; ++trial) {
    const DensityMatrix a = test_support::random_density(rng, single, 2);
    const DensityMatrix b = trial == 0 ? DensityMatrix::pure(coherent_state(single, 0, kSqrt2)) : test_support::random_density(rng, single);
    const EffectiveSpinState ab = effective_spin_state(tensor({a, b}), kCell);
    const Matrix expected = Eigen::kroneckerProduct(effective_spin_state(a, kCell).matrix,
                                                     effective_spin_state(b, kCell).matrix).eval();
    EXPECT_LT((ab.matrix - expected).norm(), 1e-8);
  }
}

TEST(EffectiveSpinState, Validation) {
  EXPECT_THROW(make_spin_state(Matrix::Identity(3, 3) / 3.0), LayoutError);
  EXPECT_THROW(make_spin_state(Matrix::Identity(2, 2)), InvalidArgument);
  const DensityMatrix rho = DensityMatrix::maximally_mixed(ModeLayout{6, 6});
  const std::vector<ModularCell> one{kCell};
  EXPECT_THROW(effective_spin_state(rho, one), LayoutError);
}

TEST(EffectiveSpinState, WordExpectations) {
  Matrix m = Matrix::Zero(4, 4);
  m(0, 0) = 1.0;
  const EffectiveSpinState s = make_spin_state(m);
  EXPECT_EQ(s.n_spins, 2);
  EXPECT_NEAR(s.expectation({3, 3}).real(), 1.0, 1e-15);
  EXPECT_NEAR(s.expectation({1, 0}).real(), 0.0, 1e-15);
  EXPECT_THROW(s.expectation({3}), LayoutError);
}

TEST(ClusterWitness, Stabilizers) {
  const auto two = cluster_stabilizers(2);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0], (PauliWord{1, 3}));
  EXPECT_EQ(two[1], (PauliWord{3, 1}));
  const auto three = cluster_stabilizers(3);
  EXPECT_EQ(three[1], (PauliWord{3, 1, 3}));
  EXPECT_EQ(three[2], (PauliWord{0, 3, 1}));
}

TEST(ClusterWitness, IdealClusterProductAndMixed) {
  const ModeLayout l{20, 20};
  const WitnessResult ideal = cluster_witness(DensityMatrix::pure(ideal_cluster_state(l, kSqrt2, 2)), kCell);
  EXPECT_GE(ideal.value, 1.8);
  EXPECT_LE(ideal.value, 2.0);
  ASSERT_EQ(ideal.stabilizers.size(), 2u);
  const StateVector prod = tensor({coherent_state(ModeLayout{20}, 0, kSqrt2), coherent_state(ModeLayout{20}, 0, kSqrt2)});
  EXPECT_LE(cluster_witness(DensityMatrix::pure(prod), kCell).value, 0.05);
  EXPECT_NEAR(cluster_witness(make_spin_state(Matrix::Identity(4, 4) / 4.0)).value, 0.0, 1e-15);
  EXPECT_THROW(cluster_witness(DensityMatrix::maximally_mixed(ModeLayout{20}), kCell), InvalidArgument);
}

TEST(ClusterWitness, RouteEquivalenceAndBound) {
  std::mt19937_64 rng(77);
  const ModeLayout l{20, 20};
  for (int trial = 0; trial < 20; ++trial) {
    const DensityMatrix rho = trial % 2 ? test_support::random_density(rng, l, 1 + trial % 3)
                                        : DensityMatrix::pure(test_support::random_state(rng, l));
    const WitnessResult direct = cluster_witness(rho, kCell);
    const WitnessResult reduced = cluster_witness(effective_spin_state(rho, kCell));
    EXPECT_NEAR(direct.value, reduced.value, 1e-10);
    EXPECT_LE(direct.value, 2.0 + 1e-6);
  }
}

TEST(SpinFidelity, ClosedForms) {
  Matrix up = Matrix::Zero(2, 2), down = Matrix::Zero(2, 2);
  up(0, 0) = 1.0;
  down(1, 1) = 1.0;
  const EffectiveSpinState u = make_spin_state(up), d = make_spin_state(down);
  const EffectiveSpinState mixed = make_spin_state(Matrix::Identity(2, 2) / 2.0);
  EXPECT_NEAR(spin_fidelity(u, u), 1.0, 1e-12);
  EXPECT_NEAR(spin_fidelity(u, d), 0.0, 1e-12);
  EXPECT_NEAR(spin_fidelity(u, mixed), 0.5, 1e-12);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const EffectiveSpinState a = make_spin_state(test_support::random_density(rng, ModeLayout{2, 2}).matrix());
    const EffectiveSpinState b = make_spin_state(test_support::random_density(rng, ModeLayout{2, 2}).matrix());
    EXPECT_NEAR(spin_fidelity(a, b), spin_fidelity(b, a), 1e-8);
  }
  EXPECT_THROW(spin_fidelity(u, make_spin_state(Matrix::Identity(4, 4) / 4.0)), LayoutError);
}
