#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "dopo/dopo_model.hpp"
#include "oracles/closed_form.hpp"
#include "support.hpp"

using namespace dopo;

namespace {

const double kSqrt2 = std::sqrt(2.0);

IntegratorConfig with_dt(double dt) {
  IntegratorConfig cfg;
  cfg.dt = dt;
  return cfg;
}

double commutator_norm(const QOperator& a, const QOperator& b) { return (a * b - b * a).norm(); }

}  // namespace

TEST(DopoParams, Validation) {
  DopoParams p;
  EXPECT_NO_THROW(p.validate());
  p.gamma_d = 0.0;
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = DopoParams{};
  p.n_modes = 0;
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = DopoParams{};
  p.g_c = std::numeric_limits<double>::infinity();
  EXPECT_THROW(p.validate(), InvalidArgument);
}

TEST(SteadyAmplitude, Values) {
  EXPECT_EQ(steady_amplitude(0.0, 1.0), cplx(0.0));
  const cplx a = steady_amplitude(-1.0, 1.0);
  EXPECT_NEAR(std::abs(a), kSqrt2, 1e-14);
  EXPECT_NEAR(a.imag(), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(steady_amplitude(-2.0, 1.0)), 2.0, 1e-14);
  EXPECT_NEAR(std::abs(steady_amplitude(-1.0, 2.0)), 1.0, 1e-14);
  EXPECT_THROW(steady_amplitude(-1.0, 0.0), InvalidArgument);
}

TEST(TwoPhotonPump, MatrixElementsAndHermiticity) {
  const ModeLayout l{6};
  const double S = -1.0;
  const Matrix h = two_photon_pump_h(l, 0, S).dense();
  EXPECT_NEAR(std::abs(h(2, 0) - (-kI * S * kSqrt2)), 0.0, 1e-14);
  EXPECT_LE(two_photon_pump_h(l, 0, S).hermiticity_defect(), 1e-14);
  EXPECT_EQ(two_photon_pump_h(l, 0, 0.0).norm(), 0.0);
}

TEST(TwoPhotonLoss, FixedPoints) {
  const ModeLayout l{5};
  const LindbladModel m(QOperator::zero(l), {two_photon_loss(l, 0, 1.0)});
  EXPECT_LT(rhs(m, DensityMatrix::pure(vacuum(l))).norm(), 1e-15);
  EXPECT_LT(rhs(m, DensityMatrix::pure(fock_state(l, {1}))).norm(), 1e-15);
}

TEST(TwoPhotonLoss, CatIsStationaryUnderPumpAndLoss) {
  const ModeLayout l{20};
  const LindbladModel m = pump_stage_model(l, DopoParams{});
  const double a = canonical_amplitude(steady_amplitude(-1.0, 1.0));
  EXPECT_LE(rhs(m, DensityMatrix::pure(cat_state(l, 0, a, +1))).norm(), 1e-3);
  EXPECT_LE(rhs(m, DensityMatrix::pure(coherent_state(l, 0, -a))).norm(), 1e-3);
}

TEST(SinglePhotonLoss, ZeroRateIsEmpty) {
  EXPECT_TRUE(single_photon_loss(ModeLayout{3, 3}, {0, 1}, 0.0).empty());
  EXPECT_EQ(single_photon_loss(ModeLayout{3, 3}, {0, 1}, 0.1).size(), 2u);
  EXPECT_THROW(single_photon_loss(ModeLayout{3}, {0}, -0.1), InvalidArgument);
}

TEST(SinglePhotonLoss, CoherentDecay) {
  const ModeLayout l{16};
  const double g = 0.4;
  const LindbladModel m(QOperator::zero(l), single_photon_loss(l, {0}, g));
  const Trajectory t = evolve(m, DensityMatrix::pure(coherent_state(l, 0, kSqrt2)), 2.0, with_dt(1e-2),
                              {{"n", number(l, 0)}});
  const auto n = t.series("n");
  const double n0 = n.front().real();
  for (std::size_t k = 0; k < n.size(); ++k) EXPECT_NEAR(n[k].real(), n0 * std::exp(-g * t.times[k]), 1e-8);
}

TEST(SinglePhotonLoss, CatPurityUnderLoss) {
  const ModeLayout l{16};
  const double g = 0.5;
  const LindbladModel m(QOperator::zero(l), single_photon_loss(l, {0}, g));
  Observables obs;
  obs["purity"] = [](const Matrix& rho) { return cplx(rho.squaredNorm()); };
  IntegratorConfig cfg = with_dt(1e-2);
  cfg.record_every = 5;
  const Trajectory t = evolve(m, DensityMatrix::pure(cat_state(l, 0, kSqrt2, +1)), 1.0 / g, cfg, obs);
  const auto p = t.series("purity");
  for (std::size_t k = 0; k < p.size(); ++k) {
    EXPECT_NEAR(p[k].real(), oracle::damped_cat_purity(kSqrt2, g, t.times[k]), 1e-6);
  }
  // Decoherence dominates early; once the cat has shrunk, purity recovers toward the vacuum.
  for (std::size_t k = 1; k < p.size() && t.times[k] <= 0.5 / g; ++k) EXPECT_LT(p[k].real(), p[k - 1].real());
  EXPECT_LT(p.back().real(), p.front().real());
}

TEST(CollectiveLoss, DarkAndDecayingStates) {
  const ModeLayout l{3, 3};
  const double gc = 0.3;
  const Dissipator d = collective_loss(l, 0, 1, gc);
  const StateVector singlet = (fock_state(l, {0, 1}) + cplx(-1.0) * fock_state(l, {1, 0})).normalized();
  const StateVector sym = (fock_state(l, {0, 1}) + fock_state(l, {1, 0})).normalized();
  EXPECT_LT((d.collapse.matrix() * singlet.amplitudes()).norm(), 1e-15);
  const LindbladModel m(QOperator::zero(l), {d});
  EXPECT_LT(rhs(m, DensityMatrix::pure(vacuum(l))).norm(), 1e-15);
  const QOperator n = number(l, 0) + number(l, 1);
  EXPECT_NEAR(trace_product(rhs(m, DensityMatrix::pure(sym)), n.matrix()).real(), -2.0 * gc, 1e-12);
  EXPECT_THROW(collective_loss(l, 1, 1, gc), InvalidArgument);
}

TEST(CoherentIsing, HermitianAndLinear) {
  const ModeLayout l{8, 8};
  const QOperator h1 = coherent_ising_h(l, 1.0, kSqrt2, 2);
  EXPECT_LE(h1.hermiticity_defect(), 1e-14);
  const QOperator h2 = coherent_ising_h(l, 2.0, kSqrt2, 2);
  EXPECT_LT((h2.dense() - 2.0 * h1.dense()).norm(), 1e-14);
  EXPECT_THROW(coherent_ising_h(l, 1.0, 0.0, 2), InvalidArgument);
  EXPECT_THROW(coherent_ising_h(l, 1.0, kSqrt2, 1), InvalidArgument);
}

TEST(CoherentIsing, SpinEnergies) {
  const ModeLayout single{20};
  const ModeLayout l{20, 20};
  const double g = 0.7;
  const QOperator h = coherent_ising_h(l, g, kSqrt2, 2);
  auto energy = [&](int s1, int s2) {
    const StateVector psi = tensor({coherent_state(single, 0, s1 * kSqrt2), coherent_state(single, 0, s2 * kSqrt2)});
    return expectation(psi, h).real();
  };
  // Spin model g/4 (-s1 - s2 + s1 s2).
  EXPECT_NEAR(energy(+1, +1), -g / 4, 1e-6);
  EXPECT_NEAR(energy(+1, -1), -g / 4, 1e-6);
  EXPECT_NEAR(energy(-1, +1), -g / 4, 1e-6);
  EXPECT_NEAR(energy(-1, -1), 3 * g / 4, 1e-6);
  EXPECT_NEAR(energy(+1, +1) - energy(+1, -1), 0.0, 1e-6);
}

TEST(CoherentIsing, BreaksParity) {
  const ModeLayout l{12, 12};
  const QOperator h = coherent_ising_h(l, 1.0, kSqrt2, 2);
  const QOperator n = number(l, 0) + number(l, 1);
  const QOperator parity = hermitian_function(n, [](double v) { return std::fmod(std::round(v), 2.0) == 0 ? 1.0 : -1.0; });
  EXPECT_GT(commutator_norm(h, parity), 0.1 * h.norm());
}

TEST(CoherentIsing, OpenChainOnThreeModes) {
  const ModeLayout l{5, 5, 5};
  const QOperator h = coherent_ising_h(l, 1.0, 1.0, 3);
  const QOperator a0 = annihilation(l, 0), a2 = annihilation(l, 2);
  const QOperator wrap = a0 * a2.adjoint();
  EXPECT_NEAR(std::abs(trace_product((wrap.adjoint()).dense(), h.matrix())), 0.0, 1e-12);
}

TEST(NonlinearPump, MatrixElementsAndConservation) {
  const ModeLayout l{6, 4};
  const double g = 15.0;
  const QOperator h = nonlinear_pump_h(l, 0, 1, g);
  const cplx el = fock_state(l, {0, 1}).inner(StateVector(l, h.matrix() * fock_state(l, {2, 0}).amplitudes()));
  EXPECT_NEAR(std::abs(el - g * kSqrt2), 0.0, 1e-12);
  EXPECT_LT((h.matrix() * vacuum(l).amplitudes()).norm(), 1e-15);
  EXPECT_LE(h.hermiticity_defect(), 1e-12);
  const QOperator quanta = 2.0 * number(l, 1) + number(l, 0);
  EXPECT_LE(commutator_norm(h, quanta), 1e-10);
  EXPECT_THROW(nonlinear_pump_h(l, 0, 0, g), InvalidArgument);
}

TEST(ClusterState, SignPattern) {
  const std::vector<int> pp{1, 1}, pm{1, -1}, mp{-1, 1}, mm{-1, -1};
  EXPECT_EQ(cluster_sign(pp), 1);
  EXPECT_EQ(cluster_sign(pm), 1);
  EXPECT_EQ(cluster_sign(mp), 1);
  EXPECT_EQ(cluster_sign(mm), -1);
  const std::vector<int> three{-1, -1, -1};
  EXPECT_EQ(cluster_sign(three), 1);
}

TEST(ClusterState, CoefficientsFromOverlaps) {
  const ModeLayout single{20};
  const ModeLayout l{20, 20};
  const StateVector cluster = ideal_cluster_state(l, kSqrt2, 2);
  const double norm = std::sqrt(oracle::cluster_norm_squared(kSqrt2, 2));
  for (const auto& s : oracle::configurations(2)) {
    const StateVector prod = tensor({coherent_state(single, 0, s[0] * kSqrt2), coherent_state(single, 0, s[1] * kSqrt2)});
    double expected = 0.0;
    for (const auto& t : oracle::configurations(2)) {
      expected += oracle::chain_sign(t) * oracle::coherent_overlap(s[0] * kSqrt2, t[0] * kSqrt2).real() *
                  oracle::coherent_overlap(s[1] * kSqrt2, t[1] * kSqrt2).real();
    }
    EXPECT_NEAR(prod.inner(cluster).real(), expected / norm, 1e-6);
  }
}

TEST(ClusterState, NormMatchesGram) {
  const ModeLayout l{20, 20};
  const double n2 = cluster_superposition(l, kSqrt2, 2).amplitudes().squaredNorm();
  EXPECT_NEAR(n2, oracle::cluster_norm_squared(kSqrt2, 2), 1e-5);
  const ModeLayout l3{14, 14, 14};
  EXPECT_NEAR(cluster_superposition(l3, kSqrt2, 3).amplitudes().squaredNorm(), oracle::cluster_norm_squared(kSqrt2, 3),
              1e-4);
}

TEST(ClusterState, Guards) {
  const ModeLayout l{20, 20};
  EXPECT_THROW(ideal_cluster_state(l, 1e-4, 2), InvalidArgument);
  EXPECT_THROW(ideal_cluster_state(ModeLayout{6, 6}, kSqrt2, 2), CutoffTooSmall);
  EXPECT_THROW(ideal_cluster_state(l, kSqrt2, 3), LayoutError);
  EXPECT_NEAR(ideal_cluster_state(l, 1e-2, 2).norm(), 1.0, 1e-12);
}

TEST(CatPlus, SingleModeAndClusterFidelity) {
  const ModeLayout single{20};
  EXPECT_LT((cat_plus_state(single, kSqrt2, 1).amplitudes() - cat_state(single, 0, kSqrt2, +1).amplitudes()).norm(),
            1e-14);
  const ModeLayout l{20, 20};
  const double f = fidelity_to_pure(DensityMatrix::pure(cat_plus_state(l, kSqrt2, 2)), ideal_cluster_state(l, kSqrt2, 2));
  EXPECT_NEAR(f, oracle::cat_product_cluster_fidelity(kSqrt2, 2), 1e-6);
  EXPECT_NEAR(f, 0.25, 0.01);
  const StateVector odd = tensor({cat_state(single, 0, kSqrt2, -1), cat_state(single, 0, kSqrt2, -1)});
  EXPECT_LT(std::abs(odd.inner(cat_plus_state(l, kSqrt2, 2))), 1e-12);
}

TEST(Builders, HamiltoniansHermitian) {
  const ModeLayout l{6, 6};
  for (double v : {-2.0, -0.5, 0.3}) {
    EXPECT_LE(two_photon_pump_h(l, 1, v).hermiticity_defect(), 1e-12);
    EXPECT_LE(coherent_ising_h(l, std::abs(v), 1.0 + std::abs(v), 2).hermiticity_defect(), 1e-12);
    EXPECT_LE(nonlinear_pump_h(l, 0, 1, std::abs(v)).hermiticity_defect(), 1e-12);
  }
}

TEST(PumpStage, ConvergesIntoCatSpace) {
  const ModeLayout l{20};
  const Trajectory t = evolve(pump_stage_model(l, DopoParams{}), DensityMatrix::pure(vacuum(l)), 3.0, IntegratorConfig{});
  const Vector even = cat_state(l, 0, kSqrt2, +1).amplitudes();
  const Vector odd = cat_state(l, 0, kSqrt2, -1).amplitudes();
  const Matrix& rho = t.final_state.matrix();
  const double inside = even.dot(rho * even).real() + odd.dot(rho * odd).real();
  EXPECT_LE(1.0 - inside, 5e-2);
}

TEST(PumpStage, FactorizesPerMode) {
  const ModeLayout single{8};
  const ModeLayout l{8, 8};
  DopoParams p;
  p.gamma_s = 0.05;
  const IntegratorConfig cfg = with_dt(1e-3);
  const DensityMatrix one = evolve(pump_stage_model(single, p), DensityMatrix::pure(vacuum(single)), 1.0, cfg).final_state;
  const DensityMatrix joint = evolve(pump_stage_model(l, p), DensityMatrix::pure(vacuum(l)), 1.0, cfg).final_state;
  EXPECT_LT((tensor({one, one}).matrix() - joint.matrix()).norm(), 1e-8);
}

TEST(InteractionStage, KeepsPumpAndLoss) {
  const ModeLayout l{6, 6};
  DopoParams p;
  p.gamma_s = 0.1;
  const LindbladModel m = interaction_stage_model(l, p, kSqrt2);
  EXPECT_EQ(m.dissipators().size(), 4u);
  const QOperator expected = two_photon_pump_h(l, 0, p.S) + two_photon_pump_h(l, 1, p.S) +
                             coherent_ising_h(l, p.g_c, kSqrt2, 2);
  EXPECT_LT((m.hamiltonian().dense() - expected.dense()).norm(), 1e-14);
}

TEST(PumpCalibration, ZeroTarget) {
  const PumpCalibration c = pump_calibration(0.0, 15.0, 0.0, 0.5 / 15.0);
  EXPECT_EQ(c.alpha_p, cplx(0.0));
  EXPECT_TRUE(c.scan.empty());
}

TEST(PumpCalibration, HitsTargetPhotonNumber) {
  const double g = 15.0, t = 0.5 / g;
  const PumpCalibration c = pump_calibration(kSqrt2, g, 0.0, t);
  EXPECT_NEAR(c.photon_number, 2.0, 0.02);
  EXPECT_NEAR(c.verified_photon_number, 2.0, 0.02);
  EXPECT_NEAR(c.alpha_p.real(), 0.0, 1e-15);
  EXPECT_GT(c.alpha_p.imag(), 0.0);

  std::vector<CalibrationSample> scan = c.scan;
  std::sort(scan.begin(), scan.end(), [](const auto& a, const auto& b) { return a.pump_amplitude < b.pump_amplitude; });
  for (std::size_t k = 1; k < scan.size(); ++k) EXPECT_GE(scan[k].photon_number, scan[k - 1].photon_number - 1e-9);

  // Without loss the cycle acts like a two-photon drive ~ g t alpha_p against a
  // two-photon loss ~ (g t)^2, so a longer cycle needs a stronger pump.
  const PumpCalibration longer = pump_calibration(kSqrt2, g, 0.0, 2.0 * t);
  EXPECT_NEAR(longer.verified_photon_number, 2.0, 0.02);
  EXPECT_GT(longer.alpha_p.imag(), c.alpha_p.imag());
}

TEST(PumpCalibration, UnreachableTargetReportsScan) {
  CalibrationOptions opt;
  opt.bracket_hi = 0.2;
  opt.scan_points = 3;
  try {
    pump_calibration(kSqrt2, 15.0, 0.0, 0.5 / 15.0, opt);
    FAIL() << "expected CalibrationFailed";
  } catch (const CalibrationFailed& e) {
    EXPECT_EQ(e.scan().size(), 3u);
  }
}
