#pragma once

#include <cmath>
#include <random>

#include "dopo/fock.hpp"

namespace dopo::test_support {

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> g;
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = cplx(g(rng), g(rng));
  }
  return m;
}

/// Ginibre-distributed density matrix of the given rank (full rank by default).
inline DensityMatrix random_density(std::mt19937_64& rng, const ModeLayout& layout, Eigen::Index rank = -1) {
  const Eigen::Index d = layout.dimension();
  const Matrix g = random_matrix(rng, d, rank > 0 ? rank : d);
  Matrix rho = g * g.adjoint();
  rho /= rho.trace();
  return DensityMatrix(layout, 0.5 * (rho + rho.adjoint()));
}

inline StateVector random_state(std::mt19937_64& rng, const ModeLayout& layout) {
  const Matrix g = random_matrix(rng, layout.dimension(), 1);
  return StateVector(layout, g.col(0)).normalized();
}

inline Matrix random_hermitian(std::mt19937_64& rng, Eigen::Index d) {
  const Matrix g = random_matrix(rng, d, d);
  return 0.5 * (g + g.adjoint());
}

inline Matrix random_unitary(std::mt19937_64& rng, Eigen::Index d) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(rng, d, d));
  return qr.householderQ();
}

}  // namespace dopo::test_support
