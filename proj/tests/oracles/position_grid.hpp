#pragma once

// Effective spin state of a single mode computed directly in position
// representation: rho_es(s, s') = sum_m int_0^l dxbar rho(x_s, x_s'), with the
// spin-up point x_up = 2 m l + xbar and its partner x_down = x_up - l.

#include <cmath>

#include <boost/math/special_functions/hermite.hpp>

#include "dopo/fock.hpp"

namespace oracle {

/// Normalized Hermite function psi_n(x) = (2^n n! sqrt(pi))^{-1/2} H_n(x) e^{-x^2/2}.
inline double hermite_function(int n, double x) {
  const double log_norm = 0.5 * (n * std::log(2.0) + std::lgamma(n + 1.0) + 0.5 * std::log(M_PI));
  return boost::math::hermite(static_cast<unsigned>(n), x) * std::exp(-0.5 * x * x - log_norm);
}

/// Grid covers +-6l with 2^14 points in total.
inline dopo::Matrix grid_spin_state(const dopo::Matrix& rho, double l) {
  const int c = static_cast<int>(rho.rows());
  const int cells = 12;
  const int per_cell = (1 << 14) / cells;
  const double h = l / per_cell;
  dopo::Matrix es = dopo::Matrix::Zero(2, 2);
  Eigen::VectorXd up(c), down(c);
  for (int m = -cells / 4; m <= cells / 4; ++m) {
    for (int j = 0; j < per_cell; ++j) {
      const double x_up = 2.0 * m * l + (j + 0.5) * h;
      const double x_down = x_up - l;
      for (int n = 0; n < c; ++n) {
        up(n) = hermite_function(n, x_up);
        down(n) = hermite_function(n, x_down);
      }
      const dopo::Vector u = up.cast<dopo::cplx>(), d = down.cast<dopo::cplx>();
      es(0, 0) += h * u.dot(rho.transpose() * u);
      es(0, 1) += h * u.dot(rho.transpose() * d);
      es(1, 0) += h * d.dot(rho.transpose() * u);
      es(1, 1) += h * d.dot(rho.transpose() * d);
    }
  }
  return es;
}

}  // namespace oracle
