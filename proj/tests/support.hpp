#pragma once

#include <random>

#include "droprate/droprate.hpp"

namespace testing_support {

using namespace droprate;

inline MatrixXd gaussian_matrix(Index r, Index c, Rng& rng, double sigma = 1.0) {
  std::normal_distribution<double> g(0.0, sigma);
  MatrixXd m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

inline Weights random_weights(Dims d, Rng& rng, double sigma = 1.0) {
  return Weights(gaussian_matrix(d.e, d.f, rng, sigma), gaussian_matrix(d.f, d.h, rng, sigma));
}

/// Target with prescribed singular values and random orthonormal factors.
inline DataMatrix target_with_singular_values(Index e, Index h, const VectorXd& sigma, Rng& rng) {
  const Index r = sigma.size();
  Eigen::HouseholderQR<MatrixXd> qu(gaussian_matrix(e, e, rng)), qv(gaussian_matrix(h, h, rng));
  const MatrixXd u = MatrixXd(qu.householderQ()).leftCols(r);
  const MatrixXd v = MatrixXd(qv.householderQ()).leftCols(r);
  return DataMatrix(MatrixXd(u * sigma.asDiagonal() * v.transpose()));
}

/// Rank-one 1 x h target with unit Frobenius norm.
inline DataMatrix rank_one_row(Index h, Rng& rng) {
  MatrixXd y = gaussian_matrix(1, h, rng);
  return DataMatrix(MatrixXd(y / y.norm()));
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace testing_support
