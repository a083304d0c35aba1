#pragma once

// Raw (X, Y) data to the whitened target Y X^T (X X^T)^{-1/2}.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "droprate/csv.hpp"
#include "droprate/model.hpp"
#include "droprate/rng.hpp"

namespace droprate {

/// Samples are columns: X is h x n, Yraw is e x n.
struct RawDataset {
  MatrixXd X;
  MatrixXd Yraw;

  Index n() const noexcept { return X.cols(); }
};

/// Files hold one sample per row unless samples_as_rows is false.
inline RawDataset ingest_csv(const std::string& path_x, const std::string& path_y, bool samples_as_rows = true) {
  MatrixXd x = csv::read_numeric_file(path_x).values;
  MatrixXd y = csv::read_numeric_file(path_y).values;
  RawDataset raw;
  raw.X = samples_as_rows ? MatrixXd(x.transpose()) : x;
  raw.Yraw = samples_as_rows ? MatrixXd(y.transpose()) : y;
  if (raw.X.cols() != raw.Yraw.cols())
    throw ShapeError("X has " + std::to_string(raw.X.cols()) + " samples but Y has " +
                     std::to_string(raw.Yraw.cols()));
  return raw;
}

struct Whitened {
  DataMatrix y;
  MatrixXd sqrt_cov;        // (X X^T)^{1/2}
  double scale = 1.0;       // factor applied by normalization
  double condition = 1.0;   // of X X^T
  double identity_gap = 0.0;  // spread of the decomposition constant across probe weights
  double identity_scale = 1.0;  // largest raw residual seen by the probes

  bool identity_holds(double rel_tol = 1e-9) const { return identity_gap <= rel_tol * std::max(1.0, identity_scale); }
};

namespace detail {

/// ||Y - M X||^2 - ||Yw - M C^{1/2}||^2, constant in M when Yw is the
/// unnormalized whitened target.
inline double whitening_constant(const RawDataset& raw, const MatrixXd& yw, const MatrixXd& sqrt_cov,
                                 const MatrixXd& m) {
  return (raw.Yraw - m * raw.X).squaredNorm() - (yw - m * sqrt_cov).squaredNorm();
}

}  // namespace detail

inline constexpr double kMaxCondition = 1e12;

inline Whitened whiten(const RawDataset& raw, bool normalize = true, int probes = 5) {
  const Index h = raw.X.rows();
  const Index n = raw.X.cols();
  if (h == 0 || n == 0 || raw.Yraw.rows() == 0) throw ShapeError("empty dataset");
  if (raw.Yraw.cols() != n) throw ShapeError("X and Y disagree on the sample count");
  if (n < h) throw ConditioningError("fewer samples than features; X X^T is singular");
  if (!raw.X.allFinite() || !raw.Yraw.allFinite()) throw DataError("dataset has non-finite entries");

  const MatrixXd cov = raw.X * raw.X.transpose();
  VectorXd evals;
  MatrixXd evecs;
  if (cov.isDiagonal(0.0)) {
    // Exact path, so that X = I reproduces Y untouched.
    evals = cov.diagonal();
    evecs = MatrixXd::Identity(h, h);
  } else {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw ConditioningError("eigendecomposition of X X^T failed");
    evals = es.eigenvalues();
    evecs = es.eigenvectors();
  }
  const double lo = evals.minCoeff();
  const double hi = evals.maxCoeff();
  if (!(lo > 0.0) || hi / lo >= kMaxCondition)
    throw ConditioningError("X X^T is numerically singular (condition " + std::to_string(hi / lo) + ")");

  Whitened out;
  out.condition = hi / lo;
  const VectorXd root = evals.array().sqrt().matrix();
  const VectorXd inv_root = root.cwiseInverse();
  out.sqrt_cov = evecs * root.asDiagonal() * evecs.transpose();
  const MatrixXd inv_sqrt = evecs * inv_root.asDiagonal() * evecs.transpose();
  const MatrixXd yw = raw.Yraw * raw.X.transpose() * inv_sqrt;

  if (probes > 0) {
    Rng rng = make_rng(derive_seed(0x77686974ULL, {static_cast<std::uint64_t>(h), static_cast<std::uint64_t>(n)}));
    std::normal_distribution<double> g(0.0, 1.0);
    double lo_c = std::numeric_limits<double>::infinity(), hi_c = -lo_c;
    for (int k = 0; k < probes; ++k) {
      MatrixXd m(raw.Yraw.rows(), h);
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
      const double c = detail::whitening_constant(raw, yw, out.sqrt_cov, m);
      out.identity_scale = std::max(out.identity_scale, (raw.Yraw - m * raw.X).squaredNorm());
      lo_c = std::min(lo_c, c);
      hi_c = std::max(hi_c, c);
    }
    out.identity_gap = hi_c - lo_c;
  }

  if (normalize) {
    const double norm = yw.norm();
    if (!(norm > 0.0)) throw DegenerateDataError("whitened target is zero");
    out.scale = 1.0 / norm;
    out.y = DataMatrix(yw * out.scale);
  } else {
    out.y = DataMatrix(yw);
  }
  return out;
}

}  // namespace droprate
