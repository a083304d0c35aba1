#pragma once

// Shallow linear network objectives: plain risk, the closed-form Dropout and
// Dropconnect expectations, and the scaled risk they reduce to.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include "droprate/errors.hpp"
#include "droprate/rng.hpp"

namespace droprate {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Dims {
  Index e = 1;
  Index f = 1;
  Index h = 1;
};

/// Whitened target Y (e x h) together with its compact SVD
/// Y = U * diag(sigma) * V, U: e x r, V: r x h, sigma strictly decreasing
/// in the generic case and strictly positive.
class DataMatrix {
 public:
  DataMatrix() = default;

  explicit DataMatrix(MatrixXd values) : values_(std::move(values)) {
    if (values_.size() == 0) throw ShapeError("data matrix is empty");
    if (!values_.allFinite()) throw DataError("data matrix has non-finite entries");
    Eigen::JacobiSVD<MatrixXd> svd(values_, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VectorXd& s = svd.singularValues();
    const double cutoff = static_cast<double>(std::max(values_.rows(), values_.cols())) *
                          std::numeric_limits<double>::epsilon() * (s.size() ? s(0) : 0.0);
    Index r = 0;
    while (r < s.size() && s(r) > cutoff && s(r) > 0.0) ++r;
    sigma_ = s.head(r);
    u_ = svd.matrixU().leftCols(r);
    v_ = svd.matrixV().leftCols(r).transpose();
  }

  const MatrixXd& values() const noexcept { return values_; }
  const MatrixXd& U() const noexcept { return u_; }
  const VectorXd& sigma() const noexcept { return sigma_; }
  const MatrixXd& V() const noexcept { return v_; }
  Index rank() const noexcept { return sigma_.size(); }
  Index e() const noexcept { return values_.rows(); }
  Index h() const noexcept { return values_.cols(); }

  /// sigma_i for 1-based i, zero beyond the rank.
  double singular(Index i) const noexcept { return i >= 1 && i <= rank() ? sigma_(i - 1) : 0.0; }

 private:
  MatrixXd values_;
  MatrixXd u_;
  VectorXd sigma_;
  MatrixXd v_;
};

/// Layer pair (W2: e x f, W1: f x h).
struct Weights {
  MatrixXd w2;
  MatrixXd w1;

  Weights() = default;
  Weights(MatrixXd second, MatrixXd first) : w2(std::move(second)), w1(std::move(first)) {
    if (w2.cols() != w1.rows())
      throw ShapeError("hidden widths disagree: W2 has " + std::to_string(w2.cols()) +
                       " columns, W1 has " + std::to_string(w1.rows()) + " rows");
    if (w2.cols() < 1) throw ShapeError("hidden width must be at least 1");
  }

  static Weights zeros(Dims d) { return {MatrixXd::Zero(d.e, d.f), MatrixXd::Zero(d.f, d.h)}; }

  Index e() const noexcept { return w2.rows(); }
  Index f() const noexcept { return w2.cols(); }
  Index h() const noexcept { return w1.cols(); }
  Dims dims() const noexcept { return {e(), f(), h()}; }
  Index size() const noexcept { return w2.size() + w1.size(); }

  MatrixXd product() const { return w2 * w1; }
  double squared_norm() const { return w2.squaredNorm() + w1.squaredNorm(); }
  bool all_finite() const { return w2.allFinite() && w1.allFinite(); }

  Weights scaled(double s) const { return {s * w2, s * w1}; }
};

inline Weights operator+(const Weights& a, const Weights& b) { return {a.w2 + b.w2, a.w1 + b.w1}; }
inline Weights operator-(const Weights& a, const Weights& b) { return {a.w2 - b.w2, a.w1 - b.w1}; }

enum class Variant { Dropout, Dropconnect };

inline std::string_view to_string(Variant v) {
  return v == Variant::Dropout ? "dropout" : "dropconnect";
}

inline Variant parse_variant(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "dropout") return Variant::Dropout;
  if (lower == "dropconnect") return Variant::Dropconnect;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected dropout|dropconnect)");
}

/// Regularization strength of the scaled risk: (1-p)/p for Dropout,
/// (1-p^2)/p^2 for Dropconnect.
inline double lambda_of(Variant v, double p) {
  if (!(p > 0.0 && p <= 1.0))
    throw DomainError("retain probability must lie in (0,1], got " + std::to_string(p));
  if (v == Variant::Dropout) return (1.0 - p) / p;
  const double p2 = p * p;
  return (1.0 - p2) / p2;
}

class DropoutSpec {
 public:
  DropoutSpec(Variant variant, double p) : variant_(variant), p_(p), lambda_(lambda_of(variant, p)) {}

  Variant variant() const noexcept { return variant_; }
  double p() const noexcept { return p_; }
  double lambda() const noexcept { return lambda_; }

  /// Scale `a` with E[(W2.F2)(W1.F1)] = a W2 W1: p for Dropout, p^2 for Dropconnect.
  double product_scale() const noexcept { return variant_ == Variant::Dropout ? p_ : p_ * p_; }
  /// Coefficient of the diagonal regularizer in the unscaled objective.
  double regularizer_coefficient() const noexcept {
    const double a = product_scale();
    return a - a * a;
  }
  /// Factor applied to W so that the unscaled objective equals the scaled risk.
  double weight_scale() const noexcept {
    return variant_ == Variant::Dropout ? std::sqrt(p_) : p_;
  }

 private:
  Variant variant_;
  double p_;
  double lambda_;
};

struct MaskSample {
  MatrixXd f2;  // e x f, entries in {0,1}
  MatrixXd f1;  // f x h
};

namespace detail {

inline void check_shapes(const DataMatrix& y, const Weights& w) {
  if (y.e() != w.e() || y.h() != w.h())
    throw ShapeError("data is " + std::to_string(y.e()) + "x" + std::to_string(y.h()) +
                     " but weights map " + std::to_string(w.h()) + " -> " + std::to_string(w.e()));
}

/// Tr[Diag(W2^T W2) Diag(W1 W1^T)] = sum_i |col_i W2|^2 |row_i W1|^2.
inline double diagonal_product(const Weights& w) {
  return (w.w2.colwise().squaredNorm().transpose().array() * w.w1.rowwise().squaredNorm().array())
      .sum();
}

}  // namespace detail

/// ||Y - W2 W1||_F^2
inline double plain_risk(const DataMatrix& y, const Weights& w) {
  detail::check_shapes(y, w);
  return (y.values() - w.w2 * w.w1).squaredNorm();
}

/// ||Y - W2 W1||_F^2 + lambda Tr[Diag(W2^T W2) Diag(W1 W1^T)]
inline double scaled_risk(const DataMatrix& y, const Weights& w, double lambda) {
  if (lambda < 0.0) throw DomainError("lambda must be nonnegative");
  detail::check_shapes(y, w);
  return (y.values() - w.w2 * w.w1).squaredNorm() + lambda * detail::diagonal_product(w);
}

/// Expected plain risk under the mask distribution of `spec`:
/// ||Y - a W2 W1||^2 + (a - a^2) Tr[Diag(W2^T W2) Diag(W1 W1^T)] with a = p
/// (Dropout) or a = p^2 (Dropconnect).
inline double dropout_objective(const DataMatrix& y, const Weights& w, const DropoutSpec& spec) {
  detail::check_shapes(y, w);
  const double a = spec.product_scale();
  return (y.values() - a * (w.w2 * w.w1)).squaredNorm() +
         spec.regularizer_coefficient() * detail::diagonal_product(w);
}

/// Map W to the scaled coordinates where dropout_objective(W) == scaled_risk(result).
inline Weights scale_to_scaled(const Weights& w, const DropoutSpec& spec) {
  return w.scaled(spec.weight_scale());
}

/// Inverse of scale_to_scaled.
inline Weights scale_from_scaled(const Weights& w, const DropoutSpec& spec) {
  return w.scaled(1.0 / spec.weight_scale());
}

inline MaskSample sample_mask(const DropoutSpec& spec, Dims d, Rng& rng) {
  std::bernoulli_distribution keep(spec.p());
  MaskSample m{MatrixXd(d.e, d.f), MatrixXd(d.f, d.h)};
  if (spec.variant() == Variant::Dropout) {
    for (Index i = 0; i < d.f; ++i) {
      const double b = keep(rng) ? 1.0 : 0.0;
      m.f2.col(i).setConstant(b);
      m.f1.row(i).setConstant(b);
    }
  } else {
    for (Index j = 0; j < m.f2.cols(); ++j)
      for (Index i = 0; i < m.f2.rows(); ++i) m.f2(i, j) = keep(rng) ? 1.0 : 0.0;
    for (Index j = 0; j < m.f1.cols(); ++j)
      for (Index i = 0; i < m.f1.rows(); ++i) m.f1(i, j) = keep(rng) ? 1.0 : 0.0;
  }
  return m;
}

inline Weights apply_mask(const Weights& w, const MaskSample& m) {
  return {w.w2.cwiseProduct(m.f2), w.w1.cwiseProduct(m.f1)};
}

}  // namespace droprate
