#pragma once

// Exact first and second derivatives of the objectives, finite-difference
// oracles and dense spectral helpers.
//
// Vectorized coordinates put vec(W1) first, then vec(W2), both column-major.

#include <Eigen/Eigenvalues>

#include <functional>
#include <vector>

#include "droprate/model.hpp"

namespace droprate {

struct Gradient {
  MatrixXd g2;  // e x f
  MatrixXd g1;  // f x h

  double norm() const { return std::sqrt(g2.squaredNorm() + g1.squaredNorm()); }
  bool all_finite() const { return g2.allFinite() && g1.allFinite(); }
};

/// Symmetric Hessian in vectorized coordinates, d = f*h + e*f.
struct HessianMatrix {
  MatrixXd h;
  Dims dims;

  Index size() const noexcept { return h.rows(); }
};

inline VectorXd vectorize(const MatrixXd& v2, const MatrixXd& v1) {
  VectorXd out(v1.size() + v2.size());
  out.head(v1.size()) = Eigen::Map<const VectorXd>(v1.data(), v1.size());
  out.tail(v2.size()) = Eigen::Map<const VectorXd>(v2.data(), v2.size());
  return out;
}

inline VectorXd vectorize(const Weights& w) { return vectorize(w.w2, w.w1); }
inline VectorXd vectorize(const Gradient& g) { return vectorize(g.g2, g.g1); }

inline Weights unvectorize(const VectorXd& x, Dims d) {
  if (x.size() != d.f * d.h + d.e * d.f) throw ShapeError("vector length does not match dims");
  MatrixXd w1 = Eigen::Map<const MatrixXd>(x.data(), d.f, d.h);
  MatrixXd w2 = Eigen::Map<const MatrixXd>(x.data() + d.f * d.h, d.e, d.f);
  return {std::move(w2), std::move(w1)};
}

/// Gradient of the scaled risk:
///   grad_1 = -2 W2^T (Y - W2 W1) + 2 lambda Diag(W2^T W2) W1
///   grad_2 = -2 (Y - W2 W1) W1^T + 2 lambda W2 Diag(W1 W1^T)
inline Gradient grad_scaled(const DataMatrix& y, const Weights& w, double lambda) {
  detail::check_shapes(y, w);
  const MatrixXd r = y.values() - w.w2 * w.w1;
  const VectorXd col2 = w.w2.colwise().squaredNorm().transpose();
  const VectorXd row1 = w.w1.rowwise().squaredNorm();
  Gradient g;
  g.g1 = -2.0 * (w.w2.transpose() * r) + (2.0 * lambda) * (col2.asDiagonal() * w.w1);
  g.g2 = -2.0 * (r * w.w1.transpose()) + (2.0 * lambda) * (w.w2 * row1.asDiagonal());
  return g;
}

/// Gradient of dropout_objective, differentiated in the original (unscaled)
/// coordinates. With a = product scale and c = regularizer coefficient:
///   grad_1 = -2a W2^T (Y - a W2 W1) + 2c Diag(W2^T W2) W1, and symmetrically.
inline Gradient grad_dropout(const DataMatrix& y, const Weights& w, const DropoutSpec& spec) {
  detail::check_shapes(y, w);
  const double a = spec.product_scale();
  const double c = spec.regularizer_coefficient();
  const MatrixXd r = y.values() - a * (w.w2 * w.w1);
  Gradient g;
  g.g1 = (-2.0 * a) * (w.w2.transpose() * r);
  g.g2 = (-2.0 * a) * (r * w.w1.transpose());
  if (c != 0.0) {
    const VectorXd col2 = w.w2.colwise().squaredNorm().transpose();
    const VectorXd row1 = w.w1.rowwise().squaredNorm();
    g.g1 += (2.0 * c) * (col2.asDiagonal() * w.w1);
    g.g2 += (2.0 * c) * (w.w2 * row1.asDiagonal());
  }
  return g;
}

/// Gradient of plain_risk(Y, F . W) with respect to W for a fixed mask F.
inline Gradient masked_gradient(const DataMatrix& y, const Weights& w, const MaskSample& m) {
  detail::check_shapes(y, w);
  const Weights masked = apply_mask(w, m);
  const MatrixXd r = y.values() - masked.w2 * masked.w1;
  Gradient g;
  g.g1 = ((-2.0) * (masked.w2.transpose() * r)).cwiseProduct(m.f1);
  g.g2 = ((-2.0) * (r * masked.w1.transpose())).cwiseProduct(m.f2);
  return g;
}

/// One realization of the stochastic dropout direction; its mean over masks
/// is grad_dropout.
inline Gradient stochastic_direction(const DataMatrix& y, const Weights& w, const DropoutSpec& spec,
                                     Rng& rng) {
  return masked_gradient(y, w, sample_mask(spec, w.dims(), rng));
}

/// Dense Hessian of the scaled risk assembled block by block:
///   d11 = 2 I_h (x) W2^T W2 + 2 lambda I_h (x) Diag(W2^T W2)
///   d22 = 2 W1 W1^T (x) I_e + 2 lambda Diag(W1 W1^T) (x) I_e
///   d12[(k,l),(a,b)] = -2 [b=k] R_al + 2 W2_ak W1_bl + 4 lambda [b=k] W2_ak W1_kl
/// with R = Y - W2 W1.
inline HessianMatrix hessian_scaled(const DataMatrix& y, const Weights& w, double lambda) {
  detail::check_shapes(y, w);
  const Index e = w.e(), f = w.f(), h = w.h();
  const Index n1 = f * h;
  const Index d = n1 + e * f;
  const MatrixXd r = y.values() - w.w2 * w.w1;
  const MatrixXd gram2 = w.w2.transpose() * w.w2;  // f x f
  const MatrixXd gram1 = w.w1 * w.w1.transpose();  // f x f

  HessianMatrix out{MatrixXd::Zero(d, d), w.dims()};
  MatrixXd& H = out.h;
  auto i1 = [f](Index k, Index l) { return k + f * l; };
  auto i2 = [n1, e](Index a, Index b) { return n1 + a + e * b; };

  for (Index l = 0; l < h; ++l)
    for (Index k = 0; k < f; ++k)
      for (Index k2 = 0; k2 < f; ++k2) {
        double v = 2.0 * gram2(k, k2);
        if (k == k2) v += 2.0 * lambda * gram2(k, k);
        H(i1(k, l), i1(k2, l)) = v;
      }

  for (Index b = 0; b < f; ++b)
    for (Index b2 = 0; b2 < f; ++b2) {
      double v = 2.0 * gram1(b, b2);
      if (b == b2) v += 2.0 * lambda * gram1(b, b);
      for (Index a = 0; a < e; ++a) H(i2(a, b), i2(a, b2)) = v;
    }

  for (Index l = 0; l < h; ++l)
    for (Index k = 0; k < f; ++k)
      for (Index b = 0; b < f; ++b)
        for (Index a = 0; a < e; ++a) {
          double v = 2.0 * w.w2(a, k) * w.w1(b, l);
          if (b == k) v += -2.0 * r(a, l) + 4.0 * lambda * w.w2(a, k) * w.w1(k, l);
          H(i1(k, l), i2(a, b)) = v;
          H(i2(a, b), i1(k, l)) = v;
        }
  return out;
}

/// Second-derivative bilinear form of the scaled risk along direction v,
/// evaluated from matrix expressions (no assembly):
///   2||W2 V1 + V2 W1||^2 + 2 lambda Tr[V1^T Diag(W2^T W2) V1]
///   + 2 lambda Tr[V2 Diag(W1 W1^T) V2^T] - 4 Tr[V1^T V2^T (Y - W2 W1)]
///   + 2 lambda (||D2 + D1||^2 - ||D2 - D1||^2),
/// D2 = Diag(V2^T W2), D1 = Diag(W1 V1^T).
inline double hessian_bilinear(const DataMatrix& y, const Weights& w, double lambda,
                               const Weights& v) {
  detail::check_shapes(y, w);
  if (v.e() != w.e() || v.f() != w.f() || v.h() != w.h())
    throw ShapeError("direction shape does not match weights");
  const MatrixXd r = y.values() - w.w2 * w.w1;
  const VectorXd diag_w2 = w.w2.colwise().squaredNorm().transpose();
  const VectorXd diag_w1 = w.w1.rowwise().squaredNorm();
  const VectorXd d2 = (v.w2.transpose() * w.w2).diagonal();
  const VectorXd d1 = (w.w1 * v.w1.transpose()).diagonal();

  double q = 2.0 * (w.w2 * v.w1 + v.w2 * w.w1).squaredNorm();
  q += 2.0 * lambda * (v.w1.transpose() * diag_w2.asDiagonal() * v.w1).trace();
  q += 2.0 * lambda * (v.w2 * diag_w1.asDiagonal() * v.w2.transpose()).trace();
  q -= 4.0 * (v.w1.transpose() * v.w2.transpose() * r).trace();
  q += 2.0 * lambda * ((d2 + d1).squaredNorm() - (d2 - d1).squaredNorm());
  return q;
}

using Objective = std::function<double(const Weights&)>;

/// Central-difference gradient, one coordinate at a time.
inline Gradient fd_gradient(const Objective& obj, const Weights& w, double step) {
  if (!(step > 0.0)) throw DomainError("finite-difference step must be positive");
  VectorXd x = vectorize(w);
  VectorXd g(x.size());
  const Dims d = w.dims();
  for (Index i = 0; i < x.size(); ++i) {
    const double x0 = x(i);
    x(i) = x0 + step;
    const double fp = obj(unvectorize(x, d));
    x(i) = x0 - step;
    const double fm = obj(unvectorize(x, d));
    x(i) = x0;
    g(i) = (fp - fm) / (2.0 * step);
  }
  Weights gw = unvectorize(g, d);
  return {std::move(gw.w2), std::move(gw.w1)};
}

/// Second central difference of obj along v: (f(w+sv) - 2f(w) + f(w-sv)) / s^2.
inline double fd_quadratic(const Objective& obj, const Weights& w, const Weights& v, double step) {
  if (!(step > 0.0)) throw DomainError("finite-difference step must be positive");
  const double fp = obj(w + v.scaled(step));
  const double f0 = obj(w);
  const double fm = obj(w - v.scaled(step));
  return (fp - 2.0 * f0 + fm) / (step * step);
}

/// Eigenvalues in ascending order.
inline VectorXd spectrum(const MatrixXd& h) {
  if (h.rows() != h.cols()) throw ShapeError("spectrum needs a square matrix");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(h, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("symmetric eigensolver did not converge");
  return es.eigenvalues();
}

inline VectorXd spectrum(const HessianMatrix& h) { return spectrum(h.h); }

/// 1e-6 times the spectral radius.
inline double default_kernel_tau(const VectorXd& eigenvalues) {
  return eigenvalues.size() ? 1e-6 * eigenvalues.cwiseAbs().maxCoeff() : 0.0;
}

inline Index kernel_dim(const VectorXd& eigenvalues, double tau) {
  return static_cast<Index>((eigenvalues.array().abs() < tau).count());
}

inline Index kernel_dim(const HessianMatrix& h, double tau) { return kernel_dim(spectrum(h), tau); }

inline Index kernel_dim(const HessianMatrix& h) {
  const VectorXd ev = spectrum(h);
  return kernel_dim(ev, default_kernel_tau(ev));
}

}  // namespace droprate
