#pragma once

// Closed-form description of the global minimum of the scaled risk and a
// constructive generator of balanced minimizers.

#include <Eigen/QR>

#include <algorithm>
#include <numeric>
#include <vector>

#include "droprate/calculus.hpp"
#include "droprate/model.hpp"

namespace droprate {

struct SpectralSummary {
  Index f = 1;
  double lambda = 0.0;
  VectorXd sigma;     // all nonzero singular values of Y, descending
  VectorXd kappa;     // running means kappa_j, j = 1..min(f, r)
  Index rho = 1;      // effective rank
  double alpha = 0.0; // shrinkage threshold
  VectorXd sigma_sq;  // sigma_i - alpha, i = 1..rho
  MatrixXd min_product;
  bool near_degenerate_spectrum = false;  // some gap sigma_i - sigma_{i+1} < 1e-10 sigma_1

  /// sigma_j for 1-based j, zero past the rank.
  double sigma_at(Index j) const noexcept { return j >= 1 && j <= sigma.size() ? sigma(j - 1) : 0.0; }
  double sigma_sq_total() const { return sigma_sq.sum(); }
};

/// U (Sigma_Y - alpha I)_+ V
inline MatrixXd shrink(const DataMatrix& y, double alpha) {
  if (alpha < 0.0) throw DomainError("shrinkage threshold must be nonnegative");
  const VectorXd s = (y.sigma().array() - alpha).cwiseMax(0.0).matrix();
  return y.U() * s.asDiagonal() * y.V();
}

inline SpectralSummary spectral_summary(const DataMatrix& y, Index f, double lambda) {
  if (f < 1) throw DomainError("hidden width must be at least 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("lambda must be finite and >= 0");
  const Index r = y.rank();
  if (r == 0) throw DegenerateDataError("data matrix is zero; the minimum is degenerate");

  SpectralSummary s;
  s.f = f;
  s.lambda = lambda;
  s.sigma = y.sigma();
  const Index m = std::min(f, r);
  s.kappa.resize(m);
  double running = 0.0;
  for (Index j = 1; j <= m; ++j) {
    running += s.sigma(j - 1);
    s.kappa(j - 1) = running / static_cast<double>(j);
  }

  s.rho = 1;
  for (Index j = 1; j <= m; ++j) {
    const double jd = static_cast<double>(j);
    const double threshold = jd * lambda * s.kappa(j - 1) / (static_cast<double>(f) + jd * lambda);
    if (s.sigma(j - 1) > threshold) s.rho = j;
  }
  const double rho = static_cast<double>(s.rho);
  s.alpha = rho * lambda * s.kappa(s.rho - 1) / (static_cast<double>(f) + rho * lambda);
  s.sigma_sq = (s.sigma.head(s.rho).array() - s.alpha).matrix();

  if (s.rho < f) {
    s.min_product = shrink(y, s.alpha);
  } else {
    const VectorXd kept = (s.sigma.head(f).array() - s.alpha).cwiseMax(0.0).matrix();
    s.min_product = y.U().leftCols(f) * kept.asDiagonal() * y.V().topRows(f);
  }

  for (Index i = 0; i + 1 < r; ++i)
    if (s.sigma(i) - s.sigma(i + 1) < 1e-10 * s.sigma(0)) s.near_degenerate_spectrum = true;
  return s;
}

/// True when a is majorized by b: sorted prefix sums of a never exceed those
/// of b and the totals agree, both up to tol * (1 + |total|).
inline bool majorizes(const VectorXd& b, const VectorXd& a, double tol) {
  if (a.size() != b.size()) return false;
  std::vector<double> as(a.data(), a.data() + a.size());
  std::vector<double> bs(b.data(), b.data() + b.size());
  std::sort(as.begin(), as.end(), std::greater<>());
  std::sort(bs.begin(), bs.end(), std::greater<>());
  const double slack = tol * (1.0 + std::abs(b.sum()));
  double pa = 0.0, pb = 0.0;
  for (std::size_t i = 0; i < as.size(); ++i) {
    pa += as[i];
    pb += bs[i];
    if (pa > pb + slack) return false;
  }
  return std::abs(pa - pb) <= slack;
}

/// Orthogonal S with Diag(S^T Diag(b) S) = a, for a majorized by b.
///
/// Works on the sorted target and applies one plane rotation per
/// T-transform: pick the last index j still above its target and the first
/// k > j still below, move min(x_j - t_j, t_k - x_k) from j to k. Each
/// rotation pins at least one diagonal entry, so at most f - 1 are needed.
/// Pairs of unpinned indices never share an off-diagonal entry, which keeps
/// the diagonal update exact.
inline MatrixXd horn_orthogonal(const VectorXd& b, const VectorXd& a, double tol = 1e-12) {
  const Index n = b.size();
  if (a.size() != n || n == 0) throw PreconditionError("horn_orthogonal: vectors must share a nonzero length");
  for (Index i = 0; i < n; ++i) {
    if (b(i) < -tol || a(i) < -tol) throw PreconditionError("horn_orthogonal: entries must be nonnegative");
    if (i + 1 < n && b(i) < b(i + 1)) throw PreconditionError("horn_orthogonal: b must be sorted descending");
  }
  if (!majorizes(b, a, tol)) throw PreconditionError("horn_orthogonal: target is not majorized by b");

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&a](Index i, Index j) { return a(i) > a(j); });
  VectorXd target(n);
  for (Index i = 0; i < n; ++i) target(i) = a(order[static_cast<std::size_t>(i)]);

  VectorXd x = b;
  MatrixXd s = MatrixXd::Identity(n, n);
  const double snap = tol * (1.0 + std::abs(b.sum()));

  for (Index iter = 0; iter < n; ++iter) {
    Index j = -1;
    for (Index i = n - 1; i >= 0; --i)
      if (x(i) - target(i) > snap) { j = i; break; }
    if (j < 0) break;
    Index k = -1;
    for (Index i = j + 1; i < n; ++i)
      if (target(i) - x(i) > snap) { k = i; break; }
    if (k < 0) break;

    const double delta = std::min(x(j) - target(j), target(k) - x(k));
    const double s2 = delta / (x(j) - x(k));
    const double sn = std::sqrt(std::clamp(s2, 0.0, 1.0));
    const double cs = std::sqrt(std::clamp(1.0 - s2, 0.0, 1.0));
    for (Index row = 0; row < n; ++row) {
      const double sj = s(row, j), sk = s(row, k);
      s(row, j) = cs * sj + sn * sk;
      s(row, k) = -sn * sj + cs * sk;
    }
    x(j) -= delta;
    x(k) += delta;
  }

  MatrixXd out(n, n);
  for (Index i = 0; i < n; ++i) out.col(order[static_cast<std::size_t>(i)]) = s.col(i);
  return out;
}

struct MinimizerCertificate {
  double grad_norm = 0.0;
  double product_error = 0.0;  // ||W2 W1 - W*||_F
  double diag_error = 0.0;     // max deviation of both Gram diagonals from ||Sigma^2||_1 / f
  double balance_error = 0.0;  // ||W2^T W2 - W1 W1^T||_max

  bool passes(double scale = 1.0) const {
    return grad_norm <= 1e-8 * scale && product_error <= 1e-9 * scale && diag_error <= 1e-9 * scale &&
           balance_error <= 1e-9 * scale;
  }
};

struct BalancedMinimizer {
  Weights weights;
  MatrixXd S;  // f x f orthogonal mixing factor
  SpectralSummary summary;
  MinimizerCertificate certificate;

  /// Certificate tolerances are absolute for data with sigma_1 <= 1 and
  /// grow with sigma_1^2 beyond.
  bool certified() const {
    const double s1 = summary.sigma.size() ? summary.sigma(0) : 1.0;
    return certificate.passes(std::max(1.0, s1 * s1));
  }
};

inline MinimizerCertificate certify(const DataMatrix& y, const Weights& w, const SpectralSummary& s) {
  MinimizerCertificate c;
  c.grad_norm = grad_scaled(y, w, s.lambda).norm();
  c.product_error = (w.product() - s.min_product).norm();
  const double level = s.sigma_sq_total() / static_cast<double>(s.f);
  const VectorXd d2 = w.w2.colwise().squaredNorm().transpose();
  const VectorXd d1 = w.w1.rowwise().squaredNorm();
  c.diag_error = std::max((d2.array() - level).abs().maxCoeff(), (d1.array() - level).abs().maxCoeff());
  c.balance_error = (w.w2.transpose() * w.w2 - w.w1 * w.w1.transpose()).cwiseAbs().maxCoeff();
  return c;
}

namespace detail {

/// Orthogonal matrix whose first row is `row` (unit norm).
inline MatrixXd complete_first_row(const VectorXd& row) {
  const Index n = row.size();
  Eigen::HouseholderQR<MatrixXd> qr{MatrixXd(row)};
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(n, n);
  MatrixXd s = q.transpose();
  if (s.row(0).dot(row.transpose()) < 0.0) s.row(0) *= -1.0;
  s.row(0) = row.transpose();
  return s;
}

}  // namespace detail

/// Balanced global minimizer (U Sigma_2 S, S^T Sigma_1 V) of the scaled risk.
///
/// For rho = 1 the first row of S is a uniformly random sign vector over
/// sqrt(f), which samples the finitely many balanced minimizers uniformly.
/// For rho > 1 the Horn rotation sequence is followed by a random column
/// permutation, column signs and row signs; every such S keeps the diagonal
/// condition but the result is not uniform on the balanced set.
inline BalancedMinimizer balanced_minimizer(const DataMatrix& y, Index f, double lambda, Rng& rng) {
  BalancedMinimizer m;
  m.summary = spectral_summary(y, f, lambda);
  const SpectralSummary& s = m.summary;
  const Index rho = s.rho;
  const double level = s.sigma_sq_total() / static_cast<double>(f);
  std::bernoulli_distribution coin(0.5);

  if (rho == 1) {
    VectorXd row(f);
    for (Index j = 0; j < f; ++j) row(j) = (coin(rng) ? 1.0 : -1.0) / std::sqrt(static_cast<double>(f));
    m.S = detail::complete_first_row(row);
  } else {
    VectorXd b = VectorXd::Zero(f);
    b.head(rho) = s.sigma_sq;
    const VectorXd a = VectorXd::Constant(f, level);
    MatrixXd horn = horn_orthogonal(b, a, 1e-12);
    std::vector<Index> perm(static_cast<std::size_t>(f));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    m.S.resize(f, f);
    for (Index j = 0; j < f; ++j)
      m.S.col(j) = horn.col(perm[static_cast<std::size_t>(j)]) * (coin(rng) ? 1.0 : -1.0);
    for (Index i = 0; i < rho; ++i)
      if (coin(rng)) m.S.row(i) *= -1.0;
  }

  const VectorXd root = s.sigma_sq.array().sqrt().matrix();
  const MatrixXd top = m.S.topRows(rho);
  m.weights = Weights(y.U().leftCols(rho) * root.asDiagonal() * top,
                      top.transpose() * root.asDiagonal() * y.V().topRows(rho));
  m.certificate = certify(y, m.weights, s);
  return m;
}

/// I.i.d. Normal(0, sigma^2) weights, drawn W2 column-major then W1.
inline Weights gaussian_init(Dims d, double sigma, Rng& rng) {
  if (!(sigma > 0.0)) throw DomainError("gaussian init needs sigma > 0");
  std::normal_distribution<double> n(0.0, sigma);
  Weights w = Weights::zeros(d);
  for (Index i = 0; i < w.w2.size(); ++i) w.w2.data()[i] = n(rng);
  for (Index i = 0; i < w.w1.size(); ++i) w.w1.data()[i] = n(rng);
  return w;
}

/// Entrywise Normal(center, epsilon^2).
inline Weights epsilon_init(const Weights& center, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0)) throw DomainError("epsilon must be nonnegative");
  if (epsilon == 0.0) return center;
  std::normal_distribution<double> n(0.0, epsilon);
  Weights w = center;
  for (Index i = 0; i < w.w2.size(); ++i) w.w2.data()[i] += n(rng);
  for (Index i = 0; i < w.w1.size(); ++i) w.w1.data()[i] += n(rng);
  return w;
}

inline Weights epsilon_init(const BalancedMinimizer& wstar, double epsilon, Rng& rng) {
  return epsilon_init(wstar.weights, epsilon, rng);
}

}  // namespace droprate
