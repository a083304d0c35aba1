#include <gtest/gtest.h>

#include "support.hpp"

using namespace droprate;
using namespace testing_support;

namespace {

DataMatrix diag_target(std::initializer_list<double> s) {
  const auto n = static_cast<Index>(s.size());
  MatrixXd y = MatrixXd::Zero(n, n);
  Index i = 0;
  for (double v : s) y(i, i) = v, ++i;
  return DataMatrix(y);
}

// Random a majorized by a descending nonnegative b: b is pushed toward its
// mean by a random doubly stochastic average.
std::pair<VectorXd, VectorXd> majorizing_pair(Index n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VectorXd b(n);
  for (Index i = 0; i < n; ++i) b(i) = u(rng);
  std::sort(b.data(), b.data() + n, std::greater<>());
  MatrixXd p = MatrixXd::Zero(n, n);
  for (int k = 0; k < 4; ++k) {
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (Index i = 0; i < n; ++i) p(i, perm[static_cast<std::size_t>(i)]) += 0.25;
  }
  return {b, p * b};
}

double diag_error(const MatrixXd& s, const VectorXd& b, const VectorXd& a) {
  return ((s.transpose() * b.asDiagonal() * s).diagonal() - a).cwiseAbs().maxCoeff();
}

}  // namespace

TEST(SpectralSummary, WorkedCase) {
  const SpectralSummary s = spectral_summary(diag_target({3, 1}), 2, 1.0);
  EXPECT_DOUBLE_EQ(s.kappa(0), 3.0);
  EXPECT_DOUBLE_EQ(s.kappa(1), 2.0);
  EXPECT_EQ(s.rho, 1);
  EXPECT_DOUBLE_EQ(s.alpha, 1.0);
  ASSERT_EQ(s.sigma_sq.size(), 1);
  EXPECT_DOUBLE_EQ(s.sigma_sq(0), 2.0);
  const Eigen::JacobiSVD<MatrixXd> svd(s.min_product);
  EXPECT_NEAR(svd.singularValues()(0), 2.0, 1e-14);
  EXPECT_NEAR(svd.singularValues()(1), 0.0, 1e-14);
}

TEST(SpectralSummary, BruteForceScan) {
  Rng rng = make_rng(1);
  std::uniform_real_distribution<double> lam(0.0, 4.0);
  for (int trial = 0; trial < 50; ++trial) {
    const VectorXd sig = (VectorXd::Random(4).array().abs() + 0.05).matrix();
    VectorXd sorted = sig;
    std::sort(sorted.data(), sorted.data() + 4, std::greater<>());
    const DataMatrix y = target_with_singular_values(4, 5, sorted, rng);
    const Index f = 1 + trial % 6;
    const double lambda = lam(rng);
    const SpectralSummary s = spectral_summary(y, f, lambda);
    Index rho = 1;
    for (Index j = 1; j <= std::min<Index>(f, 4); ++j) {
      double k = 0.0;
      for (Index i = 0; i < j; ++i) k += sorted(i);
      k /= static_cast<double>(j);
      if (sorted(j - 1) > j * lambda * k / (static_cast<double>(f) + j * lambda)) rho = j;
    }
    EXPECT_EQ(s.rho, rho);
  }
}

TEST(SpectralSummary, NoRegularization) {
  Rng rng = make_rng(2);
  VectorXd sig(3);
  sig << 3.0, 2.0, 0.5;
  const DataMatrix y = target_with_singular_values(3, 4, sig, rng);
  const SpectralSummary s = spectral_summary(y, 2, 0.0);
  EXPECT_EQ(s.alpha, 0.0);
  EXPECT_EQ(s.rho, 2);
  const MatrixXd best = y.U().leftCols(2) * sig.head(2).asDiagonal() * y.V().topRows(2);
  EXPECT_LT((s.min_product - best).norm(), 1e-12);
}

TEST(SpectralSummary, RankOne) {
  Rng rng = make_rng(3);
  const DataMatrix y = rank_one_row(7, rng);
  for (Index f : {1, 3, 10})
    for (double lambda : {0.1, 1.0, 50.0}) {
      const SpectralSummary s = spectral_summary(y, f, lambda);
      EXPECT_EQ(s.rho, 1);
      EXPECT_NEAR(s.alpha, lambda / (static_cast<double>(f) + lambda), 1e-14);
    }
}

TEST(SpectralSummary, Errors) {
  EXPECT_THROW(spectral_summary(DataMatrix(MatrixXd::Zero(2, 2)), 2, 1.0), DegenerateDataError);
  EXPECT_THROW(spectral_summary(diag_target({1}), 0, 1.0), DomainError);
  EXPECT_THROW(spectral_summary(diag_target({1}), 1, -1.0), DomainError);
}

TEST(Shrink, Examples) {
  const DataMatrix y = diag_target({3, 1});
  EXPECT_LT((shrink(y, 0.0) - y.values()).norm(), 1e-14);
  MatrixXd expect = MatrixXd::Zero(2, 2);
  expect(0, 0) = 2.0;
  EXPECT_LT((shrink(y, 1.0) - expect).norm(), 1e-14);
  EXPECT_LT(shrink(y, 3.5).norm(), 1e-14);
  EXPECT_THROW(shrink(y, -1.0), DomainError);
}

TEST(Horn, Examples) {
  VectorXd b(3);
  b << 2.0, 1.0, 0.5;
  EXPECT_LT((horn_orthogonal(b, b) - MatrixXd::Identity(3, 3)).norm(), 1e-15);

  VectorXd b2(2), a2(2);
  b2 << 1.6, 0.0;
  a2 << 0.8, 0.8;
  const MatrixXd s2 = horn_orthogonal(b2, a2);
  EXPECT_LT((s2.array().square() - 0.5).abs().maxCoeff(), 1e-14);

  VectorXd b3(3), a3(3);
  b3 << 3, 0, 0;
  a3 << 1, 1, 1;
  const MatrixXd s3 = horn_orthogonal(b3, a3);
  EXPECT_LT(diag_error(s3, b3, a3), 1e-14);
  EXPECT_LT((s3.transpose() * s3 - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Horn, RandomPairs) {
  Rng rng = make_rng(4);
  for (Index n = 2; n <= 16; ++n)
    for (int k = 0; k < 20; ++k) {
      const auto [b, a] = majorizing_pair(n, rng);
      const MatrixXd s = horn_orthogonal(b, a);
      EXPECT_LT(diag_error(s, b, a), 1e-12);
      EXPECT_LT((s.transpose() * s - MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Horn, Preconditions) {
  VectorXd b(2), a(2);
  b << 1.0, 0.0;
  a << 1.5, -0.5;
  EXPECT_THROW(horn_orthogonal(b, a), PreconditionError);
  a << 0.7, 0.7;  // sums differ
  EXPECT_THROW(horn_orthogonal(b, a), PreconditionError);
  b << 0.0, 1.0;  // not sorted
  a << 0.5, 0.5;
  EXPECT_THROW(horn_orthogonal(b, a), PreconditionError);
  EXPECT_THROW(horn_orthogonal(VectorXd(2), VectorXd(3)), PreconditionError);
}

TEST(Majorizes, Basics) {
  VectorXd b(3), a(3);
  b << 3, 0, 0;
  a << 1, 1, 1;
  EXPECT_TRUE(majorizes(b, a, 1e-12));
  EXPECT_FALSE(majorizes(a, b, 1e-12));
}

TEST(BalancedMinimizer, OneDimensionalOutput) {
  Rng rng = make_rng(5);
  for (Index f : {1, 2, 5, 9}) {
    const DataMatrix y = rank_one_row(6, rng);
    const BalancedMinimizer m = balanced_minimizer(y, f, 0.7, rng);
    EXPECT_TRUE(m.certified());
    EXPECT_LT((m.S.row(0).array().square() - 1.0 / static_cast<double>(f)).abs().maxCoeff(), 1e-14);
    EXPECT_LT((m.S * m.S.transpose() - MatrixXd::Identity(f, f)).norm(), 1e-13);
    EXPECT_LT(m.certificate.grad_norm, 1e-9);
  }
}

TEST(BalancedMinimizer, WorkedCaseDiagonal) {
  Rng rng = make_rng(6);
  const BalancedMinimizer m = balanced_minimizer(diag_target({3, 1}), 2, 1.0, rng);
  ASSERT_TRUE(m.certified());
  const MatrixXd d = m.weights.w2.transpose() * m.weights.w2;
  EXPECT_NEAR(d(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(d(1, 1), 1.0, 1e-12);
}

TEST(BalancedMinimizer, CertificateOnRandomData) {
  Rng rng = make_rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const Index e = 1 + trial % 4, h = 2 + trial % 5, f = 1 + trial % 7;
    const DataMatrix y(gaussian_matrix(e, h, rng));
    const double lambda = 0.05 + 0.1 * (trial % 10);
    const BalancedMinimizer m = balanced_minimizer(y, f, lambda, rng);
    EXPECT_TRUE(m.certified()) << "trial " << trial << " rho=" << m.summary.rho;
    EXPECT_LT(grad_scaled(y, m.weights, lambda).norm(), 1e-8);
    // Global: no random perturbation does better.
    const double at = scaled_risk(y, m.weights, lambda);
    for (int k = 0; k < 50; ++k) {
      const Weights v = random_weights(m.weights.dims(), rng, 1e-3);
      EXPECT_GE(scaled_risk(y, m.weights + v, lambda), at - 1e-12);
    }
  }
}

TEST(BalancedMinimizer, Deterministic) {
  Rng y_rng = make_rng(8);
  const DataMatrix y(gaussian_matrix(3, 4, y_rng));
  Rng a = make_rng(11), b = make_rng(11);
  EXPECT_EQ(balanced_minimizer(y, 4, 0.5, a).weights.w2, balanced_minimizer(y, 4, 0.5, b).weights.w2);
}

TEST(GaussianInit, Statistics) {
  Rng rng = make_rng(9);
  const Weights w = gaussian_init(Dims{100, 250, 300}, 0.3, rng);
  const VectorXd x = vectorize(w);
  const double var = x.squaredNorm() / static_cast<double>(x.size()) - std::pow(x.mean(), 2);
  EXPECT_NEAR(var, 0.09, 0.03 * 0.09);
  Rng r2 = make_rng(10);
  EXPECT_LT(gaussian_init(Dims{2, 3, 4}, 1e-12, r2).squared_norm(), 1e-20);
  EXPECT_THROW(gaussian_init(Dims{1, 1, 1}, 0.0, r2), DomainError);
}

TEST(GaussianInit, Reproducible) {
  Rng a = make_rng(12), b = make_rng(12);
  const Weights x = gaussian_init(Dims{2, 3, 4}, 1.0, a), y = gaussian_init(Dims{2, 3, 4}, 1.0, b);
  EXPECT_EQ(x.w1, y.w1);
  EXPECT_EQ(x.w2, y.w2);
}

TEST(EpsilonInit, Properties) {
  Rng rng = make_rng(13);
  const DataMatrix y(gaussian_matrix(2, 5, rng));
  const BalancedMinimizer m = balanced_minimizer(y, 4, 0.5, rng);
  const Weights same = epsilon_init(m, 0.0, rng);
  EXPECT_EQ(same.w1, m.weights.w1);
  EXPECT_EQ(same.w2, m.weights.w2);

  // ||init - W*|| / eps is chi with d = ef + fh degrees of freedom.
  const double d = 2 * 4 + 4 * 5;
  const double mean = std::sqrt(d - 0.5), sd = std::sqrt(0.5);
  int inside = 0;
  for (int k = 0; k < 200; ++k) {
    const double r = std::sqrt((epsilon_init(m, 1e-3, rng) - m.weights).squared_norm()) / 1e-3;
    inside += std::abs(r - mean) < 3.0 * sd;
  }
  EXPECT_GE(inside, 190);
  EXPECT_THROW(epsilon_init(m, -1.0, rng), DomainError);

  Rng a = make_rng(14), b = make_rng(14);
  EXPECT_EQ(epsilon_init(m, 0.1, a).w1, epsilon_init(m, 0.1, b).w1);
}
