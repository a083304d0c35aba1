#pragma once

// Two-step rate fitting: log-linear tail fits of gradient-norm decay, then
// hyper-model fits of the averaged rates against p (fixed f) or f (fixed p).

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "droprate/errors.hpp"

namespace droprate {

class FitError : public NumericError {
 public:
  using NumericError::NumericError;
};

struct TailFit {
  double a_hat = 0.0;
  double beta_hat = 0.0;
  double gamma = 0.0;
  double rss = 0.0;  // in log space
  long n_points = 0;
};

/// Least squares of log(value) on t over points with t >= floor(gamma * T),
/// T the last time in the series: beta = -slope, a = exp(intercept).
inline TailFit exp_tail_fit(const std::vector<std::pair<double, double>>& series, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("gamma must lie in [0,1)");
  if (series.empty()) throw FitError("empty series");
  const double T = series.back().first;
  const double start = std::floor(gamma * T);

  std::vector<double> ts, ls;
  for (const auto& [t, v] : series) {
    if (t < start) continue;
    if (!(v > 0.0) || !std::isfinite(v)) throw FitError("nonpositive value in the tail window");
    ts.push_back(t);
    ls.push_back(std::log(v));
  }
  const auto n = static_cast<long>(ts.size());
  if (n < 3) throw FitError("fewer than 3 points in the tail window");

  double tm = 0.0, lm = 0.0;
  for (long i = 0; i < n; ++i) {
    tm += ts[i];
    lm += ls[i];
  }
  tm /= static_cast<double>(n);
  lm /= static_cast<double>(n);
  double stt = 0.0, stl = 0.0;
  for (long i = 0; i < n; ++i) {
    stt += (ts[i] - tm) * (ts[i] - tm);
    stl += (ts[i] - tm) * (ls[i] - lm);
  }
  if (!(stt > 0.0)) throw FitError("tail window has no spread in t");
  const double slope = stl / stt;
  const double intercept = lm - slope * tm;

  TailFit fit;
  fit.beta_hat = -slope;
  fit.a_hat = std::exp(intercept);
  fit.gamma = gamma;
  fit.n_points = n;
  for (long i = 0; i < n; ++i) {
    const double r = ls[i] - (intercept + slope * ts[i]);
    fit.rss += r * r;
  }
  return fit;
}

struct BetaAggregate {
  double mean = 0.0;
  long retained = 0;
};

/// Mean of the positive estimates; nonpositive ones are discarded.
inline BetaAggregate aggregate_beta(const std::vector<double>& betas) {
  BetaAggregate agg;
  for (double b : betas)
    if (b > 0.0) {
      agg.mean += b;
      ++agg.retained;
    }
  if (agg.retained == 0) throw FitError("no positive rate estimate to aggregate");
  agg.mean /= static_cast<double>(agg.retained);
  return agg;
}

inline BetaAggregate aggregate_beta(const std::vector<TailFit>& fits) {
  std::vector<double> b;
  b.reserve(fits.size());
  for (const auto& f : fits) b.push_back(f.beta_hat);
  return aggregate_beta(b);
}

enum class FitMode { VsP, VsF };

struct ModelFit {
  FitMode mode = FitMode::VsP;
  double b = 0.0;
  double c = 0.0;  // always 0 for VsP
  double alpha = 0.0;
  double rss = 0.0;
  int start_index = -1;  // multi-start that produced the result
  bool converged = false;
};

/// Raised when no multi-start converges; carries the lowest-rss attempt.
class ModelFitError : public FitError {
 public:
  ModelFitError(const std::string& what, ModelFit best) : FitError(what), best_(best) {}
  const ModelFit& best() const noexcept { return best_; }

 private:
  ModelFit best_;
};

/// beta_f(p) = b p / (f (p/(1-p))^alpha + 1)
inline double model_vs_p(double p, double f, double b, double alpha) {
  return b * p / (f * std::pow(p / (1.0 - p), alpha) + 1.0);
}

/// beta_p(f) = b p (1-p) / (p f^alpha + 1 - p) + c
inline double model_vs_f(double f, double p, double b, double c, double alpha) {
  return b * p * (1.0 - p) / (p * std::pow(f, alpha) + 1.0 - p) + c;
}

namespace detail {

struct LmResult {
  Eigen::VectorXd theta;
  double rss = std::numeric_limits<double>::infinity();
  bool converged = false;
};

// residuals(theta, r, J) fills r (m) and J (m x n).
template <class Residuals>
LmResult damped_gauss_newton(const Residuals& residuals, Eigen::VectorXd theta, int max_iter = 2000) {
  const Eigen::Index n = theta.size();
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  residuals(theta, r, J);
  double rss = r.squaredNorm();
  LmResult out{theta, rss, false};
  if (!std::isfinite(rss)) return out;
  double mu = 1e-3;

  for (int it = 0; it < max_iter; ++it) {
    if (rss == 0.0) {
      out.converged = true;
      break;
    }
    const Eigen::MatrixXd jtj = J.transpose() * J;
    const Eigen::VectorXd jtr = J.transpose() * r;
    bool accepted = false;
    while (mu < 1e20) {
      Eigen::MatrixXd a = jtj;
      for (Eigen::Index i = 0; i < n; ++i) a(i, i) += mu * std::max(jtj(i, i), 1e-300);
      const Eigen::VectorXd step = a.ldlt().solve(-jtr);
      const Eigen::VectorXd cand = theta + step;
      Eigen::VectorXd rc;
      Eigen::MatrixXd Jc;
      residuals(cand, rc, Jc);
      const double rss_c = rc.squaredNorm();
      if (std::isfinite(rss_c) && rss_c < rss) {
        const bool small = step.norm() <= 1e-10 * (theta.norm() + 1e-10);
        theta = cand;
        r = std::move(rc);
        J = std::move(Jc);
        rss = rss_c;
        mu = std::max(mu / 10.0, 1e-15);
        accepted = true;
        if (small) out.converged = true;
        break;
      }
      mu *= 10.0;
    }
    // No downhill step at any damping: a stationary point to working precision.
    if (!accepted) out.converged = true;
    out.theta = theta;
    out.rss = rss;
    if (out.converged) break;
  }
  out.theta = theta;
  out.rss = rss;
  return out;
}

template <class Residuals>
ModelFit multistart(FitMode mode, const Residuals& residuals, double b_ref, bool with_c) {
  constexpr std::array<double, 2> b_scales{0.3, 3.0};
  constexpr std::array<double, 4> alphas{0.25, 1.5, 2.75, 4.0};
  ModelFit best, fallback;
  best.mode = fallback.mode = mode;
  best.rss = fallback.rss = std::numeric_limits<double>::infinity();
  int index = 0;
  for (double bs : b_scales)
    for (double a0 : alphas) {
      Eigen::VectorXd theta(with_c ? 3 : 2);
      theta(0) = b_ref * bs;
      theta(1) = a0;
      if (with_c) theta(2) = 0.0;
      const LmResult r = damped_gauss_newton(residuals, theta);
      if (r.rss < fallback.rss) {
        fallback.b = r.theta(0);
        fallback.alpha = r.theta(1);
        fallback.c = with_c ? r.theta(2) : 0.0;
        fallback.rss = r.rss;
        fallback.start_index = index;
      }
      if (r.converged && r.rss < best.rss) {
        best.b = r.theta(0);
        best.alpha = r.theta(1);
        best.c = with_c ? r.theta(2) : 0.0;
        best.rss = r.rss;
        best.start_index = index;
        best.converged = true;
      }
      ++index;
    }
  if (!best.converged) throw ModelFitError("no multi-start converged", fallback);
  return best;
}

}  // namespace detail

/// Fit (b, alpha) of beta_f(p) to (p, mean beta) points at fixed f.
inline ModelFit fit_beta_vs_p(const std::vector<std::pair<double, double>>& points, double f) {
  if (points.size() < 3) throw PreconditionError("fit_beta_vs_p needs at least 3 points");
  for (const auto& [p, beta] : points)
    if (!(p > 0.0 && p < 1.0) || !std::isfinite(beta)) throw PreconditionError("p must lie in (0,1)");
  const auto m = static_cast<Eigen::Index>(points.size());
  auto residuals = [&](const Eigen::VectorXd& th, Eigen::VectorXd& r, Eigen::MatrixXd& J) {
    r.resize(m);
    J.resize(m, 2);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double p = points[static_cast<std::size_t>(i)].first;
      const double q = p / (1.0 - p);
      const double qa = std::pow(q, th(1));
      const double den = f * qa + 1.0;
      r(i) = th(0) * p / den - points[static_cast<std::size_t>(i)].second;
      J(i, 0) = p / den;
      J(i, 1) = -th(0) * p * f * qa * std::log(q) / (den * den);
    }
  };
  // b enters linearly; its least-squares value at alpha = 1 anchors the starts.
  double num = 0.0, den = 0.0;
  for (const auto& [p, beta] : points) {
    const double g = model_vs_p(p, f, 1.0, 1.0);
    num += g * beta;
    den += g * g;
  }
  const double b_ref = den > 0.0 && num > 0.0 ? num / den : 1.0;
  return detail::multistart(FitMode::VsP, residuals, b_ref, false);
}

/// Fit (b, c, alpha) of beta_p(f) to (f, mean beta) points at fixed p.
inline ModelFit fit_beta_vs_f(const std::vector<std::pair<double, double>>& points, double p) {
  if (points.size() < 4) throw PreconditionError("fit_beta_vs_f needs at least 4 points");
  if (!(p > 0.0 && p < 1.0)) throw PreconditionError("p must lie in (0,1)");
  for (const auto& [f, beta] : points)
    if (!(f > 0.0) || !std::isfinite(beta)) throw PreconditionError("f must be positive");
  const auto m = static_cast<Eigen::Index>(points.size());
  auto residuals = [&](const Eigen::VectorXd& th, Eigen::VectorXd& r, Eigen::MatrixXd& J) {
    r.resize(m);
    J.resize(m, 3);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double f = points[static_cast<std::size_t>(i)].first;
      const double fa = std::pow(f, th(1));
      const double den = p * fa + 1.0 - p;
      r(i) = th(0) * p * (1.0 - p) / den + th(2) - points[static_cast<std::size_t>(i)].second;
      J(i, 0) = p * (1.0 - p) / den;
      J(i, 1) = -th(0) * p * (1.0 - p) * p * fa * std::log(f) / (den * den);
      J(i, 2) = 1.0;
    }
  };
  double num = 0.0, den = 0.0;
  for (const auto& [f, beta] : points) {
    const double g = model_vs_f(f, p, 1.0, 0.0, 1.0);
    num += g * beta;
    den += g * g;
  }
  const double b_ref = den > 0.0 && num > 0.0 ? num / den : 1.0;
  return detail::multistart(FitMode::VsF, residuals, b_ref, true);
}

}  // namespace droprate
