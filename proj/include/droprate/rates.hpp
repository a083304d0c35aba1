#pragma once

// Convergence-rate bounds for gradient flow on the scaled risk, their
// translation to the unscaled dropout objectives, and a numeric estimate
// taken from the Hessian spectrum at a balanced minimizer.

#include <optional>

#include "droprate/calculus.hpp"
#include "droprate/minimizers.hpp"

namespace droprate {

/// Explicit branch of the rate bound:
///   rho < f: 2 lambda kappa_rho rho / (f + lambda rho) - 2 sigma_{rho+1}
///   rho = f: 2 (sigma_rho - sigma_{rho+1})
inline double omega_explicit(const SpectralSummary& s) {
  const double next = s.sigma_at(s.rho + 1);
  if (s.rho < s.f) {
    const double rho = static_cast<double>(s.rho);
    return 2.0 * s.lambda * s.kappa(s.rho - 1) * rho / (static_cast<double>(s.f) + s.lambda * rho) -
           2.0 * next;
  }
  return 2.0 * (s.sigma_at(s.rho) - next);
}

/// Closed-form rate for one-dimensional output: 2 lambda sigma_1 / (f + lambda).
inline double omega_e1(double sigma1, Index f, double lambda) {
  return 2.0 * lambda * sigma1 / (static_cast<double>(f) + lambda);
}

/// Rate of the unscaled objective for e = 1 (the scaled rate times p or p^2):
///   Dropout     2p(1-p) sigma_1 / (pf + 1 - p)
///   Dropconnect 2p^2(1-p^2) sigma_1 / (p^2 f + 1 - p^2)
inline double omega_unscaled(const DropoutSpec& spec, double sigma1, Index f) {
  const double a = spec.product_scale();
  return 2.0 * a * (1.0 - a) * sigma1 / (a * static_cast<double>(f) + 1.0 - a);
}

/// Retain probability maximizing omega_unscaled.
inline double optimal_p(Variant v, Index f) {
  if (f < 1) throw DomainError("hidden width must be at least 1");
  const double root = std::sqrt(static_cast<double>(f));
  return v == Variant::Dropout ? 1.0 / (1.0 + root) : 1.0 / std::sqrt(1.0 + root);
}

struct NumericRate {
  double value = 0.0;     // smallest eigenvalue above tau
  double tau = 0.0;
  Index kernel_dim = 0;   // eigenvalues with |ev| < tau
  double min_eigenvalue = 0.0;
};

/// Smallest Hessian eigenvalue above the kernel cut, at a certified minimizer.
/// tau <= 0 selects 1e-6 times the spectral radius.
inline NumericRate omega_numeric(const DataMatrix& y, const Weights& wstar, double lambda,
                                 double tau = 0.0) {
  const VectorXd ev = spectrum(hessian_scaled(y, wstar, lambda));
  NumericRate out;
  out.tau = tau > 0.0 ? tau : default_kernel_tau(ev);
  out.kernel_dim = kernel_dim(ev, out.tau);
  out.min_eigenvalue = ev(0);
  for (Index i = 0; i < ev.size(); ++i)
    if (ev(i) > out.tau) {
      out.value = ev(i);
      return out;
    }
  throw NumericError("every Hessian eigenvalue lies below the kernel cut");
}

inline NumericRate omega_numeric(const DataMatrix& y, const BalancedMinimizer& wstar, double tau = 0.0) {
  if (!wstar.certified()) throw PreconditionError("minimizer failed its certificate");
  return omega_numeric(y, wstar.weights, wstar.summary.lambda, tau);
}

struct RateReport {
  double omega_explicit = 0.0;
  std::optional<double> omega_e1;
  double omega_unscaled = 0.0;
  std::optional<double> omega_numeric;
  // The full bound is min(explicit, zeta_W) and zeta_W has no closed form;
  // omega_numeric is the only stand-in for it.
  bool zeta_flag = true;
};

/// omega_unscaled applies the closed form when e = 1; otherwise it maps the
/// explicit branch to unscaled time by the same factor p or p^2.
inline RateReport rate_report(const DataMatrix& y, const DropoutSpec& spec, Index f,
                              const BalancedMinimizer* wstar = nullptr, double tau = 0.0) {
  RateReport r;
  const SpectralSummary s = spectral_summary(y, f, spec.lambda());
  r.omega_explicit = omega_explicit(s);
  if (y.e() == 1) {
    r.omega_e1 = omega_e1(y.singular(1), f, spec.lambda());
    r.omega_unscaled = omega_unscaled(spec, y.singular(1), f);
    r.zeta_flag = false;
  } else {
    r.omega_unscaled = spec.product_scale() * r.omega_explicit;
  }
  if (wstar != nullptr) r.omega_numeric = omega_numeric(y, *wstar, tau).value;
  return r;
}

}  // namespace droprate
