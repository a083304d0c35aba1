#pragma once

// Gradient descent on the dropout objective or the scaled risk, masked SGD,
// the gradient-norm stopping rule, and drift of the diagonal balance quantity
// Diag(W1 W1^T) - Diag(W2^T W2), which gradient flow conserves.

#include <functional>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include "droprate/calculus.hpp"

namespace droprate {

struct StopRule {
  double grad_tol = 1e-5;
  long t_max = 500000;

  void validate() const {
    if (!(grad_tol > 0.0)) throw ConfigError("grad_tol must be positive");
    if (t_max < 1) throw ConfigError("t_max must be at least 1");
  }
};

enum class Termination { GradTol, TMax };

inline std::string_view to_string(Termination t) { return t == Termination::GradTol ? "grad_tol" : "t_max"; }

struct ScaledObjective {
  double lambda = 0.0;
};

/// Either the dropout objective J for a spec or the scaled risk I(lambda).
using FlowObjective = std::variant<DropoutSpec, ScaledObjective>;

inline double objective_value(const DataMatrix& y, const Weights& w, const FlowObjective& obj) {
  if (const auto* spec = std::get_if<DropoutSpec>(&obj)) return dropout_objective(y, w, *spec);
  return scaled_risk(y, w, std::get<ScaledObjective>(obj).lambda);
}

inline Gradient objective_gradient(const DataMatrix& y, const Weights& w, const FlowObjective& obj) {
  if (const auto* spec = std::get_if<DropoutSpec>(&obj)) return grad_dropout(y, w, *spec);
  return grad_scaled(y, w, std::get<ScaledObjective>(obj).lambda);
}

inline VectorXd balance_quantity(const Weights& w) {
  return w.w1.rowwise().squaredNorm() - w.w2.colwise().squaredNorm().transpose();
}

struct Trajectory {
  std::vector<long> t;
  std::vector<double> grad_norms;
  std::vector<double> losses;
  std::vector<double> balance_drift;
  long T = 0;
  Termination terminated_by = Termination::TMax;
  Weights final_weights;
  long record_stride = 1;
  bool monotone = true;  // no loss increase observed at any step
  std::vector<Weights> snapshots;  // only filled when requested, one per record
};

class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, long iteration, Weights last_finite)
      : NumericError(what), iteration_(iteration), last_finite_(std::move(last_finite)) {}
  long iteration() const noexcept { return iteration_; }
  const Weights& last_finite() const noexcept { return last_finite_; }

 private:
  long iteration_;
  Weights last_finite_;
};

struct RunOptions {
  long stride = 0;  // 0 picks 1 when t_max <= 1e5, else 10
  bool keep_snapshots = false;
  double divergence_factor = 1e6;
};

inline long default_stride(const StopRule& stop) { return stop.t_max <= 100000 ? 1 : 10; }

namespace detail {

using DirectionFn = std::function<Gradient(const Weights&, long, const Gradient& exact)>;
using StepFn = std::function<double(long)>;

inline Trajectory descend(const DataMatrix& y, Weights w, const FlowObjective& obj, const StepFn& step,
                          const DirectionFn& direction, const StopRule& stop, const RunOptions& opt) {
  stop.validate();
  detail::check_shapes(y, w);
  Trajectory tr;
  tr.record_stride = opt.stride > 0 ? opt.stride : default_stride(stop);
  const VectorXd balance0 = balance_quantity(w);
  const double initial_loss = objective_value(y, w, obj);
  if (!std::isfinite(initial_loss) || !w.all_finite())
    throw DivergenceError("initial point is not finite", 0, w);
  double previous_loss = initial_loss;

  auto record = [&](long t, double gnorm, double loss) {
    tr.t.push_back(t);
    tr.grad_norms.push_back(gnorm);
    tr.losses.push_back(loss);
    tr.balance_drift.push_back((balance_quantity(w) - balance0).cwiseAbs().maxCoeff());
    if (opt.keep_snapshots) tr.snapshots.push_back(w);
  };

  for (long t = 0;; ++t) {
    const double loss = t == 0 ? initial_loss : objective_value(y, w, obj);
    const Gradient g = objective_gradient(y, w, obj);
    const double gnorm = g.norm();
    if (!std::isfinite(loss) || !std::isfinite(gnorm) ||
        (initial_loss > 0.0 && loss > opt.divergence_factor * initial_loss))
      throw DivergenceError("iteration diverged at t=" + std::to_string(t), t, w);
    if (t > 0 && loss > previous_loss + 1e-12 * std::abs(previous_loss)) tr.monotone = false;
    previous_loss = loss;

    const bool converged = gnorm < stop.grad_tol;
    const bool exhausted = t >= stop.t_max;
    if (converged || exhausted) {
      record(t, gnorm, loss);
      tr.T = t;
      tr.terminated_by = converged ? Termination::GradTol : Termination::TMax;
      tr.final_weights = std::move(w);
      return tr;
    }
    if (t % tr.record_stride == 0) record(t, gnorm, loss);

    const Gradient d = direction(w, t, g);
    const double eta = step(t);
    Weights next{w.w2 - eta * d.g2, w.w1 - eta * d.g1};
    if (!next.all_finite()) throw DivergenceError("iteration diverged at t=" + std::to_string(t + 1), t + 1, w);
    w = std::move(next);
  }
}

}  // namespace detail

/// Fixed-step gradient descent W <- W - eta grad(W) until the gradient norm
/// drops below stop.grad_tol or t reaches stop.t_max.
inline Trajectory gd_run(const DataMatrix& y, const Weights& w0, const FlowObjective& obj, double eta,
                         const StopRule& stop = {}, const RunOptions& opt = {}) {
  if (!(eta > 0.0)) throw ConfigError("step size must be positive");
  return detail::descend(
      y, w0, obj, [eta](long) { return eta; },
      [](const Weights&, long, const Gradient& exact) { return exact; }, stop, opt);
}

using StepSchedule = std::function<double(long)>;

/// Masked SGD on the dropout objective: each step follows the gradient of
/// the plain risk under a freshly drawn mask. The stop rule still reads the
/// exact gradient of J.
inline Trajectory sgd_run(const DataMatrix& y, const Weights& w0, const DropoutSpec& spec,
                          const StepSchedule& schedule, const StopRule& stop, Rng& rng,
                          const RunOptions& opt = {}) {
  auto step = [&schedule](long t) {
    const double eta = schedule(t);
    if (!(eta > 0.0)) throw ConfigError("step schedule must stay positive");
    return eta;
  };
  return detail::descend(
      y, w0, FlowObjective{spec}, step,
      [&](const Weights& w, long, const Gradient&) { return stochastic_direction(y, w, spec, rng); }, stop,
      opt);
}

/// Largest recorded deviation of the balance quantity from its initial value.
inline double balance_drift_max(const Trajectory& tr) {
  double m = 0.0;
  for (double d : tr.balance_drift) m = std::max(m, d);
  return m;
}

}  // namespace droprate
