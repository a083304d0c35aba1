#pragma once

// Deterministic parallel sweeps over (f, p, replicate), the rates table, and
// their CSV forms.

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "droprate/config.hpp"
#include "droprate/csv.hpp"
#include "droprate/fitting.hpp"
#include "droprate/flow.hpp"
#include "droprate/minimizers.hpp"
#include "droprate/rates.hpp"

namespace droprate {

/// Runs fn(0..n-1) on up to `jobs` threads. Results must be written by index;
/// the first exception escaping fn is rethrown after all workers stop.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::mutex m;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; !failed && (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!failure) failure = std::current_exception();
          failed = true;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// Seed path tags; replicates use their index directly.
inline constexpr std::uint64_t kMinimizerTag = 0xFFFF0001ULL;

struct RunRow {
  Index f = 0;
  double p = 0.0;
  std::uint64_t seed = 0;
  long T = 0;
  std::optional<Termination> terminated_by;
  std::optional<TailFit> fit;
  std::string status = "ok";
};

struct CellAggregate {
  Index f = 0;
  double p = 0.0;
  std::optional<double> beta_mean;
  long retained = 0;
};

struct SweepResult {
  SweepConfig config;
  std::vector<RunRow> runs;  // ordered by (f index, p index, replicate)
  std::vector<CellAggregate> cells;
};

namespace detail {

inline std::string error_status(const char* kind, const std::exception& e) {
  std::string s = std::string(kind) + ": " + e.what();
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

}  // namespace detail

/// Gradient descent on the dropout objective for every (f, p, replicate).
/// Epsilon starts are centred on one balanced minimizer per cell, mapped back
/// to unscaled coordinates.
inline SweepResult run_sweep(const SweepConfig& cfg, const DataMatrix& y, int jobs = 1) {
  cfg.validate();
  SweepResult out;
  out.config = cfg;
  const std::size_t nf = cfg.f_list.size(), np = cfg.p_list.size();
  const auto reps = static_cast<std::size_t>(cfg.replicates);

  std::vector<std::optional<Weights>> centers(nf * np);
  std::vector<std::string> center_errors(nf * np);
  if (cfg.init.kind == InitSpec::Kind::Epsilon) {
    parallel_for(nf * np, jobs, [&](std::size_t c) {
      const std::size_t fi = c / np, pi = c % np;
      try {
        const DropoutSpec spec(cfg.variant, cfg.p_list[pi]);
        Rng rng = make_rng(derive_seed(cfg.master_seed, {fi, pi, kMinimizerTag}));
        const BalancedMinimizer m = balanced_minimizer(y, cfg.f_list[fi], spec.lambda(), rng);
        if (!m.certified()) throw NumericError("balanced minimizer failed its certificate");
        centers[c] = scale_from_scaled(m.weights, spec);
      } catch (const std::exception& e) {
        center_errors[c] = detail::error_status("minimizer_error", e);
      }
    });
  }

  out.runs.resize(nf * np * reps);
  parallel_for(out.runs.size(), jobs, [&](std::size_t k) {
    const std::size_t c = k / reps, rep = k % reps;
    const std::size_t fi = c / np, pi = c % np;
    RunRow& row = out.runs[k];
    row.f = cfg.f_list[fi];
    row.p = cfg.p_list[pi];
    row.seed = derive_seed(cfg.master_seed, {fi, pi, rep});
    try {
      const DropoutSpec spec(cfg.variant, row.p);
      Rng rng = make_rng(row.seed);
      Weights w0;
      if (cfg.init.kind == InitSpec::Kind::Gaussian) {
        w0 = gaussian_init(Dims{y.e(), row.f, y.h()}, cfg.init.scale, rng);
      } else {
        if (!centers[c]) {
          row.status = center_errors[c];
          return;
        }
        w0 = epsilon_init(*centers[c], cfg.init.scale, rng);
      }
      RunOptions opt;
      opt.stride = cfg.stride;
      const Trajectory tr = gd_run(y, w0, FlowObjective{spec}, cfg.eta, cfg.stop, opt);
      row.T = tr.T;
      row.terminated_by = tr.terminated_by;
      if (tr.terminated_by != Termination::GradTol) {
        row.status = "fit_skipped: reached t_max";
        return;
      }
      std::vector<std::pair<double, double>> series;
      series.reserve(tr.t.size());
      for (std::size_t i = 0; i < tr.t.size(); ++i)
        series.emplace_back(static_cast<double>(tr.t[i]), tr.grad_norms[i]);
      try {
        row.fit = exp_tail_fit(series, cfg.gamma);
      } catch (const FitError& e) {
        row.status = detail::error_status("fit_skipped", e);
      }
    } catch (const DivergenceError& e) {
      row.T = e.iteration();
      row.status = detail::error_status("diverged", e);
    } catch (const std::exception& e) {
      row.status = detail::error_status("error", e);
    }
  });

  for (std::size_t c = 0; c < nf * np; ++c) {
    CellAggregate agg;
    agg.f = cfg.f_list[c / np];
    agg.p = cfg.p_list[c % np];
    std::vector<double> betas;
    for (std::size_t r = 0; r < reps; ++r)
      if (const auto& fit = out.runs[c * reps + r].fit) betas.push_back(fit->beta_hat);
    try {
      const BetaAggregate a = aggregate_beta(betas);
      agg.beta_mean = a.mean;
      agg.retained = a.retained;
    } catch (const FitError&) {
    }
    out.cells.push_back(agg);
  }
  return out;
}

inline constexpr const char* kSweepHeader = "f,p,variant,init,scale,seed,eta,T,terminated_by,beta_hat,a_hat,rss,status";

/// One row per run, then one aggregate row per cell (status "aggregate:N",
/// N the number of positive estimates averaged into beta_hat).
inline void write_sweep_csv(std::ostream& os, const SweepResult& r) {
  const SweepConfig& cfg = r.config;
  const std::string variant(to_string(cfg.variant));
  const std::string init = cfg.init.name();
  const std::string scale = csv::format(cfg.init.scale);
  const std::string eta = csv::format(cfg.eta);
  csv::Writer w{os};
  os << kSweepHeader << '\n';
  for (const RunRow& run : r.runs) {
    const bool fitted = run.fit.has_value();
    w.row({std::to_string(run.f), csv::format(run.p), variant, init, scale, std::to_string(run.seed), eta,
           std::to_string(run.T), run.terminated_by ? std::string(to_string(*run.terminated_by)) : "",
           fitted ? csv::format(run.fit->beta_hat) : "", fitted ? csv::format(run.fit->a_hat) : "",
           fitted ? csv::format(run.fit->rss) : "", run.status});
  }
  for (const CellAggregate& c : r.cells)
    w.row({std::to_string(c.f), csv::format(c.p), variant, init, scale, "", eta, "", "",
           c.beta_mean ? csv::format(*c.beta_mean) : "", "", "", "aggregate:" + std::to_string(c.retained)});
}

struct RatesRow {
  Index f = 0;
  double p = 0.0;
  double omega_explicit = 0.0;
  std::optional<double> omega_e1;
  double omega_unscaled = 0.0;
  std::optional<double> omega_numeric;
  double p_star = 0.0;
  std::string status = "ok";
};

/// Default cap on the Hessian dimension (e + h) f for the numeric rate.
inline constexpr Index kMaxHessianDim = 2000;

inline std::vector<RatesRow> rates_table(const SweepConfig& cfg, const DataMatrix& y, int jobs = 1,
                                         Index max_hessian_dim = kMaxHessianDim) {
  cfg.validate();
  const std::size_t nf = cfg.f_list.size(), np = cfg.p_list.size();
  std::vector<RatesRow> rows(nf * np);
  parallel_for(rows.size(), jobs, [&](std::size_t c) {
    const std::size_t fi = c / np, pi = c % np;
    RatesRow& row = rows[c];
    row.f = cfg.f_list[fi];
    row.p = cfg.p_list[pi];
    try {
      row.p_star = optimal_p(cfg.variant, row.f);
      const DropoutSpec spec(cfg.variant, row.p);
      const RateReport rep = rate_report(y, spec, row.f);
      row.omega_explicit = rep.omega_explicit;
      row.omega_e1 = rep.omega_e1;
      row.omega_unscaled = rep.omega_unscaled;
      if ((y.e() + y.h()) * row.f > max_hessian_dim) {
        row.status = "numeric_skipped: hessian too large";
        return;
      }
      Rng rng = make_rng(derive_seed(cfg.master_seed, {fi, pi, kMinimizerTag}));
      const BalancedMinimizer m = balanced_minimizer(y, row.f, spec.lambda(), rng);
      if (!m.certified()) {
        row.status = "numeric_skipped: minimizer failed its certificate";
        return;
      }
      row.omega_numeric = omega_numeric(y, m).value;
    } catch (const std::exception& e) {
      row.status = detail::error_status("error", e);
    }
  });
  return rows;
}

inline constexpr const char* kRatesHeader = "f,p,omega_explicit,omega_e1,omega_unscaled,omega_numeric,p_star";

inline void write_rates_csv(std::ostream& os, const std::vector<RatesRow>& rows) {
  csv::Writer w{os};
  os << kRatesHeader << '\n';
  for (const RatesRow& r : rows)
    w.row({std::to_string(r.f), csv::format(r.p), csv::format(r.omega_explicit),
           r.omega_e1 ? csv::format(*r.omega_e1) : "", csv::format(r.omega_unscaled),
           r.omega_numeric ? csv::format(*r.omega_numeric) : "", csv::format(r.p_star)});
}

inline constexpr const char* kTrajectoryHeader = "t,grad_norm,loss,balance_drift";

inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  csv::Writer w{os};
  os << kTrajectoryHeader << '\n';
  for (std::size_t i = 0; i < tr.t.size(); ++i)
    w.row({std::to_string(tr.t[i]), csv::format(tr.grad_norms[i]), csv::format(tr.losses[i]),
           csv::format(tr.balance_drift[i])});
}

}  // namespace droprate
