// droprate: command-line front end for ingest, minimize, run, sweep, fit and rates.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>

#include "droprate/droprate.hpp"

namespace {

using namespace droprate;
using nlohmann::json;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

DataMatrix load_y(const std::string& path) {
  const csv::Table t = csv::read_numeric_file(path);
  DataMatrix y(t.values);
  std::clog << "loaded Y " << y.e() << "x" << y.h() << " (rank " << y.rank() << ") from " << path << '\n';
  return y;
}

json matrix_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

json weights_json(const Weights& w) { return {{"w2", matrix_json(w.w2)}, {"w1", matrix_json(w.w1)}}; }

void write_json(const std::string& path, const json& j) {
  auto out = open_out(path);
  out << std::setprecision(17) << j.dump(2) << '\n';
}

struct IngestArgs {
  std::string x, y, out;
  bool no_normalize = false;
  bool samples_as_columns = false;
};

int do_ingest(const IngestArgs& a) {
  const RawDataset raw = ingest_csv(a.x, a.y, !a.samples_as_columns);
  std::clog << "X " << raw.X.rows() << "x" << raw.X.cols() << ", Y " << raw.Yraw.rows() << "x" << raw.Yraw.cols()
            << '\n';
  const Whitened w = whiten(raw, !a.no_normalize);
  if (!w.identity_holds())
    std::clog << "warning: whitening identity spot check off by " << w.identity_gap << '\n';
  auto out = open_out(a.out);
  csv::write_matrix(out, w.y.values());
  std::clog << "wrote whitened Y " << w.y.e() << "x" << w.y.h() << " (cond " << w.condition << ")\n";
  return 0;
}

struct ProblemArgs {
  std::string y;
  Index f = 1;
  double p = 0.5;
  std::string variant = "dropout";
};

struct MinimizeArgs {
  ProblemArgs prob;
  std::string out;
  std::uint64_t seed = 0;
};

int do_minimize(const MinimizeArgs& a) {
  const DataMatrix y = load_y(a.prob.y);
  const DropoutSpec spec(parse_variant(a.prob.variant), a.prob.p);
  Rng rng = make_rng(derive_seed(a.seed, {kMinimizerTag}));
  const BalancedMinimizer m = balanced_minimizer(y, a.prob.f, spec.lambda(), rng);
  const auto& s = m.summary;
  json j;
  j["variant"] = std::string(to_string(spec.variant()));
  j["p"] = spec.p();
  j["f"] = a.prob.f;
  j["lambda"] = s.lambda;
  j["rho"] = s.rho;
  j["alpha"] = s.alpha;
  j["sigma_sq"] = std::vector<double>(s.sigma_sq.data(), s.sigma_sq.data() + s.sigma_sq.size());
  j["certified"] = m.certified();
  j["certificate"] = {{"grad_norm", m.certificate.grad_norm},
                      {"product_error", m.certificate.product_error},
                      {"diag_error", m.certificate.diag_error},
                      {"balance_error", m.certificate.balance_error}};
  j["scaled"] = weights_json(m.weights);
  j["unscaled"] = weights_json(scale_from_scaled(m.weights, spec));
  j["objective"] = dropout_objective(y, scale_from_scaled(m.weights, spec), spec);
  write_json(a.out, j);
  if (!m.certified()) {
    std::cerr << "minimizer failed its certificate\n";
    return 4;
  }
  return 0;
}

struct RunArgs {
  ProblemArgs prob;
  std::string init, out;
  double eta = 1e-2;
  std::uint64_t seed = 0;
  StopRule stop;
  long stride = 0;
};

int do_run(const RunArgs& a) {
  const DataMatrix y = load_y(a.prob.y);
  const DropoutSpec spec(parse_variant(a.prob.variant), a.prob.p);
  const InitSpec init = parse_init(a.init);
  Rng rng = make_rng(a.seed);
  Weights w0;
  if (init.kind == InitSpec::Kind::Gaussian) {
    w0 = gaussian_init(Dims{y.e(), a.prob.f, y.h()}, init.scale, rng);
  } else {
    Rng mrng = make_rng(derive_seed(a.seed, {kMinimizerTag}));
    const BalancedMinimizer m = balanced_minimizer(y, a.prob.f, spec.lambda(), mrng);
    if (!m.certified()) throw NumericError("balanced minimizer failed its certificate");
    w0 = epsilon_init(scale_from_scaled(m.weights, spec), init.scale, rng);
  }
  RunOptions opt;
  opt.stride = a.stride;
  const Trajectory tr = gd_run(y, w0, FlowObjective{spec}, a.eta, a.stop, opt);
  auto out = open_out(a.out);
  write_trajectory_csv(out, tr);
  std::clog << "T=" << tr.T << " terminated_by=" << to_string(tr.terminated_by) << " final grad_norm="
            << tr.grad_norms.back() << '\n';
  return 0;
}

struct SweepArgs {
  std::string config, out, y;
  int jobs = 1;
};

int do_sweep(const SweepArgs& a) {
  const SweepConfig cfg = load_config(a.config);
  const DataMatrix y = load_y(a.y);
  const SweepResult r = run_sweep(cfg, y, a.jobs);
  auto out = open_out(a.out);
  write_sweep_csv(out, r);
  long fitted = 0;
  for (const auto& run : r.runs) fitted += run.fit.has_value();
  std::clog << r.runs.size() << " runs, " << fitted << " fitted\n";
  return 0;
}

struct FitArgs {
  std::string in, mode, out;
  double gamma = 0.9;
};

double cell_number(const std::string& s, const char* column) {
  const auto v = csv::parse_number(s);
  if (!v) throw DataError(std::string("column ") + column + " holds a non-number: " + s);
  return *v;
}

json model_fit_json(const ModelFit& m) {
  json j{{"b", m.b}, {"alpha", m.alpha}, {"rss", m.rss}};
  if (m.mode == FitMode::VsF) j["c"] = m.c;
  return j;
}

int do_fit(const FitArgs& a) {
  std::ifstream in(a.in);
  if (!in) throw DataError("cannot open " + a.in);
  const csv::TextTable t = csv::read_text(in);
  json j;
  j["mode"] = a.mode;
  j["gamma"] = a.gamma;

  if (a.mode == "tail") {
    const std::size_t ct = t.column("t"), cg = t.column("grad_norm");
    std::vector<std::pair<double, double>> series;
    for (const auto& r : t.rows) series.emplace_back(cell_number(r[ct], "t"), cell_number(r[cg], "grad_norm"));
    const TailFit fit = exp_tail_fit(series, a.gamma);
    j["a_hat"] = fit.a_hat;
    j["beta_hat"] = fit.beta_hat;
    j["rss"] = fit.rss;
    j["n_points"] = fit.n_points;
    write_json(a.out, j);
    return 0;
  }
  if (a.mode != "vs_p" && a.mode != "vs_f") throw ConfigError("mode must be vs_p, vs_f or tail");

  // Aggregate rows of a sweep table: one mean rate per (f, p) cell.
  const std::size_t cf = t.column("f"), cp = t.column("p"), cb = t.column("beta_hat"), cs = t.column("status");
  std::map<double, std::vector<std::pair<double, double>>> groups;  // fixed value -> (x, beta)
  for (const auto& r : t.rows) {
    if (r[cs].rfind("aggregate:", 0) != 0 || r[cb].empty()) continue;
    const double f = cell_number(r[cf], "f"), p = cell_number(r[cp], "p");
    const double beta = cell_number(r[cb], "beta_hat");
    if (a.mode == "vs_p")
      groups[f].emplace_back(p, beta);
    else
      groups[p].emplace_back(f, beta);
  }
  if (groups.empty()) throw DataError("no aggregate rows with a rate estimate in " + a.in);

  json fits = json::array();
  bool any_failed = false;
  for (const auto& [fixed, points] : groups) {
    json entry;
    entry[a.mode == "vs_p" ? "f" : "p"] = fixed;
    entry["n_points"] = points.size();
    try {
      const ModelFit m = a.mode == "vs_p" ? fit_beta_vs_p(points, fixed) : fit_beta_vs_f(points, fixed);
      entry["fit"] = model_fit_json(m);
      entry["status"] = "ok";
    } catch (const ModelFitError& e) {
      entry["fit"] = model_fit_json(e.best());
      entry["status"] = std::string("not_converged: ") + e.what();
      any_failed = true;
    } catch (const PreconditionError& e) {
      entry["status"] = std::string("skipped: ") + e.what();
      any_failed = true;
    }
    fits.push_back(std::move(entry));
  }
  j["fits"] = std::move(fits);
  write_json(a.out, j);
  bool any_ok = false;
  for (const auto& f : j["fits"]) any_ok |= f["status"] == "ok";
  if (!any_ok) {
    std::cerr << "no group could be fitted\n";
    return 4;
  }
  if (any_failed) std::clog << "warning: some groups were not fitted, see " << a.out << '\n';
  return 0;
}

struct RatesArgs {
  std::string y, config, out;
  int jobs = 1;
};

int do_rates(const RatesArgs& a) {
  const SweepConfig cfg = load_config(a.config);
  const DataMatrix y = load_y(a.y);
  const auto rows = rates_table(cfg, y, a.jobs);
  auto out = open_out(a.out);
  write_rates_csv(out, rows);
  for (const auto& r : rows)
    if (r.status != "ok") std::clog << "f=" << r.f << " p=" << r.p << ": " << r.status << '\n';
  return 0;
}

void add_problem(CLI::App* cmd, ProblemArgs& p) {
  cmd->add_option("--y", p.y, "whitened target CSV (e rows, h columns)")->required();
  cmd->add_option("--f", p.f, "hidden width")->required()->check(CLI::PositiveNumber);
  cmd->add_option("--p", p.p, "retain probability")->required();
  cmd->add_option("--variant", p.variant, "dropout or dropconnect")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dropout-regularized shallow linear networks"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "whiten raw (X, Y) data");
  c_ingest->add_option("--x", ingest.x, "features CSV, one sample per row")->required();
  c_ingest->add_option("--y", ingest.y, "targets CSV, one sample per row")->required();
  c_ingest->add_option("--out", ingest.out)->required();
  c_ingest->add_flag("--no-normalize", ingest.no_normalize, "keep the whitened scale");
  c_ingest->add_flag("--samples-as-columns", ingest.samples_as_columns, "input files hold one sample per column");

  MinimizeArgs minimize;
  auto* c_min = app.add_subcommand("minimize", "construct a balanced global minimizer");
  add_problem(c_min, minimize.prob);
  c_min->add_option("--out", minimize.out)->required();
  c_min->add_option("--seed", minimize.seed);

  RunArgs run;
  auto* c_run = app.add_subcommand("run", "one gradient descent trajectory");
  add_problem(c_run, run.prob);
  c_run->add_option("--init", run.init, "gaussian:SIGMA or epsilon:EPS")->required();
  c_run->add_option("--eta", run.eta);
  c_run->add_option("--seed", run.seed);
  c_run->add_option("--out", run.out)->required();
  c_run->add_option("--grad-tol", run.stop.grad_tol);
  c_run->add_option("--t-max", run.stop.t_max);
  c_run->add_option("--stride", run.stride, "record every k-th step (0: automatic)");

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "gradient descent over an (f, p, replicate) grid");
  c_sweep->add_option("--config", sweep.config)->required();
  c_sweep->add_option("--y", sweep.y, "whitened target CSV")->required();
  c_sweep->add_option("--out", sweep.out)->required();
  c_sweep->add_option("--jobs", sweep.jobs)->check(CLI::PositiveNumber);

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "fit rate models to sweep results or a trajectory");
  c_fit->add_option("--in", fit.in)->required();
  c_fit->add_option("--mode", fit.mode, "vs_p, vs_f or tail")->required();
  c_fit->add_option("--gamma", fit.gamma);
  c_fit->add_option("--out", fit.out)->required();

  RatesArgs rates;
  auto* c_rates = app.add_subcommand("rates", "closed-form and numeric convergence rates");
  c_rates->add_option("--y", rates.y)->required();
  c_rates->add_option("--config", rates.config)->required();
  c_rates->add_option("--out", rates.out)->required();
  c_rates->add_option("--jobs", rates.jobs)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*c_ingest) return do_ingest(ingest);
    if (*c_min) return do_minimize(minimize);
    if (*c_run) return do_run(run);
    if (*c_sweep) return do_sweep(sweep);
    if (*c_fit) return do_fit(fit);
    if (*c_rates) return do_rates(rates);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 4;
  }
  return 2;
}
