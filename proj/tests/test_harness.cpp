#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace droprate;
using namespace testing_support;

namespace {

SweepConfig small_config() {
  SweepConfig c;
  c.variant = Variant::Dropout;
  c.f_list = {2, 3};
  c.p_list = {0.5, 0.8};
  c.replicates = 2;
  c.init = parse_init("gaussian:0.3");
  c.stop = StopRule{1e-5, 20000};
  c.master_seed = 17;
  return c;
}

std::string sweep_csv(const SweepConfig& c, const DataMatrix& y, int jobs) {
  std::ostringstream os;
  write_sweep_csv(os, run_sweep(c, y, jobs));
  return os.str();
}

}  // namespace

TEST(Csv, RoundTripToyFile) {
  std::istringstream in("1.5,2,-3e-2\n4,5.25,6\n7,8,9\n");
  const csv::Table t = csv::read_numeric(in);
  EXPECT_TRUE(t.header.empty());
  MatrixXd expect(3, 3);
  expect << 1.5, 2, -3e-2, 4, 5.25, 6, 7, 8, 9;
  EXPECT_EQ(t.values, expect);

  Rng rng = make_rng(1);
  const MatrixXd m = gaussian_matrix(4, 3, rng);
  std::ostringstream os;
  csv::write_matrix(os, m);
  std::istringstream back(os.str());
  EXPECT_EQ(csv::read_numeric(back).values, m);
}

TEST(Csv, HeaderDetection) {
  std::istringstream in("temp, pressure\n1,2\n3,4\n");
  const csv::Table t = csv::read_numeric(in);
  ASSERT_EQ(t.header.size(), 2u);
  EXPECT_EQ(t.header[1], "pressure");
  EXPECT_EQ(t.values.rows(), 2);
}

TEST(Csv, RaggedRowNamesLine) {
  std::istringstream in("1,2,3\n4,5\n");
  try {
    csv::read_numeric(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
}

TEST(Csv, NonNumericCell) {
  std::istringstream in("a,b\n1,2\n3,x\n");
  try {
    csv::read_numeric(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
  std::istringstream empty("");
  EXPECT_THROW(csv::read_numeric(empty), ParseError);
  EXPECT_THROW(csv::read_numeric_file("/nonexistent/file.csv"), DataError);
}

TEST(Csv, FormatRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300})
    EXPECT_EQ(*csv::parse_number(csv::format(v)), v);
}

TEST(Whiten, IdentityFeatures) {
  Rng rng = make_rng(2);
  RawDataset raw{MatrixXd::Identity(4, 4), gaussian_matrix(2, 4, rng)};
  const Whitened w = whiten(raw, false);
  EXPECT_EQ(w.y.values(), raw.Yraw);
  EXPECT_TRUE(w.identity_holds());
  EXPECT_NEAR(whiten(raw, true).y.values().norm(), 1.0, 1e-15);
}

TEST(Whiten, DecompositionConstant) {
  Rng rng = make_rng(3);
  RawDataset raw{gaussian_matrix(4, 10, rng), gaussian_matrix(2, 10, rng)};
  const Whitened w = whiten(raw, false);
  EXPECT_TRUE(w.identity_holds());
  double lo = 1e300, hi = -1e300;
  for (int k = 0; k < 20; ++k) {
    const Weights wt = random_weights(Dims{2, 3, 4}, rng);
    const MatrixXd m = wt.product();
    const double c = (raw.Yraw - m * raw.X).squaredNorm() - (w.y.values() - m * w.sqrt_cov).squaredNorm();
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  EXPECT_LT(hi - lo, 1e-9 * std::max(1.0, std::abs(hi)));
}

TEST(Whiten, Conditioning) {
  Rng rng = make_rng(4);
  MatrixXd x = gaussian_matrix(3, 10, rng);
  x.row(2) = x.row(0) + x.row(1);
  EXPECT_THROW(whiten(RawDataset{x, gaussian_matrix(1, 10, rng)}), ConditioningError);
  EXPECT_THROW(whiten(RawDataset{gaussian_matrix(5, 3, rng), gaussian_matrix(1, 3, rng)}), ConditioningError);
  EXPECT_THROW(whiten(RawDataset{gaussian_matrix(2, 5, rng), gaussian_matrix(1, 4, rng)}), ShapeError);
  EXPECT_THROW(whiten(RawDataset{MatrixXd::Identity(2, 2), MatrixXd::Zero(1, 2)}), DegenerateDataError);
}

TEST(Config, ParsesAndValidates) {
  const auto j = nlohmann::json::parse(R"({"variant":"dropconnect","f_list":[2,4],"p_list":[0.5],
    "replicates":3,"init":"epsilon:1e-4","eta":0.02,"stop":{"grad_tol":1e-6,"t_max":1000},
    "gamma":0.8,"master_seed":5,"stride":2,"normalize_Y":false})");
  const SweepConfig c = parse_config(j);
  EXPECT_EQ(c.variant, Variant::Dropconnect);
  EXPECT_EQ(c.f_list, (std::vector<Index>{2, 4}));
  EXPECT_EQ(c.init.kind, InitSpec::Kind::Epsilon);
  EXPECT_EQ(c.init.scale, 1e-4);
  EXPECT_EQ(c.stop.t_max, 1000);
  EXPECT_EQ(c.stride, 2);
  EXPECT_FALSE(c.normalize_Y);

  const auto minimal = nlohmann::json::parse(R"({"variant":"dropout","f_list":[2],"p_list":[0.5],"init":"gaussian:0.1"})");
  const SweepConfig d = parse_config(minimal);
  EXPECT_EQ(d.eta, 1e-2);
  EXPECT_EQ(d.gamma, 0.9);
  EXPECT_TRUE(d.normalize_Y);
}

TEST(Config, Rejects) {
  const char* bad[] = {
      R"({"variant":"dropout","f_list":[],"p_list":[0.5],"init":"gaussian:0.1"})",
      R"({"variant":"dropout","f_list":[2],"p_list":[1.5],"init":"gaussian:0.1"})",
      R"({"variant":"dropout","f_list":[2],"p_list":[0.5],"init":"uniform:0.1"})",
      R"({"variant":"dropout","f_list":[2],"p_list":[0.5],"init":"gaussian:0.1","replicates":0})",
      R"({"variant":"dropout","f_list":[2],"p_list":[0.5],"init":"gaussian:0.1","eta":-1})",
      R"({"variant":"dropout","f_list":[2],"p_list":[0.5],"init":"gaussian:0.1","colour":"red"})",
      R"({"variant":"dropout","f_list":[2],"p_list":[0.5]})",
      R"({"variant":"dropout","f_list":"2","p_list":[0.5],"init":"gaussian:0.1"})",
      R"([1,2])",
  };
  for (const char* s : bad) EXPECT_THROW(parse_config(nlohmann::json::parse(s)), ConfigError) << s;
  EXPECT_THROW(load_config("/nonexistent.json"), ConfigError);
}

TEST(Sweep, MinimizerStartSkipsFit) {
  Rng rng = make_rng(5);
  const DataMatrix y = rank_one_row(4, rng);
  SweepConfig c;
  c.f_list = {3};
  c.p_list = {0.6};
  c.init = parse_init("epsilon:0");
  const SweepResult r = run_sweep(c, y);
  ASSERT_EQ(r.runs.size(), 1u);
  EXPECT_EQ(r.runs[0].T, 0);
  EXPECT_EQ(r.runs[0].terminated_by, Termination::GradTol);
  EXPECT_FALSE(r.runs[0].fit.has_value());
  EXPECT_NE(r.runs[0].status.find("fit_skipped"), std::string::npos);
  std::ostringstream os;
  write_sweep_csv(os, r);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), kSweepHeader);
  EXPECT_NE(os.str().find("aggregate:0"), std::string::npos);
}

TEST(Sweep, DeterministicAndJobIndependent) {
  Rng rng = make_rng(6);
  const DataMatrix y(gaussian_matrix(1, 4, rng));
  const SweepConfig c = small_config();
  const std::string a = sweep_csv(c, y, 1);
  EXPECT_EQ(a, sweep_csv(c, y, 1));
  EXPECT_EQ(a, sweep_csv(c, y, 8));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 1 + 8 + 4);
}

TEST(Sweep, AddingReplicatesKeepsExistingRuns) {
  Rng rng = make_rng(7);
  const DataMatrix y(gaussian_matrix(1, 4, rng));
  SweepConfig c = small_config();
  const SweepResult a = run_sweep(c, y);
  c.replicates = 3;
  const SweepResult b = run_sweep(c, y);
  EXPECT_EQ(a.runs[1].seed, b.runs[1].seed);
  EXPECT_EQ(a.runs[1].fit->beta_hat, b.runs[1].fit->beta_hat);
}

TEST(Sweep, TMaxRowsKeepEmptyRate) {
  Rng rng = make_rng(8);
  const DataMatrix y(gaussian_matrix(1, 4, rng));
  SweepConfig c = small_config();
  c.stop.t_max = 5;
  const SweepResult r = run_sweep(c, y);
  for (const auto& run : r.runs) {
    EXPECT_EQ(run.terminated_by, Termination::TMax);
    EXPECT_FALSE(run.fit.has_value());
  }
}

TEST(Sweep, DivergenceBecomesStatus) {
  Rng rng = make_rng(9);
  const DataMatrix y(gaussian_matrix(1, 4, rng));
  SweepConfig c = small_config();
  c.init = parse_init("gaussian:3");
  c.eta = 5.0;
  const SweepResult r = run_sweep(c, y, 2);
  for (const auto& run : r.runs) EXPECT_EQ(run.status.rfind("diverged", 0), 0u) << run.status;
}

TEST(Sweep, RateDecreasesWithWidth) {
  Rng rng = make_rng(10);
  const DataMatrix y = rank_one_row(10, rng);
  SweepConfig c;
  c.f_list = {4, 8, 16};
  c.p_list = {0.7};
  c.replicates = 5;
  c.init = parse_init("epsilon:1e-3");
  c.master_seed = 3;
  const SweepResult r = run_sweep(c, y);
  ASSERT_EQ(r.cells.size(), 3u);
  for (const auto& cell : r.cells) ASSERT_TRUE(cell.beta_mean.has_value());
  EXPECT_GT(*r.cells[0].beta_mean, *r.cells[1].beta_mean);
  EXPECT_GT(*r.cells[1].beta_mean, *r.cells[2].beta_mean);
}

TEST(RatesTable, Columns) {
  Rng rng = make_rng(11);
  const DataMatrix y = rank_one_row(5, rng);
  SweepConfig c;
  c.f_list = {4, 6};
  c.p_list = {0.5, 1.0};
  c.init = parse_init("gaussian:0.1");
  const auto rows = rates_table(c, y, 2);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    ASSERT_TRUE(r.omega_e1.has_value());
    EXPECT_NEAR(r.omega_unscaled, r.p * *r.omega_e1, 1e-14);
    if (r.p == 1.0) EXPECT_EQ(r.omega_unscaled, 0.0);
    if (r.f == 4) EXPECT_NEAR(r.p_star, 1.0 / 3.0, 1e-15);
    if (r.p < 1.0) {
      ASSERT_TRUE(r.omega_numeric.has_value()) << r.status;
      EXPECT_GE(*r.omega_numeric, *r.omega_e1 - 1e-8);
    }
  }
  std::ostringstream os;
  write_rates_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), kRatesHeader);
}

TEST(RatesTable, SkipsHugeHessians) {
  Rng rng = make_rng(12);
  const DataMatrix y = rank_one_row(5, rng);
  SweepConfig c;
  c.f_list = {4};
  c.p_list = {0.5};
  const auto rows = rates_table(c, y, 1, 10);
  EXPECT_FALSE(rows[0].omega_numeric.has_value());
  EXPECT_EQ(rows[0].status.rfind("numeric_skipped", 0), 0u);
}

TEST(Trajectory, CsvColumns) {
  Rng rng = make_rng(13);
  const DataMatrix y = rank_one_row(3, rng);
  const Trajectory tr = gd_run(y, gaussian_init(Dims{1, 2, 3}, 0.3, rng), ScaledObjective{0.5}, 1e-2,
                               StopRule{1e-30, 4});
  std::ostringstream os;
  write_trajectory_csv(os, tr);
  std::istringstream in(os.str());
  const csv::TextTable t = csv::read_text(in);
  EXPECT_EQ(t.header, (std::vector<std::string>{"t", "grad_norm", "loss", "balance_drift"}));
  EXPECT_EQ(t.rows.size(), 5u);
}

TEST(ParallelFor, PropagatesErrors) {
  EXPECT_THROW(parallel_for(10, 4, [](std::size_t i) {
                 if (i == 3) throw DataError("boom");
               }),
               DataError);
  std::vector<int> out(100);
  parallel_for(out.size(), 8, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
}
