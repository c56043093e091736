#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vortexlab/experiments.hpp"

using namespace vortexlab;
using namespace vortexlab::experiments;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("vortexlab_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d.string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no vortexlab::Error thrown";
  return ErrorCode::InvalidArgument;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

// ---------------------------------------------------------------------------
// Formatting

TEST(Format, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1.0 / 64), "0.015625");
  EXPECT_EQ(format_double(2.0), "2");
  for (double v : {1.0 / 3.0, 1e-300, -2.5e17, std::exp(1.0), 5e-324}) {
    double back;
    ASSERT_TRUE(parse_double(format_double(v), back));
    EXPECT_EQ(back, v);
  }
}

TEST(Format, StrictParse) {
  double v;
  EXPECT_TRUE(parse_double("+1.5", v));
  EXPECT_EQ(v, 1.5);
  EXPECT_FALSE(parse_double("1.5x", v));
  EXPECT_FALSE(parse_double("", v));
  EXPECT_FALSE(parse_double(" 1", v));
}

TEST(Format, Fnv1aReferenceValues) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(hex64(0xaf63dc4c8601ec8cull), "af63dc4c8601ec8c");
}

// ---------------------------------------------------------------------------
// Config

TEST(Config, DefaultsRoundTrip) {
  ExperimentConfig c;
  EXPECT_EQ(parse_config(serialize_config(c)), c);
  EXPECT_EQ(c.horizon_rule, HorizonRule::strain_time);
  EXPECT_NEAR(c.horizon(2.0), std::log(3.0) / 2.0, 1e-15);
}

TEST(Config, ModifiedConfigRoundTrips) {
  ExperimentConfig c;
  c.kind = ExperimentKind::theorem_rates;
  c.output_dir = "runs/a b";
  c.seed = 18446744073709551615ull;
  c.threads = 3;
  c.deterministic_sum = true;
  c.M_values = {0.0, 1.0 / 3.0, 8.0};
  c.epsilon_values = {0.1, 0.01 / 3.0};
  c.resolutions = {16, 64};
  c.spacings = {1.0 / 32, 1.0 / 128};
  c.horizon_rule = HorizonRule::fixed;
  c.horizon_value = 0.7;
  c.dt_rule = DtRule::fixed;
  c.dt_value = 1.0 / 300;
  c.backend = Backend::grid;
  c.symmetry = SymmetryMode::full;
  c.probe_c = 0.05;
  c.trajectory_seeds = -1;
  c.sobolev_s = 1.5;
  const auto text = serialize_config(c);
  const auto back = parse_config(text);
  EXPECT_EQ(back, c);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_DOUBLE_EQ(back.horizon(5.0), 0.7);
}

TEST(Config, CommentsAndMinimalInput) {
  const auto c = parse_config(
      "# sweep\n"
      "kind = smallscale   # trailing comment\n"
      "\n"
      "sweep.M = 2, 4\n"
      "output.dir = out/#1\n");
  EXPECT_EQ(c.kind, ExperimentKind::smallscale);
  EXPECT_EQ(c.M_values, (std::vector<double>{2.0, 4.0}));
  EXPECT_EQ(c.output_dir, "out/#1");
}

TEST(Config, EmptyListRejectedWithFieldName) {
  const auto msg = message_of([] { parse_config("kind = intermediate\nsweep.M =\n"); });
  EXPECT_NE(msg.find("ConfigParseError"), std::string::npos);
  EXPECT_NE(msg.find("line 2"), std::string::npos);
  EXPECT_NE(msg.find("sweep.M"), std::string::npos);
  for (const char* key : {"sweep.epsilon", "sweep.resolution", "sweep.spacing"}) {
    const auto m = message_of([&] { parse_config(std::string("kind = principles\n") + key + " = \n"); });
    EXPECT_NE(m.find(key), std::string::npos) << m;
  }
}

TEST(Config, ErrorsNameLineAndField) {
  auto msg = message_of([] { parse_config("kind = intermediate\n\nsweep.N = 3\n"); });
  EXPECT_NE(msg.find("line 3"), std::string::npos);
  EXPECT_NE(msg.find("sweep.N"), std::string::npos);
  EXPECT_NE(msg.find("unknown key"), std::string::npos);

  msg = message_of([] { parse_config("kind = intermediate\nprobe.c = -1\n"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos);
  EXPECT_NE(msg.find("probe.c"), std::string::npos);

  msg = message_of([] { parse_config("kind = intermediate\nsweep.M = 2, x\n"); });
  EXPECT_NE(msg.find("sweep.M"), std::string::npos);

  msg = message_of([] { parse_config("kind = vortex\n"); });
  EXPECT_NE(msg.find("kind"), std::string::npos);

  msg = message_of([] { parse_config("kind = smallscale\nseed = 1\nseed = 2\n"); });
  EXPECT_NE(msg.find("line 3"), std::string::npos);
  EXPECT_NE(msg.find("twice"), std::string::npos);

  msg = message_of([] { parse_config("sweep.M = 2\n"); });
  EXPECT_NE(msg.find("kind"), std::string::npos);

  msg = message_of([] { parse_config("kind = principles\nsweep.resolution = 24\n"); });
  EXPECT_NE(msg.find("sweep.resolution"), std::string::npos);

  msg = message_of([] { parse_config("kind = principles\njust text\n"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos);
  EXPECT_EQ(code_of([] { parse_config("kind = principles\njust text\n"); }),
            ErrorCode::ConfigParseError);
}

TEST(Config, SetValueOverrides) {
  ExperimentConfig c;
  set_config_value(c, "sweep.M", "1, 3");
  EXPECT_EQ(c.M_values, (std::vector<double>{1.0, 3.0}));
  set_config_value(c, " dt.rule ", " fixed ");
  EXPECT_EQ(c.dt_rule, DtRule::fixed);
  EXPECT_EQ(code_of([&] { set_config_value(c, "nope", "1"); }), ErrorCode::ConfigParseError);
  EXPECT_EQ(code_of([&] { set_config_value(c, "sweep.M", ""); }), ErrorCode::ConfigParseError);
}

TEST(Config, SampleConfigsParse) {
  const fs::path dir = fs::path(VORTEXLAB_SOURCE_DIR) / "configs";
  int count = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".cfg") continue;
    const auto c = load_config(e.path().string());
    EXPECT_EQ(parse_config(serialize_config(c)), c) << e.path();
    ++count;
  }
  EXPECT_EQ(count, 4);
}

TEST(Config, LoadMissingFileIsIoError) {
  EXPECT_EQ(code_of([] { load_config("/nonexistent/vortexlab.cfg"); }), ErrorCode::IoError);
}

// ---------------------------------------------------------------------------
// CSV schemas

TEST(CsvSchema, PinnedHeaders) {
  using V = std::vector<std::string>;
  EXPECT_EQ(schemas::intermediate().tag(), "intermediate/1");
  EXPECT_EQ(schemas::intermediate().columns,
            (V{"t", "omega_l1", "omega_l2", "omega_linf", "det_j", "max_a2", "max_a3", "probe"}));
  EXPECT_EQ(schemas::smallscale().tag(), "smallscale/1");
  EXPECT_EQ(schemas::smallscale().columns,
            (V{"t", "max_abs_omega1", "max_abs_omega2", "min_abs_omega2", "max_abs_omega3",
               "max_radius_over_delta"}));
  EXPECT_EQ(schemas::trajectories().tag(), "smallscale_seeds/1");
  EXPECT_EQ(schemas::trajectories().columns,
            (V{"seed", "t", "A1", "A2", "A3", "omega1", "omega2", "omega3"}));
  EXPECT_EQ(schemas::principles().tag(), "principles/1");
  EXPECT_EQ(schemas::principles().columns,
            (V{"epsilon", "t", "g1_inf", "g1_hs", "g2", "energy", "base_hs", "perturbed_hs",
               "linear_l2", "perturbation_l2"}));
  EXPECT_EQ(schemas::rates().tag(), "rates/1");
  EXPECT_EQ(schemas::rates().columns,
            (V{"M", "horizon", "probe_rate", "probe_rate_over_M", "probe_r2", "max_a2_rate",
               "omega2_rate", "omega2_rate_over_M"}));
  EXPECT_EQ(schemas::summary().tag(), "summary/1");
  EXPECT_EQ(schemas::summary().columns, (V{"run", "metric", "value", "bound", "pass"}));
  EXPECT_EQ(schemas::fits().tag(), "fits/1");
  EXPECT_EQ(schemas::fits().columns,
            (V{"source", "x", "column", "model", "rate", "intercept", "r_squared", "samples"}));
}

TEST(Csv, WriteReadRoundTrip) {
  const auto dir = fresh_dir("csv");
  const auto path = dir + "/a.csv";
  {
    CsvWriter w(path, schemas::summary());
    w.row({"r", "m", 0.1, "<= 1", true});
    EXPECT_EQ(code_of([&] { w.row({1.0}); }), ErrorCode::InvalidArgument);
    w.close();
  }
  EXPECT_EQ(slurp(path), "#schema=summary/1\nrun,metric,value,bound,pass\nr,m,0.1,<= 1,true\n");
  const auto t = read_csv(path);
  EXPECT_EQ(t.schema, "summary/1");
  EXPECT_EQ(t.numeric_column("value"), std::vector<double>{0.1});
  EXPECT_EQ(code_of([&] { t.column_index("nope"); }), ErrorCode::ColumnMissing);
}

// ---------------------------------------------------------------------------
// fit_and_plot

namespace {

std::string write_series(const std::string& dir, const std::string& name, const std::string& x,
                         const std::string& y, const std::vector<double>& xs,
                         double (*f)(double)) {
  const auto path = dir + "/" + name;
  std::ofstream o(path);
  o << x << "," << y << "\n";
  for (double v : xs) o << format_double(v) << "," << format_double(f(v)) << "\n";
  return path;
}

}  // namespace

TEST(FitAndPlot, ExponentialRate) {
  const auto dir = fresh_dir("fit_exp");
  std::vector<double> t;
  for (int i = 0; i < 20; ++i) t.push_back(0.05 * i);
  const auto csv = write_series(dir, "decay.csv", "t", "y", t, [](double x) { return std::exp(-5.0 * x); });
  const auto res = fit_and_plot(csv, "y", FitModel::exponential);
  EXPECT_NEAR(res.fit.rate, -5.0, 1e-9);
  EXPECT_NEAR(res.fit.intercept, 0.0, 1e-9);
  ASSERT_TRUE(fs::exists(res.svg_path));
  const auto svg = slurp(res.svg_path);
  EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("<circle"), std::string::npos);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
  EXPECT_NE(svg.find("rate = -5"), std::string::npos);

  const auto fits = read_csv(res.summary_path);
  EXPECT_EQ(fits.schema, "fits/1");
  ASSERT_EQ(fits.rows.size(), 1u);
  EXPECT_NEAR(fits.numeric_column("rate")[0], -5.0, 1e-9);

  fit_and_plot(csv, "y", FitModel::exponential);
  EXPECT_EQ(read_csv(res.summary_path).rows.size(), 2u);
}

TEST(FitAndPlot, PowerLawSlope) {
  const auto dir = fresh_dir("fit_pow");
  std::vector<double> e;
  for (int i = 0; i < 12; ++i) e.push_back(1e-2 * std::pow(0.5, i));
  const auto csv = write_series(dir, "gap.csv", "epsilon", "g", e, [](double x) { return 3.0 * x * x; });
  const auto res = fit_and_plot(csv, "g", FitModel::power_law);
  EXPECT_NEAR(res.fit.rate, 2.0, 1e-9);
  EXPECT_NEAR(std::exp(res.fit.intercept), 3.0, 1e-9);
  EXPECT_TRUE(fs::exists(res.svg_path));
}

TEST(FitAndPlot, Errors) {
  const auto dir = fresh_dir("fit_err");
  std::vector<double> t;
  for (int i = 0; i < 9; ++i) t.push_back(i);
  const auto csv = write_series(dir, "short.csv", "t", "y", t, [](double x) { return std::exp(-x); });
  EXPECT_EQ(code_of([&] { fit_and_plot(csv, "z", FitModel::exponential); }), ErrorCode::ColumnMissing);
  FitPlotOptions o;
  o.x_column = "time";
  EXPECT_EQ(code_of([&] { fit_and_plot(csv, "y", FitModel::exponential, o); }), ErrorCode::ColumnMissing);
  EXPECT_EQ(code_of([&] { fit_and_plot(csv, "y", FitModel::exponential); }), ErrorCode::DegenerateFit);
  EXPECT_FALSE(fs::exists(dir + "/fits.csv"));
}

// ---------------------------------------------------------------------------
// Runner

namespace {

ExperimentConfig base_config(ExperimentKind kind, const std::string& dir) {
  ExperimentConfig c;
  c.kind = kind;
  c.output_dir = dir;
  c.M_values = {2.0};
  return c;
}

void expect_outputs_exist(const RunManifest& man) {
  EXPECT_TRUE(fs::exists(man.manifest_path));
  EXPECT_TRUE(fs::exists(man.summary_path));
  EXPECT_TRUE(fs::exists(man.config_path));
  for (const auto& r : man.runs)
    for (const auto& o : r.outputs) EXPECT_TRUE(fs::exists(o)) << o;
  const auto j = nlohmann::json::parse(slurp(man.manifest_path));
  EXPECT_EQ(j["config_hash"], man.config_hash);
  EXPECT_EQ(j["code_hash"], man.code_hash);
  EXPECT_EQ(j["runs"].size(), man.runs.size());
  for (const auto& r : j["runs"])
    for (const auto& o : r["outputs"]) EXPECT_TRUE(fs::exists(o.get<std::string>())) << o;
  EXPECT_EQ(parse_config(slurp(man.config_path)), man.config);
}

}  // namespace

TEST(Runner, IntermediateDefaultsProduceDiagnosticCsv) {
  const auto dir = fresh_dir("run_intermediate");
  const auto cfg = base_config(ExperimentKind::intermediate, dir);
  const auto man = run(cfg);
  ASSERT_EQ(man.runs.size(), 1u);
  const auto& r = man.runs[0];
  EXPECT_EQ(r.name, "intermediate_M2");
  ASSERT_TRUE(r.ok) << r.error;
  for (const auto& m : r.metrics) EXPECT_TRUE(!m.checked || m.pass) << m.name << " = " << m.value;
  EXPECT_TRUE(man.success());

  const auto table = read_csv(dir + "/intermediate_M2.csv");
  EXPECT_EQ(table.schema, schemas::intermediate().tag());
  EXPECT_EQ(table.header, schemas::intermediate().columns);
  EXPECT_GE(table.header.size(), 4u);
  const double T = std::log(3.0) / 2.0;
  const double dt = r.metric("dt")->value;
  EXPECT_EQ(static_cast<double>(table.rows.size()), std::round(T / dt) + 1.0);
  const auto t = table.numeric_column("t");
  EXPECT_EQ(t.front(), 0.0);
  EXPECT_NEAR(t.back(), T, 1e-12);
  EXPECT_NEAR(table.numeric_column("det_j").back(), std::exp(-2.0 * T), 0.01 * std::exp(-2.0 * T));
  expect_outputs_exist(man);

  const auto summary = read_csv(man.summary_path);
  EXPECT_EQ(summary.schema, "summary/1");
  EXPECT_EQ(summary.rows.size(), r.metrics.size());
}

TEST(Runner, RerunIsByteIdentical) {
  const auto a = fresh_dir("rerun_a"), b = fresh_dir("rerun_b");
  auto ca = base_config(ExperimentKind::intermediate, a);
  ca.spacings = {1.0 / 64};
  ca.M_values = {1.0};
  auto cb = ca;
  cb.output_dir = b;
  cb.threads = 1;
  run(ca);
  run(cb);
  for (const char* f : {"intermediate_M1.csv", "intermediate_M1_probe.svg", "summary.csv"})
    EXPECT_EQ(slurp(a + "/" + f), slurp(b + "/" + f)) << f;
}

TEST(Runner, GridBackendUnavailableForSmallScale) {
  const auto dir = fresh_dir("backend");
  auto cfg = base_config(ExperimentKind::smallscale, dir);
  cfg.backend = Backend::grid;
  EXPECT_EQ(code_of([&] { run(cfg); }), ErrorCode::BackendUnavailable);
  cfg.kind = ExperimentKind::theorem_rates;
  EXPECT_EQ(code_of([&] { run(cfg); }), ErrorCode::BackendUnavailable);
}

TEST(Runner, CellFailureIsRecordedNotThrown) {
  const auto dir = fresh_dir("cell_failure");
  auto cfg = base_config(ExperimentKind::intermediate, dir);
  cfg.spacings = {1.0 / 8};  // fewer than 16 particles across the bump
  const auto man = run(cfg);
  ASSERT_EQ(man.runs.size(), 1u);
  EXPECT_FALSE(man.runs[0].ok);
  EXPECT_NE(man.runs[0].error.find("UnderResolvedBump"), std::string::npos);
  EXPECT_FALSE(man.success());
  const auto summary = read_csv(man.summary_path);
  ASSERT_EQ(summary.rows.size(), 1u);
  EXPECT_EQ(summary.rows[0][1], "error");
  EXPECT_EQ(summary.rows[0][2], "UnderResolvedBump");
  EXPECT_EQ(summary.rows[0][4], "false");
  expect_outputs_exist(man);
}

TEST(Runner, SmallScaleRunAtMFour) {
  const auto dir = fresh_dir("run_smallscale");
  auto cfg = base_config(ExperimentKind::smallscale, dir);
  cfg.M_values = {4.0};
  cfg.smallscale_seeds = 40;
  cfg.trajectory_seeds = 3;
  const auto man = run(cfg);
  ASSERT_EQ(man.runs.size(), 1u);
  const auto& r = man.runs[0];
  ASSERT_TRUE(r.ok) << r.error;
  EXPECT_TRUE(r.passed);
  EXPECT_LE(r.metric("omega2_rate_worst")->value, -3.2);
  EXPECT_EQ(r.metric("inside_violations")->value, 0.0);
  const auto table = read_csv(dir + "/smallscale_M4.csv");
  EXPECT_EQ(table.header, schemas::smallscale().columns);
  const auto traj = read_csv(dir + "/smallscale_M4_seeds.csv");
  EXPECT_EQ(traj.header, schemas::trajectories().columns);
  EXPECT_EQ(traj.rows.size(), 3 * table.rows.size());
  expect_outputs_exist(man);
}

TEST(Runner, PrinciplesWritesEveryEpsilonRow) {
  const auto dir = fresh_dir("run_principles");
  auto cfg = base_config(ExperimentKind::principles, dir);
  cfg.resolutions = {16};
  cfg.principles_horizon = 0.05;
  cfg.principles_dt = 0.01;
  const auto man = run(cfg);
  ASSERT_EQ(man.runs.size(), 1u);
  const auto& r = man.runs[0];
  ASSERT_TRUE(r.ok) << r.error;
  EXPECT_EQ(r.name, "principles_N16");
  EXPECT_LE(r.metric("modified_gap_at_zero_epsilon")->value, 1e-12);
  ASSERT_NE(r.metric("slope_vorticity_inf"), nullptr);
  const auto table = read_csv(dir + "/principles_N16.csv");
  EXPECT_EQ(table.header, schemas::principles().columns);
  EXPECT_EQ(table.rows.size(), 3u * 6u);
  expect_outputs_exist(man);
}

TEST(Runner, RatesTableHasOneRowPerM) {
  const auto dir = fresh_dir("run_rates");
  auto cfg = base_config(ExperimentKind::theorem_rates, dir);
  cfg.M_values = {1.0, 2.0};
  cfg.smallscale_seeds = 10;
  const auto man = run(cfg);
  ASSERT_EQ(man.runs.size(), 3u);
  EXPECT_EQ(man.runs[2].name, "rates_table");
  for (const auto& r : man.runs) EXPECT_TRUE(r.ok) << r.name << ": " << r.error;
  const auto table = read_csv(dir + "/rates.csv");
  EXPECT_EQ(table.header, schemas::rates().columns);
  EXPECT_EQ(table.numeric_column("M"), (std::vector<double>{1.0, 2.0}));
  expect_outputs_exist(man);
}
