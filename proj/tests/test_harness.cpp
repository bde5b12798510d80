#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "lqrlab/harness/config.hpp"
#include "lqrlab/harness/experiment.hpp"
#include "lqrlab/harness/output.hpp"

using namespace lqrlab;
using namespace lqrlab::harness;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = LQRLAB_CONFIG_DIR;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json example1_doc() { return json::parse(slurp(kConfigs / "example1.json")); }

ExperimentConfig small_ssac(long T, std::vector<std::uint64_t> seeds) {
  json doc = example1_doc();
  doc["ssac"]["T"] = T;
  doc["seeds"] = seeds;
  return parse_config(doc.dump());
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

RunTrace synthetic_trace(std::vector<double> k_err) {
  RunTrace t;
  t.algorithm = "ssac";
  for (std::size_t i = 0; i < k_err.size(); ++i) {
    RunRecord r;
    r.iteration = r.samples = static_cast<long>(i);
    r.k_err = r.A_T = k_err[i];
    t.records.push_back(r);
  }
  return t;
}

struct ScopedEnv {
  std::string name;
  ScopedEnv(std::string n, const char* value) : name(std::move(n)) { ::setenv(name.c_str(), value, 1); }
  ~ScopedEnv() { ::unsetenv(name.c_str()); }
};

int run_cli(const std::string& args) {
  const int status = std::system((std::string(LQRLAB_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

TEST(Config, BundledExampleOne) {
  const ExperimentConfig cfg = load_config(kConfigs / "example1.json");
  EXPECT_EQ(cfg.algorithm, Algorithm::Ssac);
  EXPECT_EQ(cfg.ssac.T, 1'000'000);
  EXPECT_EQ(cfg.ssac.c_alpha, 0.005);
  EXPECT_EQ(cfg.seeds.size(), 10u);
  EXPECT_TRUE(cfg.d0_defaulted);
  EXPECT_TRUE(cfg.sigma_defaulted);
  EXPECT_EQ(cfg.system.D0, Matrix::Identity(2, 2));
  EXPECT_EQ(cfg.system.sigma, 1.0);
  EXPECT_EQ(cfg.ssac.omega_radius, 1e6);
  EXPECT_EQ(cfg.ssac.eta_radius, 1e6);
  EXPECT_EQ(stride_for(cfg, Algorithm::Ssac), 1000);
  EXPECT_EQ(cfg.system.Q, systems::example1().Q);
}

TEST(Config, BundledExampleTwo) {
  const ExperimentConfig cfg = load_config(kConfigs / "example2.json");
  EXPECT_EQ(cfg.algorithm, Algorithm::ZerothOrder);
  EXPECT_EQ(cfg.system.state_dim(), 4);
  EXPECT_EQ(cfg.system.action_dim(), 3);
  EXPECT_EQ(cfg.zeroth_order.z, 20000);
  EXPECT_EQ(stride_for(cfg, Algorithm::ZerothOrder), 1);
  EXPECT_EQ(cfg.system.A, systems::example2().A);
}

TEST(Config, MissingSeeds) {
  json doc = example1_doc();
  doc.erase("seeds");
  EXPECT_NE(config_error(doc.dump()).find("seeds"), std::string::npos);
  doc["seeds"] = json::array();
  EXPECT_NE(config_error(doc.dump()).find("seeds"), std::string::npos);
}

TEST(Config, ParseErrorReportsLineAndColumn) {
  const std::string msg = config_error("{\n  \"system\": {\n    \"A\": [[1, 2],, ]\n  }\n}");
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("column"), std::string::npos) << msg;
}

TEST(Config, MissingMatrixNamesTheField) {
  json doc = example1_doc();
  doc["system"].erase("A");
  EXPECT_NE(config_error(doc.dump()).find("system.A"), std::string::npos);
}

TEST(Config, WrongTypeNamesTheField) {
  json doc = example1_doc();
  doc["ssac"]["T"] = "many";
  EXPECT_NE(config_error(doc.dump()).find("ssac"), std::string::npos);
  doc = example1_doc();
  doc["system"]["Q"] = 3;
  EXPECT_NE(config_error(doc.dump()).find("system.Q"), std::string::npos);
}

TEST(Config, MissingHyperparameterBlock) {
  json doc = example1_doc();
  doc["algorithm"] = "double_loop";
  doc.erase("double_loop");
  EXPECT_NE(config_error(doc.dump()).find("double_loop"), std::string::npos);
  doc = example1_doc();
  doc["algorithm"] = "newton";
  EXPECT_NE(config_error(doc.dump()).find("algorithm"), std::string::npos);
}

TEST(Config, InvalidSystemRejected) {
  json doc = example1_doc();
  doc["system"]["R"] = {{1, 0}, {0, -1}};
  EXPECT_NE(config_error(doc.dump()).find("system"), std::string::npos);
  doc = example1_doc();
  doc["system"]["B"] = {{1}, {0}, {0}};
  EXPECT_FALSE(config_error(doc.dump()).empty());
}

TEST(Config, HashIsStableAndSensitive) {
  const ExperimentConfig a = load_config(kConfigs / "example1.json");
  const ExperimentConfig b = parse_config(example1_doc().dump(4));
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  json doc = example1_doc();
  doc["ssac"]["c_alpha"] = 0.006;
  EXPECT_NE(config_hash(parse_config(doc.dump())), config_hash(a));
  // explicitly writing a default value resolves to the same experiment
  doc = example1_doc();
  doc["system"]["D0"] = {{1, 0}, {0, 1}};
  EXPECT_EQ(config_hash(parse_config(doc.dump())), config_hash(a));
}

// ---------------------------------------------------------------------------
// aggregation and rate fitting

TEST(Aggregate, SingleSeedReproducesTrace) {
  const RunTrace t = synthetic_trace({4, 3, 2, 1});
  const AggregateSeries agg = aggregate({&t});
  ASSERT_EQ(agg.iterations.size(), 4u);
  EXPECT_EQ(agg.seed_count, 1u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(agg.metrics.at("k_err").mean[i], t.records[i].k_err);
    EXPECT_TRUE(std::isnan(agg.metrics.at("k_err").lo[i]));
    EXPECT_TRUE(std::isnan(agg.metrics.at("k_err").hi[i]));
  }
}

TEST(Aggregate, MeanAndInterval) {
  const RunTrace a = synthetic_trace({1, 2}), b = synthetic_trace({3, 2}), c = synthetic_trace({5, 2});
  const AggregateSeries agg = aggregate({&a, &b, &c});
  const MetricBand& band = agg.metrics.at("k_err");
  EXPECT_DOUBLE_EQ(band.mean[0], 3.0);
  EXPECT_NEAR(band.hi[0] - band.mean[0], 1.96 * 2.0 / std::sqrt(3.0), 1e-12);
  EXPECT_LE(band.lo[0], band.mean[0]);
  EXPECT_DOUBLE_EQ(band.lo[1], 2.0);
  EXPECT_DOUBLE_EQ(band.hi[1], 2.0);
}

TEST(FitRate, RecoversPowerLaw) {
  std::vector<std::pair<double, double>> s;
  for (int i = 1; i <= 1000; ++i) s.emplace_back(i, 7.0 * std::pow(i, -0.5));
  EXPECT_NEAR(fit_rate(s), -0.5, 1e-12);
  s.clear();
  for (int i = 0; i <= 1000; ++i) s.emplace_back(i, 2.5);
  EXPECT_NEAR(fit_rate(s), 0.0, 1e-12);
}

TEST(FitRate, RejectsBadWindows) {
  std::vector<std::pair<double, double>> s;
  for (int i = 1; i <= 5; ++i) s.emplace_back(i, 1.0 / i);
  EXPECT_THROW(fit_rate(s), FitError);
  s.clear();
  for (int i = 1; i <= 100; ++i) s.emplace_back(i, i == 95 ? 0.0 : 1.0 / i);
  EXPECT_THROW(fit_rate(s), FitError);
}

// ---------------------------------------------------------------------------
// CSV and SVG

TEST(Csv, EmptyTraceIsHeaderOnly) {
  RunTrace t;
  const std::string text = trace_csv(t, {});
  EXPECT_NE(text.find(std::string(kTraceHeader) + "\n"), std::string::npos);
  EXPECT_TRUE(parse_trace_csv(text).empty());
}

TEST(Csv, RoundTripIsExact) {
  RunTrace t;
  RngStream rng(901);
  for (int i = 0; i < 20; ++i) {
    RunRecord r{i, 3L * i, rng.normal(), std::exp(rng.normal()), 1e-200 * rng.uniform(), -rng.uniform(),
                1e12 * rng.uniform(), rng.normal(), rng.normal(), rng.normal()};
    if (i == 3) r.y_sq = std::numeric_limits<double>::quiet_NaN();
    if (i == 4) r.k_err = std::numeric_limits<double>::infinity();
    t.records.push_back(r);
  }
  CsvContext ctx{"abc", {1, 2}, true, false, 0.5, {"note, with comma"}};
  const std::vector<RunRecord> back = parse_trace_csv(trace_csv(t, ctx));
  ASSERT_EQ(back.size(), t.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].iteration, t.records[i].iteration);
    EXPECT_EQ(back[i].samples, t.records[i].samples);
    if (i == 3) {
      EXPECT_TRUE(std::isnan(back[i].y_sq));
    } else {
      EXPECT_EQ(back[i].y_sq, t.records[i].y_sq);
    }
    EXPECT_EQ(back[i].critic_err_sq, t.records[i].critic_err_sq);
    EXPECT_EQ(back[i].nat_grad_sq, t.records[i].nat_grad_sq);
    EXPECT_EQ(back[i].k_err, t.records[i].k_err);
    EXPECT_EQ(back[i].C_T, t.records[i].C_T);
  }
}

TEST(Csv, PreambleAndQuoting) {
  CsvContext ctx{"0123456789abcdef", {3, 1, 2}, true, true, 1.0, {}};
  const std::string pre = csv_preamble(ctx);
  EXPECT_NE(pre.find("# config_hash: 0123456789abcdef"), std::string::npos);
  EXPECT_NE(pre.find("# seeds: 3;1;2"), std::string::npos);
  EXPECT_NE(pre.find("default"), std::string::npos);
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(split_csv_line("1,\"a,b\",\"x\"\"y\""), (std::vector<std::string>{"1", "a,b", "x\"y"}));
}

TEST(Svg, SinglePointIsAMarker) {
  PlotSeries s{"one", {10}, {0.5}, {}, {}};
  const std::string svg = svg_plot({s}, {"t", "x", "y"});
  EXPECT_NE(svg.find("<circle class=\"marker\""), std::string::npos);
  EXPECT_EQ(svg.find("class=\"mean\""), std::string::npos);
}

TEST(Svg, DecreasingSeriesGivesMonotonePath) {
  PlotSeries s{"dec", {}, {}, {}, {}};
  for (int i = 1; i <= 50; ++i) {
    s.x.push_back(i);
    s.mean.push_back(1.0 / i);
    s.lo.push_back(0.5 / i);
    s.hi.push_back(2.0 / i);
  }
  s.mean[10] = 0.0;  // cannot be drawn on log axes
  const std::string svg = svg_plot({s}, {"t", "x", "y"});
  EXPECT_NE(svg.find("class=\"band\""), std::string::npos);
  const std::smatch m = [&] {
    std::smatch out;
    std::regex_search(svg, out, std::regex("class=\"mean\"[^>]*d=\"([^\"]*)\""));
    return out;
  }();
  ASSERT_FALSE(m.empty());
  std::istringstream path(m[1].str());
  std::string tok;
  double px = -1, py = -1;
  int points = 0;
  while (path >> tok) {
    const double x = std::stod(tok.substr(1));
    double y;
    path >> y;
    EXPECT_GT(x, px);
    EXPECT_GT(y, py);  // SVG y grows downward
    px = x;
    py = y;
    ++points;
  }
  EXPECT_EQ(points, 49);
}

TEST(Svg, NothingPlottableThrows) {
  PlotSeries s{"zero", {0, 1}, {1, 0}, {}, {}};
  EXPECT_THROW(svg_plot({s}, {}), IoError);
}

// ---------------------------------------------------------------------------
// experiments

TEST(Experiment, DeterministicAndThreadIndependent) {
  const ExperimentConfig cfg = small_ssac(2000, {4, 2, 7});
  ExperimentResult serial, parallel, again;
  {
    ScopedEnv env("LQRLAB_THREADS", "1");
    serial = run_experiment(cfg);
    again = run_experiment(cfg);
  }
  {
    ScopedEnv env("LQRLAB_THREADS", "3");
    parallel = run_experiment(cfg);
  }
  ASSERT_EQ(serial.runs.size(), 3u);
  EXPECT_EQ(serial.runs[0].seed, 2u);
  EXPECT_EQ(serial.runs[2].seed, 7u);
  const CsvContext ctx = CsvContext::of(cfg, cfg.seeds);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(trace_csv(serial.runs[i].trace, ctx), trace_csv(again.runs[i].trace, ctx));
    EXPECT_EQ(trace_csv(serial.runs[i].trace, ctx), trace_csv(parallel.runs[i].trace, ctx));
  }
  EXPECT_EQ(aggregate_csv(serial.aggregate, ctx), aggregate_csv(parallel.aggregate, ctx));
  EXPECT_NE(serial.runs[0].K0, serial.runs[1].K0);
}

TEST(Experiment, SameInitialGainForEveryLearner) {
  ExperimentConfig cfg = small_ssac(10, {5});
  cfg.zeroth_order.z = 2;
  cfg.zeroth_order.l = 2;
  cfg.zeroth_order.J_outer = 1;
  cfg.double_loop.T_inner = 10;
  cfg.double_loop.J_outer = 1;
  const Matrix a = run_algorithm(cfg, Algorithm::Ssac, {5}).runs[0].K0;
  EXPECT_EQ(run_algorithm(cfg, Algorithm::ZerothOrder, {5}).runs[0].K0, a);
  EXPECT_EQ(run_algorithm(cfg, Algorithm::DoubleLoop, {5}).runs[0].K0, a);
  const OracleRefs refs = OracleRefs::of(cfg.system);
  EXPECT_LE((a - refs.K_star).norm(), cfg.k0.distance + 1e-9);
  EXPECT_LT(spectral_radius_estimate(closed_loop(cfg.system, a)), cfg.k0.rho_max);
}

TEST(Experiment, SsacTrendOnExampleOne) {
  const ExperimentConfig cfg = small_ssac(100'000, {1, 2, 3, 4, 5});
  const ExperimentResult res = run_experiment(cfg);
  EXPECT_EQ(res.aggregate.seed_count, 5u);
  const MetricBand& a = res.aggregate.metrics.at("A_T");
  for (const char* name : kMetricNames) {
    for (double v : res.aggregate.metrics.at(name).mean) ASSERT_TRUE(std::isfinite(v)) << name;
  }
  EXPECT_LT(a.mean.back(), a.mean.front());
  EXPECT_LT(res.aggregate.metrics.at("actor_gap").mean.back(), res.aggregate.metrics.at("actor_gap").mean.front());
}

TEST(Experiment, AllSeedsDivergedThrows) {
  json doc = example1_doc();
  doc["ssac"]["T"] = 10;
  doc["seeds"] = {1, 2};
  doc["lambda_max"] = 0.01;
  const ExperimentConfig cfg = parse_config(doc.dump());
  EXPECT_THROW(run_experiment(cfg), DivergenceError);
  const ExperimentResult r = run_algorithm(cfg, Algorithm::Ssac, cfg.seeds);
  ASSERT_EQ(r.report.size(), 2u);
  EXPECT_NE(r.report[0].find("DIVERGED"), std::string::npos);
  EXPECT_TRUE(r.aggregate.empty());
}

TEST(Experiment, BudgetScaling) {
  const ExperimentConfig cfg = load_config(kConfigs / "example1.json");
  const ExperimentConfig b = budget_config(cfg);
  EXPECT_EQ(b.ssac.T, cfg.compare.budget);
  EXPECT_EQ(2 * b.zeroth_order.z * b.zeroth_order.l * b.zeroth_order.J_outer, cfg.compare.budget);
  EXPECT_EQ(b.double_loop.T_inner * b.double_loop.J_outer, cfg.compare.budget);
  EXPECT_EQ(seeds_for_runs(cfg, 12).back(), 12u);
  EXPECT_EQ(seeds_for_runs(cfg, 3).size(), 3u);
}

TEST(Experiment, EmitCsvWritesTracesAndAggregate) {
  const ExperimentConfig cfg = small_ssac(500, {1, 2});
  const ExperimentResult res = run_experiment(cfg);
  const fs::path dir = fs::temp_directory_path() / "lqrlab_emit_test";
  fs::remove_all(dir);
  emit_csv(res, CsvContext::of(cfg, cfg.seeds), dir);
  EXPECT_TRUE(fs::exists(dir / "aggregate.csv"));
  const std::string trace = slurp(dir / "traces" / "ssac_seed_2.csv");
  EXPECT_EQ(parse_trace_csv(trace).size(), res.runs[1].trace.records.size());
  EXPECT_NE(trace.find(config_hash(cfg)), std::string::npos);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// command line

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("train --config /nonexistent/config.json"), 2);
  EXPECT_EQ(run_cli("train --bogus-flag"), 2);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("oracle --config " + (kConfigs / "example1.json").string() + " --gain '[[1,2,3]]'"), 2);
  EXPECT_EQ(run_cli("--help"), 0);
}

TEST(Cli, OracleReportsJson) {
  const fs::path out = fs::temp_directory_path() / "lqrlab_oracle_test.json";
  const std::string cmd = std::string(LQRLAB_CLI) + " oracle --config " + (kConfigs / "example1.json").string() +
                          " --gain '[[1,0],[0,1]]' > " + out.string();
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  const json j = json::parse(slurp(out));
  EXPECT_NEAR(j.at("J").get<double>(), average_cost(systems::example1(), Matrix::Identity(2, 2)), 1e-9);
  EXPECT_EQ(j.at("omega_star").size(), 10u);
  EXPECT_NEAR(j.at("rho_estimate").get<double>(), 0.0, 1e-12);
  fs::remove(out);
}
