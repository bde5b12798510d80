// lqrlab command-line driver: oracle | train | compare | verify

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "lqrlab/harness/config.hpp"
#include "lqrlab/harness/experiment.hpp"
#include "lqrlab/harness/output.hpp"
#include "lqrlab/harness/verify.hpp"
#include "lqrlab/oracle.hpp"

namespace fs = std::filesystem;
using namespace lqrlab;
using namespace lqrlab::harness;

namespace {

constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Matrix parse_gain(const std::string& spec, const ExperimentConfig& cfg) {
  if (spec == "optimal") return solve_are(cfg.system).K.K;
  std::string text = spec;
  if (fs::exists(spec)) {
    std::ifstream in(spec);
    std::ostringstream buf;
    buf << in.rdbuf();
    text = buf.str();
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error&) {
    throw UsageError("--gain: expected 'optimal', a JSON array of rows, or a file containing one");
  }
  Matrix K;
  try {
    K = harness::detail::to_matrix(j, "--gain");
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (K.rows() != cfg.system.action_dim() || K.cols() != cfg.system.state_dim()) {
    throw UsageError("--gain: expected a " + std::to_string(cfg.system.action_dim()) + "x" +
                     std::to_string(cfg.system.state_dim()) + " matrix");
  }
  return K;
}

ExperimentConfig load(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("config file not found: " + path);
  try {
    return load_config(path);
  } catch (const ConfigError& e) {
    throw UsageError(std::string("invalid config ") + path + ": " + e.what());
  }
}

int cmd_oracle(const std::string& config, const std::string& gain) {
  const ExperimentConfig cfg = load(config);
  const Matrix K = parse_gain(gain, cfg);
  const OracleReport r = analytic_report(cfg.system, K);
  json out;
  out["K"] = harness::detail::from_matrix(K);
  out["rho_estimate"] = spectral_radius_estimate(closed_loop(cfg.system, K));
  out["P_K"] = harness::detail::from_matrix(r.P_K);
  out["D_K"] = harness::detail::from_matrix(r.D_K);
  out["Dtilde_K"] = harness::detail::from_matrix(r.Dtilde_K);
  out["L"] = harness::detail::from_matrix(r.L);
  out["J"] = r.J;
  out["grad_J"] = harness::detail::from_matrix(r.grad_J);
  out["E_K"] = harness::detail::from_matrix(r.E_K);
  out["Omega_K"] = harness::detail::from_matrix(r.Omega_K);
  out["omega_star"] = vec_json(r.omega_star);
  out["A_K"] = harness::detail::from_matrix(r.A_K);
  out["b_K"] = vec_json(r.b_K);
  out["mu"] = r.mu;
  std::cout << out.dump(2) << "\n";
  return 0;
}

std::string slope_line(const AggregateSeries& agg, const char* metric) {
  try {
    return std::string(metric) + " log-log slope (last decade): " + format_double(fit_rate(series_of(agg, metric)));
  } catch (const FitError& e) {
    return std::string(metric) + " slope skipped: " + e.what();
  }
}

int cmd_train(const std::string& config, const std::optional<std::uint64_t>& seed, const std::string& out_arg) {
  ExperimentConfig cfg = load(config);
  if (seed) cfg.seeds = {*seed};
  const fs::path out = out_arg.empty() ? fs::path(cfg.output_dir) : fs::path(out_arg);
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res;
  try {
    res = run_experiment(cfg);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  for (const std::string& line : res.report) std::cerr << line << "\n";
  std::vector<std::uint64_t> seeds;
  for (const SeedRun& run : res.runs) seeds.push_back(run.seed);
  emit_csv(res, CsvContext::of(cfg, seeds), out);
  for (const char* metric : {"k_err", "actor_gap", "nat_grad_sq", "A_T", "B_T", "C_T"}) {
    try {
      emit_svg_plot(res.aggregate, metric, out / (std::string(metric) + ".svg"));
    } catch (const IoError&) {
      // metric not plottable on log axes (e.g. undefined for this learner)
    }
  }
  std::ostringstream summary;
  summary << "algorithm: " << algorithm_name(cfg.algorithm) << "\n";
  summary << "config_hash: " << config_hash(cfg) << "\n";
  for (const SeedRun& run : res.runs) {
    summary << "seed " << run.seed << ": "
            << (run.diverged ? "DIVERGED (" + run.message + ")" : "final k_err " + format_double(final_k_err(run)))
            << "\n";
  }
  if (cfg.algorithm == Algorithm::Ssac) {
    summary << slope_line(res.aggregate, "A_T") << "\n" << slope_line(res.aggregate, "B_T") << "\n";
  }
  write_file(out / "summary.txt", summary.str());
  std::cout << summary.str();
  std::printf("wall time: %.2f s; outputs in %s\n",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), out.string().c_str());
  return 0;
}

int cmd_compare(const std::string& config, std::size_t runs, const std::string& out_arg) {
  const ExperimentConfig cfg = load(config);
  if (runs == 0) runs = cfg.seeds.size();
  const fs::path out = out_arg.empty() ? fs::path(cfg.output_dir) : fs::path(out_arg);
  const auto t0 = std::chrono::steady_clock::now();
  const ComparisonResult cmp = run_comparison(cfg, runs);
  const CsvContext ctx = CsvContext::of(budget_config(cfg), cmp.seeds);

  std::ostringstream summary;
  summary << "shared budget: " << cfg.compare.budget << " environment interactions, " << runs << " seeds\n";
  std::vector<const AggregateSeries*> aggs;
  for (const ExperimentResult& r : cmp.algorithms) {
    emit_csv(r, ctx, out, std::string(algorithm_name(r.algorithm)) + "_aggregate.csv");
    aggs.push_back(&r.aggregate);
    std::vector<double> finals;
    long diverged = 0;
    for (const SeedRun& run : r.runs) {
      finals.push_back(final_k_err(run));
      diverged += run.diverged ? 1 : 0;
    }
    summary << algorithm_name(r.algorithm) << ": median final ||K - K*||_F = " << format_double(median(finals))
            << " (" << diverged << " of " << r.runs.size() << " seeds diverged)\n";
    for (const std::string& line : r.report) {
      summary << line << "\n";
      std::cerr << line << "\n";
    }
  }
  emit_comparison_svg(aggs, out / "comparison.svg");
  write_file(out / "summary.txt", summary.str());
  std::cout << summary.str();
  std::printf("wall time: %.2f s; outputs in %s\n",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), out.string().c_str());
  return 0;
}

int cmd_verify() {
  int failed = 0;
  const auto t0 = std::chrono::steady_clock::now();
  run_verify_suite([&](const CheckResult& c) {
    std::printf("[%s] %s (%.2f s): %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.seconds, c.detail.c_str());
    std::fflush(stdout);
    failed += c.passed ? 0 : 1;
  });
  std::printf("%s: %d failed, total %.1f s\n", failed == 0 ? "verify passed" : "verify FAILED", failed,
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lqrlab: actor-critic experiments on linear quadratic regulators"};
  app.require_subcommand(1);

  std::string config, gain, out;
  std::optional<std::uint64_t> seed;
  std::size_t runs = 0;

  auto* oracle = app.add_subcommand("oracle", "print the closed-form report of a gain as JSON");
  oracle->add_option("--config", config, "experiment config (JSON)")->required();
  oracle->add_option("--gain", gain, "'optimal', a JSON array of rows, or a file holding one")->required();

  auto* train = app.add_subcommand("train", "run the configured learner for every seed");
  train->add_option("--config", config, "experiment config (JSON)")->required();
  train->add_option("--seed", seed, "run a single seed instead of the configured list");
  train->add_option("--out", out, "output directory (default: output.dir of the config)");

  auto* compare = app.add_subcommand("compare", "all three learners on a shared sample budget");
  compare->add_option("--config", config, "experiment config (JSON)")->required();
  compare->add_option("--runs", runs, "number of seeds (default: length of the seed list)");
  compare->add_option("--out", out, "output directory (default: output.dir of the config)");

  auto* verify = app.add_subcommand("verify", "run the oracle and invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*oracle) return cmd_oracle(config, gain);
    if (*train) return cmd_train(config, seed, out);
    if (*compare) return cmd_compare(config, runs, out);
    if (*verify) return cmd_verify();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}
