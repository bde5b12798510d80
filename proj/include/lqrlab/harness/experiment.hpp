#pragma once

// Multi-seed orchestration, aggregation with normal-approximation 95%
// intervals, and log-log rate fitting.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lqrlab/algorithms.hpp"
#include "lqrlab/harness/config.hpp"

namespace lqrlab::harness {

inline constexpr std::array<const char*, 8> kMetricNames = {"y_sq",     "critic_err_sq", "nat_grad_sq", "actor_gap",
                                                           "k_err",    "A_T",           "B_T",         "C_T"};

inline double metric_value(const RunRecord& r, const std::string& metric) {
  if (metric == "y_sq") return r.y_sq;
  if (metric == "critic_err_sq") return r.critic_err_sq;
  if (metric == "nat_grad_sq") return r.nat_grad_sq;
  if (metric == "actor_gap") return r.actor_gap;
  if (metric == "k_err") return r.k_err;
  if (metric == "A_T") return r.A_T;
  if (metric == "B_T") return r.B_T;
  if (metric == "C_T") return r.C_T;
  throw ConfigError("unknown metric '" + metric + "'");
}

struct SeedRun {
  std::uint64_t seed = 0;
  Matrix K0;
  bool diverged = false;
  std::string message;
  RunTrace trace;  // partial when diverged
};

struct MetricBand {
  std::vector<double> mean;
  std::vector<double> lo;  // NaN when fewer than two seeds
  std::vector<double> hi;
};

struct AggregateSeries {
  std::string algorithm;
  std::vector<long> iterations;
  std::vector<long> samples;
  std::map<std::string, MetricBand> metrics;
  std::size_t seed_count = 0;

  bool empty() const { return iterations.empty(); }
};

/// Mean and mean +- 1.96 stderr (n - 1 denominator) across traces, aligned
/// by record position. Traces must share the recording grid.
inline AggregateSeries aggregate(const std::vector<const RunTrace*>& traces) {
  AggregateSeries out;
  if (traces.empty()) return out;
  out.algorithm = traces.front()->algorithm;
  out.seed_count = traces.size();
  std::size_t len = traces.front()->records.size();
  for (const RunTrace* t : traces) len = std::min(len, t->records.size());
  for (std::size_t i = 0; i < len; ++i) {
    out.iterations.push_back(traces.front()->records[i].iteration);
    out.samples.push_back(traces.front()->records[i].samples);
  }
  const double n = static_cast<double>(traces.size());
  for (const char* name : kMetricNames) {
    MetricBand band;
    for (std::size_t i = 0; i < len; ++i) {
      double sum = 0.0;
      for (const RunTrace* t : traces) sum += metric_value(t->records[i], name);
      const double mean = sum / n;
      band.mean.push_back(mean);
      if (traces.size() < 2) {
        band.lo.push_back(std::numeric_limits<double>::quiet_NaN());
        band.hi.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      double ss = 0.0;
      for (const RunTrace* t : traces) {
        const double dv = metric_value(t->records[i], name) - mean;
        ss += dv * dv;
      }
      const double half = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
      band.lo.push_back(mean - half);
      band.hi.push_back(mean + half);
    }
    out.metrics.emplace(name, std::move(band));
  }
  return out;
}

struct ExperimentResult {
  Algorithm algorithm = Algorithm::Ssac;
  std::vector<SeedRun> runs;  // ordered by seed value
  AggregateSeries aggregate;
  std::vector<std::string> report;  // divergence notices
};

/// Worker count: LQRLAB_THREADS if set, else hardware concurrency.
inline unsigned worker_count(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LQRLAB_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<unsigned>(v);
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

/// Runs job(i) for i in [0, count) on a small pool; results are written by index.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& job) {
  const unsigned workers = worker_count(count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) job(i);
    });
  }
  for (auto& t : pool) t.join();
}

/// Per-seed streams: substream 0 draws the default K0, substream 1 + algorithm
/// index drives the learner, so every algorithm sees the same K0 for a seed.
inline Matrix initial_gain(const ExperimentConfig& cfg, const Matrix& configured, const OracleRefs& refs,
                           std::uint64_t seed) {
  if (configured.size() > 0) return configured;
  RngStream rng = RngStream(seed).substream(0);
  return random_stabilizing_gain(cfg.system, refs.K_star, rng,
                                 {.scale = cfg.k0.distance, .unit_direction = true, .rho_max = cfg.k0.rho_max})
      .K;
}

inline std::uint64_t learner_stream(Algorithm a) { return 1 + static_cast<std::uint64_t>(a); }

/// Runs one learner for every seed and aggregates the non-diverged traces.
inline ExperimentResult run_algorithm(const ExperimentConfig& cfg, Algorithm algo, std::vector<std::uint64_t> seeds) {
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  // K* does not depend on sigma but J* does, so references use the learner's sigma
  const double sigma = algo == Algorithm::Ssac         ? cfg.ssac.sigma
                       : algo == Algorithm::DoubleLoop ? cfg.double_loop.sigma
                                                       : cfg.system.sigma;
  const OracleRefs refs = OracleRefs::of(with_sigma(cfg.system, sigma));
  TrainOptions opts;
  opts.lambda_max = cfg.lambda_max;
  opts.record_stride = stride_for(cfg, algo);

  ExperimentResult result;
  result.algorithm = algo;
  result.runs.resize(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) {
    SeedRun& run = result.runs[i];
    run.seed = seeds[i];
    RngStream rng = RngStream(seeds[i]).substream(learner_stream(algo));
    try {
      switch (algo) {
        case Algorithm::Ssac: {
          SsacHyper hp = cfg.ssac;
          hp.K0 = run.K0 = initial_gain(cfg, hp.K0, refs, seeds[i]);
          run.trace = ssac_train(cfg.system, hp, rng, opts, refs);
          break;
        }
        case Algorithm::ZerothOrder: {
          ZeroOrderHyper hp = cfg.zeroth_order;
          hp.K0 = run.K0 = initial_gain(cfg, hp.K0, refs, seeds[i]);
          run.trace = zeroth_order_train(cfg.system, hp, rng, opts, refs);
          break;
        }
        case Algorithm::DoubleLoop: {
          DoubleLoopHyper hp = cfg.double_loop;
          hp.K0 = run.K0 = initial_gain(cfg, hp.K0, refs, seeds[i]);
          run.trace = double_loop_train(cfg.system, hp, rng, opts, refs);
          break;
        }
      }
    } catch (const TrainingDivergence& e) {
      run.diverged = true;
      run.message = e.what();
      run.trace = e.trace();
    } catch (const NumericError& e) {
      run.diverged = true;
      run.message = e.what();
    }
  });

  std::vector<const RunTrace*> ok;
  for (const SeedRun& run : result.runs) {
    if (run.diverged) {
      result.report.push_back("!! " + std::string(algorithm_name(algo)) + " seed " + std::to_string(run.seed) +
                              " DIVERGED and is excluded from aggregation: " + run.message);
    } else {
      ok.push_back(&run.trace);
    }
  }
  result.aggregate = aggregate(ok);
  result.aggregate.algorithm = algorithm_name(algo);
  return result;
}

/// Runs the configured algorithm. Throws when every seed diverged.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult r = run_algorithm(cfg, cfg.algorithm, cfg.seeds);
  if (r.aggregate.seed_count == 0) {
    throw DivergenceError("run_experiment: all seeds diverged");
  }
  return r;
}

/// Hyperparameters of all three learners scaled to a shared interaction budget.
inline ExperimentConfig budget_config(const ExperimentConfig& cfg) {
  ExperimentConfig out = cfg;
  const CompareSpec& c = cfg.compare;
  out.ssac.T = c.budget;
  out.zeroth_order.z = c.zo_z;
  out.zeroth_order.l = c.zo_l;
  out.zeroth_order.J_outer = std::max<long>(1, c.budget / (2 * c.zo_z * c.zo_l));
  out.double_loop.T_inner = c.dl_T_inner;
  out.double_loop.J_outer = std::max<long>(1, c.budget / c.dl_T_inner);
  return out;
}

/// Seed list of length n: the configured seeds first, extended by max + 1, max + 2, ...
inline std::vector<std::uint64_t> seeds_for_runs(const ExperimentConfig& cfg, std::size_t n) {
  std::vector<std::uint64_t> seeds(cfg.seeds.begin(), cfg.seeds.begin() + static_cast<long>(std::min(n, cfg.seeds.size())));
  std::uint64_t next = *std::max_element(cfg.seeds.begin(), cfg.seeds.end()) + 1;
  while (seeds.size() < n) seeds.push_back(next++);
  return seeds;
}

struct ComparisonResult {
  std::vector<ExperimentResult> algorithms;  // ssac, zeroth_order, double_loop
  std::vector<std::uint64_t> seeds;
};

inline ComparisonResult run_comparison(const ExperimentConfig& cfg, std::size_t runs) {
  const ExperimentConfig scaled = budget_config(cfg);
  ComparisonResult out;
  out.seeds = seeds_for_runs(cfg, runs);
  for (Algorithm a : {Algorithm::Ssac, Algorithm::ZerothOrder, Algorithm::DoubleLoop}) {
    out.algorithms.push_back(run_algorithm(scaled, a, out.seeds));
  }
  return out;
}

/// ||K - K*||_F at budget exhaustion; +inf for a diverged seed.
inline double final_k_err(const SeedRun& run) {
  if (run.diverged || run.trace.records.empty()) return std::numeric_limits<double>::infinity();
  return run.trace.records.back().k_err;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Least-squares slope of log(value) against log(iteration) over a trailing
/// window of the iteration range. Points at iteration 0 are ignored.
struct FitWindow {
  double decades = 1.0;  // trailing span: iteration >= max_iteration / 10^decades
  std::size_t min_points = 10;
};

inline double fit_rate(const std::vector<std::pair<double, double>>& series, FitWindow window = {}) {
  double last = 0.0;
  for (const auto& [it, v] : series) last = std::max(last, it);
  const double start = last / std::pow(10.0, window.decades);
  std::vector<double> lx, ly;
  for (const auto& [it, v] : series) {
    if (it < start || it <= 0.0) continue;
    if (!(v > 0.0) || !std::isfinite(v)) throw FitError("fit_rate: non-positive value in the fit window");
    lx.push_back(std::log(it));
    ly.push_back(std::log(v));
  }
  if (lx.size() < window.min_points) {
    throw FitError("fit_rate: only " + std::to_string(lx.size()) + " points in the fit window");
  }
  const double n = static_cast<double>(lx.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  if (sxx == 0.0) throw FitError("fit_rate: degenerate iteration range");
  return sxy / sxx;
}

/// (iteration, metric) pairs of an aggregate's mean line.
inline std::vector<std::pair<double, double>> series_of(const AggregateSeries& agg, const std::string& metric) {
  std::vector<std::pair<double, double>> out;
  const MetricBand& band = agg.metrics.at(metric);
  for (std::size_t i = 0; i < agg.iterations.size(); ++i) {
    out.emplace_back(static_cast<double>(agg.iterations[i]), band.mean[i]);
  }
  return out;
}

}  // namespace lqrlab::harness
