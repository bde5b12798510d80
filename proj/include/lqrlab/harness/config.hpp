#pragma once

// Experiment configuration: JSON loading, defaults and validation.
// The schema is documented in docs/config-schema.md.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lqrlab/algorithms.hpp"
#include "lqrlab/lqr_env.hpp"

namespace lqrlab::harness {

using json = nlohmann::json;

enum class Algorithm { Ssac, ZerothOrder, DoubleLoop };

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Ssac:
      return "ssac";
    case Algorithm::ZerothOrder:
      return "zeroth_order";
    case Algorithm::DoubleLoop:
      return "double_loop";
  }
  return "?";
}

/// How a missing K0 is generated per seed: K* + distance * G / ||G||_F,
/// rejection-sampled to rho(A - BK0) <= rho_max.
struct InitialGainSpec {
  double distance = 1.0;
  double rho_max = 0.95;
};

/// Shared-budget comparison settings.
struct CompareSpec {
  long budget = 200'000;
  long zo_z = 500;
  long zo_l = 20;
  long dl_T_inner = 10'000;
};

struct ExperimentConfig {
  LqrSystem system;
  bool d0_defaulted = true;
  bool sigma_defaulted = true;
  Algorithm algorithm = Algorithm::Ssac;
  SsacHyper ssac;
  ZeroOrderHyper zeroth_order;
  DoubleLoopHyper double_loop;
  std::vector<std::uint64_t> seeds;
  std::optional<long> record_stride;  // default: iterations / 1000
  double lambda_max = 0.999;
  InitialGainSpec k0;
  CompareSpec compare;
  std::string output_dir = "out";
  json normalized;  // fully resolved document, used for hashing
};

namespace detail {

inline std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

inline Matrix to_matrix(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty() || !j.front().is_array()) {
    throw ConfigError(field + ": expected a non-empty array of rows");
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(field + ": row " + std::to_string(i) + " has inconsistent length");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const json& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw ConfigError(field + ": entry (" + std::to_string(i) + "," + std::to_string(c) + ") is not a number");
      m(i, c) = v.get<double>();
    }
  }
  return m;
}

inline json from_matrix(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Typed accessor that names the offending field.
template <typename T>
T get_or(const json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_arithmetic_v<T>) {
      if (!v.is_number()) throw ConfigError("");
      if constexpr (std::is_integral_v<T>) {
        const double x = v.get<double>();
        if (x != static_cast<double>(static_cast<long long>(x))) throw ConfigError("");
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline void require_object(const json& j, const std::string& field) {
  if (!j.is_object()) throw ConfigError(field + ": expected an object");
}

inline void positive(double v, const std::string& field) {
  if (!(v > 0)) throw ConfigError(field + ": must be positive");
}

}  // namespace detail

/// Parses and validates a configuration document.
inline ExperimentConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("parse error at " + detail::line_col(text, e.byte == 0 ? 0 : e.byte - 1) + ": " + e.what());
  }
  detail::require_object(doc, "<root>");
  ExperimentConfig cfg;

  // system
  if (!doc.contains("system")) throw ConfigError("system: missing");
  const json& js = doc.at("system");
  detail::require_object(js, "system");
  for (const char* key : {"A", "B", "Q", "R"}) {
    if (!js.contains(key)) throw ConfigError(std::string("system.") + key + ": missing");
  }
  LqrSystem sys;
  sys.A = detail::to_matrix(js.at("A"), "system.A");
  sys.B = detail::to_matrix(js.at("B"), "system.B");
  sys.Q = detail::to_matrix(js.at("Q"), "system.Q");
  sys.R = detail::to_matrix(js.at("R"), "system.R");
  cfg.d0_defaulted = !js.contains("D0");
  sys.D0 = cfg.d0_defaulted ? Matrix(Matrix::Identity(sys.A.rows(), sys.A.rows())) : detail::to_matrix(js.at("D0"), "system.D0");
  cfg.sigma_defaulted = !js.contains("sigma");
  sys.sigma = detail::get_or<double>(js, "sigma", "system", 1.0);
  try {
    cfg.system = validate_system(std::move(sys));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("system: ") + e.what());
  }
  const Eigen::Index d = cfg.system.state_dim();
  const Eigen::Index k = cfg.system.action_dim();
  const Eigen::Index m = svec_dim(d + k);
  auto gain_field = [&](const json& block, const std::string& where) -> Matrix {
    if (!block.contains("K0")) return Matrix();
    Matrix g = detail::to_matrix(block.at("K0"), where + ".K0");
    if (g.rows() != k || g.cols() != d) throw ConfigError(where + ".K0: expected " + std::to_string(k) + "x" + std::to_string(d));
    return g;
  };

  // selector
  if (!doc.contains("algorithm")) throw ConfigError("algorithm: missing");
  const std::string algo = detail::get_or<std::string>(doc, "algorithm", "<root>", "");
  if (algo == "ssac") {
    cfg.algorithm = Algorithm::Ssac;
  } else if (algo == "zeroth_order") {
    cfg.algorithm = Algorithm::ZerothOrder;
  } else if (algo == "double_loop") {
    cfg.algorithm = Algorithm::DoubleLoop;
  } else {
    throw ConfigError("algorithm: unknown value '" + algo + "'");
  }
  if (!doc.contains(algo)) throw ConfigError(algo + ": hyperparameter block for the selected algorithm is missing");

  if (doc.contains("ssac")) {
    const json& b = doc.at("ssac");
    detail::require_object(b, "ssac");
    SsacHyper& h = cfg.ssac;
    h.T = detail::get_or<long>(b, "T", "ssac", h.T);
    h.c_alpha = detail::get_or<double>(b, "c_alpha", "ssac", h.c_alpha);
    h.c_beta = detail::get_or<double>(b, "c_beta", "ssac", h.c_beta);
    h.c_gamma = detail::get_or<double>(b, "c_gamma", "ssac", h.c_gamma);
    h.sigma = detail::get_or<double>(b, "sigma", "ssac", cfg.system.sigma);
    h.omega_radius = detail::get_or<double>(b, "omega_radius", "ssac", h.omega_radius);
    h.eta_radius = detail::get_or<double>(b, "eta_radius", "ssac", h.eta_radius);
    h.eta0 = detail::get_or<double>(b, "eta0", "ssac", h.eta0);
    h.chained = detail::get_or<bool>(b, "chained", "ssac", h.chained);
    const std::string sampling = detail::get_or<std::string>(b, "sampling", "ssac", "exact");
    if (sampling == "exact") {
      h.sampling = ExactStationary{};
    } else if (sampling == "burn_in") {
      h.sampling = BurnIn{detail::get_or<long>(b, "burn_in_steps", "ssac", 200)};
    } else {
      throw ConfigError("ssac.sampling: expected 'exact' or 'burn_in'");
    }
    if (b.contains("omega0")) {
      const json& w = b.at("omega0");
      if (!w.is_array() || static_cast<Eigen::Index>(w.size()) != m) {
        throw ConfigError("ssac.omega0: expected " + std::to_string(m) + " numbers");
      }
      h.omega0 = Vector(m);
      for (Eigen::Index i = 0; i < m; ++i) h.omega0(i) = w[static_cast<std::size_t>(i)].get<double>();
    }
    h.K0 = gain_field(b, "ssac");
    if (h.T < 0) throw ConfigError("ssac.T: must be >= 0");
    detail::positive(h.c_alpha, "ssac.c_alpha");
    detail::positive(h.c_beta, "ssac.c_beta");
    detail::positive(h.c_gamma, "ssac.c_gamma");
    detail::positive(h.omega_radius, "ssac.omega_radius");
    detail::positive(h.eta_radius, "ssac.eta_radius");
    if (h.sigma < 0) throw ConfigError("ssac.sigma: must be >= 0");
  }
  if (doc.contains("zeroth_order")) {
    const json& b = doc.at("zeroth_order");
    detail::require_object(b, "zeroth_order");
    ZeroOrderHyper& h = cfg.zeroth_order;
    h.z = detail::get_or<long>(b, "z", "zeroth_order", h.z);
    h.l = detail::get_or<long>(b, "l", "zeroth_order", h.l);
    h.r = detail::get_or<double>(b, "r", "zeroth_order", h.r);
    h.eta = detail::get_or<double>(b, "eta", "zeroth_order", h.eta);
    h.J_outer = detail::get_or<long>(b, "J", "zeroth_order", h.J_outer);
    const std::string init = detail::get_or<std::string>(b, "initial_state", "zeroth_order", "process_noise");
    if (init == "process_noise") {
      h.initial_state = InitialStateLaw::ProcessNoise;
    } else if (init == "stationary") {
      h.initial_state = InitialStateLaw::Stationary;
    } else {
      throw ConfigError("zeroth_order.initial_state: expected 'process_noise' or 'stationary'");
    }
    h.K0 = gain_field(b, "zeroth_order");
    if (h.z < 1) throw ConfigError("zeroth_order.z: must be >= 1");
    if (h.l < 1) throw ConfigError("zeroth_order.l: must be >= 1");
    if (h.J_outer < 0) throw ConfigError("zeroth_order.J: must be >= 0");
    detail::positive(h.r, "zeroth_order.r");
    detail::positive(h.eta, "zeroth_order.eta");
  }
  if (doc.contains("double_loop")) {
    const json& b = doc.at("double_loop");
    detail::require_object(b, "double_loop");
    DoubleLoopHyper& h = cfg.double_loop;
    h.T_inner = detail::get_or<long>(b, "T_inner", "double_loop", h.T_inner);
    h.J_outer = detail::get_or<long>(b, "J", "double_loop", h.J_outer);
    h.eta = detail::get_or<double>(b, "eta", "double_loop", h.eta);
    h.sigma = detail::get_or<double>(b, "sigma", "double_loop", h.sigma);
    h.alpha_c = detail::get_or<double>(b, "alpha_c", "double_loop", h.alpha_c);
    h.primal_radius = detail::get_or<double>(b, "primal_radius", "double_loop", h.primal_radius);
    h.dual_radius = detail::get_or<double>(b, "dual_radius", "double_loop", h.dual_radius);
    h.v1_init = detail::get_or<double>(b, "v1_init", "double_loop", h.v1_init);
    h.K0 = gain_field(b, "double_loop");
    if (h.T_inner < 1) throw ConfigError("double_loop.T_inner: must be >= 1");
    if (h.J_outer < 0) throw ConfigError("double_loop.J: must be >= 0");
    detail::positive(h.eta, "double_loop.eta");
    detail::positive(h.alpha_c, "double_loop.alpha_c");
    detail::positive(h.primal_radius, "double_loop.primal_radius");
    detail::positive(h.dual_radius, "double_loop.dual_radius");
    if (h.sigma < 0) throw ConfigError("double_loop.sigma: must be >= 0");
  }

  // seeds
  if (!doc.contains("seeds")) throw ConfigError("seeds: missing");
  const json& seeds = doc.at("seeds");
  if (!seeds.is_array() || seeds.empty()) throw ConfigError("seeds: expected a non-empty array");
  for (const json& s : seeds) {
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
      throw ConfigError("seeds: entries must be non-negative integers");
    }
    cfg.seeds.push_back(s.get<std::uint64_t>());
  }

  if (doc.contains("record_stride")) {
    cfg.record_stride = detail::get_or<long>(doc, "record_stride", "<root>", 1);
    if (*cfg.record_stride < 1) throw ConfigError("record_stride: must be >= 1");
  }
  cfg.lambda_max = detail::get_or<double>(doc, "lambda_max", "<root>", cfg.lambda_max);
  if (!(cfg.lambda_max > 0 && cfg.lambda_max <= 1)) throw ConfigError("lambda_max: must lie in (0, 1]");
  if (doc.contains("k0")) {
    const json& b = doc.at("k0");
    detail::require_object(b, "k0");
    cfg.k0.distance = detail::get_or<double>(b, "distance", "k0", cfg.k0.distance);
    cfg.k0.rho_max = detail::get_or<double>(b, "rho_max", "k0", cfg.k0.rho_max);
    detail::positive(cfg.k0.distance, "k0.distance");
    if (!(cfg.k0.rho_max > 0 && cfg.k0.rho_max < 1)) throw ConfigError("k0.rho_max: must lie in (0, 1)");
  }
  if (doc.contains("compare")) {
    const json& b = doc.at("compare");
    detail::require_object(b, "compare");
    cfg.compare.budget = detail::get_or<long>(b, "budget", "compare", cfg.compare.budget);
    cfg.compare.zo_z = detail::get_or<long>(b, "zeroth_order_z", "compare", cfg.compare.zo_z);
    cfg.compare.zo_l = detail::get_or<long>(b, "zeroth_order_l", "compare", cfg.compare.zo_l);
    cfg.compare.dl_T_inner = detail::get_or<long>(b, "double_loop_T_inner", "compare", cfg.compare.dl_T_inner);
    if (cfg.compare.budget < 1 || cfg.compare.zo_z < 1 || cfg.compare.zo_l < 1 || cfg.compare.dl_T_inner < 1) {
      throw ConfigError("compare: budget and sizes must be >= 1");
    }
  }
  if (doc.contains("output")) {
    const json& b = doc.at("output");
    detail::require_object(b, "output");
    cfg.output_dir = detail::get_or<std::string>(b, "dir", "output", cfg.output_dir);
  }

  // resolved document
  json n;
  n["system"] = {{"A", detail::from_matrix(cfg.system.A)}, {"B", detail::from_matrix(cfg.system.B)},
                 {"Q", detail::from_matrix(cfg.system.Q)}, {"R", detail::from_matrix(cfg.system.R)},
                 {"D0", detail::from_matrix(cfg.system.D0)}, {"sigma", cfg.system.sigma}};
  n["algorithm"] = algo;
  if (doc.contains("ssac")) {
    const SsacHyper& h = cfg.ssac;
    json b = {{"T", h.T}, {"c_alpha", h.c_alpha}, {"c_beta", h.c_beta}, {"c_gamma", h.c_gamma}, {"sigma", h.sigma},
              {"omega_radius", h.omega_radius}, {"eta_radius", h.eta_radius}, {"eta0", h.eta0}, {"chained", h.chained},
              {"sampling", std::holds_alternative<ExactStationary>(h.sampling) ? "exact" : "burn_in"}};
    if (auto* bi = std::get_if<BurnIn>(&h.sampling)) b["burn_in_steps"] = bi->steps;
    if (h.omega0.size() > 0) b["omega0"] = std::vector<double>(h.omega0.data(), h.omega0.data() + h.omega0.size());
    if (h.K0.size() > 0) b["K0"] = detail::from_matrix(h.K0);
    n["ssac"] = b;
  }
  if (doc.contains("zeroth_order")) {
    const ZeroOrderHyper& h = cfg.zeroth_order;
    json b = {{"z", h.z}, {"l", h.l}, {"r", h.r}, {"eta", h.eta}, {"J", h.J_outer},
              {"initial_state", h.initial_state == InitialStateLaw::Stationary ? "stationary" : "process_noise"}};
    if (h.K0.size() > 0) b["K0"] = detail::from_matrix(h.K0);
    n["zeroth_order"] = b;
  }
  if (doc.contains("double_loop")) {
    const DoubleLoopHyper& h = cfg.double_loop;
    json b = {{"T_inner", h.T_inner}, {"J", h.J_outer}, {"eta", h.eta}, {"sigma", h.sigma}, {"alpha_c", h.alpha_c},
              {"primal_radius", h.primal_radius}, {"dual_radius", h.dual_radius}, {"v1_init", h.v1_init}};
    if (h.K0.size() > 0) b["K0"] = detail::from_matrix(h.K0);
    n["double_loop"] = b;
  }
  n["seeds"] = cfg.seeds;
  if (cfg.record_stride) n["record_stride"] = *cfg.record_stride;
  n["lambda_max"] = cfg.lambda_max;
  n["k0"] = {{"distance", cfg.k0.distance}, {"rho_max", cfg.k0.rho_max}};
  n["compare"] = {{"budget", cfg.compare.budget}, {"zeroth_order_z", cfg.compare.zo_z},
                  {"zeroth_order_l", cfg.compare.zo_l}, {"double_loop_T_inner", cfg.compare.dl_T_inner}};
  n["output"] = {{"dir", cfg.output_dir}};
  cfg.normalized = std::move(n);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

/// FNV-1a over the canonical dump of the resolved config.
inline std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = cfg.normalized.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

/// Iteration count of the selected learner, used for the default record stride.
inline long iterations_of(const ExperimentConfig& cfg, Algorithm a) {
  switch (a) {
    case Algorithm::Ssac:
      return cfg.ssac.T;
    case Algorithm::ZerothOrder:
      return cfg.zeroth_order.J_outer;
    case Algorithm::DoubleLoop:
      return cfg.double_loop.J_outer;
  }
  return 0;
}

inline long stride_for(const ExperimentConfig& cfg, Algorithm a) {
  if (cfg.record_stride) return *cfg.record_stride;
  return std::max<long>(1, iterations_of(cfg, a) / 1000);
}

}  // namespace lqrlab::harness
