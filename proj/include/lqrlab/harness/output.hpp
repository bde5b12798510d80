#pragma once

// CSV and SVG emission. CSV: RFC-4180 quoting, LF line endings, '#' comment
// lines up front, doubles printed with %.17g so they parse back exactly.
// SVG: self-contained 1.1 documents with log-log axes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lqrlab/harness/config.hpp"
#include "lqrlab/harness/experiment.hpp"

namespace lqrlab::harness {

class IoError : public Error {
 public:
  using Error::Error;
};

inline constexpr const char* kTraceHeader = "iter,samples,y_sq,critic_err_sq,nat_grad_sq,actor_gap,k_err,A_T,B_T,C_T";
inline constexpr const char* kAggregateHeader = "iter,metric,mean,lo95,hi95";

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Provenance comment lines shared by every CSV of a run.
struct CsvContext {
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  bool d0_defaulted = true;
  bool sigma_defaulted = true;
  double sigma = 1.0;
  std::vector<std::string> notes;

  static CsvContext of(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds) {
    return {harness::config_hash(cfg), seeds, cfg.d0_defaulted, cfg.sigma_defaulted, cfg.system.sigma, {}};
  }
};

inline std::string csv_preamble(const CsvContext& ctx) {
  std::ostringstream out;
  out << "# config_hash: " << ctx.config_hash << "\n";
  out << "# seeds:";
  for (std::size_t i = 0; i < ctx.seeds.size(); ++i) out << (i == 0 ? " " : ";") << ctx.seeds[i];
  out << "\n";
  out << "# D0: " << (ctx.d0_defaulted ? "default (identity)" : "configured") << "\n";
  out << "# sigma: " << format_double(ctx.sigma) << (ctx.sigma_defaulted ? " (default)" : " (configured)") << "\n";
  for (const std::string& note : ctx.notes) out << "# " << note << "\n";
  return out.str();
}

inline std::string trace_csv(const RunTrace& trace, const CsvContext& ctx) {
  std::ostringstream out;
  out << csv_preamble(ctx) << kTraceHeader << "\n";
  for (const RunRecord& r : trace.records) {
    out << r.iteration << ',' << r.samples << ',' << format_double(r.y_sq) << ',' << format_double(r.critic_err_sq)
        << ',' << format_double(r.nat_grad_sq) << ',' << format_double(r.actor_gap) << ','
        << format_double(r.k_err) << ',' << format_double(r.A_T) << ',' << format_double(r.B_T) << ','
        << format_double(r.C_T) << "\n";
  }
  return out.str();
}

inline std::string aggregate_csv(const AggregateSeries& agg, const CsvContext& ctx) {
  std::ostringstream out;
  out << csv_preamble(ctx) << "# aggregated seeds: " << agg.seed_count << "\n" << kAggregateHeader << "\n";
  for (const char* name : kMetricNames) {
    auto it = agg.metrics.find(name);
    if (it == agg.metrics.end()) continue;
    const MetricBand& band = it->second;
    for (std::size_t i = 0; i < agg.iterations.size(); ++i) {
      out << agg.iterations[i] << ',' << csv_field(name) << ',' << format_double(band.mean[i]) << ','
          << format_double(band.lo[i]) << ',' << format_double(band.hi[i]) << "\n";
    }
  }
  return out.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

/// Writes traces/seed_<seed>.csv for every seed and aggregate.csv under dir.
inline void emit_csv(const ExperimentResult& result, const CsvContext& ctx, const std::filesystem::path& dir,
                     const std::string& aggregate_name = "aggregate.csv") {
  for (const SeedRun& run : result.runs) {
    CsvContext seed_ctx = ctx;
    if (run.diverged) seed_ctx.notes.push_back("status: diverged: " + run.message);
    write_file(dir / "traces" / (std::string(algorithm_name(result.algorithm)) + "_seed_" + std::to_string(run.seed) + ".csv"),
               trace_csv(run.trace, seed_ctx));
  }
  CsvContext agg_ctx = ctx;
  for (const std::string& line : result.report) agg_ctx.notes.push_back(line);
  write_file(dir / aggregate_name, aggregate_csv(result.aggregate, agg_ctx));
}

// ---------------------------------------------------------------------------
// parsing (used for round-trip checks)

/// Splits one RFC-4180 record.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw IoError("bad number '" + s + "'");
  return v;
}

/// Reads a per-seed trace CSV back into records.
inline std::vector<RunRecord> parse_trace_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  bool header = false;
  std::vector<RunRecord> out;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kTraceHeader) throw IoError("unexpected trace header '" + line + "'");
      header = true;
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 10) throw IoError("trace row has " + std::to_string(f.size()) + " fields");
    out.push_back({std::stol(f[0]), std::stol(f[1]), parse_double(f[2]), parse_double(f[3]), parse_double(f[4]),
                   parse_double(f[5]), parse_double(f[6]), parse_double(f[7]), parse_double(f[8]),
                   parse_double(f[9])});
  }
  if (!header) throw IoError("trace CSV has no header");
  return out;
}

// ---------------------------------------------------------------------------
// SVG

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> lo;  // may be empty or NaN: no band
  std::vector<double> hi;
};

struct PlotLabels {
  std::string title;
  std::string x_label;
  std::string y_label;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline bool plottable(double x, double y) { return x > 0 && y > 0 && std::isfinite(x) && std::isfinite(y); }

}  // namespace detail

/// Log-log line plot of one or more series with optional 95% bands. Points
/// with a non-positive coordinate cannot be placed on log axes and are skipped.
inline std::string svg_plot(const std::vector<PlotSeries>& series, const PlotLabels& labels) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  constexpr double W = 720, H = 480, left = 80, right = 170, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;

  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const PlotSeries& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!detail::plottable(s.x[i], s.mean[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.mean[i]);
      ymax = std::max(ymax, s.mean[i]);
      if (i < s.hi.size() && detail::plottable(s.x[i], s.hi[i])) ymax = std::max(ymax, s.hi[i]);
      if (i < s.lo.size() && detail::plottable(s.x[i], s.lo[i])) ymin = std::min(ymin, s.lo[i]);
    }
  }
  if (!(xmin <= xmax)) throw IoError("svg_plot: no plottable points");
  // decade-aligned bounds; a degenerate range is widened by one decade
  double lx0 = std::floor(std::log10(xmin)), lx1 = std::ceil(std::log10(xmax));
  double ly0 = std::floor(std::log10(ymin)), ly1 = std::ceil(std::log10(ymax));
  if (lx1 <= lx0) lx1 = lx0 + 1;
  if (ly1 <= ly0) ly1 = ly0 + 1;
  auto px = [&](double x) { return left + (std::log10(x) - lx0) / (lx1 - lx0) * pw; };
  auto py = [&](double y) {
    const double ly = std::clamp(std::log10(y), ly0, ly1);
    return top + (ly1 - ly) / (ly1 - ly0) * ph;
  };

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << detail::fmt(left + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"15\">"
    << detail::xml_escape(labels.title) << "</text>\n";
  // grid and tick labels at decades
  o << "<g stroke=\"#dddddd\" stroke-width=\"1\">\n";
  for (double e = lx0; e <= lx1; e += 1)
    o << "<line x1=\"" << detail::fmt(px(std::pow(10, e))) << "\" y1=\"" << top << "\" x2=\""
      << detail::fmt(px(std::pow(10, e))) << "\" y2=\"" << top + ph << "\"/>\n";
  for (double e = ly0; e <= ly1; e += 1)
    o << "<line x1=\"" << left << "\" y1=\"" << detail::fmt(py(std::pow(10, e))) << "\" x2=\"" << left + pw
      << "\" y2=\"" << detail::fmt(py(std::pow(10, e))) << "\"/>\n";
  o << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333333\">\n";
  for (double e = lx0; e <= lx1; e += 1)
    o << "<text x=\"" << detail::fmt(px(std::pow(10, e))) << "\" y=\"" << top + ph + 16
      << "\" text-anchor=\"middle\">1e" << static_cast<int>(e) << "</text>\n";
  for (double e = ly0; e <= ly1; e += 1)
    o << "<text x=\"" << left - 6 << "\" y=\"" << detail::fmt(py(std::pow(10, e)) + 4)
      << "\" text-anchor=\"end\">1e" << static_cast<int>(e) << "</text>\n";
  o << "<text x=\"" << detail::fmt(left + pw / 2) << "\" y=\"" << H - 16 << "\" text-anchor=\"middle\">"
    << detail::xml_escape(labels.x_label) << "</text>\n";
  o << "<text x=\"18\" y=\"" << detail::fmt(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << detail::fmt(top + ph / 2) << ")\">" << detail::xml_escape(labels.y_label) << "</text>\n";
  o << "</g>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const PlotSeries& ser = series[s];
    const char* color = palette[s % 5];
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ser.x.size(); ++i)
      if (detail::plottable(ser.x[i], ser.mean[i])) idx.push_back(i);

    // band: upper edge left-to-right, lower edge back; non-positive bounds clamp to the axis
    bool band = idx.size() >= 2 && ser.lo.size() == ser.x.size() && ser.hi.size() == ser.x.size();
    for (std::size_t i : idx) band = band && std::isfinite(ser.lo[i]) && std::isfinite(ser.hi[i]);
    if (band) {
      o << "<polygon class=\"band\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t i : idx) o << detail::fmt(px(ser.x[i])) << ',' << detail::fmt(py(std::max(ser.hi[i], 1e-300))) << ' ';
      for (auto it = idx.rbegin(); it != idx.rend(); ++it)
        o << detail::fmt(px(ser.x[*it])) << ',' << detail::fmt(py(std::max(ser.lo[*it], 1e-300))) << ' ';
      o << "\"/>\n";
    }
    if (idx.size() == 1) {
      o << "<circle class=\"marker\" cx=\"" << detail::fmt(px(ser.x[idx[0]])) << "\" cy=\""
        << detail::fmt(py(ser.mean[idx[0]])) << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    } else if (!idx.empty()) {
      o << "<path class=\"mean\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" d=\"";
      for (std::size_t n = 0; n < idx.size(); ++n) {
        o << (n == 0 ? "M" : " L") << detail::fmt(px(ser.x[idx[n]])) << ' ' << detail::fmt(py(ser.mean[idx[n]]));
      }
      o << "\"/>\n";
    }
    const double ly = top + 14 + 18 * static_cast<double>(s);
    o << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"12\">"
      << detail::xml_escape(ser.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline PlotSeries plot_series(const AggregateSeries& agg, const std::string& metric, bool x_is_samples) {
  PlotSeries s;
  s.label = agg.algorithm;
  const MetricBand& band = agg.metrics.at(metric);
  for (std::size_t i = 0; i < agg.iterations.size(); ++i) {
    s.x.push_back(static_cast<double>(x_is_samples ? agg.samples[i] : agg.iterations[i]));
  }
  s.mean = band.mean;
  s.lo = band.lo;
  s.hi = band.hi;
  return s;
}

/// One metric of one aggregate against iterations.
inline void emit_svg_plot(const AggregateSeries& agg, const std::string& metric, const std::filesystem::path& path) {
  if (agg.empty()) throw IoError("emit_svg_plot: empty aggregate");
  write_file(path, svg_plot({plot_series(agg, metric, false)},
                            {agg.algorithm + ": " + metric + " (mean, 95% band)", "iteration", metric}));
}

/// ||K - K*||_F against environment interactions for several learners.
inline void emit_comparison_svg(const std::vector<const AggregateSeries*>& aggs, const std::filesystem::path& path) {
  std::vector<PlotSeries> series;
  for (const AggregateSeries* a : aggs)
    if (!a->empty()) series.push_back(plot_series(*a, "k_err", true));
  if (series.empty()) throw IoError("emit_comparison_svg: nothing to plot");
  write_file(path, svg_plot(series, {"||K - K*||_F vs samples (mean, 95% band)", "environment interactions",
                                     "||K - K*||_F"}));
}

}  // namespace lqrlab::harness
