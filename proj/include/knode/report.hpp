/*
 Copyright 2026 the knode-mpc-online developers

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#ifndef KNODE_REPORT_HPP
#define KNODE_REPORT_HPP

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "knode/checkpoint.hpp"
#include "knode/simbench.hpp"

namespace knode {

inline constexpr const char* kEpisodeSchema = "knode-episode-v1";
inline constexpr const char* kResultSchema = "knode-results-v1";

// ---------------------------------------------------------------------------
// Episode log serialization: line-oriented decimal text, one record per
// plant step, schema-version header. 17 significant digits throughout so a
// deterministic rerun reproduces the file bytewise.

inline void save_episode(const EpisodeLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_episode: cannot open '" + path + "'");
  out << kEpisodeSchema << '\n';
  out << "meta method " << log.method << '\n';
  out << "meta radius_m " << detail::fmt17(log.radius) << '\n';
  out << "meta speed_mps " << detail::fmt17(log.speed) << '\n';
  out << "meta seed " << log.seed << '\n';
  out << "meta config " << log.config_fingerprint << '\n';
  out << "meta failed " << (log.failed ? 1 : 0) << '\n';
  out << "columns t x[13] ref[13] u[4] cost iters converged version\n";
  for (const auto& r : log.steps) {
    out << "step " << detail::fmt17(r.t);
    for (int i = 0; i < kStateDim; ++i) out << ' ' << detail::fmt17(r.x(i));
    for (int i = 0; i < kStateDim; ++i) out << ' ' << detail::fmt17(r.ref(i));
    for (int i = 0; i < kControlDim; ++i) out << ' ' << detail::fmt17(r.u(i));
    out << ' ' << detail::fmt17(r.solve_cost) << ' ' << r.solve_iters << ' '
        << (r.converged ? 1 : 0) << ' ' << r.version << '\n';
  }
  for (const auto& e : log.events)
    out << "event " << detail::fmt17(e.t) << ' ' << e.kind << ' ' << e.version << '\n';
  out << "end\n";
  if (!out) throw std::runtime_error("save_episode: write failure on '" + path + "'");
}

inline EpisodeLog load_episode(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_episode: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kEpisodeSchema)
    throw std::runtime_error("load_episode: unknown schema in '" + path + "'");

  EpisodeLog log;
  bool ended = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string key;
      ls >> key;
      if (key == "method") ls >> log.method;
      else if (key == "radius_m") ls >> log.radius;
      else if (key == "speed_mps") ls >> log.speed;
      else if (key == "seed") ls >> log.seed;
      else if (key == "config") ls >> log.config_fingerprint;
      else if (key == "failed") { int f; ls >> f; log.failed = f != 0; }
    } else if (tag == "step") {
      StepRecord r;
      ls >> r.t;
      for (int i = 0; i < kStateDim; ++i) ls >> r.x(i);
      for (int i = 0; i < kStateDim; ++i) ls >> r.ref(i);
      for (int i = 0; i < kControlDim; ++i) ls >> r.u(i);
      int conv;
      ls >> r.solve_cost >> r.solve_iters >> conv >> r.version;
      if (!ls) throw std::runtime_error("load_episode: malformed step record");
      r.converged = conv != 0;
      log.steps.push_back(r);
    } else if (tag == "event") {
      EpisodeEvent e;
      ls >> e.t >> e.kind >> e.version;
      if (!ls) throw std::runtime_error("load_episode: malformed event record");
      log.events.push_back(e);
    } else if (tag == "columns") {
      continue;
    } else if (tag == "end") {
      ended = true;
      break;
    } else if (!tag.empty()) {
      throw std::runtime_error("load_episode: unknown record '" + tag + "'");
    }
  }
  if (!ended) throw std::runtime_error("load_episode: truncated file '" + path + "'");
  return log;
}

/// Plot-ready columns: t plus reference/actual per axis, tab separated.
inline void save_plot_columns(const EpisodeLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_plot_columns: cannot open '" + path + "'");
  out << "t\tref_x\tact_x\tref_y\tact_y\tref_z\tact_z\n";
  for (const auto& r : log.steps) {
    out << detail::fmt17(r.t);
    for (int i = 0; i < 3; ++i)
      out << '\t' << detail::fmt17(r.ref(i)) << '\t' << detail::fmt17(r.x(i));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Result aggregation

struct CellKey {
  double radius;
  double speed;
  std::string method;
  bool operator<(const CellKey& o) const {
    return std::tie(radius, speed, method) < std::tie(o.radius, o.speed, o.method);
  }
};

struct SeedResult {
  std::uint64_t seed{0};
  MseResult mse;
  bool failed{false};
};

/// Per (radius, speed, method) MSEs across seeds plus aggregate improvements.
struct ResultTable {
  std::map<CellKey, std::vector<SeedResult>> cells;

  void add(double radius, double speed, const std::string& method, std::uint64_t seed,
           const MseResult& m, bool failed = false) {
    cells[{radius, speed, method}].push_back({seed, m, failed});
  }

  static double mean_overall(const std::vector<SeedResult>& rs) {
    double acc = 0.0;
    for (const auto& r : rs) acc += r.mse.overall;
    return acc / static_cast<double>(rs.size());
  }

  /// 100 * (baseline - ours) / baseline on per-cell overall-MSE means,
  /// averaged over the grid cells both methods cover.
  double improvement_pct(const std::string& ours, const std::string& baseline) const {
    double acc = 0.0;
    int n = 0;
    for (const auto& [key, rs] : cells) {
      if (key.method != ours) continue;
      const auto it = cells.find({key.radius, key.speed, baseline});
      if (it == cells.end()) continue;
      const double b = mean_overall(it->second);
      if (b <= 0.0) continue;
      acc += 100.0 * (b - mean_overall(rs)) / b;
      ++n;
    }
    if (n == 0) throw std::invalid_argument("improvement_pct: no overlapping cells");
    return acc / n;
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return (n % 2) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Quartiles by linear interpolation of order statistics (inclusive method);
/// a single sample collapses all three to that value.
inline std::array<double, 3> quartiles(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("quartiles: empty sample");
  std::sort(v.begin(), v.end());
  auto at = [&v](double q) {
    const double pos = q * (static_cast<double>(v.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    return (lo + 1 < v.size()) ? v[lo] * (1.0 - frac) + v[lo + 1] * frac : v[lo];
  };
  return {at(0.25), at(0.5), at(0.75)};
}

/// Machine-readable rows: one line per (cell, seed).
inline void save_result_rows(const ResultTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_result_rows: cannot open '" + path + "'");
  out << kResultSchema << '\n';
  out << "radius_m\tspeed_mps\tmethod\tseed\toverall\tmse_x\tmse_y\tmse_z\tfailed\n";
  for (const auto& [key, rs] : table.cells)
    for (const auto& r : rs) {
      out << detail::fmt17(key.radius) << '\t' << detail::fmt17(key.speed) << '\t'
          << key.method << '\t' << r.seed << '\t' << detail::fmt17(r.mse.overall) << '\t'
          << detail::fmt17(r.mse.per_axis.x()) << '\t' << detail::fmt17(r.mse.per_axis.y())
          << '\t' << detail::fmt17(r.mse.per_axis.z()) << '\t' << (r.failed ? 1 : 0)
          << '\n';
    }
}

/// Human-readable matrix: rows per (radius, speed), one column per method,
/// per-cell minimum marked with '*' (the bold-equivalent marker).
inline std::string format_result_table(const ResultTable& table,
                                       const std::vector<std::string>& methods) {
  std::vector<std::pair<double, double>> grid;
  for (const auto& [key, rs] : table.cells) {
    const std::pair<double, double> cell{key.radius, key.speed};
    if (std::find(grid.begin(), grid.end(), cell) == grid.end()) grid.push_back(cell);
  }
  std::sort(grid.begin(), grid.end());

  std::ostringstream out;
  out << "Overall tracking MSE (mean across seeds; * marks the row minimum)\n";
  out << std::left << std::setw(14) << "radius,speed";
  for (const auto& m : methods) out << std::setw(16) << m;
  out << '\n';
  for (const auto& [radius, speed] : grid) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& m : methods) {
      const auto it = table.cells.find({radius, speed, m});
      if (it != table.cells.end())
        best = std::min(best, ResultTable::mean_overall(it->second));
    }
    std::ostringstream label;
    label << "R=" << radius << ",v=" << speed;
    out << std::setw(14) << label.str();
    for (const auto& m : methods) {
      const auto it = table.cells.find({radius, speed, m});
      if (it == table.cells.end()) {
        out << std::setw(16) << "(missing)";
        continue;
      }
      const double v = ResultTable::mean_overall(it->second);
      std::ostringstream cellstr;
      cellstr << std::scientific << std::setprecision(4) << v << (v == best ? " *" : "");
      out << std::setw(16) << cellstr.str();
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace knode

#endif  // KNODE_REPORT_HPP
