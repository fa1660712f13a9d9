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

#ifndef KNODE_RUNNER_HPP
#define KNODE_RUNNER_HPP

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "knode/config.hpp"
#include "knode/report.hpp"

namespace knode {

namespace detail {

inline std::string num_tag(double v) {
  std::ostringstream ss;
  ss << v;
  std::string s = ss.str();
  for (char& c : s)
    if (c == '.') c = 'p';
  return s;
}

}  // namespace detail

/// Artifact summary of one grid execution.
struct GridOutcome {
  ResultTable full;      // MSE over the whole episode
  ResultTable post;      // MSE over [first mass change, t_end]
  std::vector<std::string> episode_files;
  std::vector<std::string> gaps;  // cells that produced no usable data
};

inline std::string episode_filename(const std::string& method, double radius, double speed,
                                    std::uint64_t seed) {
  return "ep_" + method + "_r" + detail::num_tag(radius) + "_v" + detail::num_tag(speed) +
         "_s" + std::to_string(seed) + ".log";
}

/// Execute the configured scenario grid and write all artifacts under out_dir:
/// episodes/*.log, checkpoints/*.ckpt, results.tsv, results_post.tsv,
/// table.txt. Seed-independent methods (mpc-nominal, geometric) run once per
/// cell; their MSE rows are replicated across seeds.
inline GridOutcome run_grid(const ExperimentConfig& cfg, const std::string& out_dir,
                            std::optional<std::uint64_t> seed_override = std::nullopt) {
  namespace fs = std::filesystem;
  cfg.validate();
  const std::vector<std::uint64_t> seeds =
      seed_override ? std::vector<std::uint64_t>{*seed_override} : cfg.seeds;

  const bool wants_offline =
      std::find(cfg.methods.begin(), cfg.methods.end(), "knode-offline") != cfg.methods.end();
  if (wants_offline && cfg.t_end_s < 5.0)
    throw ConfigError(
        "config: field 'scenario.t_end_s' must be >= 5 to cover the offline "
        "training window required by method knode-offline");

  fs::create_directories(fs::path(out_dir) / "episodes");
  fs::create_directories(fs::path(out_dir) / "checkpoints");

  const MethodSetup setup = cfg.to_setup();
  const std::string fingerprint = cfg.fingerprint();
  const double post_start = cfg.schedule.breakpoints.empty() ? 0.0 : cfg.schedule.breakpoints[0];

  GridOutcome out;
  auto record = [&](const EpisodeLog& log, std::uint64_t row_seed) {
    const std::string cell = log.method + " r=" + std::to_string(log.radius) +
                             " v=" + std::to_string(log.speed) +
                             " seed=" + std::to_string(row_seed);
    if (log.steps.empty()) {
      out.gaps.push_back(cell);
      return;
    }
    out.full.add(log.radius, log.speed, log.method, row_seed,
                 mse(log, 0.0, cfg.t_end_s), log.failed);
    if (post_start < log.steps.back().t)
      out.post.add(log.radius, log.speed, log.method, row_seed,
                   mse(log, post_start, cfg.t_end_s), log.failed);
    if (log.failed) out.gaps.push_back(cell + " (failed mid-run)");
  };
  auto save_log = [&](EpisodeLog& log) {
    log.config_fingerprint = fingerprint;
    const std::string path =
        (fs::path(out_dir) / "episodes" /
         episode_filename(log.method, log.radius, log.speed, log.seed))
            .string();
    save_episode(log, path);
    out.episode_files.push_back(path);
  };

  for (double radius : cfg.radii_m)
    for (double speed : cfg.speeds_mps) {
      const Scenario sc = cfg.to_scenario(radius, speed);
      for (const std::string& mname : cfg.methods) {
        const Method method = method_from_name(mname);
        const bool seed_independent =
            method == Method::MpcNominal || method == Method::Geometric;
        if (seed_independent) {
          EpisodeLog log = run_episode(method, sc, setup, seeds.front());
          save_log(log);
          for (std::uint64_t s : seeds) record(log, s);
          continue;
        }
        // the offline data-collection flight is seed-independent; fly it once
        std::optional<EpisodeLog> collect_log;
        if (method == Method::KnodeOffline) {
          Scenario collect = sc;
          collect.t_end = std::min(5.0, sc.t_end);
          collect_log = run_episode(Method::MpcNominal, collect, setup, seeds.front());
        }
        for (std::uint64_t s : seeds) {
          EnsemblePtr offline;
          if (method == Method::KnodeOffline) {
            offline = offline_train(*collect_log, sc, setup, s);
            save_checkpoint(*offline,
                            (fs::path(out_dir) / "checkpoints" /
                             ("offline_r" + detail::num_tag(radius) + "_v" +
                              detail::num_tag(speed) + "_s" + std::to_string(s) + ".ckpt"))
                                .string());
          }
          std::vector<EnsemblePtr> published;
          EpisodeLog log = run_episode(method, sc, setup, s, offline,
                                       method == Method::KnodeOnline ? &published : nullptr);
          save_log(log);
          record(log, s);
          for (const EnsemblePtr& snap : published)
            save_checkpoint(*snap,
                            (fs::path(out_dir) / "checkpoints" /
                             ("online_r" + detail::num_tag(radius) + "_v" +
                              detail::num_tag(speed) + "_s" + std::to_string(s) + "_ver" +
                              std::to_string(snap->version()) + ".ckpt"))
                                .string());
        }
      }
    }

  save_result_rows(out.full, (fs::path(out_dir) / "results.tsv").string());
  save_result_rows(out.post, (fs::path(out_dir) / "results_post.tsv").string());

  std::ostringstream table;
  table << format_result_table(out.full, cfg.methods);
  table << "\nPost-change window [" << post_start << " s, " << cfg.t_end_s << " s]\n";
  table << format_result_table(out.post, cfg.methods);
  for (const std::string& baseline : cfg.methods) {
    if (baseline == "knode-online") continue;
    try {
      table << "knode-online vs " << baseline << ": "
            << out.full.improvement_pct("knode-online", baseline) << "% improvement\n";
    } catch (const std::invalid_argument&) {
    }
  }
  if (!out.gaps.empty()) {
    table << "\nGaps:\n";
    for (const std::string& g : out.gaps) table << "  " << g << '\n';
  }
  std::ofstream((fs::path(out_dir) / "table.txt").string()) << table.str();
  return out;
}

}  // namespace knode

#endif  // KNODE_RUNNER_HPP
