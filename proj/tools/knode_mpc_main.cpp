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

#include <filesystem>
#include <iostream>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "knode/runner.hpp"

namespace fs = std::filesystem;
using namespace knode;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed{-1};
  bool strict{false};

  ExperimentConfig load() const {
    ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
    if (!out_dir.empty()) c.output_dir = out_dir;
    c.validate();
    return c;
  }
  std::optional<std::uint64_t> seed_override() const {
    if (seed < 0) return std::nullopt;
    return static_cast<std::uint64_t>(seed);
  }
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON experiment config (defaults built in)");
  cmd->add_option("--out", o.out_dir, "output directory (overrides config output_dir)");
  cmd->add_option("--seed", o.seed, "run a single seed instead of the configured list");
  cmd->add_flag("--strict", o.strict, "treat gaps and failures as errors (exit 2)");
}

int cmd_run(const CommonOpts& o) {
  const ExperimentConfig cfg = o.load();
  const GridOutcome out = run_grid(cfg, cfg.output_dir, o.seed_override());
  std::ifstream table(fs::path(cfg.output_dir) / "table.txt");
  std::cout << table.rdbuf();
  std::cout << "Wrote " << out.episode_files.size() << " episode logs to "
            << cfg.output_dir << "/episodes\n";
  if (!out.gaps.empty()) {
    std::cerr << out.gaps.size() << " cell(s) failed or produced no data\n";
    if (o.strict) return 2;
  }
  return 0;
}

int cmd_train_offline(const CommonOpts& o) {
  const ExperimentConfig cfg = o.load();
  if (cfg.t_end_s < 5.0)
    throw ConfigError(
        "config: field 'scenario.t_end_s' must be >= 5 so the offline training "
        "window [0, 5) is covered");
  const std::uint64_t seed = o.seed_override().value_or(cfg.seeds.front());
  const Scenario sc = cfg.to_scenario(cfg.radii_m.front(), cfg.speeds_mps.front());
  const EnsemblePtr model = offline_pipeline(sc, cfg.to_setup(), seed);
  fs::create_directories(cfg.output_dir);
  const std::string path =
      (fs::path(cfg.output_dir) / ("offline_s" + std::to_string(seed) + ".ckpt")).string();
  save_checkpoint(*model, path);
  std::cout << "Wrote offline checkpoint (" << model->size() << " member) to " << path
            << '\n';
  return 0;
}

int cmd_report(const CommonOpts& o) {
  const ExperimentConfig cfg = o.load();
  const fs::path episodes = fs::path(cfg.output_dir) / "episodes";
  if (!fs::is_directory(episodes))
    throw std::runtime_error("report: no episode directory at " + episodes.string());

  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(episodes))
    if (entry.path().extension() == ".log") files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());

  const double post_start =
      cfg.schedule.breakpoints.empty() ? 0.0 : cfg.schedule.breakpoints[0];
  ResultTable full, post;
  std::map<CellKey, std::vector<double>> overall_samples;
  const fs::path plots = fs::path(cfg.output_dir) / "plots";
  fs::create_directories(plots);

  std::vector<std::string> gaps;
  std::set<std::string> present;
  for (const std::string& f : files) {
    const EpisodeLog log = load_episode(f);
    if (log.steps.empty()) continue;
    present.insert(fs::path(f).filename().string());
    const MseResult m = mse(log, 0.0, log.steps.back().t);
    const Method method = method_from_name(log.method);
    const bool seed_independent =
        method == Method::MpcNominal || method == Method::Geometric;
    for (std::uint64_t s : cfg.seeds) {
      if (!seed_independent && s != log.seed) continue;
      full.add(log.radius, log.speed, log.method, s, m, log.failed);
      overall_samples[{log.radius, log.speed, log.method}].push_back(m.overall);
      if (post_start < log.steps.back().t)
        post.add(log.radius, log.speed, log.method, s,
                 mse(log, post_start, log.steps.back().t), log.failed);
    }
    save_plot_columns(log, (plots / (fs::path(f).stem().string() + ".tsv")).string());
  }
  for (double radius : cfg.radii_m)
    for (double speed : cfg.speeds_mps)
      for (const std::string& mname : cfg.methods) {
        const Method method = method_from_name(mname);
        const bool seed_independent =
            method == Method::MpcNominal || method == Method::Geometric;
        for (std::uint64_t s : cfg.seeds) {
          if (seed_independent && s != cfg.seeds.front()) continue;
          const std::string want = episode_filename(mname, radius, speed, s);
          if (!present.count(want)) gaps.push_back(want);
        }
      }

  std::ostringstream rep;
  rep << format_result_table(full, cfg.methods);
  rep << "\nPost-change window from " << post_start << " s\n";
  rep << format_result_table(post, cfg.methods);
  rep << "\nPer-cell overall MSE quartiles across seeds (q25 / median / q75)\n";
  for (const auto& [key, samples] : overall_samples) {
    const auto q = quartiles(samples);
    rep << "  R=" << key.radius << ",v=" << key.speed << " " << key.method << ": "
        << q[0] << " / " << q[1] << " / " << q[2] << '\n';
  }
  for (const std::string& baseline : cfg.methods) {
    if (baseline == "knode-online") continue;
    try {
      rep << "knode-online vs " << baseline << ": "
          << full.improvement_pct("knode-online", baseline) << "% improvement\n";
    } catch (const std::invalid_argument&) {
    }
  }
  if (!gaps.empty()) {
    rep << "\nGaps (" << gaps.size() << " expected episode file(s) missing):\n";
    for (const std::string& g : gaps) rep << "  " << g << '\n';
  }
  std::ofstream((fs::path(cfg.output_dir) / "report.txt").string()) << rep.str();
  std::cout << rep.str();
  return (o.strict && !gaps.empty()) ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KNODE-MPC online-learning quadrotor benchmark"};
  app.require_subcommand(1);

  CommonOpts run_o, train_o, report_o;
  CLI::App* run = app.add_subcommand("run", "execute the scenario grid, write artifacts");
  add_common(run, run_o);
  CLI::App* train =
      app.add_subcommand("train-offline", "train the offline KNODE model, write a checkpoint");
  add_common(train, train_o);
  CLI::App* report =
      app.add_subcommand("report", "aggregate run artifacts into tables and plot columns");
  add_common(report, report_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) return cmd_run(run_o);
    if (train->parsed()) return cmd_train_offline(train_o);
    return cmd_report(report_o);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
