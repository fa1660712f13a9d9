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

#ifndef KNODE_CONFIG_HPP
#define KNODE_CONFIG_HPP

#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "knode/simbench.hpp"

namespace knode {

/// User-facing configuration mistake: bad file, bad field, bad combination.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kConfigSchemaVersion = 1;

/// Everything a run needs, loadable from a JSON file with units in key names.
struct ExperimentConfig {
  QuadParams quad;
  int ensemble_capacity{3};
  std::vector<int> member_dims{17, 32, 32, 13};
  TrainConfig trainer;
  int horizon{20};
  double dt_mpc_s{0.02};
  Eigen::VectorXd q_diag;
  Eigen::VectorXd r_diag;
  double p_scale{5.0};
  int max_iters{50};
  double grad_tol{1e-6};
  double step_tol{1e-9};
  double t_col_s{0.15};
  double training_latency_s{0.05};
  std::string scheduler{"sync"};  // sync | concurrent
  GeoGains geo;
  double t_end_s{8.0};
  double dt_plant_s{0.002};
  double altitude_m{0.0};
  std::vector<double> radii_m{2.0, 3.0, 4.0};
  std::vector<double> speeds_mps{0.8, 1.0, 1.2};
  MassSchedule schedule{MassSchedule::standard()};
  std::vector<std::string> methods{"mpc-nominal", "knode-offline", "knode-online",
                                   "geometric"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string output_dir{"results"};

  ExperimentConfig() {
    trainer.epochs = 60;
    Eigen::VectorXd qd(kStateDim);
    qd << 40, 40, 40, 4, 4, 4, 1, 1, 1, 1, 0.1, 0.1, 0.1;
    q_diag = qd;
    r_diag = Eigen::Vector4d(0.5, 20, 20, 20);
  }

  void validate() const {
    auto need = [](bool ok, const char* field, const char* why) {
      if (!ok) throw ConfigError(std::string("config: field '") + field + "' " + why);
    };
    need(quad.m > 0.0, "quad.mass_kg", "must be positive");
    need(ensemble_capacity >= 1, "ensemble.capacity", "must be >= 1");
    need(member_dims.size() >= 2 && member_dims.front() == kAugDim &&
             member_dims.back() == kStateDim,
         "ensemble.member_dims", "must map 17 inputs to 13 outputs");
    need(trainer.epochs >= 1, "trainer.epochs", "must be >= 1");
    need(trainer.learning_rate > 0.0, "trainer.learning_rate", "must be positive");
    need(trainer.l2_coeff >= 0.0, "trainer.l2_coeff", "must be non-negative");
    need(horizon >= 1, "ocp.horizon", "must be >= 1");
    need(dt_mpc_s > 0.0, "ocp.dt_mpc_s", "must be positive");
    need(q_diag.size() == kStateDim, "ocp.q_diag", "must hold 13 entries");
    need(r_diag.size() == kControlDim, "ocp.r_diag", "must hold 4 entries");
    need(r_diag.minCoeff() > 0.0, "ocp.r_diag", "must be positive (R is PD)");
    need(q_diag.minCoeff() >= 0.0, "ocp.q_diag", "must be non-negative (Q is PSD)");
    need(p_scale > 0.0, "ocp.p_scale", "must be positive");
    need(dt_plant_s > 0.0, "scenario.dt_plant_s", "must be positive");
    need(t_end_s > 0.0, "scenario.t_end_s", "must be positive");

    auto multiple_of = [](double a, double b) {
      const double r = a / b;
      return std::abs(r - std::round(r)) <= 1e-9;
    };
    need(multiple_of(dt_mpc_s, dt_plant_s), "ocp.dt_mpc_s",
         "must be an integer multiple of scenario.dt_plant_s");
    need(multiple_of(t_col_s, dt_plant_s), "orchestrator.t_col_s",
         "must be an integer multiple of scenario.dt_plant_s");
    need(scheduler == "sync" || scheduler == "concurrent", "orchestrator.scheduler",
         "must be 'sync' or 'concurrent'");
    need(!radii_m.empty(), "scenario.radii_m", "must not be empty");
    need(!speeds_mps.empty(), "scenario.speeds_mps", "must not be empty");
    need(!methods.empty(), "scenario.methods", "must not be empty");
    need(!seeds.empty(), "scenario.seeds", "must not be empty");
    for (double r : radii_m) need(r > 0.0, "scenario.radii_m", "entries must be positive");
    for (double v : speeds_mps)
      need(v >= 0.0, "scenario.speeds_mps", "entries must be non-negative");
    for (const auto& m : methods) method_from_name(m);  // throws on unknown
    try {
      schedule.validate();
      quad.validate();
      geo.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }

  MethodSetup to_setup() const {
    MethodSetup s;
    s.params = quad;
    s.ocp = default_quad_ocp_config(quad);
    s.ocp.N = horizon;
    s.ocp.dt = dt_mpc_s;
    s.ocp.Q = q_diag.asDiagonal();
    s.ocp.P = (p_scale * q_diag).eval().asDiagonal();
    s.ocp.R = r_diag.asDiagonal();
    s.ocp.max_iters = max_iters;
    s.ocp.grad_tol = grad_tol;
    s.ocp.step_tol = step_tol;
    s.train = trainer;
    s.orch.t_col = t_col_s;
    s.orch.sample_dt = dt_plant_s;
    s.orch.training_latency = training_latency_s;
    s.orch.concurrent = scheduler == "concurrent";
    s.geo = geo;
    s.ensemble_capacity = ensemble_capacity;
    s.member_dims = member_dims;
    return s;
  }

  Scenario to_scenario(double radius, double speed) const {
    Scenario sc;
    sc.traj.radius = radius;
    sc.traj.speed = speed;
    sc.traj.altitude = altitude_m;
    sc.schedule = schedule;
    sc.t_end = t_end_s;
    sc.dt_plant = dt_plant_s;
    return sc;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema_version"] = kConfigSchemaVersion;
    j["quad"] = {{"mass_kg", quad.m},
                 {"inertia_diag_kgm2", {quad.I(0, 0), quad.I(1, 1), quad.I(2, 2)}},
                 {"gravity_mps2", {quad.g.x(), quad.g.y(), quad.g.z()}},
                 {"u_min", {quad.u_min(0), quad.u_min(1), quad.u_min(2), quad.u_min(3)}},
                 {"u_max", {quad.u_max(0), quad.u_max(1), quad.u_max(2), quad.u_max(3)}}};
    j["ensemble"] = {{"capacity", ensemble_capacity}, {"member_dims", member_dims}};
    j["trainer"] = {{"epochs", trainer.epochs},
                    {"learning_rate", trainer.learning_rate},
                    {"l2_coeff", trainer.l2_coeff},
                    {"beta1", trainer.beta1},
                    {"beta2", trainer.beta2},
                    {"eps", trainer.eps}};
    j["ocp"] = {{"horizon", horizon},
                {"dt_mpc_s", dt_mpc_s},
                {"q_diag", std::vector<double>(q_diag.data(), q_diag.data() + q_diag.size())},
                {"r_diag", std::vector<double>(r_diag.data(), r_diag.data() + r_diag.size())},
                {"p_scale", p_scale},
                {"max_iters", max_iters},
                {"grad_tol", grad_tol},
                {"step_tol", step_tol}};
    j["orchestrator"] = {{"t_col_s", t_col_s},
                         {"training_latency_s", training_latency_s},
                         {"scheduler", scheduler}};
    j["geometric"] = {{"kpos_npm", {geo.kpos.x(), geo.kpos.y(), geo.kpos.z()}},
                      {"kvel_nspm", {geo.kvel.x(), geo.kvel.y(), geo.kvel.z()}},
                      {"katt_nmprad", {geo.katt.x(), geo.katt.y(), geo.katt.z()}},
                      {"krate_nmsprad", {geo.krate.x(), geo.krate.y(), geo.krate.z()}}};
    j["scenario"] = {{"t_end_s", t_end_s},
                     {"dt_plant_s", dt_plant_s},
                     {"altitude_m", altitude_m},
                     {"radii_m", radii_m},
                     {"speeds_mps", speeds_mps},
                     {"mass_breakpoints_s", schedule.breakpoints},
                     {"mass_multipliers", schedule.multipliers},
                     {"methods", methods},
                     {"seeds", seeds}};
    j["output_dir"] = output_dir;
    return j;
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    auto get = [&j](const char* section, const char* key, auto& target) {
      if (!j.contains(section)) return;
      const auto& s = j.at(section);
      if (!s.contains(key)) return;
      try {
        s.at(key).get_to(target);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: field '") + section + "." + key +
                          "' has the wrong type (" + e.what() + ")");
      }
    };
    auto get_vec = [&j](const char* section, const char* key, auto setter, int n) {
      if (!j.contains(section) || !j.at(section).contains(key)) return;
      std::vector<double> v;
      try {
        j.at(section).at(key).get_to(v);
      } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config: field '") + section + "." + key +
                          "' must be a numeric array");
      }
      if (n >= 0 && static_cast<int>(v.size()) != n)
        throw ConfigError(std::string("config: field '") + section + "." + key +
                          "' must hold " + std::to_string(n) + " entries");
      setter(v);
    };

    if (j.contains("schema_version") && j.at("schema_version").get<int>() != kConfigSchemaVersion)
      throw ConfigError("config: unknown schema_version");

    get("quad", "mass_kg", c.quad.m);
    get_vec("quad", "inertia_diag_kgm2",
            [&c](const std::vector<double>& v) {
              c.quad.I = Vec3(v[0], v[1], v[2]).asDiagonal();
            },
            3);
    get_vec("quad", "gravity_mps2",
            [&c](const std::vector<double>& v) { c.quad.g = Vec3(v[0], v[1], v[2]); }, 3);
    get_vec("quad", "u_min",
            [&c](const std::vector<double>& v) { c.quad.u_min = Vec4(v[0], v[1], v[2], v[3]); },
            4);
    get_vec("quad", "u_max",
            [&c](const std::vector<double>& v) { c.quad.u_max = Vec4(v[0], v[1], v[2], v[3]); },
            4);
    get("ensemble", "capacity", c.ensemble_capacity);
    get("ensemble", "member_dims", c.member_dims);
    get("trainer", "epochs", c.trainer.epochs);
    get("trainer", "learning_rate", c.trainer.learning_rate);
    get("trainer", "l2_coeff", c.trainer.l2_coeff);
    get("trainer", "beta1", c.trainer.beta1);
    get("trainer", "beta2", c.trainer.beta2);
    get("trainer", "eps", c.trainer.eps);
    get("ocp", "horizon", c.horizon);
    get("ocp", "dt_mpc_s", c.dt_mpc_s);
    get_vec("ocp", "q_diag",
            [&c](const std::vector<double>& v) {
              c.q_diag = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
            },
            kStateDim);
    get_vec("ocp", "r_diag",
            [&c](const std::vector<double>& v) {
              c.r_diag = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
            },
            kControlDim);
    get("ocp", "p_scale", c.p_scale);
    get("ocp", "max_iters", c.max_iters);
    get("ocp", "grad_tol", c.grad_tol);
    get("ocp", "step_tol", c.step_tol);
    get("orchestrator", "t_col_s", c.t_col_s);
    get("orchestrator", "training_latency_s", c.training_latency_s);
    get("orchestrator", "scheduler", c.scheduler);
    get_vec("geometric", "kpos_npm",
            [&c](const std::vector<double>& v) { c.geo.kpos = Vec3(v[0], v[1], v[2]); }, 3);
    get_vec("geometric", "kvel_nspm",
            [&c](const std::vector<double>& v) { c.geo.kvel = Vec3(v[0], v[1], v[2]); }, 3);
    get_vec("geometric", "katt_nmprad",
            [&c](const std::vector<double>& v) { c.geo.katt = Vec3(v[0], v[1], v[2]); }, 3);
    get_vec("geometric", "krate_nmsprad",
            [&c](const std::vector<double>& v) { c.geo.krate = Vec3(v[0], v[1], v[2]); }, 3);
    get("scenario", "t_end_s", c.t_end_s);
    get("scenario", "dt_plant_s", c.dt_plant_s);
    get("scenario", "altitude_m", c.altitude_m);
    get("scenario", "radii_m", c.radii_m);
    get("scenario", "speeds_mps", c.speeds_mps);
    get("scenario", "mass_breakpoints_s", c.schedule.breakpoints);
    get("scenario", "mass_multipliers", c.schedule.multipliers);
    get("scenario", "methods", c.methods);
    get("scenario", "seeds", c.seeds);
    if (j.contains("output_dir")) j.at("output_dir").get_to(c.output_dir);
    return c;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: parse error in '" + path + "': " + e.what());
    }
    ExperimentConfig c = from_json(j);
    c.validate();
    return c;
  }

  /// Stable digest of the canonical serialized form.
  std::string fingerprint() const {
    const std::size_t h = std::hash<std::string>{}(to_json().dump());
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016zx", h);
    return buf;
  }
};

}  // namespace knode

#endif  // KNODE_CONFIG_HPP
