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

#ifndef KNODE_SIMBENCH_HPP
#define KNODE_SIMBENCH_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "knode/ocp.hpp"
#include "knode/orchestrator.hpp"

namespace knode {

/// Piecewise-constant plant-mass multipliers; the value switches exactly at
/// each breakpoint (left-continuous before it).
struct MassSchedule {
  std::vector<double> breakpoints;
  std::vector<double> multipliers;  // size breakpoints.size() + 1

  void validate() const {
    if (multipliers.size() != breakpoints.size() + 1)
      throw std::invalid_argument("MassSchedule: need one more multiplier than breakpoint");
    for (double m : multipliers)
      if (!(m > 0.0)) throw std::invalid_argument("MassSchedule: multipliers must be positive");
    for (std::size_t i = 1; i < breakpoints.size(); ++i)
      if (!(breakpoints[i] > breakpoints[i - 1]))
        throw std::invalid_argument("MassSchedule: breakpoints must strictly increase");
  }

  double multiplier(double t) const {
    std::size_t i = 0;
    while (i < breakpoints.size() && t >= breakpoints[i]) ++i;
    return multipliers[i];
  }

  static MassSchedule none() { return MassSchedule{{}, {1.0}}; }
  /// -50% at 2 s, then 133% of nominal from 5 s.
  static MassSchedule standard() { return MassSchedule{{2.0, 5.0}, {1.0, 0.5, 1.33}}; }
};

/// Planar circle at constant speed, starting at (radius, 0, altitude)
/// relative to center; speed 0 degenerates to a fixed setpoint.
struct ReferenceTrajectory {
  double radius{3.0};
  double speed{1.0};
  double altitude{0.0};
  Vec3 center{Vec3::Zero()};

  void validate() const {
    if (!(radius > 0.0)) throw std::invalid_argument("ReferenceTrajectory: radius must be > 0");
    if (speed < 0.0) throw std::invalid_argument("ReferenceTrajectory: speed must be >= 0");
  }

  StateVec sample(double t) const {
    const double om = speed / radius;
    StateVec x = StateVec::Zero();
    x(0) = center.x() + radius * std::cos(om * t);
    x(1) = center.y() + radius * std::sin(om * t);
    x(2) = center.z() + altitude;
    x(3) = -speed * std::sin(om * t);
    x(4) = speed * std::cos(om * t);
    x(6) = 1.0;  // identity attitude, zero rate
    return x;
  }

  Vec3 accel(double t) const {
    const double om = speed / radius;
    return Vec3(-speed * om * std::cos(om * t), -speed * om * std::sin(om * t), 0.0);
  }
};

/// Per-axis force/torque PD gains for the geometric controller.
struct GeoGains {
  Vec3 kpos{0.6, 0.6, 0.6};    // N per m
  Vec3 kvel{0.25, 0.25, 0.25};  // N per m/s
  Vec3 katt{0.02, 0.02, 0.008};  // N m per rad
  Vec3 krate{1.5e-3, 1.5e-3, 6e-4};  // N m per rad/s

  void validate() const {
    if (kpos.minCoeff() <= 0 || kvel.minCoeff() <= 0 || katt.minCoeff() <= 0 ||
        krate.minCoeff() <= 0)
      throw std::invalid_argument("GeoGains: all gains must be positive");
  }
};

/// Mellinger-style geometric tracking controller: PD force with gravity and
/// acceleration feedforward, thrust as the body-z projection, attitude and
/// rate PD toward the desired orientation. Output clamped to the bounds.
inline ControlInput geometric_control(const StateVec& x, const StateVec& ref,
                                      const Vec3& a_ref, const GeoGains& g,
                                      const QuadParams& p) {
  const Vec3 r = x.segment<3>(0), v = x.segment<3>(3), w = x.segment<3>(10);
  const Vec3 r_ref = ref.segment<3>(0), v_ref = ref.segment<3>(3);

  const Vec3 f_des = -p.m * p.g + p.m * a_ref +
                     g.kpos.cwiseProduct(r_ref - r) + g.kvel.cwiseProduct(v_ref - v);
  const Mat3 R = rotation_from_quaternion(x.segment<4>(6));
  const double eta = f_des.dot(R.col(2));

  Mat3 Rd = Mat3::Identity();
  if (f_des.norm() > 1e-9) {
    const Vec3 b3 = f_des.normalized();
    const Vec3 b1c(1.0, 0.0, 0.0);  // zero desired yaw
    Vec3 b2 = b3.cross(b1c);
    if (b2.norm() < 1e-9) b2 = Vec3(0.0, 1.0, 0.0);
    b2.normalize();
    const Vec3 b1 = b2.cross(b3);
    Rd.col(0) = b1;
    Rd.col(1) = b2;
    Rd.col(2) = b3;
  }
  const Mat3 Re = 0.5 * (Rd.transpose() * R - R.transpose() * Rd);
  const Vec3 e_att(Re(2, 1), Re(0, 2), Re(1, 0));

  ControlInput u;
  u.eta = std::clamp(eta, p.u_min(0), p.u_max(0));
  const Vec3 tau = -g.katt.cwiseProduct(e_att) - g.krate.cwiseProduct(w);
  for (int i = 0; i < 3; ++i) u.tau(i) = std::clamp(tau(i), p.u_min(i + 1), p.u_max(i + 1));
  return u;
}

/// One plant step: nominal dynamics with the scheduled mass, RK4, renorm.
/// Controllers never see the multiplier.
inline StateVec plant_step(const StateVec& x, const Vec4& u, double t, double dt,
                           const MassSchedule& schedule, const QuadParams& p) {
  QuadParams true_p = p;
  true_p.m = p.m * schedule.multiplier(t);
  auto f = [&true_p](double, const AugVec& z) {
    AugVec dz = AugVec::Zero();
    dz.head<kStateDim>() = nominal_derivative(z, true_p);
    return dz;
  };
  StateVec x1 = state_part(rk4_step(f, augment(x, u), t, dt));
  renormalize_state(x1);
  return x1;
}

enum class Method { MpcNominal, KnodeOffline, KnodeOnline, Geometric };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::MpcNominal: return "mpc-nominal";
    case Method::KnodeOffline: return "knode-offline";
    case Method::KnodeOnline: return "knode-online";
    case Method::Geometric: return "geometric";
  }
  throw std::invalid_argument("method_name: unknown method");
}

inline Method method_from_name(const std::string& s) {
  if (s == "mpc-nominal") return Method::MpcNominal;
  if (s == "knode-offline") return Method::KnodeOffline;
  if (s == "knode-online") return Method::KnodeOnline;
  if (s == "geometric") return Method::Geometric;
  throw std::invalid_argument("method_from_name: unknown method '" + s + "'");
}

struct Scenario {
  ReferenceTrajectory traj;
  MassSchedule schedule{MassSchedule::standard()};
  double t_end{8.0};
  double dt_plant{0.002};

  void validate() const {
    traj.validate();
    schedule.validate();
    if (!(t_end > 0.0) || !(dt_plant > 0.0))
      throw std::invalid_argument("Scenario: durations must be positive");
  }
};

struct StepRecord {
  double t{0.0};
  StateVec x{StateVec::Zero()};
  StateVec ref{StateVec::Zero()};
  Vec4 u{Vec4::Zero()};
  double solve_cost{0.0};
  int solve_iters{0};
  bool converged{true};
  std::uint64_t version{0};
};

struct EpisodeEvent {
  double t{0.0};
  std::string kind;
  std::uint64_t version{0};
};

struct EpisodeLog {
  std::string method;
  double radius{0.0};
  double speed{0.0};
  std::uint64_t seed{0};
  std::string config_fingerprint;
  std::vector<StepRecord> steps;
  std::vector<EpisodeEvent> events;
  bool failed{false};
};

/// Everything an episode needs besides the scenario itself.
struct MethodSetup {
  QuadParams params;
  OcpConfig ocp;
  TrainConfig train;
  OrchestratorConfig orch;
  GeoGains geo;
  int ensemble_capacity{3};
  std::vector<int> member_dims{17, 32, 32, 13};

  static MethodSetup defaults() {
    MethodSetup s;
    s.ocp = default_quad_ocp_config(s.params);
    return s;
  }
};

/// Full closed loop over the scenario. knode-offline requires the frozen
/// model from offline_pipeline; knode-online wires in the orchestrator.
inline EpisodeLog run_episode(Method method, const Scenario& scenario,
                              const MethodSetup& setup, std::uint64_t seed,
                              EnsemblePtr offline_model = nullptr,
                              std::vector<EnsemblePtr>* published = nullptr) {
  scenario.validate();
  if (method == Method::KnodeOffline && !offline_model)
    throw std::invalid_argument("run_episode: knode-offline needs an offline model");

  EpisodeLog log;
  log.method = method_name(method);
  log.radius = scenario.traj.radius;
  log.speed = scenario.traj.speed;
  log.seed = seed;

  EnsemblePtr model =
      (method == Method::KnodeOffline)
          ? offline_model
          : std::make_shared<const EnsembleModel>(setup.params, setup.ensemble_capacity,
                                                  setup.member_dims);
  TrainConfig tc = setup.train;
  tc.seed = seed;
  std::optional<OnlineOrchestrator> orch;
  if (method == Method::KnodeOnline) orch.emplace(model, tc, setup.orch);
  std::size_t orch_events_seen = 0;

  const int substeps =
      static_cast<int>(std::round(setup.ocp.dt / scenario.dt_plant));
  const int steps = static_cast<int>(std::round(scenario.t_end / scenario.dt_plant));
  const bool uses_mpc = method != Method::Geometric;

  StateVec x = scenario.traj.sample(0.0);
  Vec4 u = Vec4::Zero();
  StepRecord diag;
  std::vector<Eigen::VectorXd> warm;
  auto ref_fn = [&scenario](double tt) { return scenario.traj.sample(tt); };

  for (double bp : scenario.schedule.breakpoints)
    if (bp < scenario.t_end) log.events.push_back({bp, "mass_change", 0});

  for (int k = 0; k < steps; ++k) {
    const double t = k * scenario.dt_plant;
    if (uses_mpc && k % substeps == 0) {
      if (orch) {
        orch->maybe_publish(t);
        if (orch->model()->version() != model->version() && published)
          published->push_back(orch->model());
        model = orch->model();
      }
      try {
        auto [ui, sol] = control_step(model, x, t, ref_fn, setup.ocp, warm);
        u = ui.flatten();
        warm = shift_warm_start(sol);
        diag.solve_cost = sol.cost;
        diag.solve_iters = sol.iterations;
        diag.converged = sol.converged;
      } catch (const std::exception&) {
        log.failed = true;
        log.events.push_back({t, "solver_failure", model->version()});
        break;
      }
    }
    if (!uses_mpc)
      u = geometric_control(x, scenario.traj.sample(t), scenario.traj.accel(t),
                            setup.geo, setup.params)
              .flatten();

    StepRecord rec = diag;
    rec.t = t;
    rec.x = x;
    rec.ref = scenario.traj.sample(t);
    rec.u = u;
    rec.version = model->version();
    log.steps.push_back(rec);
    if (orch) orch->record_sample(t, x, u);

    x = plant_step(x, u, t, scenario.dt_plant, scenario.schedule, setup.params);
    if (!x.allFinite()) {
      log.failed = true;
      log.events.push_back({t, "plant_divergence", model->version()});
      break;
    }
  }

  if (orch) {
    for (; orch_events_seen < orch->events().size(); ++orch_events_seen) {
      const auto& e = orch->events()[orch_events_seen];
      log.events.push_back({e.t, e.kind, e.version});
    }
  }
  std::sort(log.events.begin(), log.events.end(),
            [](const EpisodeEvent& a, const EpisodeEvent& b) { return a.t < b.t; });
  return log;
}

/// Per-axis mean squared position error over [t_a, t_b]; overall is the mean
/// of the three per-axis values.
struct MseResult {
  double overall{0.0};
  Vec3 per_axis{Vec3::Zero()};
};

inline MseResult mse(const EpisodeLog& log, double t_a, double t_b) {
  Vec3 acc = Vec3::Zero();
  int n = 0;
  for (const auto& rec : log.steps) {
    if (rec.t < t_a || rec.t > t_b) continue;
    const Vec3 e = rec.x.segment<3>(0) - rec.ref.segment<3>(0);
    acc += e.cwiseProduct(e);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mse: empty window");
  MseResult r;
  r.per_axis = acc / n;
  r.overall = r.per_axis.mean();
  return r;
}

/// Train the single offline member on the first window of a nominal flight
/// log, subsampled at stride plant steps. The window covers [0, 5 s), i.e.
/// the first mass change but not the second.
inline EnsemblePtr offline_train(const EpisodeLog& log, const Scenario& scenario,
                                 const MethodSetup& setup, std::uint64_t seed,
                                 int stride = 4) {
  if (log.failed || log.steps.empty())
    throw std::runtime_error("offline_train: data collection failed");
  const double t_cut = std::min(5.0, scenario.t_end);
  DataBatch batch;
  batch.dt = scenario.dt_plant * stride;
  for (std::size_t i = 0; i + 1 < log.steps.size() && log.steps[i + 1].t < t_cut;
       i += stride)
    batch.samples.push_back({log.steps[i].t, log.steps[i].x, log.steps[i].u});
  batch.model_version = 0;

  EnsembleModel base(setup.params, setup.ensemble_capacity, setup.member_dims);
  TrainConfig tc = setup.train;
  tc.seed = seed;
  auto [trained, report] = train_member(base, batch, tc);
  (void)report;
  return std::make_shared<const EnsembleModel>(std::move(trained));
}

/// Offline KNODE pipeline: fly the nominal MPC over [0, 5) of the scenario,
/// train one member on the collected data, return the frozen ensemble.
inline EnsemblePtr offline_pipeline(const Scenario& scenario, const MethodSetup& setup,
                                    std::uint64_t seed, int stride = 4) {
  Scenario collect = scenario;
  collect.t_end = std::min(5.0, scenario.t_end);
  const EpisodeLog log = run_episode(Method::MpcNominal, collect, setup, seed);
  return offline_train(log, scenario, setup, seed, stride);
}

}  // namespace knode

#endif  // KNODE_SIMBENCH_HPP
