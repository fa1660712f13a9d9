#include <cmath>

#include "doctest.h"
#include "knode/simbench.hpp"

using namespace knode;

namespace {

Scenario circle_scenario(double t_end = 8.0) {
  Scenario sc;
  sc.traj.radius = 3.0;
  sc.traj.speed = 1.0;
  sc.t_end = t_end;
  return sc;
}

MethodSetup quick_setup() {
  MethodSetup s = MethodSetup::defaults();
  s.train.epochs = 30;
  s.member_dims = {17, 16, 13};
  return s;
}

/// Slice a plant-rate window [t_a, t_b) of an episode into a training batch.
DataBatch slice_batch(const EpisodeLog& log, double t_a, double t_b) {
  DataBatch b;
  b.dt = 0.002;
  for (const auto& rec : log.steps)
    if (rec.t >= t_a && rec.t < t_b) b.samples.push_back({rec.t, rec.x, rec.u});
  return b;
}

}  // namespace

TEST_CASE("mass schedule: standard breakpoints and validation") {
  const MassSchedule s = MassSchedule::standard();
  CHECK(s.multiplier(0.0) == 1.0);
  CHECK(s.multiplier(1.9) == 1.0);
  CHECK(s.multiplier(2.0) == 0.5);
  CHECK(s.multiplier(4.999) == 0.5);
  CHECK(s.multiplier(5.0) == 1.33);
  CHECK(s.multiplier(8.0) == 1.33);

  MassSchedule bad{{2.0, 2.0}, {1.0, 0.5, 1.33}};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = MassSchedule{{2.0}, {1.0, -0.5}};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = MassSchedule{{2.0}, {1.0}};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("reference trajectory: start point, quarter period, degenerate speed") {
  ReferenceTrajectory traj;
  traj.radius = 3.0;
  traj.speed = 1.0;
  const StateVec x0 = traj.sample(0.0);
  CHECK((x0.segment<3>(0) - Vec3(3, 0, 0)).norm() == 0.0);
  CHECK((x0.segment<3>(3) - Vec3(0, 1, 0)).norm() < 1e-12);
  CHECK((x0.segment<4>(6) - Vec4(1, 0, 0, 0)).norm() == 0.0);

  const double tq = 0.5 * M_PI * traj.radius / traj.speed;
  CHECK((traj.sample(tq).segment<3>(0) - Vec3(0, 3, 0)).norm() < 1e-9);
  CHECK(traj.sample(tq).segment<3>(3).norm() == doctest::Approx(1.0).epsilon(1e-12));

  traj.speed = 0.0;
  CHECK((traj.sample(17.0).segment<3>(0) - Vec3(3, 0, 0)).norm() == 0.0);
  CHECK(traj.sample(17.0).segment<3>(3).norm() == 0.0);

  traj.radius = 0.0;
  CHECK_THROWS_AS(traj.validate(), std::invalid_argument);
}

TEST_CASE("geometric control: equilibrium, PD arithmetic, yaw-rate sign") {
  QuadParams p;
  GeoGains g;
  ReferenceTrajectory hover;
  hover.speed = 0.0;
  const StateVec ref = hover.sample(0.0);

  ControlInput u = geometric_control(ref, ref, Vec3::Zero(), g, p);
  CHECK(u.eta == doctest::Approx(p.m * 9.81).epsilon(1e-12));
  CHECK(u.tau.norm() < 1e-12);

  // 0.1 m below the reference: vertical force exceeds mg by kpos_z * 0.1
  StateVec low = ref;
  low(2) -= 0.1;
  u = geometric_control(low, ref, Vec3::Zero(), g, p);
  CHECK(u.eta == doctest::Approx(p.m * 9.81 + g.kpos.z() * 0.1).epsilon(1e-9));

  // pure yaw rate: opposing torque
  StateVec spinning = ref;
  spinning(12) = 2.0;
  u = geometric_control(spinning, ref, Vec3::Zero(), g, p);
  CHECK(u.tau.z() == doctest::Approx(-g.krate.z() * 2.0).epsilon(1e-9));

  GeoGains bad;
  bad.katt.x() = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("plant step: scheduled mass is applied, controller-invisible") {
  QuadParams p;
  const MassSchedule s = MassSchedule::standard();
  const StateVec hover = QuadState{}.flatten();
  const Vec4 u_hover(p.m * 9.81, 0, 0, 0);
  const double dt = 0.002;

  // t=1.9: nominal mass, hover thrust balances
  CHECK((plant_step(hover, u_hover, 1.9, dt, s, p) - hover).norm() < 1e-12);
  // t=2.0: halved mass, same thrust accelerates up at ~g
  const StateVec x2 = plant_step(hover, u_hover, 2.0, dt, s, p);
  CHECK(x2(5) == doctest::Approx(9.81 * dt).epsilon(1e-6));
  // t=5.0: mass 1.33, thrust deficit pulls down at g(1 - 1/1.33)
  const StateVec x5 = plant_step(hover, u_hover, 5.0, dt, s, p);
  CHECK(x5(5) == doctest::Approx(-9.81 * (1.0 - 1.0 / 1.33) * dt).epsilon(1e-6));
}

TEST_CASE("mse: algebra, scaling, window handling") {
  EpisodeLog log;
  for (int k = 0; k < 100; ++k) {
    StepRecord r;
    r.t = k * 0.002;
    r.ref = QuadState{}.flatten();
    r.x = r.ref;
    log.steps.push_back(r);
  }
  MseResult m = mse(log, 0.0, 1.0);
  CHECK(m.overall == 0.0);

  for (auto& r : log.steps) r.x(2) += 0.1;  // constant z offset
  m = mse(log, 0.0, 1.0);
  CHECK(m.per_axis.z() == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(m.per_axis.x() == 0.0);
  CHECK(m.overall == doctest::Approx(0.01 / 3.0).epsilon(1e-12));

  // scaling errors by c scales every MSE by c^2
  for (auto& r : log.steps) r.x(2) = r.ref(2) + 0.3;
  CHECK(mse(log, 0.0, 1.0).overall == doctest::Approx(9.0 * m.overall).epsilon(1e-9));

  CHECK_THROWS_AS(mse(log, 5.0, 6.0), std::invalid_argument);
}

TEST_CASE("episode: nominal MPC holds hover within 1 cm") {
  Scenario sc;
  sc.traj.speed = 0.0;
  sc.schedule = MassSchedule::none();
  sc.t_end = 2.0;
  const EpisodeLog log = run_episode(Method::MpcNominal, sc, MethodSetup::defaults(), 0);
  CHECK(!log.failed);
  for (const auto& rec : log.steps)
    CHECK((rec.x.segment<3>(0) - rec.ref.segment<3>(0)).norm() < 0.01);
}

TEST_CASE("episode: geometric tracks the circle without divergence") {
  Scenario sc = circle_scenario(3.0);
  sc.schedule = MassSchedule::none();
  const EpisodeLog log = run_episode(Method::Geometric, sc, MethodSetup::defaults(), 0);
  CHECK(!log.failed);
  for (const auto& rec : log.steps)
    CHECK((rec.x.segment<3>(0) - rec.ref.segment<3>(0)).norm() < 0.5);
}

TEST_CASE("episode: knode-online adapts and replays deterministically") {
  Scenario sc = circle_scenario(2.6);  // covers the first mass change
  const MethodSetup setup = quick_setup();
  const EpisodeLog a = run_episode(Method::KnodeOnline, sc, setup, 7);
  CHECK(!a.failed);
  CHECK(a.steps.back().version >= 1);

  // version is piecewise constant and only moves at publish events
  std::vector<double> publish_times;
  for (const auto& e : a.events)
    if (e.kind == "publish") publish_times.push_back(e.t);
  CHECK(!publish_times.empty());
  for (std::size_t k = 1; k < a.steps.size(); ++k) {
    if (a.steps[k].version != a.steps[k - 1].version) {
      bool at_publish = false;
      for (double tp : publish_times)
        if (std::abs(tp - a.steps[k].t) < 1e-9) at_publish = true;
      CHECK(at_publish);
    }
  }

  // adaptation after the mass change: a new member follows within a second
  bool published_after_change = false;
  for (double tp : publish_times)
    if (tp >= 2.0) published_after_change = true;
  CHECK(published_after_change);

  const EpisodeLog b = run_episode(Method::KnodeOnline, sc, setup, 7);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t k = 0; k < a.steps.size(); ++k) {
    CHECK((a.steps[k].x - b.steps[k].x).norm() == 0.0);
    CHECK((a.steps[k].u - b.steps[k].u).norm() == 0.0);
    CHECK(a.steps[k].version == b.steps[k].version);
  }
  REQUIRE(a.events.size() == b.events.size());
  for (std::size_t k = 0; k < a.events.size(); ++k) {
    CHECK(a.events[k].t == b.events[k].t);
    CHECK(a.events[k].kind == b.events[k].kind);
  }
}

TEST_CASE("offline pipeline: corrects the first mass change, not the second") {
  const Scenario sc = circle_scenario();
  MethodSetup setup = MethodSetup::defaults();
  setup.train.epochs = 60;

  const EnsemblePtr offline = offline_pipeline(sc, setup, 3);
  CHECK(offline->size() == 1);

  // flight-data windows from a nominal run under each mass regime
  const EpisodeLog nom = run_episode(Method::MpcNominal, sc, setup, 3);
  REQUIRE(!nom.failed);
  const DataBatch half = slice_batch(nom, 3.0, 3.15);
  const DataBatch heavy = slice_batch(nom, 6.0, 6.15);
  REQUIRE(half.size() == 75);
  REQUIRE(heavy.size() == 75);

  const EnsembleModel knowledge(setup.params, setup.ensemble_capacity, setup.member_dims);
  CHECK(knode_loss(*offline, half, 0.0) < knode_loss(knowledge, half, 0.0));
  CHECK(knode_loss(*offline, heavy, 0.0) >= knode_loss(*offline, half, 0.0));
}

TEST_CASE("run_episode: method plumbing and error paths") {
  CHECK(method_name(Method::KnodeOnline) == "knode-online");
  CHECK(method_from_name("geometric") == Method::Geometric);
  CHECK_THROWS_AS(method_from_name("pid"), std::invalid_argument);
  CHECK_THROWS_AS(
      run_episode(Method::KnodeOffline, circle_scenario(1.0), MethodSetup::defaults(), 0),
      std::invalid_argument);
}
