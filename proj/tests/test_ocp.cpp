#include <random>

#include "doctest.h"
#include "knode/ocp.hpp"
#include "knode/trainer.hpp"

using namespace knode;

namespace {

/// 1-D double integrator, unit mass, exact zero-order-hold discretization.
DiscreteModel double_integrator(double dt) {
  Eigen::Matrix2d A;
  A << 1, dt, 0, 1;
  Eigen::Vector2d B(0.5 * dt * dt, dt);
  DiscreteModel d;
  d.nx = 2;
  d.nu = 1;
  d.dt = dt;
  d.step = [A, B](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return (A * x + B * u(0)).eval();
  };
  d.jacobians = [A, B](const Eigen::VectorXd&, const Eigen::VectorXd&,
                       Eigen::MatrixXd& Ao, Eigen::MatrixXd& Bo) {
    Ao = A;
    Bo = B;
  };
  return d;
}

OcpConfig di_config(int N) {
  OcpConfig cfg;
  cfg.N = N;
  cfg.dt = 0.05;
  cfg.Q = Eigen::Matrix2d::Identity();
  cfg.R = Eigen::MatrixXd::Identity(1, 1);
  cfg.P = Eigen::Matrix2d::Identity();
  return cfg;
}

ReferenceWindow zero_ref(int N, int nx) {
  return ReferenceWindow(N + 1, Eigen::VectorXd::Zero(nx));
}

/// Finite-horizon discrete Riccati recursion with per-stage weights
/// (Q_0 = 0, R_0 = 0: the first control is unpenalized, x0 is fixed).
std::vector<double> riccati_open_loop(const Eigen::Matrix2d& A, const Eigen::Vector2d& B,
                                      const Eigen::Matrix2d& Q, double R,
                                      const Eigen::Matrix2d& P, int N,
                                      const Eigen::Vector2d& x0) {
  std::vector<Eigen::RowVector2d> K(N);
  Eigen::Matrix2d V = P;
  for (int i = N - 1; i >= 0; --i) {
    const double Ri = (i >= 1) ? R : 0.0;
    const double s = Ri + (B.transpose() * V * B)(0);
    K[i] = (B.transpose() * V * A) / s;
    V = ((i >= 1) ? Q : Eigen::Matrix2d::Zero()) + A.transpose() * V * (A - B * K[i]);
    V = 0.5 * (V + V.transpose());
  }
  std::vector<double> u(N);
  Eigen::Vector2d x = x0;
  for (int i = 0; i < N; ++i) {
    u[i] = -(K[i] * x)(0);
    x = A * x + B * u[i];
  }
  return u;
}

StateVec hover_state() { return QuadState{}.flatten(); }

/// Closed loop: 50 Hz MPC over a 2 ms plant, plant mass scaled by mult.
struct LoopResult {
  double mean_tail_z_err;  // mean z error over the last quarter of the run
  std::vector<StateVec> xs;
  std::vector<Vec4> us;
};

LoopResult run_hover_loop(EnsemblePtr model, double mass_mult, double t_end) {
  QuadParams plant;
  plant.m *= mass_mult;
  const OcpConfig cfg = default_quad_ocp_config(model->params());
  auto ref = [](double) { return hover_state(); };
  const double dt_plant = 0.002;
  const int substeps = 10;
  const int steps = static_cast<int>(t_end / dt_plant + 0.5);

  StateVec x = hover_state();
  Vec4 u = Vec4::Zero();
  std::vector<Eigen::VectorXd> warm;
  auto f = [&plant](double, const AugVec& z) {
    AugVec dz = AugVec::Zero();
    dz.head<kStateDim>() = nominal_derivative(z, plant);
    return dz;
  };
  LoopResult res{0.0, {}, {}};
  double acc = 0.0;
  int tail = 0;
  for (int k = 0; k < steps; ++k) {
    const double t = k * dt_plant;
    if (k % substeps == 0) {
      auto [ui, sol] = control_step(model, x, t, ref, cfg, warm);
      u = ui.flatten();
      warm = shift_warm_start(sol);
    }
    res.xs.push_back(x);
    res.us.push_back(u);
    AugVec z = rk4_step(f, augment(x, u), 0.0, dt_plant);
    x = state_part(z);
    renormalize_state(x);
    if (t >= 0.75 * t_end) {
      acc += x(2);
      ++tail;
    }
  }
  res.mean_tail_z_err = acc / tail;
  return res;
}

}  // namespace

TEST_CASE("solve_ocp matches the discrete Riccati oracle on a double integrator") {
  const double dt = 0.05;
  DiscreteModel d = double_integrator(dt);
  OcpConfig cfg = di_config(20);
  Eigen::Vector2d x0(1.0, -0.5);

  const OcpSolution sol = solve_ocp(d, x0, zero_ref(cfg.N, 2), cfg);
  CHECK(sol.converged);

  Eigen::Matrix2d A;
  A << 1, dt, 0, 1;
  const Eigen::Vector2d B(0.5 * dt * dt, dt);
  const std::vector<double> u_star =
      riccati_open_loop(A, B, Eigen::Matrix2d::Identity(), 1.0,
                        Eigen::Matrix2d::Identity(), cfg.N, x0);
  for (int i = 0; i < cfg.N; ++i)
    CHECK(std::abs(sol.controls[i](0) - u_star[i]) < 1e-6);

  // single-shooting rollout is exact by construction
  for (int i = 0; i < cfg.N; ++i)
    CHECK((sol.states[i + 1] - d.step(sol.states[i], sol.controls[i])).norm() < 1e-8);
  CHECK((sol.states[0] - x0).norm() == 0.0);
}

TEST_CASE("solve_ocp: on-reference hover is the optimum, cost < 1e-8") {
  QuadParams p;
  auto model = std::make_shared<const EnsembleModel>(p, 3, std::vector<int>{17, 32, 32, 13});
  const OcpConfig cfg = default_quad_ocp_config(p);
  auto [u, sol] = control_step(model, hover_state(), 0.0,
                               [](double) { return hover_state(); }, cfg);
  CHECK(sol.cost < 1e-8);
  CHECK(std::abs(u.eta - p.m * 9.81) < 1e-6);
  CHECK(u.tau.norm() < 1e-8);
}

TEST_CASE("solve_ocp: thrust bound below hover saturates exactly") {
  QuadParams p;
  auto model = std::make_shared<const EnsembleModel>(p, 3, std::vector<int>{17, 32, 32, 13});
  OcpConfig cfg = default_quad_ocp_config(p);
  cfg.u_max(0) = 0.9 * p.hover_thrust();
  auto [u, sol] = control_step(model, hover_state(), 0.0,
                               [](double) { return hover_state(); }, cfg);
  for (int i = 0; i < cfg.N; ++i) CHECK(sol.controls[i](0) == cfg.u_max(0));
  CHECK(u.eta == cfg.u_max(0));
}

TEST_CASE("solve_ocp: bounds always satisfied on an aggressive setpoint change") {
  QuadParams p;
  auto model = std::make_shared<const EnsembleModel>(p, 3, std::vector<int>{17, 32, 32, 13});
  const OcpConfig cfg = default_quad_ocp_config(p);
  StateVec target = hover_state();
  target(0) = 2.0;
  target(2) = 1.5;
  auto [u, sol] = control_step(model, hover_state(), 0.0,
                               [&target](double) { return target; }, cfg);
  for (int i = 0; i < cfg.N; ++i) {
    CHECK((sol.controls[i].array() >= cfg.u_min.array()).all());
    CHECK((sol.controls[i].array() <= cfg.u_max.array()).all());
  }
  CHECK(u.eta >= cfg.u_min(0));
  CHECK(u.eta <= cfg.u_max(0));
}

TEST_CASE("solve_ocp: accepted iterates decrease the cost monotonically") {
  DiscreteModel d = double_integrator(0.05);
  OcpConfig cfg = di_config(20);
  const OcpSolution sol = solve_ocp(d, Eigen::Vector2d(2.0, 1.0), zero_ref(cfg.N, 2), cfg);
  REQUIRE(sol.cost_trace.size() >= 2);
  for (std::size_t i = 1; i < sol.cost_trace.size(); ++i)
    CHECK(sol.cost_trace[i] <= sol.cost_trace[i - 1]);
  CHECK(sol.cost == sol.cost_trace.back());
}

TEST_CASE("solve_ocp is bitwise deterministic") {
  QuadParams p;
  auto model = std::make_shared<const EnsembleModel>(p, 3, std::vector<int>{17, 32, 32, 13});
  const OcpConfig cfg = default_quad_ocp_config(p);
  StateVec x0 = hover_state();
  x0(2) = 0.3;
  x0.segment<3>(3) = Vec3(0.1, -0.2, 0.05);
  const DiscreteModel d = discretize(model, cfg.dt);
  const ReferenceWindow ref(cfg.N + 1, hover_state());
  const OcpSolution a = solve_ocp(d, x0, ref, cfg);
  const OcpSolution b = solve_ocp(d, x0, ref, cfg);
  for (int i = 0; i < cfg.N; ++i) CHECK((a.controls[i] - b.controls[i]).norm() == 0.0);
  CHECK(a.cost == b.cost);
}

TEST_CASE("shift_warm_start: shift rule and iteration savings") {
  OcpSolution prev;
  prev.controls = {Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 2.0),
                   Eigen::VectorXd::Constant(1, 3.0)};
  const auto warm = shift_warm_start(prev);
  REQUIRE(warm.size() == 3);
  CHECK(warm[0](0) == 2.0);
  CHECK(warm[1](0) == 3.0);
  CHECK(warm[2](0) == 3.0);
  CHECK_THROWS_AS(shift_warm_start(OcpSolution{}), std::invalid_argument);

  // re-solving a static instance warm-started takes no more iterations
  QuadParams p;
  auto model = std::make_shared<const EnsembleModel>(p, 3, std::vector<int>{17, 32, 32, 13});
  const OcpConfig cfg = default_quad_ocp_config(p);
  StateVec x0 = hover_state();
  x0(2) = 0.2;
  const DiscreteModel d = discretize(model, cfg.dt);
  const ReferenceWindow ref(cfg.N + 1, hover_state());
  // warm-starting the next receding-horizon step takes no more iterations
  // than solving that step cold
  const OcpSolution first = solve_ocp(d, x0, ref, cfg);
  const Eigen::VectorXd x1 = d.step(x0, first.controls[0]);
  const OcpSolution cold = solve_ocp(d, x1, ref, cfg);
  const OcpSolution hot = solve_ocp(d, x1, ref, cfg, shift_warm_start(first));
  CHECK(hot.iterations <= cold.iterations);
}

TEST_CASE("solve_ocp: state box held by quadratic penalty") {
  DiscreteModel d = double_integrator(0.05);
  OcpConfig cfg = di_config(20);
  const ReferenceWindow ref(cfg.N + 1, Eigen::Vector2d(1.0, 0.0));

  const OcpSolution free_sol = solve_ocp(d, Eigen::Vector2d::Zero(), ref, cfg);
  double free_peak = 0.0;
  for (const auto& x : free_sol.states) free_peak = std::max(free_peak, x(0));

  CHECK(free_peak > 0.3);  // box below is active
  cfg.x_ub = Eigen::Vector2d(0.3, 1e9);
  cfg.x_lb = Eigen::Vector2d(-1e9, -1e9);
  cfg.penalty_mu = 1e4;
  const OcpSolution boxed = solve_ocp(d, Eigen::Vector2d::Zero(), ref, cfg);
  double boxed_peak = 0.0;
  for (const auto& x : boxed.states) boxed_peak = std::max(boxed_peak, x(0));
  CHECK(boxed_peak < 0.32);
  CHECK(boxed_peak < free_peak);
}

TEST_CASE("OcpConfig validation names the offence") {
  DiscreteModel d = double_integrator(0.05);
  OcpConfig cfg = di_config(5);
  cfg.u_min = Eigen::VectorXd::Constant(1, 1.0);
  cfg.u_max = Eigen::VectorXd::Constant(1, -1.0);
  CHECK_THROWS_AS(solve_ocp(d, Eigen::Vector2d::Zero(), zero_ref(5, 2), cfg),
                  std::invalid_argument);

  cfg = di_config(5);
  cfg.R(0, 0) = 0.0;  // PD required
  CHECK_THROWS_AS(solve_ocp(d, Eigen::Vector2d::Zero(), zero_ref(5, 2), cfg),
                  std::invalid_argument);

  cfg = di_config(5);
  CHECK_THROWS_AS(solve_ocp(d, Eigen::Vector2d::Zero(), zero_ref(4, 2), cfg),
                  std::invalid_argument);

  cfg.x_ub = Eigen::Vector2d(1, 1);  // box without penalty_mu
  CHECK_THROWS_AS(solve_ocp(d, Eigen::Vector2d::Zero(), zero_ref(5, 2), cfg),
                  std::invalid_argument);
}

TEST_CASE("quad_state_error flips the quaternion sign for the shortest arc") {
  StateVec x = hover_state();
  StateVec r = hover_state();
  r.segment<4>(6) = -r.segment<4>(6);  // same attitude, opposite sign
  CHECK(quad_state_error(x, r).norm() == 0.0);
  CHECK(quad_state_error(x, x).norm() == 0.0);
}

TEST_CASE("closed loop: nominal hover hold stays within 1 cm over 1 s") {
  QuadParams p;
  auto model = std::make_shared<const EnsembleModel>(p, 3, std::vector<int>{17, 32, 32, 13});
  const LoopResult res = run_hover_loop(model, 1.0, 1.0);
  for (const StateVec& x : res.xs) CHECK(x.segment<3>(0).norm() < 0.01);
}

TEST_CASE("closed loop: halved plant mass overshoots upward; residual shrinks it") {
  QuadParams p;
  auto nominal = std::make_shared<const EnsembleModel>(p, 3, std::vector<int>{17, 32, 32, 13});
  const LoopResult plain = run_hover_loop(nominal, 0.5, 2.0);
  CHECK(plain.mean_tail_z_err > 0.0);  // thrust sized for 2x the true mass

  // train a residual on data from that very run and repeat
  DataBatch batch;
  batch.dt = 0.002;
  for (int i = 0; i < 75; ++i)
    batch.samples.push_back({i * batch.dt, plain.xs[i], plain.us[i]});
  TrainConfig tc;
  tc.seed = 1;
  auto [trained, report] = train_member(*nominal, batch, tc);
  CHECK(report.final_loss < report.initial_loss);

  const LoopResult corrected =
      run_hover_loop(std::make_shared<const EnsembleModel>(trained), 0.5, 2.0);
  CHECK(std::abs(corrected.mean_tail_z_err) < std::abs(plain.mean_tail_z_err));
}
