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

#ifndef KNODE_OCP_HPP
#define KNODE_OCP_HPP

#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "knode/ensemble.hpp"

namespace knode {

/// Receding-horizon OCP configuration. Stage cost runs over i = 1..N-1 with
/// e_i' Q e_i + (u_i - u_ref)' R (u_i - u_ref), terminal e_N' P e_N, where
/// e_i = state_error(x_i, x_ref_i). u_0 enters through the bounds only.
/// Optional state boxes are handled by a smooth quadratic penalty.
struct OcpConfig {
  int N{20};
  double dt{0.02};
  Eigen::MatrixXd Q;
  Eigen::MatrixXd R;
  Eigen::MatrixXd P;
  Eigen::VectorXd u_min;  // empty: unbounded below
  Eigen::VectorXd u_max;  // empty: unbounded above
  Eigen::VectorXd u_ref;  // empty: zero; also the cold-start control guess
  Eigen::VectorXd x_lb;   // empty: no state box
  Eigen::VectorXd x_ub;
  double penalty_mu{0.0};
  int max_iters{50};
  double grad_tol{1e-6};
  double step_tol{1e-9};
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>
      state_error;  // empty: x - x_ref

  void validate(int nx, int nu) const {
    if (N < 1) throw std::invalid_argument("OcpConfig: N must be >= 1");
    if (!(dt > 0.0)) throw std::invalid_argument("OcpConfig: dt must be positive");
    auto check_sym = [nx](const Eigen::MatrixXd& M, const char* name, bool pd) {
      if (M.rows() != M.cols())
        throw std::invalid_argument(std::string("OcpConfig: ") + name + " must be square");
      if (!M.isApprox(M.transpose(), 1e-12))
        throw std::invalid_argument(std::string("OcpConfig: ") + name + " must be symmetric");
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
      const double mn = es.eigenvalues().minCoeff();
      if (pd ? !(mn > 0.0) : mn < -1e-12)
        throw std::invalid_argument(std::string("OcpConfig: ") + name +
                                    (pd ? " must be positive definite" : " must be PSD"));
      (void)nx;
    };
    if (Q.rows() != nx || P.rows() != nx || R.rows() != nu)
      throw std::invalid_argument("OcpConfig: weight dimensions do not match the model");
    check_sym(Q, "Q", false);
    check_sym(P, "P", false);
    check_sym(R, "R", true);
    if (u_min.size() && u_max.size() && (u_min.array() > u_max.array()).any())
      throw std::invalid_argument("OcpConfig: u_min exceeds u_max");
    if (u_min.size() && u_min.size() != nu)
      throw std::invalid_argument("OcpConfig: u_min size mismatch");
    if (u_max.size() && u_max.size() != nu)
      throw std::invalid_argument("OcpConfig: u_max size mismatch");
    if ((x_lb.size() || x_ub.size()) && !(penalty_mu > 0.0))
      throw std::invalid_argument("OcpConfig: state boxes require penalty_mu > 0");
  }
};

/// N+1 reference states sampled at dt along the horizon.
using ReferenceWindow = std::vector<Eigen::VectorXd>;

struct OcpSolution {
  std::vector<Eigen::VectorXd> states;    // N+1; states[0] == x0
  std::vector<Eigen::VectorXd> controls;  // N
  double cost{0.0};
  int iterations{0};
  bool converged{false};
  std::vector<double> cost_trace;  // accepted iterates, monotone non-increasing
};

namespace detail {

inline Eigen::VectorXd clamp_control(Eigen::VectorXd u, const OcpConfig& cfg) {
  if (cfg.u_min.size()) u = u.cwiseMax(cfg.u_min);
  if (cfg.u_max.size()) u = u.cwiseMin(cfg.u_max);
  return u;
}

inline Eigen::VectorXd default_error(const Eigen::VectorXd& x, const Eigen::VectorXd& r) {
  return x - r;
}

struct OcpWork {
  std::vector<Eigen::VectorXd> x;  // N+1
  double cost{0.0};
};

inline void rollout(const DiscreteModel& model, const Eigen::VectorXd& x0,
                    const std::vector<Eigen::VectorXd>& U, const ReferenceWindow& ref,
                    const OcpConfig& cfg, OcpWork& w) {
  const int N = cfg.N;
  auto err = cfg.state_error ? cfg.state_error : default_error;
  const Eigen::VectorXd uref =
      cfg.u_ref.size() ? cfg.u_ref : Eigen::VectorXd::Zero(model.nu);

  w.x.assign(N + 1, Eigen::VectorXd());
  w.x[0] = x0;
  w.cost = 0.0;
  for (int i = 0; i < N; ++i) {
    w.x[i + 1] = model.step(w.x[i], U[i]);
    if (!w.x[i + 1].allFinite()) {
      std::ostringstream msg;
      msg << "solve_ocp: non-finite rollout at step " << i + 1;
      throw std::runtime_error(msg.str());
    }
  }
  for (int i = 1; i <= N; ++i) {
    const Eigen::VectorXd e = err(w.x[i], ref[i]);
    const Eigen::MatrixXd& W = (i < N) ? cfg.Q : cfg.P;
    w.cost += e.dot(W * e);
    if (i < N) {
      const Eigen::VectorXd du = U[i] - uref;
      w.cost += du.dot(cfg.R * du);
    }
    if (cfg.penalty_mu > 0.0) {
      if (cfg.x_ub.size())
        w.cost += cfg.penalty_mu * (w.x[i] - cfg.x_ub).cwiseMax(0.0).squaredNorm();
      if (cfg.x_lb.size())
        w.cost += cfg.penalty_mu * (cfg.x_lb - w.x[i]).cwiseMax(0.0).squaredNorm();
    }
  }
}

/// Gauss-Newton gradient and Hessian of the rollout cost wrt the stacked
/// control vector, via forward state sensitivities S_i = dx_i/dU.
inline void assemble(const DiscreteModel& model, const std::vector<Eigen::VectorXd>& U,
                     const ReferenceWindow& ref, const OcpConfig& cfg, const OcpWork& w,
                     Eigen::VectorXd& grad, Eigen::MatrixXd& H) {
  const int N = cfg.N, nx = model.nx, nu = model.nu, n = N * nu;
  auto err = cfg.state_error ? cfg.state_error : default_error;
  const Eigen::VectorXd uref = cfg.u_ref.size() ? cfg.u_ref : Eigen::VectorXd::Zero(nu);

  grad = Eigen::VectorXd::Zero(n);
  H = Eigen::MatrixXd::Zero(n, n);

  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(nx, n);
  Eigen::MatrixXd A, B;
  for (int i = 0; i < N; ++i) {
    model.jacobians(w.x[i], U[i], A, B);
    S = (A * S).eval();
    S.middleCols(i * nu, nu) += B;

    const int k = i + 1;
    const Eigen::VectorXd e = err(w.x[k], ref[k]);
    const Eigen::MatrixXd& W = (k < N) ? cfg.Q : cfg.P;
    grad.noalias() += 2.0 * S.transpose() * (W * e);
    H.noalias() += 2.0 * S.transpose() * W * S;
    if (cfg.penalty_mu > 0.0) {
      Eigen::VectorXd pv = Eigen::VectorXd::Zero(nx);
      Eigen::VectorXd act = Eigen::VectorXd::Zero(nx);
      if (cfg.x_ub.size()) {
        const Eigen::VectorXd v = (w.x[k] - cfg.x_ub).cwiseMax(0.0);
        pv += v;
        act += (v.array() > 0.0).cast<double>().matrix();
      }
      if (cfg.x_lb.size()) {
        const Eigen::VectorXd v = (cfg.x_lb - w.x[k]).cwiseMax(0.0);
        pv -= v;
        act += (v.array() > 0.0).cast<double>().matrix();
      }
      if (act.sum() > 0.0) {
        grad.noalias() += 2.0 * cfg.penalty_mu * S.transpose() * pv;
        H.noalias() += 2.0 * cfg.penalty_mu * S.transpose() * act.asDiagonal() * S;
      }
    }
    if (k < N) {
      const Eigen::VectorXd du = U[k] - uref;
      grad.segment(k * nu, nu).noalias() += 2.0 * cfg.R * du;
      H.block(k * nu, k * nu, nu, nu) += 2.0 * cfg.R;
    }
  }
}

/// Gradient with components pinned at an active bound zeroed out.
inline double projected_grad_norm(const Eigen::VectorXd& grad,
                                  const std::vector<Eigen::VectorXd>& U,
                                  const OcpConfig& cfg, int nu) {
  double mx = 0.0;
  for (int i = 0; i < cfg.N; ++i)
    for (int j = 0; j < nu; ++j) {
      const double g = grad(i * nu + j);
      const bool at_lo = cfg.u_min.size() && U[i](j) <= cfg.u_min(j) && g > 0.0;
      const bool at_hi = cfg.u_max.size() && U[i](j) >= cfg.u_max(j) && g < 0.0;
      if (!at_lo && !at_hi) mx = std::max(mx, std::abs(g));
    }
  return mx;
}

}  // namespace detail

/// Direct single shooting with a Gauss-Newton Hessian, Levenberg-Marquardt
/// damping and a backtracking line search; input bounds by projection inside
/// the search. Deterministic for identical inputs.
inline OcpSolution solve_ocp(const DiscreteModel& model, const Eigen::VectorXd& x0,
                             const ReferenceWindow& ref, const OcpConfig& cfg,
                             const std::vector<Eigen::VectorXd>& warm = {}) {
  cfg.validate(model.nx, model.nu);
  if (static_cast<int>(ref.size()) != cfg.N + 1)
    throw std::invalid_argument("solve_ocp: reference window must hold N+1 states");
  if (!x0.allFinite()) throw std::invalid_argument("solve_ocp: non-finite x0");
  const int N = cfg.N, nu = model.nu;

  std::vector<Eigen::VectorXd> U(N);
  const Eigen::VectorXd u0 =
      cfg.u_ref.size() ? cfg.u_ref : Eigen::VectorXd::Zero(nu);
  for (int i = 0; i < N; ++i)
    U[i] = detail::clamp_control(warm.empty() ? u0 : warm.at(i), cfg);

  detail::OcpWork w;
  detail::rollout(model, x0, U, ref, cfg, w);

  OcpSolution sol;
  sol.cost_trace.push_back(w.cost);
  double lambda = 0.0;
  bool converged = false;
  int iter = 0;

  Eigen::VectorXd grad;
  Eigen::MatrixXd H;
  detail::OcpWork wc;
  for (; iter < cfg.max_iters; ++iter) {
    detail::assemble(model, U, ref, cfg, w, grad, H);
    if (detail::projected_grad_norm(grad, U, cfg, nu) < cfg.grad_tol) {
      converged = true;
      break;
    }

    bool accepted = false;
    double step_inf = 0.0;
    for (int attempt = 0; attempt < 10 && !accepted; ++attempt) {
      Eigen::MatrixXd Hl = H;
      if (lambda > 0.0) Hl.diagonal().array() += lambda;
      const Eigen::VectorXd p = Hl.ldlt().solve(-grad);
      if (p.allFinite()) {
        double alpha = 1.0;
        for (int bt = 0; bt < 12; ++bt, alpha *= 0.5) {
          std::vector<Eigen::VectorXd> Uc(N);
          step_inf = 0.0;
          for (int i = 0; i < N; ++i) {
            Uc[i] = detail::clamp_control(U[i] + alpha * p.segment(i * nu, nu), cfg);
            step_inf = std::max(step_inf, (Uc[i] - U[i]).lpNorm<Eigen::Infinity>());
          }
          if (step_inf == 0.0) break;
          bool finite = true;
          try {
            detail::rollout(model, x0, Uc, ref, cfg, wc);
          } catch (const std::runtime_error&) {
            finite = false;
          }
          if (finite && wc.cost < w.cost) {
            U = std::move(Uc);
            std::swap(w, wc);
            accepted = true;
            break;
          }
        }
      }
      if (!accepted) lambda = std::max(lambda * 10.0, 1e-8);
    }
    if (!accepted) break;  // damping exhausted; current iterate is the best seen
    lambda /= 3.0;
    if (lambda < 1e-12) lambda = 0.0;
    sol.cost_trace.push_back(w.cost);
    if (step_inf < cfg.step_tol) {
      converged = true;
      ++iter;
      break;
    }
  }

  sol.states = w.x;
  sol.controls = U;
  sol.cost = w.cost;
  sol.iterations = iter;
  sol.converged = converged;
  return sol;
}

/// Warm-start payload: controls shifted left by one, last control duplicated.
inline std::vector<Eigen::VectorXd> shift_warm_start(const OcpSolution& prev) {
  if (prev.controls.empty())
    throw std::invalid_argument("shift_warm_start: empty solution");
  std::vector<Eigen::VectorXd> out(prev.controls.begin() + 1, prev.controls.end());
  out.push_back(prev.controls.back());
  return out;
}

/// Componentwise state error with the quaternion sign flipped for the
/// shortest arc; the error Jacobian wrt x stays the identity.
inline Eigen::VectorXd quad_state_error(const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& xref) {
  Eigen::VectorXd e = x - xref;
  if (x.segment<4>(6).dot(xref.segment<4>(6)) < 0.0)
    e.segment<4>(6) = x.segment<4>(6) + xref.segment<4>(6);
  return e;
}

/// Tracking weights and bounds for the quadrotor; R penalizes deviation from
/// the hover feedforward so the on-reference hover is the exact optimum.
inline OcpConfig default_quad_ocp_config(const QuadParams& p) {
  OcpConfig cfg;
  Eigen::VectorXd qd(kStateDim);
  qd << 40, 40, 40, 4, 4, 4, 1, 1, 1, 1, 0.1, 0.1, 0.1;
  cfg.Q = qd.asDiagonal();
  cfg.P = 5.0 * cfg.Q;
  cfg.R = Eigen::Vector4d(0.5, 20, 20, 20).asDiagonal();
  cfg.u_min = p.u_min;
  cfg.u_max = p.u_max;
  Eigen::VectorXd uref(kControlDim);
  uref << p.hover_thrust(), 0, 0, 0;
  cfg.u_ref = uref;
  cfg.state_error = quad_state_error;
  return cfg;
}

/// One receding-horizon step: discretize the snapshot at cfg.dt, sample the
/// reference window at t, solve, return the first optimal input.
inline std::pair<ControlInput, OcpSolution> control_step(
    EnsemblePtr model, const StateVec& x, double t,
    const std::function<StateVec(double)>& ref_traj, const OcpConfig& cfg,
    const std::vector<Eigen::VectorXd>& warm = {}) {
  const DiscreteModel d = discretize(model, cfg.dt);
  ReferenceWindow ref(cfg.N + 1);
  for (int i = 0; i <= cfg.N; ++i) ref[i] = ref_traj(t + i * cfg.dt);
  OcpSolution sol = solve_ocp(d, x, ref, cfg, warm);
  return {ControlInput::from_vector(Vec4(sol.controls.front())), std::move(sol)};
}

}  // namespace knode

#endif  // KNODE_OCP_HPP
