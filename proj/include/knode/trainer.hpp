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

#ifndef KNODE_TRAINER_HPP
#define KNODE_TRAINER_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "knode/batch.hpp"
#include "knode/ensemble.hpp"

namespace knode {

struct TrainConfig {
  int epochs{200};
  double learning_rate{1e-2};
  double l2_coeff{1e-6};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
  std::uint64_t seed{0};

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    if (l2_coeff < 0.0)
      throw std::invalid_argument("TrainConfig: l2_coeff must be non-negative");
  }
};

struct LossReport {
  double initial_loss{0.0};
  double final_loss{0.0};
  std::vector<double> per_epoch;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One RK4 step of the hybrid derivative from z over dt, control held
/// constant. Returns the state block (no renormalization; the one-step loss
/// compares raw integrator output against the recorded next state).
inline StateVec one_step_predict(const EnsembleModel& model, const AugVec& z, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("one_step_predict: dt must be positive");
  auto f = [&model](double, const AugVec& zz) {
    AugVec dz = AugVec::Zero();
    dz.head<kStateDim>() = model.hybrid_derivative(zz);
    return dz;
  };
  return state_part(rk4_step(f, z, 0.0, dt));
}

/// Mean squared one-step prediction error plus L2 on the newest member.
inline double knode_loss(const EnsembleModel& model, const DataBatch& batch,
                         double l2_coeff) {
  const int m = batch.size();
  if (m < 2) throw std::invalid_argument("knode_loss: batch needs at least 2 samples");
  double acc = 0.0;
  for (int i = 0; i + 1 < m; ++i) {
    const AugVec z = augment(batch.samples[i].x, batch.samples[i].u);
    const StateVec xhat = one_step_predict(model, z, batch.dt);
    acc += (xhat - batch.samples[i + 1].x).squaredNorm();
  }
  double loss = acc / static_cast<double>(m - 1);
  if (l2_coeff > 0.0 && !model.empty())
    loss += l2_coeff * model.newest().flatten_params().squaredNorm();
  return loss;
}

namespace detail {

/// Loss and its exact gradient wrt the newest member's parameters
/// (reverse mode through the unrolled RK4 step). Frozen members and the
/// nominal model contribute to the chain but receive no gradient.
inline double loss_and_gradient(const EnsembleModel& model, const DataBatch& batch,
                                double l2_coeff, Eigen::VectorXd& grad) {
  const int m = batch.size();
  if (m < 2) throw std::invalid_argument("loss_gradient: batch needs at least 2 samples");
  if (model.empty())
    throw std::logic_error("loss_gradient: empty queue, nothing trainable");
  const Mlp& net = model.newest();
  const double dt = batch.dt;

  std::vector<Eigen::MatrixXd> gW = net.zero_grad_w();
  std::vector<Eigen::VectorXd> gb = net.zero_grad_b();
  double acc = 0.0;

  auto hd = [&model](const AugVec& z) { return model.hybrid_derivative(z); };

  for (int i = 0; i + 1 < m; ++i) {
    const AugVec z1 = augment(batch.samples[i].x, batch.samples[i].u);
    const StateVec k1 = hd(z1);
    AugVec z2 = z1;
    z2.head<kStateDim>() += 0.5 * dt * k1;
    const StateVec k2 = hd(z2);
    AugVec z3 = z1;
    z3.head<kStateDim>() += 0.5 * dt * k2;
    const StateVec k3 = hd(z3);
    AugVec z4 = z1;
    z4.head<kStateDim>() += dt * k3;
    const StateVec k4 = hd(z4);

    const StateVec xhat =
        state_part(z1) + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    const StateVec err = xhat - batch.samples[i + 1].x;
    acc += err.squaredNorm();
    const StateVec g = (2.0 / static_cast<double>(m - 1)) * err;

    // Stage adjoints, chained back through the later stage inputs.
    const StateVec kb4 = (dt / 6.0) * g;
    const StateVec kb3 =
        (dt / 3.0) * g + dt * model.hybrid_jacobian_adjoint(z4, kb4).head<kStateDim>();
    const StateVec kb2 = (dt / 3.0) * g +
                         0.5 * dt * model.hybrid_jacobian_adjoint(z3, kb3).head<kStateDim>();
    const StateVec kb1 = (dt / 6.0) * g +
                         0.5 * dt * model.hybrid_jacobian_adjoint(z2, kb2).head<kStateDim>();

    // Direct parameter dependence of each stage (newest member, weight e^0).
    Mlp::Cache cache;
    net.forward(z1, cache);
    net.backward(cache, kb1, gW, gb);
    net.forward(z2, cache);
    net.backward(cache, kb2, gW, gb);
    net.forward(z3, cache);
    net.backward(cache, kb3, gW, gb);
    net.forward(z4, cache);
    net.backward(cache, kb4, gW, gb);
  }

  // Flatten gradients in the same order as Mlp::flatten_params.
  grad.resize(net.param_count());
  Eigen::Index k = 0;
  for (int l = 0; l < net.num_layers(); ++l) {
    for (Eigen::Index r = 0; r < gW[l].rows(); ++r)
      for (Eigen::Index c = 0; c < gW[l].cols(); ++c) grad(k++) = gW[l](r, c);
    for (Eigen::Index r = 0; r < gb[l].size(); ++r) grad(k++) = gb[l](r);
  }

  double loss = acc / static_cast<double>(m - 1);
  if (l2_coeff > 0.0) {
    const Eigen::VectorXd theta = net.flatten_params();
    loss += l2_coeff * theta.squaredNorm();
    grad += 2.0 * l2_coeff * theta;
  }
  return loss;
}

}  // namespace detail

/// Exact gradient of knode_loss wrt the newest member's parameters.
inline Eigen::VectorXd loss_gradient(const EnsembleModel& model, const DataBatch& batch,
                                     double l2_coeff) {
  Eigen::VectorXd grad;
  detail::loss_and_gradient(model, batch, l2_coeff, grad);
  return grad;
}

/// Initialize a fresh member, push it as newest and optimize it with Adam on
/// the full batch. Older members and the nominal model stay frozen. The best
/// parameters seen across epochs are kept, so final_loss <= initial_loss.
inline std::pair<EnsembleModel, LossReport> train_member(const EnsembleModel& model,
                                                         const DataBatch& batch,
                                                         const TrainConfig& cfg) {
  cfg.validate();
  batch.validate();
  if (!batch.clean)
    throw std::invalid_argument("train_member: batch is not clean (mixed model versions)");

  EnsembleModel candidate =
      model.push_member(Mlp::random_init(model.member_dims(), cfg.seed));
  Mlp& net = candidate.newest_mutable();

  Eigen::VectorXd theta = net.flatten_params();
  Eigen::VectorXd grad;
  double loss = detail::loss_and_gradient(candidate, batch, cfg.l2_coeff, grad);
  if (!std::isfinite(loss)) throw TrainingError("train_member: non-finite initial loss");

  LossReport report;
  report.initial_loss = loss;
  double best_loss = loss;
  Eigen::VectorXd best_theta = theta;

  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(theta.size());
  for (int e = 1; e <= cfg.epochs; ++e) {
    m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad;
    m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(cfg.beta1, e);
    const double bc2 = 1.0 - std::pow(cfg.beta2, e);
    theta -= cfg.learning_rate *
             (m1 / bc1).cwiseQuotient(((m2 / bc2).cwiseSqrt().array() + cfg.eps).matrix());
    net.set_params(theta);

    loss = detail::loss_and_gradient(candidate, batch, cfg.l2_coeff, grad);
    if (!std::isfinite(loss))
      throw TrainingError("train_member: non-finite loss at epoch " + std::to_string(e));
    report.per_epoch.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best_theta = theta;
    }
  }

  net.set_params(best_theta);
  report.final_loss = best_loss;
  return {std::move(candidate), std::move(report)};
}

}  // namespace knode

#endif  // KNODE_TRAINER_HPP
