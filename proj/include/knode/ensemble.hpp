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

#ifndef KNODE_ENSEMBLE_HPP
#define KNODE_ENSEMBLE_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "knode/integrate.hpp"
#include "knode/mlp.hpp"
#include "knode/quadrotor.hpp"

namespace knode {

/// Exponential forgetting factor e^{-age}; age 0 is the newest member.
inline double forgetting_weight(int age) {
  if (age < 0) throw std::invalid_argument("forgetting_weight: negative age");
  return std::exp(-static_cast<double>(age));
}

/// Nominal physics model plus an ordered, fixed-capacity queue of residual
/// MLPs. Immutable snapshot: push_member returns a new model.
class EnsembleModel {
 public:
  EnsembleModel(QuadParams nominal, int capacity, std::vector<int> member_dims)
      : params_(std::move(nominal)),
        capacity_(capacity),
        member_dims_(std::move(member_dims)) {
    if (capacity_ < 1) throw std::invalid_argument("EnsembleModel: capacity must be >= 1");
    if (member_dims_.size() < 2 || member_dims_.front() != kAugDim ||
        member_dims_.back() != kStateDim)
      throw std::invalid_argument(
          "EnsembleModel: member dims must map augmented state (17) to state (13)");
    params_.validate();
  }

  /// Rebuild a snapshot from persisted state (checkpoint loading).
  static EnsembleModel restore(QuadParams nominal, int capacity, std::vector<int> dims,
                               std::vector<Mlp> members, std::uint64_t version) {
    EnsembleModel m(std::move(nominal), capacity, std::move(dims));
    if (static_cast<int>(members.size()) > capacity)
      throw std::invalid_argument("EnsembleModel::restore: more members than capacity");
    for (const Mlp& net : members)
      if (net.dims() != m.member_dims_)
        throw std::invalid_argument("EnsembleModel::restore: member dimension mismatch");
    m.members_ = std::move(members);
    m.version_ = version;
    return m;
  }

  const QuadParams& params() const { return params_; }
  int capacity() const { return capacity_; }
  const std::vector<int>& member_dims() const { return member_dims_; }
  int size() const { return static_cast<int>(members_.size()); }
  bool empty() const { return members_.empty(); }
  std::uint64_t version() const { return version_; }

  /// Members ordered oldest (index 0) to newest (index size-1).
  const Mlp& member(int i) const { return members_.at(i); }
  const Mlp& newest() const {
    if (members_.empty()) throw std::logic_error("EnsembleModel: queue is empty");
    return members_.back();
  }
  Mlp& newest_mutable() {
    if (members_.empty()) throw std::logic_error("EnsembleModel: queue is empty");
    return members_.back();
  }
  int age_of(int i) const { return size() - 1 - i; }

  /// Append as newest; evict the oldest when past capacity; bump version.
  EnsembleModel push_member(Mlp net) const {
    if (net.dims() != member_dims_)
      throw std::invalid_argument("push_member: member dimension mismatch");
    EnsembleModel out = *this;
    out.members_.push_back(std::move(net));
    if (static_cast<int>(out.members_.size()) > capacity_)
      out.members_.erase(out.members_.begin());
    out.version_ = version_ + 1;
    return out;
  }

  /// f_hat(z) = f_nominal(z) + sum_k e^{-age_k} f_k(z).
  StateVec hybrid_derivative(const AugVec& z) const {
    StateVec dx = nominal_derivative(z, params_);
    for (int i = 0; i < size(); ++i)
      dx += forgetting_weight(age_of(i)) * members_[i].forward(z).head<kStateDim>();
    return dx;
  }

  /// d f_hat / d z (13x17).
  StateJac hybrid_jacobian(const AugVec& z) const {
    StateJac J = nominal_jacobian(z, params_);
    for (int i = 0; i < size(); ++i)
      J += forgetting_weight(age_of(i)) * members_[i].input_jacobian(z);
    return J;
  }

  /// J^T g without forming the member Jacobians (reverse-mode input adjoints).
  AugVec hybrid_jacobian_adjoint(const AugVec& z, const StateVec& g) const {
    AugVec a = nominal_jacobian(z, params_).transpose() * g;
    Mlp::Cache cache;
    for (int i = 0; i < size(); ++i) {
      members_[i].forward(z, cache);
      a += forgetting_weight(age_of(i)) * members_[i].backward_input_only(cache, g);
    }
    return a;
  }

  /// One RK4 step of the hybrid derivative over dt (control held constant),
  /// followed by quaternion renormalization.
  StateVec discrete_step(const StateVec& x, const Vec4& u, double dt) const {
    AugVec z = augment(x, u);
    auto f = [this](double, const AugVec& zz) {
      AugVec dz = AugVec::Zero();
      dz.head<kStateDim>() = hybrid_derivative(zz);
      return dz;
    };
    AugVec z1 = rk4_step(f, z, 0.0, dt);
    StateVec x1 = state_part(z1);
    renormalize_state(x1);
    return x1;
  }

  /// Jacobians of discrete_step wrt x (A, 13x13) and u (B, 13x4), including
  /// the renormalization chain.
  void discrete_jacobians(const StateVec& x, const Vec4& u, double dt, StateMat& A,
                          InputMat& B) const {
    using Mat17 = Eigen::Matrix<double, kAugDim, kAugDim>;
    const AugVec z0 = augment(x, u);
    auto faug = [this](const AugVec& zz) { return hybrid_derivative(zz); };

    // Stage values
    const StateVec k1 = faug(z0);
    AugVec z2 = z0;
    z2.head<kStateDim>() += 0.5 * dt * k1;
    const StateVec k2 = faug(z2);
    AugVec z3 = z0;
    z3.head<kStateDim>() += 0.5 * dt * k2;
    const StateVec k3 = faug(z3);
    AugVec z4 = z0;
    z4.head<kStateDim>() += dt * k3;
    const StateVec k4 = faug(z4);

    // Stage sensitivities M_s = d k_s / d z0 (13x17)
    const StateJac M1 = hybrid_jacobian(z0);
    Mat17 T = Mat17::Identity();
    T.topRows<kStateDim>() += (0.5 * dt) * M1;
    const StateJac M2 = hybrid_jacobian(z2) * T;
    T.setIdentity();
    T.topRows<kStateDim>() += (0.5 * dt) * M2;
    const StateJac M3 = hybrid_jacobian(z3) * T;
    T.setIdentity();
    T.topRows<kStateDim>() += dt * M3;
    const StateJac M4 = hybrid_jacobian(z4) * T;

    StateJac D = StateJac::Zero();
    D.leftCols<kStateDim>().setIdentity();
    D += (dt / 6.0) * (M1 + 2.0 * M2 + 2.0 * M3 + M4);

    // Renormalization of the quaternion block
    StateVec xp = state_part(z0) + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    const Vec4 qp = xp.segment<4>(6);
    const double n = qp.norm();
    const Vec4 qn = qp / n;
    const Eigen::Matrix4d Jn = (Eigen::Matrix4d::Identity() - qn * qn.transpose()) / n;
    D.middleRows<4>(6) = Jn * D.middleRows<4>(6);

    A = D.leftCols<kStateDim>();
    B = D.rightCols<kControlDim>();
  }

 private:
  QuadParams params_;
  int capacity_;
  std::vector<int> member_dims_;
  std::vector<Mlp> members_;
  std::uint64_t version_{0};
};

using EnsemblePtr = std::shared_ptr<const EnsembleModel>;

/// Generic discrete-time model interface consumed by the OCP solver.
struct DiscreteModel {
  int nx{0};
  int nu{0};
  double dt{0.0};
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> step;
  std::function<void(const Eigen::VectorXd&, const Eigen::VectorXd&, Eigen::MatrixXd&,
                     Eigen::MatrixXd&)>
      jacobians;
};

/// Discretize the ensemble at dt for use as an OCP prediction model.
inline DiscreteModel discretize(EnsemblePtr model, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("discretize: dt must be positive");
  DiscreteModel d;
  d.nx = kStateDim;
  d.nu = kControlDim;
  d.dt = dt;
  d.step = [model, dt](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return model->discrete_step(StateVec(x), Vec4(u), dt);
  };
  d.jacobians = [model, dt](const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                            Eigen::MatrixXd& A, Eigen::MatrixXd& B) {
    StateMat As;
    InputMat Bs;
    model->discrete_jacobians(StateVec(x), Vec4(u), dt, As, Bs);
    A = As;
    B = Bs;
  };
  return d;
}

inline DiscreteModel discretize(const EnsembleModel& model, double dt) {
  return discretize(std::make_shared<const EnsembleModel>(model), dt);
}

}  // namespace knode

#endif  // KNODE_ENSEMBLE_HPP
