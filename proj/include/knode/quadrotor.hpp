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

#ifndef KNODE_QUADROTOR_HPP
#define KNODE_QUADROTOR_HPP

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace knode {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

// State layout, flattened: [r(3), v(3), q(4), w(3)] = 13 entries.
// Quaternion order is (w, x, y, z), mapping body frame to world frame.
inline constexpr int kStateDim = 13;
inline constexpr int kControlDim = 4;
inline constexpr int kAugDim = kStateDim + kControlDim;

using StateVec = Eigen::Matrix<double, kStateDim, 1>;
using AugVec = Eigen::Matrix<double, kAugDim, 1>;
using StateJac = Eigen::Matrix<double, kStateDim, kAugDim>;
using StateMat = Eigen::Matrix<double, kStateDim, kStateDim>;
using InputMat = Eigen::Matrix<double, kStateDim, kControlDim>;

/// Rigid-body quadrotor state.
struct QuadState {
  Vec3 r{Vec3::Zero()};   // position, m (world)
  Vec3 v{Vec3::Zero()};   // velocity, m/s (world)
  Vec4 q{1.0, 0.0, 0.0, 0.0};  // unit quaternion (w,x,y,z), body->world
  Vec3 w{Vec3::Zero()};   // body angular rate, rad/s

  StateVec flatten() const {
    StateVec x;
    x << r, v, q, w;
    return x;
  }

  static QuadState from_vector(const StateVec& x) {
    QuadState s;
    s.r = x.segment<3>(0);
    s.v = x.segment<3>(3);
    s.q = x.segment<4>(6);
    s.w = x.segment<3>(10);
    return s;
  }
};

/// Collective thrust (N) plus body moments (N m).
struct ControlInput {
  double eta{0.0};
  Vec3 tau{Vec3::Zero()};

  Vec4 flatten() const { return Vec4{eta, tau.x(), tau.y(), tau.z()}; }

  static ControlInput from_vector(const Vec4& u) {
    ControlInput c;
    c.eta = u(0);
    c.tau = u.segment<3>(1);
    return c;
  }
};

/// Mass/inertia/gravity and actuator bounds.
struct QuadParams {
  double m{0.032};
  Mat3 I{Vec3(1.4e-5, 1.4e-5, 2.2e-5).asDiagonal()};
  Vec3 g{0.0, 0.0, -9.81};
  Vec4 u_min{0.0, -0.01, -0.01, -0.01};
  Vec4 u_max{2.0 * 0.032 * 9.81, 0.01, 0.01, 0.01};

  double hover_thrust() const { return m * g.norm(); }

  void validate() const {
    if (!(m > 0.0)) throw std::invalid_argument("QuadParams: mass must be positive");
    if (!I.isApprox(I.transpose(), 1e-12))
      throw std::invalid_argument("QuadParams: inertia must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat3> es(I);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw std::invalid_argument("QuadParams: inertia must be positive definite");
    if ((u_min.array() > u_max.array()).any())
      throw std::invalid_argument("QuadParams: u_min exceeds u_max");
  }
};

inline AugVec augment(const StateVec& x, const Vec4& u) {
  AugVec z;
  z << x, u;
  return z;
}

inline StateVec state_part(const AugVec& z) { return z.head<kStateDim>(); }
inline Vec4 control_part(const AugVec& z) { return z.tail<kControlDim>(); }

inline Mat3 skew(const Vec3& a) {
  Mat3 s;
  s << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
  return s;
}

/// Rotation matrix from a unit quaternion (w,x,y,z), body->world.
inline Mat3 rotation_from_quaternion(const Vec4& q) {
  const double n = q.norm();
  if (n < 1e-12) throw std::invalid_argument("rotation_from_quaternion: zero quaternion");
  const Vec4 qn = q / n;
  const double w = qn(0), x = qn(1), y = qn(2), z = qn(3);
  Mat3 R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

/// Rescale the quaternion block to unit norm; other fields untouched.
inline QuadState normalize_quaternion(const QuadState& x) {
  const double n = x.q.norm();
  if (n < 1e-12) throw std::domain_error("normalize_quaternion: quaternion norm below 1e-12");
  QuadState out = x;
  out.q /= n;
  return out;
}

/// In-place renormalization of the quaternion block of a flat state.
inline void renormalize_state(StateVec& x) {
  const double n = x.segment<4>(6).norm();
  if (n < 1e-12) throw std::domain_error("renormalize_state: quaternion norm below 1e-12");
  x.segment<4>(6) /= n;
}

/// Equations of motion: m r_dd = m g + R eta_z, I w_d = tau - w x I w,
/// with quaternion kinematics q_d = 0.5 q * (0, w). Thrust acts along body +z.
inline StateVec nominal_derivative(const StateVec& x, const Vec4& u, const QuadParams& p) {
  if (!x.allFinite() || !u.allFinite()) {
    std::ostringstream msg;
    msg << "nominal_derivative: non-finite input, x=[" << x.transpose() << "] u=["
        << u.transpose() << "]";
    throw std::invalid_argument(msg.str());
  }
  const Vec3 v = x.segment<3>(3);
  const Vec4 q = x.segment<4>(6);
  const Vec3 w = x.segment<3>(10);
  const double eta = u(0);
  const Vec3 tau = u.segment<3>(1);

  // Thrust along body +z, rotated to world. Quadratic quaternion form, kept
  // homogeneous in q so the jacobian below is exact between renormalizations.
  const double qw = q(0);
  const Vec3 qv = q.segment<3>(1);
  const Vec3 a(0.0, 0.0, eta);
  const Vec3 Ra = a + 2.0 * qw * qv.cross(a) + 2.0 * qv.cross(qv.cross(a));
  const Vec3 v_dot = p.g + Ra / p.m;
  Vec4 q_dot;
  q_dot(0) = -0.5 * qv.dot(w);
  q_dot.segment<3>(1) = 0.5 * (qw * w + qv.cross(w));

  const Vec3 Iw = p.I * w;
  const Vec3 w_dot = p.I.ldlt().solve(tau - w.cross(Iw));

  StateVec dx;
  dx << v, v_dot, q_dot, w_dot;
  return dx;
}

inline StateVec nominal_derivative(const AugVec& z, const QuadParams& p) {
  return nominal_derivative(state_part(z), control_part(z), p);
}

/// Jacobian of nominal_derivative with respect to [x; u] (13x17).
inline StateJac nominal_jacobian(const AugVec& z, const QuadParams& p) {
  const Vec4 q = z.segment<4>(6);
  const Vec3 w = z.segment<3>(10);
  const double eta = z(13);

  StateJac J = StateJac::Zero();
  // d r_dot / d v
  J.block<3, 3>(0, 3).setIdentity();

  // d v_dot / d q and d v_dot / d eta.
  // R(q) a = a + 2 qw (qv x a) + 2 qv x (qv x a), a = (0,0,eta) body thrust.
  const double qw = q(0);
  const Vec3 qv = q.segment<3>(1);
  const Vec3 a(0.0, 0.0, eta);
  J.block<3, 1>(3, 6) = 2.0 / p.m * qv.cross(a);
  J.block<3, 3>(3, 7) =
      2.0 / p.m * (-qw * skew(a) + qv * a.transpose() + qv.dot(a) * Mat3::Identity() -
                   2.0 * a * qv.transpose());
  const Vec3 e3(0.0, 0.0, 1.0);
  J.block<3, 1>(3, 13) =
      (e3 + 2.0 * qw * qv.cross(e3) + 2.0 * qv.cross(qv.cross(e3))) / p.m;

  // d q_dot / d q = 0.5 Omega(w); d q_dot / d w = 0.5 Xi(q)
  Eigen::Matrix4d Om = Eigen::Matrix4d::Zero();
  Om.block<1, 3>(0, 1) = -w.transpose();
  Om.block<3, 1>(1, 0) = w;
  Om.block<3, 3>(1, 1) = -skew(w);
  J.block<4, 4>(6, 6) = 0.5 * Om;
  Eigen::Matrix<double, 4, 3> Xi;
  Xi.row(0) = -qv.transpose();
  Xi.block<3, 3>(1, 0) = qw * Mat3::Identity() + skew(qv);
  J.block<4, 3>(6, 10) = 0.5 * Xi;

  // d w_dot / d w and d w_dot / d tau
  const Mat3 Iinv = p.I.inverse();
  J.block<3, 3>(10, 10) = Iinv * (-skew(w) * p.I + skew(p.I * w));
  J.block<3, 3>(10, 14) = Iinv;
  return J;
}

}  // namespace knode

#endif  // KNODE_QUADROTOR_HPP
