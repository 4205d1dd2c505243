#pragma once

#include <Eigen/Dense>

namespace ffsim {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// Quaternion stored scalar-first: (w, x, y, z). Hamilton product.
using Quat = Eigen::Vector4d;
using StateVector = Eigen::Matrix<double, 13, 1>;

inline constexpr double kDefaultDt = 0.02;
inline constexpr double kMaxDt = 0.1;

/// Rigid-body state of the free-flyer.
///
/// `attitude` is q_IB: the rotation R(q_IB) maps body-frame vectors into the
/// inertial frame. Linear and angular velocity are both expressed in the body
/// frame, so the Coriolis coupling w x v shows up in the translational
/// equation.
struct State {
  Vec3 position = Vec3::Zero();          // r_I, m
  Quat attitude = Quat(1, 0, 0, 0);      // q_IB
  Vec3 velocity = Vec3::Zero();          // v_B, m/s
  Vec3 angular_velocity = Vec3::Zero();  // w_B, rad/s

  StateVector to_vector() const;
  static State from_vector(const StateVector& x);
  bool all_finite() const;

  bool operator==(const State&) const = default;
};

struct BodyParams {
  double mass = 10.0;
  Mat3 inertia = Vec3(0.15, 0.16, 0.17).asDiagonal();

  /// Throws ConfigError unless mass > 0 and inertia is symmetric positive
  /// definite.
  void validate() const;

  bool operator==(const BodyParams&) const = default;
};

struct Wrench {
  Vec3 force = Vec3::Zero();   // N, body frame
  Vec3 torque = Vec3::Zero();  // N m, body frame

  Wrench& operator+=(const Wrench& o) {
    force += o.force;
    torque += o.torque;
    return *this;
  }
  friend Wrench operator+(Wrench a, const Wrench& b) { return a += b; }
  bool all_finite() const { return force.allFinite() && torque.allFinite(); }
  bool operator==(const Wrench&) const = default;
};

// Quaternion algebra.

Quat quat_multiply(const Quat& a, const Quat& b);
Quat quat_conjugate(const Quat& q);
Quat quat_normalized(const Quat& q);
/// Unit quaternion for the rotation vector `rotvec` (axis * angle).
Quat quat_exp(const Vec3& rotvec);
/// Rotation vector of a unit quaternion, angle in [0, pi] (sign of q folded).
Vec3 quat_log(const Quat& q);

/// R_IB for a unit quaternion. Throws InvalidInputError if |q| deviates from 1
/// by more than 1e-6.
Mat3 quat_to_rotation(const Quat& q);

/// The 3x4 kinematic matrix H(q) with q_dot = 1/2 H(q)^T w_B:
///
///   H(q) = [ -x   w   z  -y ]
///          [ -y  -z   w   x ]
///          [ -z   y  -x   w ]
///
/// i.e. H(q)^T w = q (x) (0, w) for body-frame angular velocity.
Eigen::Matrix<double, 3, 4> quat_kinematic_matrix(const Quat& q);

Quat quat_derivative(const Quat& q, const Vec3& angular_velocity);

/// Continuous-time Newton-Euler dynamics in the (r_I, q_IB, v_B, w_B) layout.
StateVector dynamics(const State& state, const BodyParams& body, const Wrench& wrench);

/// One classical RK4 step followed by quaternion renormalisation.
/// Requires 0 < dt <= 0.1. Throws NumericalError if the result is not finite.
State step(const State& state, const BodyParams& body, const Wrench& wrench, double dt);

/// RK4 step without the dt guard; h may be negative. Used by `step` and by
/// derivative checks that need a backward step.
State integrate_rk4(const State& state, const BodyParams& body, const Wrench& wrench, double h);

/// Rotational kinetic energy 1/2 w^T I w.
double rotational_energy(const State& state, const BodyParams& body);
/// Inertial angular momentum R_IB I w.
Vec3 angular_momentum_inertial(const State& state, const BodyParams& body);
/// Inertial linear momentum m R_IB v.
Vec3 linear_momentum_inertial(const State& state, const BodyParams& body);

}  // namespace ffsim
