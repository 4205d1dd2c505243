#include "ffsim/rigid_body.hpp"

#include <cmath>
#include <sstream>

#include "ffsim/error.hpp"

namespace ffsim {

StateVector State::to_vector() const {
  StateVector x;
  x << position, attitude, velocity, angular_velocity;
  return x;
}

State State::from_vector(const StateVector& x) {
  State s;
  s.position = x.segment<3>(0);
  s.attitude = x.segment<4>(3);
  s.velocity = x.segment<3>(7);
  s.angular_velocity = x.segment<3>(10);
  return s;
}

bool State::all_finite() const {
  return position.allFinite() && attitude.allFinite() && velocity.allFinite() &&
         angular_velocity.allFinite();
}

void BodyParams::validate() const {
  if (!(mass > 0.0) || !std::isfinite(mass)) {
    throw ConfigError("body.mass must be finite and > 0");
  }
  if (!inertia.allFinite() || (inertia - inertia.transpose()).norm() >= 1e-12) {
    throw ConfigError("body.inertia must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(inertia, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) {
    throw ConfigError("body.inertia must be positive definite");
  }
}

Quat quat_multiply(const Quat& a, const Quat& b) {
  return Quat(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
              a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
              a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
              a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

Quat quat_conjugate(const Quat& q) { return Quat(q[0], -q[1], -q[2], -q[3]); }

Quat quat_normalized(const Quat& q) { return q / q.norm(); }

Quat quat_exp(const Vec3& rotvec) {
  const double angle = rotvec.norm();
  if (angle < 1e-12) {
    // second-order accurate near zero
    Quat q(1.0, 0.5 * rotvec.x(), 0.5 * rotvec.y(), 0.5 * rotvec.z());
    return q / q.norm();
  }
  const double half = 0.5 * angle;
  const Vec3 axis = rotvec / angle;
  return Quat(std::cos(half), std::sin(half) * axis.x(), std::sin(half) * axis.y(),
              std::sin(half) * axis.z());
}

Vec3 quat_log(const Quat& q_in) {
  Quat q = q_in / q_in.norm();
  if (q[0] < 0.0) q = -q;
  const Vec3 v = q.tail<3>();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  const double angle = 2.0 * std::atan2(s, q[0]);
  return v * (angle / s);
}

Mat3 quat_to_rotation(const Quat& q) {
  if (std::abs(q.norm() - 1.0) > 1e-6) {
    std::ostringstream os;
    os << "quaternion is not unit (|q| = " << q.norm() << ")";
    throw InvalidInputError(os.str());
  }
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Eigen::Matrix<double, 3, 4> quat_kinematic_matrix(const Quat& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix<double, 3, 4> h;
  h << -x, w, z, -y,
       -y, -z, w, x,
       -z, y, -x, w;
  return h;
}

Quat quat_derivative(const Quat& q, const Vec3& angular_velocity) {
  return 0.5 * quat_kinematic_matrix(q).transpose() * angular_velocity;
}

namespace {

// Same as dynamics() but without the unit-norm check: RK4 stages evaluate
// slightly non-unit quaternions.
StateVector dynamics_unchecked(const StateVector& x, const BodyParams& body, const Wrench& wrench) {
  const Quat q = x.segment<4>(3);
  const Vec3 v = x.segment<3>(7);
  const Vec3 w = x.segment<3>(10);
  const double w0 = q[0], x0 = q[1], y0 = q[2], z0 = q[3];
  Mat3 r;
  r << 1 - 2 * (y0 * y0 + z0 * z0), 2 * (x0 * y0 - w0 * z0), 2 * (x0 * z0 + w0 * y0),
      2 * (x0 * y0 + w0 * z0), 1 - 2 * (x0 * x0 + z0 * z0), 2 * (y0 * z0 - w0 * x0),
      2 * (x0 * z0 - w0 * y0), 2 * (y0 * z0 + w0 * x0), 1 - 2 * (x0 * x0 + y0 * y0);

  StateVector dx;
  dx.segment<3>(0) = r * v;
  dx.segment<4>(3) = quat_derivative(q, w);
  dx.segment<3>(7) = wrench.force / body.mass - w.cross(v);
  dx.segment<3>(10) = body.inertia.inverse() * (wrench.torque - w.cross(body.inertia * w));
  return dx;
}

}  // namespace

StateVector dynamics(const State& state, const BodyParams& body, const Wrench& wrench) {
  if (std::abs(state.attitude.norm() - 1.0) > 1e-6) {
    throw InvalidInputError("dynamics: attitude quaternion is not unit");
  }
  return dynamics_unchecked(state.to_vector(), body, wrench);
}

State integrate_rk4(const State& state, const BodyParams& body, const Wrench& wrench, double h) {
  const StateVector x = state.to_vector();
  const StateVector k1 = dynamics_unchecked(x, body, wrench);
  const StateVector k2 = dynamics_unchecked(x + 0.5 * h * k1, body, wrench);
  const StateVector k3 = dynamics_unchecked(x + 0.5 * h * k2, body, wrench);
  const StateVector k4 = dynamics_unchecked(x + h * k3, body, wrench);
  StateVector next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  State out = State::from_vector(next);
  out.attitude /= out.attitude.norm();
  return out;
}

State step(const State& state, const BodyParams& body, const Wrench& wrench, double dt) {
  if (!(dt > 0.0) || dt > kMaxDt) {
    std::ostringstream os;
    os << "step: dt must lie in (0, " << kMaxDt << "], got " << dt;
    throw InvalidInputError(os.str());
  }
  State out = integrate_rk4(state, body, wrench, dt);
  if (!out.all_finite()) {
    throw NumericalError("integration diverged: non-finite state after RK4 step");
  }
  return out;
}

double rotational_energy(const State& state, const BodyParams& body) {
  const Vec3& w = state.angular_velocity;
  return 0.5 * w.dot(body.inertia * w);
}

Vec3 angular_momentum_inertial(const State& state, const BodyParams& body) {
  return quat_to_rotation(state.attitude) * (body.inertia * state.angular_velocity);
}

Vec3 linear_momentum_inertial(const State& state, const BodyParams& body) {
  return body.mass * (quat_to_rotation(state.attitude) * state.velocity);
}

}  // namespace ffsim
