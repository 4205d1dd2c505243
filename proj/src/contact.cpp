#include "ffsim/contact.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ffsim/error.hpp"

namespace ffsim {

void validate_shapes(const CollisionShape& body_shape, const std::vector<CollisionShape>& world) {
  const auto* sphere = std::get_if<Sphere>(&body_shape);
  if (!sphere) throw ConfigError("contact: the free-flyer shape must be a sphere");
  if (!(sphere->radius > 0.0)) throw ConfigError("contact: sphere radius must be > 0");
  for (std::size_t i = 0; i < world.size(); ++i) {
    std::ostringstream where;
    where << "contact.shapes[" << i << "]: ";
    if (const auto* s = std::get_if<Sphere>(&world[i])) {
      if (!(s->radius > 0.0)) throw ConfigError(where.str() + "radius must be > 0");
    } else if (const auto* p = std::get_if<Plane>(&world[i])) {
      if (std::abs(p->normal.norm() - 1.0) > 1e-9) throw ConfigError(where.str() + "plane normal must be unit");
    } else if (const auto* b = std::get_if<Box>(&world[i])) {
      if (!(b->half_extents.array() > 0.0).all()) throw ConfigError(where.str() + "half extents must be > 0");
      if (std::abs(b->attitude.norm() - 1.0) > 1e-9) throw ConfigError(where.str() + "box attitude must be unit");
    }
  }
}

namespace {

double point_normal_velocity(const State& state, const Mat3& r_ib, const Vec3& point, const Vec3& normal) {
  const Vec3 v_inertial = r_ib * state.velocity;
  const Vec3 w_inertial = r_ib * state.angular_velocity;
  return normal.dot(v_inertial + w_inertial.cross(point - state.position));
}

}  // namespace

std::vector<ContactPoint> detect(const Sphere& body_shape, const State& state,
                                 const std::vector<CollisionShape>& world, double margin) {
  if (!(margin >= 0.0)) throw InvalidInputError("detect: margin must be >= 0");
  const Mat3 r_ib = quat_to_rotation(state.attitude);
  const Vec3 c = state.position + r_ib * body_shape.center;
  const double r = body_shape.radius;
  std::vector<ContactPoint> out;

  for (const auto& shape : world) {
    ContactPoint cp;
    bool touching = false;
    if (const auto* p = std::get_if<Plane>(&shape)) {
      const double height = p->normal.dot(c) - p->offset;
      cp.depth = r - height;
      cp.normal = p->normal;
      cp.position = c - height * p->normal;
      touching = cp.depth >= -margin;
    } else if (const auto* s = std::get_if<Sphere>(&shape)) {
      const Vec3 d = c - s->center;
      const double dist = d.norm();
      cp.depth = r + s->radius - dist;
      cp.normal = dist > 0.0 ? Vec3(d / dist) : Vec3::UnitZ();
      cp.position = s->center + s->radius * cp.normal;
      touching = cp.depth >= -margin;
    } else if (const auto* b = std::get_if<Box>(&shape)) {
      const Mat3 rb = quat_to_rotation(b->attitude);
      const Vec3 local = rb.transpose() * (c - b->center);
      const Vec3 clamped = local.cwiseMax(-b->half_extents).cwiseMin(b->half_extents);
      if (clamped != local) {
        const Vec3 d = local - clamped;
        const double dist = d.norm();
        cp.depth = r - dist;
        cp.normal = rb * (d / dist);
        cp.position = b->center + rb * clamped;
      } else {
        // Centre inside the box: push out through the nearest face.
        Eigen::Index axis = 0;
        (b->half_extents - local.cwiseAbs()).minCoeff(&axis);
        const double sign = local[axis] >= 0.0 ? 1.0 : -1.0;
        Vec3 n_local = Vec3::Zero();
        n_local[axis] = sign;
        Vec3 face = local;
        face[axis] = sign * b->half_extents[axis];
        cp.depth = r + (b->half_extents[axis] - std::abs(local[axis]));
        cp.normal = rb * n_local;
        cp.position = b->center + rb * face;
      }
      touching = cp.depth >= -margin;
    }
    if (touching) {
      cp.rel_vel_normal = point_normal_velocity(state, r_ib, cp.position, cp.normal);
      out.push_back(cp);
    }
  }
  return out;
}

namespace {

Eigen::Matrix<double, Eigen::Dynamic, 6> contact_jacobian(const std::vector<ContactPoint>& contacts,
                                                          const State& state) {
  const Mat3 r_ib = quat_to_rotation(state.attitude);
  Eigen::Matrix<double, Eigen::Dynamic, 6> j(static_cast<Eigen::Index>(contacts.size()), 6);
  for (std::size_t i = 0; i < contacts.size(); ++i) {
    const Vec3 n_b = r_ib.transpose() * contacts[i].normal;
    const Vec3 rho_b = r_ib.transpose() * (contacts[i].position - state.position);
    const auto row = static_cast<Eigen::Index>(i);
    j.block<1, 3>(row, 0) = n_b.transpose();
    j.block<1, 3>(row, 3) = rho_b.cross(n_b).transpose();
  }
  return j;
}

}  // namespace

Eigen::MatrixXd contact_space_inertia(const std::vector<ContactPoint>& contacts, const BodyParams& body,
                                      const State& state) {
  const auto j = contact_jacobian(contacts, state);
  Eigen::Matrix<double, 6, 6> m_inv = Eigen::Matrix<double, 6, 6>::Zero();
  m_inv.topLeftCorner<3, 3>() = Mat3::Identity() / body.mass;
  m_inv.bottomRightCorner<3, 3>() = body.inertia.inverse();
  return j * m_inv * j.transpose();
}

ComplianceTargets compliance_targets(const std::vector<ContactPoint>& contacts, double stiffness, double damping,
                                     double dt) {
  if (!(stiffness > 0.0) || !(damping >= 0.0) || !(dt > 0.0)) {
    throw InvalidInputError("compliance_targets: need k > 0, c >= 0, dt > 0");
  }
  const auto n = static_cast<Eigen::Index>(contacts.size());
  ComplianceTargets out{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  const double denom = damping + stiffness * dt;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double depth = contacts[static_cast<std::size_t>(i)].depth;
    if (depth >= 0.0) {
      out.regularization[i] = 1.0 / (denom * dt);
      out.target_velocity[i] = stiffness * depth / denom;
    } else {
      // Not yet touching: spring on the end-of-step depth only, no damper.
      out.regularization[i] = 1.0 / (stiffness * dt * dt);
      out.target_velocity[i] = depth / dt;
    }
  }
  return out;
}

ContactSolveResult solve_contacts(const std::vector<ContactPoint>& contacts, const BodyParams& body,
                                  const State& state, const Eigen::VectorXd& regularization,
                                  const Eigen::VectorXd& target_velocity, double dt,
                                  const Eigen::VectorXd& warm_start, double tol, int max_sweeps) {
  if (!(dt > 0.0)) throw InvalidInputError("solve_contacts: dt must be > 0");
  const auto n = static_cast<Eigen::Index>(contacts.size());
  if (regularization.size() != n || target_velocity.size() != n) {
    throw InvalidInputError("solve_contacts: R / v* length must match the contact count");
  }
  ContactSolveResult out;
  out.impulses = Eigen::VectorXd::Zero(n);
  out.forces = Eigen::VectorXd::Zero(n);
  if (n == 0) return out;

  Eigen::MatrixXd a = contact_space_inertia(contacts, body, state);
  a.diagonal() += regularization;
  Eigen::VectorXd bias(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    bias[i] = contacts[static_cast<std::size_t>(i)].rel_vel_normal - target_velocity[i];
  }

  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  if (warm_start.size() == n) f = warm_start.cwiseMax(0.0);
  const auto residual_of = [&](const Eigen::VectorXd& x) {
    const Eigen::VectorXd g = a * x + bias;
    return x.cwiseMin(g).cwiseAbs().maxCoeff();
  };
  // Exact solve on the current active set; kept only if it is at least as good.
  const auto polish = [&]() {
    std::vector<Eigen::Index> act;
    for (Eigen::Index i = 0; i < n; ++i)
      if (f[i] > 0.0) act.push_back(i);
    if (act.empty()) return;
    const auto k = static_cast<Eigen::Index>(act.size());
    Eigen::MatrixXd ak(k, k);
    Eigen::VectorXd bk(k);
    for (Eigen::Index r = 0; r < k; ++r) {
      bk[r] = -bias[act[r]];
      for (Eigen::Index c = 0; c < k; ++c) ak(r, c) = a(act[r], act[c]);
    }
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(ak);
    if (ldlt.info() != Eigen::Success) return;
    const Eigen::VectorXd fk = ldlt.solve(bk);
    if (!fk.allFinite() || (fk.array() < 0.0).any()) return;
    Eigen::VectorXd cand = Eigen::VectorXd::Zero(n);
    for (Eigen::Index r = 0; r < k; ++r) cand[act[r]] = fk[r];
    if (residual_of(cand) <= out.residual) {
      f = cand;
      out.residual = residual_of(f);
    }
  };
  out.residual = residual_of(f);
  int sweep = 0;
  while (out.residual > tol && sweep < max_sweeps) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double gi = a.row(i).dot(f) + bias[i];
      f[i] = std::max(0.0, f[i] - gi / a(i, i));
    }
    ++sweep;
    out.residual = residual_of(f);
    polish();
  }
  out.sweeps = sweep;
  if (out.residual > tol) {
    std::ostringstream os;
    os << "contact solver stalled after " << sweep << " sweeps (residual " << out.residual << ")";
    throw NumericalError(os.str());
  }

  out.impulses = f;
  out.forces = f / dt;
  const auto j = contact_jacobian(contacts, state);
  const Eigen::Matrix<double, 6, 1> gen = j.transpose() * out.forces;
  out.total_wrench.force = gen.head<3>();
  out.total_wrench.torque = gen.tail<3>();
  return out;
}

ContactStep resolve_contacts(const ContactModel& model, const BodyParams& body, const State& state,
                             const Wrench& applied, double dt, const Eigen::VectorXd& warm_start) {
  const StateVector dx = dynamics(state, body, applied);
  State free = state;
  free.velocity += 0.5 * dt * dx.segment<3>(7);
  free.angular_velocity += 0.5 * dt * dx.segment<3>(10);
  const double reach = model.body_shape.center.norm() + model.body_shape.radius;
  const double margin = dt * (free.velocity.norm() + free.angular_velocity.norm() * reach);
  ContactStep out;
  out.contacts = detect(model.body_shape, free, model.world, margin);
  const auto targets = compliance_targets(out.contacts, model.stiffness, model.damping, dt);
  out.result = solve_contacts(out.contacts, body, free, targets.regularization, targets.target_velocity, dt,
                              warm_start);
  return out;
}

State apply_impulses(const State& state, const BodyParams& body, const ContactSolveResult& result, double dt) {
  State out = state;
  out.velocity += dt * result.total_wrench.force / body.mass;
  out.angular_velocity += body.inertia.ldlt().solve(dt * result.total_wrench.torque);
  return out;
}

ContactRecord update_record(ContactRecord record, bool contact_active, double force_magnitude, double pose_error,
                            double vel_norm, double t, const SettleTolerances& tol) {
  if (contact_active && !record.first_contact_time) record.first_contact_time = t;
  record.peak_force = std::max(record.peak_force, force_magnitude);
  if (record.settled || !record.first_contact_time) return record;

  const bool within = pose_error <= tol.position && vel_norm <= tol.velocity;
  if (!within) {
    record.window_start.reset();
    return record;
  }
  if (!record.window_start) record.window_start = t;
  if (t - *record.window_start >= tol.duration) {
    record.settled = true;
    record.settle_time = record.window_start;
  }
  return record;
}

}  // namespace ffsim
