#pragma once

#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ffsim/rigid_body.hpp"

namespace ffsim {

/// Sphere. As the free-flyer's shape `center` is a body-frame offset from the
/// CoM; as a world shape it is an inertial position.
struct Sphere {
  double radius = 0.15;
  Vec3 center = Vec3::Zero();

  bool operator==(const Sphere&) const = default;
};

/// Half-space boundary {x : normal . x = offset}; the free side is
/// normal . x > offset.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;

  bool operator==(const Plane&) const = default;
};

/// Oriented box in the inertial frame.
struct Box {
  Vec3 half_extents = Vec3::Constant(0.5);
  Vec3 center = Vec3::Zero();
  Quat attitude = Quat(1, 0, 0, 0);

  bool operator==(const Box&) const = default;
};

using CollisionShape = std::variant<Sphere, Plane, Box>;

/// Throws ConfigError on invalid shape parameters or an unsupported pair
/// (the free-flyer must be a Sphere).
void validate_shapes(const CollisionShape& body_shape, const std::vector<CollisionShape>& world);

struct ContactPoint {
  Vec3 position = Vec3::Zero();  // inertial
  Vec3 normal = Vec3::UnitZ();   // unit, pointing into the free-flyer
  double depth = 0.0;            // penetration; negative = gap within the margin
  double rel_vel_normal = 0.0;   // normal velocity of the body point, < 0 approaching
};

/// Narrow phase for the free-flyer sphere against every world shape.
/// Contacts are reported for depth >= -margin. A positive margin yields
/// speculative contacts so that a fast approach cannot skip the surface.
std::vector<ContactPoint> detect(const Sphere& body_shape, const State& state,
                                 const std::vector<CollisionShape>& world, double margin = 0.0);

struct ContactSolveResult {
  Eigen::VectorXd impulses;  // N s, >= 0
  Eigen::VectorXd forces;    // impulses / dt, N
  Wrench total_wrench;       // body frame
  double residual = 0.0;     // max_i |min(f_i, ((A+R) f + v- - v*)_i)|
  int sweeps = 0;

  bool any_active() const { return (impulses.array() > 0.0).any(); }
};

/// Contact-space inertia A = J M^-1 J^T for normal-only contacts, with the
/// Jacobian rows J_i = [n_B^T, (rho_B x n_B)^T] acting on (v_B, w_B).
Eigen::MatrixXd contact_space_inertia(const std::vector<ContactPoint>& contacts, const BodyParams& body,
                                      const State& state);

struct ComplianceTargets {
  Eigen::VectorXd regularization;   // R_i
  Eigen::VectorXd target_velocity;  // v*_i
};

/// Maps a spring-damper (k, c) onto the regularised impulse problem.
///
/// For one contact the QP optimum is f = (v* - v-) / (A + R). Requiring f/dt
/// to equal the semi-implicit spring-damper force
///
///   F = k (d - dt v+) - c v+,   v+ = v- + A f,
///
/// and solving for f gives exactly that form with
///
///   R  = 1 / ((c + k dt) dt),
///   v* = k d / (c + k dt).
///
/// So v* = 0 at zero depth (no pull on a resting contact), and as k grows v*
/// tends to d/dt, removing the penetration within one step.
ComplianceTargets compliance_targets(const std::vector<ContactPoint>& contacts, double stiffness, double damping,
                                     double dt);

/// Solves  min_f 1/2 f^T (A + R) f + f^T (v- - v*),  f >= 0
/// by projected Gauss-Seidel in contact-index order until the
/// complementarity residual is <= tol or `max_sweeps` is reached. Throws
/// NumericalError carrying the residual if it stalls. `warm_start`, when its
/// size matches, seeds the iteration.
ContactSolveResult solve_contacts(const std::vector<ContactPoint>& contacts, const BodyParams& body,
                                  const State& state, const Eigen::VectorXd& regularization,
                                  const Eigen::VectorXd& target_velocity, double dt,
                                  const Eigen::VectorXd& warm_start = Eigen::VectorXd(), double tol = 1e-8,
                                  int max_sweeps = 1000);

/// Collision geometry plus the spring-damper used to set the compliance.
struct ContactModel {
  Sphere body_shape;
  std::vector<CollisionShape> world;
  double stiffness = 200.0;  // N/m
  double damping = 20.0;     // N s/m

  bool operator==(const ContactModel&) const = default;
};

struct ContactStep {
  std::vector<ContactPoint> contacts;
  ContactSolveResult result;
};

/// One contact resolution for a physics step of length dt. The impulse is
/// applied at the start of the step (see apply_impulses), so v- is the
/// free-motion velocity at mid-step under `applied`, the velocity that moves
/// the pose. Depths come from the current pose.
ContactStep resolve_contacts(const ContactModel& model, const BodyParams& body, const State& state,
                             const Wrench& applied, double dt, const Eigen::VectorXd& warm_start = Eigen::VectorXd());

/// Adds the velocity change of the solved impulses to the state.
State apply_impulses(const State& state, const BodyParams& body, const ContactSolveResult& result, double dt);

struct SettleTolerances {
  double position = 0.05;  // m
  double velocity = 0.01;  // m/s
  double duration = 2.0;   // s the criteria must hold

  bool operator==(const SettleTolerances&) const = default;
};

struct ContactRecord {
  std::optional<double> first_contact_time;
  double peak_force = 0.0;
  bool settled = false;
  std::optional<double> settle_time;
  std::optional<double> window_start;  // start of the current run of in-tolerance samples

  bool operator==(const ContactRecord&) const = default;
};

/// Settling only counts after first contact.
ContactRecord update_record(ContactRecord record, bool contact_active, double force_magnitude, double pose_error,
                            double vel_norm, double t, const SettleTolerances& tol);

inline ContactRecord update_record(const ContactRecord& record, const ContactSolveResult& result, double pose_error,
                                   double vel_norm, double t, const SettleTolerances& tol) {
  return update_record(record, result.any_active(), result.total_wrench.force.norm(), pose_error, vel_norm, t, tol);
}

}  // namespace ffsim
