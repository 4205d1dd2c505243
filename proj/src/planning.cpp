#include "ffsim/planning.hpp"

#include <algorithm>
#include <cmath>

#include "ffsim/error.hpp"

namespace ffsim {

namespace {

constexpr double kPi = 3.14159265358979323846;

Quat from_rotation(const Mat3& r) {
  const Eigen::Quaterniond q(r);
  Quat out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < 0.0) out = -out;
  return out / out.norm();
}

// A straight move between two poses: position at `speed`, attitude at `rate`,
// both finishing together.
struct Segment {
  Vec3 p0, p1;
  Quat q0, q1;
  double duration = 0.0;

  Segment(const Vec3& a, const Quat& qa, const Vec3& b, const Quat& qb, double speed, double rate)
      : p0(a), p1(b), q0(qa), q1(qb) {
    const double angle = quat_log(quat_multiply(quat_conjugate(qa), qb)).norm();
    duration = std::max((b - a).norm() / speed, angle / rate);
  }

  Setpoint at(double tau) const {
    Setpoint sp;
    if (duration <= 0.0 || tau >= duration) {
      sp.position = p1;
      sp.attitude = q1;
      return sp;
    }
    const double s = std::max(0.0, tau) / duration;
    sp.position = p0 + s * (p1 - p0);
    sp.attitude = slerp(q0, q1, s);
    const Vec3 v_inertial = (p1 - p0) / duration;
    sp.velocity = quat_to_rotation(sp.attitude).transpose() * v_inertial;
    Quat q1s = q1;
    if (q0.dot(q1s) < 0.0) q1s = -q1s;
    sp.angular_velocity = quat_log(quat_multiply(quat_conjugate(q0), q1s)) / duration;
    return sp;
  }
};

Segment inspection_segment(const InspectionPlan& plan, std::size_t i) {
  const Setpoint& a = plan.waypoints[i];
  const Setpoint& b = plan.waypoints[i + 1];
  return Segment(a.position, a.attitude, b.position, b.attitude, plan.transit_speed, plan.turn_rate);
}

// Locates t: segment index and local time, or the waypoint being held.
struct PlanCursor {
  bool moving = false;
  std::size_t index = 0;  // segment index when moving, else waypoint index
  double tau = 0.0;
};

PlanCursor locate(const InspectionPlan& plan, double t) {
  PlanCursor c;
  double t0 = 0.0;
  for (std::size_t i = 0; i + 1 < plan.waypoints.size(); ++i) {
    const double d = inspection_segment(plan, i).duration;
    if (t < t0 + d) return {true, i, t - t0};
    t0 += d;
    if (t < t0 + plan.dwell) return {false, i + 1, t - t0};
    t0 += plan.dwell;
  }
  c.index = plan.waypoints.size() - 1;
  return c;
}

}  // namespace

Quat slerp(const Quat& a, const Quat& b, double s) {
  Quat bb = b;
  if (a.dot(bb) < 0.0) bb = -bb;
  const Vec3 delta = quat_log(quat_multiply(quat_conjugate(a), bb));
  return quat_normalized(quat_multiply(a, quat_exp(s * delta)));
}

void InspectionPlan::validate() const {
  if (waypoints.empty()) throw ConfigError("inspection plan needs at least one waypoint");
  if (!(standoff > 0.0)) throw ConfigError("inspection standoff must be > 0");
  if (!(dwell >= 0.0)) throw ConfigError("inspection dwell must be >= 0");
  if (!(transit_speed > 0.0) || !(turn_rate > 0.0)) throw ConfigError("inspection speeds must be > 0");
  for (std::size_t i = 0; i + 1 < waypoints.size(); ++i) {
    const bool same_place = (waypoints[i + 1].position - waypoints[i].position).norm() <= 1e-6;
    const bool same_att = attitude_error(waypoints[i + 1].attitude, waypoints[i].attitude).norm() <= 1e-9;
    if (same_place && same_att) throw ConfigError("inspection waypoints must be distinct");
  }
}

InspectionPlan plan_inspection(const Vec3& target_center, double target_radius, int n_waypoints, double standoff,
                               AttitudeMode mode, const Vec3& plane_normal) {
  if (n_waypoints < 1) throw InvalidInputError("plan_inspection: n_waypoints must be >= 1");
  if (!(standoff > 0.0) || !(target_radius >= 0.0)) {
    throw InvalidInputError("plan_inspection: need standoff > 0 and target_radius >= 0");
  }
  if (!(plane_normal.norm() > 0.0)) throw InvalidInputError("plan_inspection: zero plane normal");
  const Vec3 n = plane_normal.normalized();
  // First in-plane axis: project the inertial axis least aligned with n.
  Eigen::Index k = 0;
  n.cwiseAbs().minCoeff(&k);
  Vec3 e1 = Vec3::Unit(k) - n * n[k];
  e1.normalize();
  const Vec3 e2 = n.cross(e1);
  const double radius = target_radius + standoff;

  InspectionPlan plan;
  plan.standoff = standoff;
  for (int i = 0; i < n_waypoints; ++i) {
    const double theta = 2.0 * kPi * i / n_waypoints;
    Setpoint sp;
    sp.position = target_center + radius * (std::cos(theta) * e1 + std::sin(theta) * e2);
    if (mode == AttitudeMode::PointAtTarget) {
      const Vec3 bx = (target_center - sp.position).normalized();
      const Vec3 by = n.cross(bx);
      Mat3 r;
      r << bx, by, bx.cross(by);
      sp.attitude = from_rotation(r);
    }
    plan.waypoints.push_back(sp);
  }
  return plan;
}

double plan_duration(const InspectionPlan& plan) {
  double t = 0.0;
  for (std::size_t i = 0; i + 1 < plan.waypoints.size(); ++i) t += inspection_segment(plan, i).duration + plan.dwell;
  return t;
}

Setpoint reference_trajectory(const InspectionPlan& plan, double t) {
  if (plan.waypoints.empty()) throw InvalidInputError("reference_trajectory: empty plan");
  const PlanCursor c = locate(plan, std::max(0.0, t));
  if (c.moving) return inspection_segment(plan, c.index).at(c.tau);
  Setpoint sp = plan.waypoints[c.index];
  sp.velocity.setZero();
  sp.angular_velocity.setZero();
  return sp;
}

std::optional<Vec3> transit_direction(const InspectionPlan& plan, double t) {
  if (plan.waypoints.empty()) return std::nullopt;
  const PlanCursor c = locate(plan, std::max(0.0, t));
  if (!c.moving) return std::nullopt;
  const Segment seg = inspection_segment(plan, c.index);
  const Vec3 d = seg.p1 - seg.p0;
  if (d.norm() <= 1e-12) return std::nullopt;
  return Vec3(d.normalized());
}

double lateral_error(const InspectionPlan& plan, double t, const Vec3& position) {
  const Vec3 e = position - reference_trajectory(plan, t).position;
  const auto dir = transit_direction(plan, t);
  if (!dir) return e.norm();
  return (e - e.dot(*dir) * *dir).norm();
}

std::string stage_name(DockingStage stage) {
  switch (stage) {
    case DockingStage::Transit: return "transit";
    case DockingStage::GateHold: return "gate_hold";
    case DockingStage::FinalApproach: return "final_approach";
    case DockingStage::Docked: return "docked";
  }
  return "unknown";
}

void DockingPlan::validate() const {
  if (!(approach_speed > 0.0) || !(transit_speed > 0.0) || !(turn_rate > 0.0)) {
    throw ConfigError("docking speeds must be > 0");
  }
  if (!(gate_position_tol > 0.0) || !(gate_attitude_tol > 0.0) || !(gate_hold >= 0.0)) {
    throw ConfigError("docking gate tolerances must be > 0 and gate_hold >= 0");
  }
  if ((dock.position - pre_dock.position).norm() <= 1e-9) {
    throw ConfigError("docking gate must precede the dock along the approach axis");
  }
}

Setpoint reference_trajectory(const DockingPlan& plan, double t) {
  const Segment seg(plan.pre_dock.position, plan.pre_dock.attitude, plan.dock.position, plan.dock.attitude,
                    plan.approach_speed, plan.turn_rate);
  return seg.at(std::max(0.0, t));
}

bool within_gate(const State& state, const DockingPlan& plan) {
  return (state.position - plan.pre_dock.position).norm() <= plan.gate_position_tol &&
         attitude_error(state.attitude, plan.pre_dock.attitude).norm() <= plan.gate_attitude_tol;
}

DockingSupervisor::DockingSupervisor(DockingPlan plan) : plan_(std::move(plan)) { plan_.validate(); }

void DockingSupervisor::enter(DockingStage stage, const State& state, double t) {
  stage_ = stage;
  entry_time_ = t;
  entry_position_ = state.position;
  entry_attitude_ = state.attitude;
}

StageOutput DockingSupervisor::update(const State& state, double t, bool settled) {
  if (!started_) {
    enter(DockingStage::Transit, state, t);
    started_ = true;
  }
  if (stage_ == DockingStage::Transit && within_gate(state, plan_)) enter(DockingStage::GateHold, state, t);
  if (stage_ == DockingStage::GateHold && t - entry_time_ >= plan_.gate_hold - 1e-12) {
    enter(DockingStage::FinalApproach, state, t);
  }
  if (stage_ == DockingStage::FinalApproach && settled) enter(DockingStage::Docked, state, t);
  const Setpoint& goal = stage_ == DockingStage::Transit || stage_ == DockingStage::GateHold ? plan_.pre_dock : plan_.dock;
  return {stage_, Setpoint{goal.position, goal.attitude, Vec3::Zero(), Vec3::Zero()}};
}

Setpoint DockingSupervisor::reference(double t) const {
  switch (stage_) {
    case DockingStage::Transit: {
      const Segment seg(entry_position_, entry_attitude_, plan_.pre_dock.position, plan_.pre_dock.attitude,
                        plan_.transit_speed, plan_.turn_rate);
      return seg.at(t - entry_time_);
    }
    case DockingStage::GateHold:
      return Setpoint{plan_.pre_dock.position, plan_.pre_dock.attitude, Vec3::Zero(), Vec3::Zero()};
    case DockingStage::FinalApproach:
      return reference_trajectory(plan_, t - entry_time_);
    case DockingStage::Docked:
      return Setpoint{plan_.dock.position, plan_.dock.attitude, Vec3::Zero(), Vec3::Zero()};
  }
  return plan_.dock;
}

}  // namespace ffsim
