#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ffsim/control.hpp"

namespace ffsim {

enum class AttitudeMode { Fixed, PointAtTarget };

struct InspectionPlan {
  std::vector<Setpoint> waypoints;
  double dwell = 5.0;           // s held at every waypoint after the first
  double standoff = 0.5;        // m from the target surface
  double transit_speed = 0.1;   // m/s
  double turn_rate = 0.2;       // rad/s, bounds segments that are mostly rotation

  void validate() const;

  bool operator==(const InspectionPlan&) const = default;
};

/// Waypoints on a circle of radius target_radius + standoff about the target,
/// in the plane with the given normal. The first waypoint lies along the
/// plane's first in-plane axis (+x for the default +z normal).
InspectionPlan plan_inspection(const Vec3& target_center, double target_radius, int n_waypoints, double standoff,
                               AttitudeMode mode, const Vec3& plane_normal = Vec3::UnitZ());

/// Piecewise reference: transit to waypoint 1, dwell, transit to 2, dwell, ...
/// Position moves at transit_speed along straight lines and attitude slerps;
/// the velocity fields carry the interpolation rates in the reference body
/// frame. After the last dwell the final waypoint is held at rest.
Setpoint reference_trajectory(const InspectionPlan& plan, double t);

/// Total plan length in seconds.
double plan_duration(const InspectionPlan& plan);

/// Unit direction of the segment being traversed at t, or nothing while
/// dwelling or holding.
std::optional<Vec3> transit_direction(const InspectionPlan& plan, double t);

/// Distance from `position` to the reference position, with the component
/// along the current transit direction removed. Full distance when dwelling.
double lateral_error(const InspectionPlan& plan, double t, const Vec3& position);

Quat slerp(const Quat& a, const Quat& b, double s);

enum class DockingStage { Transit = 0, GateHold = 1, FinalApproach = 2, Docked = 3 };

std::string stage_name(DockingStage stage);

struct DockingPlan {
  Setpoint pre_dock;             // the gate
  Setpoint dock;
  double approach_speed = 0.05;  // m/s during final approach
  double transit_speed = 0.1;    // m/s toward the gate
  double turn_rate = 0.2;        // rad/s
  double gate_position_tol = 0.05;
  double gate_attitude_tol = 0.1;
  double gate_hold = 2.0;        // s

  void validate() const;

  bool operator==(const DockingPlan&) const = default;
};

/// Final-approach profile: a straight line from the gate to the dock at
/// approach_speed starting at t = 0, then the dock pose at rest.
Setpoint reference_trajectory(const DockingPlan& plan, double t);

struct StageOutput {
  DockingStage stage = DockingStage::Transit;
  Setpoint setpoint;  // the pose this stage drives to (gate or dock)
};

/// Per-environment docking supervisor. Stages only move forward.
class DockingSupervisor {
 public:
  explicit DockingSupervisor(DockingPlan plan);

  /// Advances the stage from the current state. `settled` is the contact
  /// record's settle flag.
  StageOutput update(const State& state, double t, bool settled);

  DockingStage stage() const { return stage_; }
  /// Rate-limited tracking reference of the current stage at any time
  /// (sampled by the MPC horizon). It ends at the stage's setpoint.
  Setpoint reference(double t) const;
  const DockingPlan& plan() const { return plan_; }
  bool reached_gate() const { return stage_ != DockingStage::Transit; }

 private:
  void enter(DockingStage stage, const State& state, double t);

  DockingPlan plan_;
  DockingStage stage_ = DockingStage::Transit;
  double entry_time_ = 0.0;
  Vec3 entry_position_ = Vec3::Zero();
  Quat entry_attitude_ = Quat(1, 0, 0, 0);
  bool started_ = false;
};

/// Stateless check of the gate condition.
bool within_gate(const State& state, const DockingPlan& plan);

}  // namespace ffsim
