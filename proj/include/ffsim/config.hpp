#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ffsim/actuation.hpp"
#include "ffsim/contact.hpp"
#include "ffsim/control.hpp"
#include "ffsim/planning.hpp"

namespace ffsim {

inline constexpr int kSchemaVersion = 1;

struct ControllerConfig {
  std::string type = "mpc";  // pd | mpc | gp_mpc | policy
  int period_steps = 5;      // physics steps per control update
  PdGains pd;
  MpcConfig mpc;
  double model_mass_scale = 1.0;  // controller's mass = body mass * scale
  double observer_gain = 0.0;     // mpc disturbance estimate, 0 = off
  ResidualLearning residual = default_residual_learning();
  std::string policy_path;  // checkpoint for type = policy

  bool operator==(const ControllerConfig&) const = default;
};

struct InspectionConfig {
  Vec3 target_center = Vec3::Zero();
  double target_radius = 0.5;
  int n_waypoints = 4;
  double standoff = 0.5;
  AttitudeMode attitude_mode = AttitudeMode::PointAtTarget;
  Vec3 plane_normal = Vec3::UnitZ();
  double dwell = 5.0;
  double transit_speed = 0.1;

  InspectionPlan build() const;
  bool operator==(const InspectionConfig&) const = default;
};

struct PlanConfig {
  std::string type = "setpoint";  // setpoint | inspection | docking
  Setpoint setpoint;
  InspectionConfig inspection;
  DockingPlan docking;

  bool operator==(const PlanConfig&) const = default;
};

struct ContactConfig {
  bool enabled = false;
  ContactModel model;
  SettleTolerances settle;
  double max_force = 5.0;  // bound for the bounded-contact flag, N

  bool operator==(const ContactConfig&) const = default;
};

struct ScenarioConfig {
  int schema = kSchemaVersion;
  std::string name = "scenario";
  BodyParams body;
  State initial_state;
  ThrusterSystem thrusters = ThrusterSystem::default_layout();
  std::vector<ScheduledFault> faults;
  std::vector<Disturbance> disturbances;
  ControllerConfig controller;
  PlanConfig plan;
  ContactConfig contact;
  double dt = kDefaultDt;
  double duration = 10.0;
  std::uint64_t seed = 0;
  bool log_enabled = true;

  /// Checks every invariant; throws ConfigError naming the field.
  void validate() const;
  bool operator==(const ScenarioConfig&) const = default;
};

/// Parses and validates a JSON document. Omitted optional fields take their
/// defaults. Throws ConfigError with the line for syntax errors and the field
/// path for invalid values.
ScenarioConfig load_config(const std::string& text);
ScenarioConfig load_config_file(const std::string& path);

/// Fully resolved JSON (every field present). load_config(serialize(c)) == c.
/// Throws ConfigError for callback disturbances, which have no JSON form.
std::string serialize_config(const ScenarioConfig& cfg, int indent = -1);

}  // namespace ffsim
