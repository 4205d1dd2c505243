#include "ffsim/scenarios.hpp"

#include <cmath>

#include "ffsim/error.hpp"

namespace ffsim {

std::string failure_mode_name(FailureMode mode) {
  switch (mode) {
    case FailureMode::Nominal: return "nominal";
    case FailureMode::StuckOff: return "stuck_off";
    case FailureMode::StuckOn: return "stuck_on";
  }
  return "nominal";
}

FailureMode parse_failure_mode(const std::string& name) {
  if (name == "nominal") return FailureMode::Nominal;
  if (name == "stuck_off") return FailureMode::StuckOff;
  if (name == "stuck_on") return FailureMode::StuckOn;
  throw ConfigError("failure mode: expected nominal, stuck_off or stuck_on, got \"" + name + "\"");
}

ScenarioConfig inspection_config(FailureMode mode) {
  ScenarioConfig cfg;
  cfg.name = "inspection_" + failure_mode_name(mode);
  cfg.seed = 0;
  cfg.controller.type = "mpc";
  cfg.controller.observer_gain = 0.5;
  cfg.plan.type = "inspection";
  auto& in = cfg.plan.inspection;
  in.target_center = Vec3::Zero();
  in.target_radius = 0.5;
  in.n_waypoints = 4;
  in.standoff = 0.5;
  in.attitude_mode = AttitudeMode::PointAtTarget;
  const InspectionPlan plan = in.build();
  const Setpoint& start = plan.waypoints.front();
  cfg.initial_state.position = start.position;
  cfg.initial_state.attitude = start.attitude;
  cfg.duration = std::ceil(plan_duration(plan));
  if (mode == FailureMode::StuckOff) cfg.faults.push_back({kInspectionFaultThruster, StuckOff{}, kInspectionFaultOnset});
  if (mode == FailureMode::StuckOn) cfg.faults.push_back({kInspectionFaultThruster, StuckOn{}, kInspectionFaultOnset});
  return cfg;
}

EpisodeResult inspection_scenario(FailureMode mode) { return run_episode(inspection_config(mode)); }

ScenarioConfig docking_config(std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.name = "docking";
  cfg.seed = seed;
  cfg.controller.type = "mpc";
  cfg.plan.type = "docking";
  DockingPlan& d = cfg.plan.docking;
  d.pre_dock.position = Vec3(0.6, 0, 0);
  d.dock.position = Vec3(0.14, 0, 0);
  cfg.contact.enabled = true;
  cfg.contact.model.body_shape.radius = 0.15;
  cfg.contact.model.world = {Plane{Vec3::UnitX(), 0.0}};
  cfg.contact.max_force = 5.0;
  cfg.duration = 60.0;

  Rng rng = Rng(seed).split(3);
  const Vec3 box_center = d.pre_dock.position + Vec3(2.0, 0, 0);
  for (int i = 0; i < 3; ++i) cfg.initial_state.position[i] = box_center[i] + rng.uniform(-0.5, 0.5);
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  const double angle = rng.uniform(0.0, 15.0 * M_PI / 180.0);
  cfg.initial_state.attitude = quat_multiply(d.dock.attitude, quat_exp(angle * axis));
  return cfg;
}

EpisodeResult docking_scenario(std::uint64_t seed) { return run_episode(docking_config(seed)); }

}  // namespace ffsim
