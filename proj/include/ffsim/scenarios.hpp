#pragma once

#include <cstdint>
#include <string>

#include "ffsim/sim.hpp"

namespace ffsim {

enum class FailureMode { Nominal, StuckOff, StuckOn };

std::string failure_mode_name(FailureMode mode);
/// Parses "nominal" / "stuck_off" / "stuck_on". Throws ConfigError.
FailureMode parse_failure_mode(const std::string& name);

/// Thruster and onset time of the injected failure in the inspection scenario.
inline constexpr int kInspectionFaultThruster = 3;
inline constexpr double kInspectionFaultOnset = 10.0;

/// Circular inspection of a 0.5 m target at 0.5 m standoff, four waypoints,
/// MPC tracking. The failure (if any) hits one -x thruster from
/// kInspectionFaultOnset to the end.
ScenarioConfig inspection_config(FailureMode mode);
EpisodeResult inspection_scenario(FailureMode mode);

inline constexpr std::uint64_t kCanonicalDockingSeed = 0;

/// Station face is the plane x = 0 (normal +x); the gate sits 0.6 m out and
/// the dock 0.14 m out, so the 0.15 m body sphere presses 1 cm into the face
/// at the dock pose. The start is drawn from the seed: position uniform in a
/// 1 m box centred 2 m beyond the gate, attitude within 15 degrees.
ScenarioConfig docking_config(std::uint64_t seed);
EpisodeResult docking_scenario(std::uint64_t seed);

}  // namespace ffsim
