#pragma once

#include <memory>
#include <string>

#include "ffsim/control.hpp"

namespace ffsim {

/// Controller that runs a trained policy checkpoint. Throws ConfigError if the
/// checkpoint is missing, corrupt, or does not fit the thruster layout.
std::unique_ptr<Controller> load_policy_controller(const std::string& checkpoint_path, const ThrusterSystem& system);

}  // namespace ffsim
