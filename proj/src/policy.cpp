#include "ffsim/policy.hpp"

#include "ffsim/rl.hpp"

namespace ffsim {

std::unique_ptr<Controller> load_policy_controller(const std::string& checkpoint_path, const ThrusterSystem& system) {
  return std::make_unique<PolicyController>(system, load_checkpoint(checkpoint_path));
}

}  // namespace ffsim
