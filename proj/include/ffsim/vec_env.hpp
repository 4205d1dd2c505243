#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ffsim/actuation.hpp"
#include "ffsim/rng.hpp"
#include "ffsim/thread_pool.hpp"

namespace ffsim {

inline constexpr int kObsDim = 6;
inline constexpr int kActDim = 6;
using Obs = Eigen::Matrix<double, kObsDim, 1>;
using Action = Eigen::Matrix<double, kActDim, 1>;

/// Translational setpoint regulation with the attitude frozen.
struct SetpointTask {
  BodyParams body;
  ThrusterSystem thrusters = ThrusterSystem::default_layout();
  Vec3 setpoint = Vec3::Zero();
  double dt = 0.02;
  int horizon = 512;         // steps per episode
  double pos_scale = 1.0;    // observation normalization, m
  double vel_scale = 0.5;    // m/s
  double bound = 5.0;        // episode ends beyond this distance, m
  double effort_weight = 0.1;
  double bonus = 10.0;
  double bonus_tol = 0.05;   // position (m) and speed (m/s) for the bonus

  /// Throws ConfigError. The thruster layout must have 12 thrusters ordered as
  /// in ThrusterSystem::default_layout (two per direction).
  void validate() const;
  bool operator==(const SetpointTask&) const = default;
};

/// Per-episode initial-condition ranges, offsets from the setpoint.
struct Randomization {
  Vec3 position_low = Vec3::Constant(-1.0);
  Vec3 position_high = Vec3::Constant(1.0);
  Vec3 velocity_low = Vec3::Zero();  // inertial, m/s
  Vec3 velocity_high = Vec3::Zero();
  double attitude_cone = 0.0;        // rad about identity
  double fault_probability = 0.0;    // chance one thruster is stuck off for the episode

  void validate() const;
  bool operator==(const Randomization&) const = default;
};

struct VecEnvConfig {
  int n_envs = 1;
  SetpointTask task;
  Randomization randomization;
  std::uint64_t master_seed = 0;
  int threads = 1;

  void validate() const;
};

/// Action entry j drives the two thrusters of direction j (+x, -x, +y, -y, +z,
/// -z) at clamp(a_j, 0, 1) * u_max, so negative entries mean "off".
Eigen::VectorXd action_to_thrust(const SetpointTask& task, const Action& action);

/// ((r_ref - r) / pos_scale, v_I / vel_scale).
Obs task_observation(const SetpointTask& task, const State& state);

/// -|e| - w |u|_1 + bonus * [|e| < tol and |v| < tol], from the state after
/// the step and the thrust applied during it.
double task_reward(const SetpointTask& task, const State& state, const Eigen::VectorXd& thrust);

struct EnvStep {
  Obs obs;             // after auto-reset when terminal
  double reward = 0.0;
  bool terminal = false;
  bool truncated = false;  // terminal only because the horizon ran out
  Obs final_obs;       // observation before the reset (equals obs if not terminal)
  double final_distance = 0.0;  // |e| after the step
};

/// One environment. All randomness comes from its own stream.
class SetpointEnv {
 public:
  SetpointEnv(const SetpointTask& task, const Randomization& rand, Rng stream);

  Obs reset();
  EnvStep step(const Action& action);
  Obs observe() const { return task_observation(*task_, state_); }

  const State& state() const { return state_; }
  int t() const { return t_; }
  int stuck_thruster() const { return stuck_; }
  int episodes() const { return episodes_; }
  double distance() const;

 private:
  const SetpointTask* task_;
  const Randomization* rand_;
  Rng rng_;
  State state_;
  int t_ = 0;
  int stuck_ = -1;
  int episodes_ = 0;
};

struct VecStep {
  Eigen::MatrixXd obs;        // n x obs_dim
  Eigen::VectorXd rewards;
  std::vector<std::uint8_t> terminals;
  std::vector<std::uint8_t> truncated;
  Eigen::MatrixXd final_obs;  // n x obs_dim
  Eigen::VectorXd final_distance;
};

/// Batch of environments. Env i owns stream Rng(master_seed).split(i); the
/// result of step() is bit-identical to stepping each SetpointEnv in order.
class VecEnv {
 public:
  explicit VecEnv(VecEnvConfig cfg);

  int size() const { return static_cast<int>(envs_.size()); }
  const VecEnvConfig& config() const { return cfg_; }
  Eigen::MatrixXd observations() const;
  /// actions: n x act_dim. Errors name the env index.
  VecStep step(const Eigen::MatrixXd& actions);
  const SetpointEnv& env(int i) const { return envs_[static_cast<std::size_t>(i)]; }

 private:
  VecEnvConfig cfg_;
  std::unique_ptr<SetpointTask> task_;
  std::unique_ptr<Randomization> rand_;
  std::vector<SetpointEnv> envs_;
  std::unique_ptr<ThreadPool> pool_;
};

/// Flattened rollout; row i * T + t holds env i at step t.
struct RolloutBatch {
  int n_envs = 0;
  int steps = 0;
  Eigen::MatrixXd observations;  // (n T) x obs_dim
  Eigen::MatrixXd actions;       // (n T) x act_dim
  Eigen::VectorXd rewards;
  std::vector<std::uint8_t> terminals;
  std::vector<std::uint8_t> truncated;
  Eigen::MatrixXd next_observations;  // (n T) x obs_dim, after each step and before any reset
  Eigen::VectorXd final_distance;  // |e| after each step
  Eigen::MatrixXd final_observations;  // n x obs_dim, after the last step
};

/// policy(obs n x obs_dim, t) -> actions n x act_dim.
using BatchPolicy = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, int)>;

RolloutBatch collect_rollout(VecEnv& env, int steps, const BatchPolicy& policy);

/// Uniform actions on [-1, 1]^6; env i draws from Rng(seed).split(i).
class RandomPolicy {
 public:
  RandomPolicy(int n_envs, std::uint64_t seed);
  Eigen::MatrixXd operator()(const Eigen::MatrixXd& obs, int t);

 private:
  std::vector<Rng> streams_;
};

struct BenchReport {
  int n_envs = 0;
  double env_steps_per_s = 0.0;
  double sim_s_per_s = 0.0;
  double speedup = 0.0;
  double parallel_efficiency = 0.0;
  double mean_reward = 0.0;  // deterministic digest of the simulated batch
};

/// Fills sim_s_per_s, speedup and efficiency from env_steps_per_s.
BenchReport make_report(int n_envs, double env_steps_per_s, double dt, double ref_steps_per_s, int ref_n_envs);

struct BenchOptions {
  std::vector<int> n_envs = {1, 256};
  int steps = 512;
  double dt = 0.02;
  int warmup_episodes = 1;
  int threads = 0;  // 0: all hardware threads
  std::uint64_t seed = 0;
};

/// Timed random-policy rollouts; the first entry is the reference batch.
std::vector<BenchReport> run_benchmark(const BenchOptions& opt);

/// CSV with columns n_envs, env_steps_per_s, sim_s_per_s, speedup, parallel_eff.
std::string bench_csv(const std::vector<BenchReport>& rows);

}  // namespace ffsim
