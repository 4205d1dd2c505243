#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ffsim/control.hpp"
#include "ffsim/vec_env.hpp"

namespace ffsim {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

/// Actor (tanh MLP -> action mean), a state-independent log-std vector, and a
/// critic (tanh MLP -> value), all packed in one flat vector:
/// actor layers (W column-major, then b), log_std, critic layers.
class MlpParams {
 public:
  MlpParams() = default;
  MlpParams(int obs_dim, int act_dim, std::vector<int> hidden);

  /// Orthogonal-free scaled-uniform init from the stream; log_std = init_log_std.
  static MlpParams init(int obs_dim, int act_dim, const std::vector<int>& hidden, Rng& rng,
                        double init_log_std = -0.5);

  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }
  const std::vector<int>& hidden() const { return hidden_; }
  int layers() const { return static_cast<int>(hidden_.size()) + 1; }

  Eigen::VectorXd& data() { return data_; }
  const Eigen::VectorXd& data() const { return data_; }
  Eigen::Index size() const { return data_.size(); }

  /// Layer l of the actor (critic = false) or critic: W is out x in.
  Eigen::Map<const Eigen::MatrixXd> weight(bool critic, int l) const;
  Eigen::Map<const Eigen::VectorXd> bias(bool critic, int l) const;
  Eigen::Map<const Eigen::VectorXd> log_std() const;
  std::size_t weight_offset(bool critic, int l) const;
  std::size_t bias_offset(bool critic, int l) const;
  std::size_t log_std_offset() const { return log_std_offset_; }

  bool operator==(const MlpParams& o) const {
    return obs_dim_ == o.obs_dim_ && act_dim_ == o.act_dim_ && hidden_ == o.hidden_ && data_ == o.data_;
  }

 private:
  int layer_in(bool critic, int l) const;
  int layer_out(bool critic, int l) const;

  int obs_dim_ = 0;
  int act_dim_ = 0;
  std::vector<int> hidden_;
  Eigen::VectorXd data_;
  std::vector<std::size_t> actor_offsets_;
  std::vector<std::size_t> critic_offsets_;
  std::size_t log_std_offset_ = 0;
};

struct PolicyOutput {
  Eigen::MatrixXd mean;     // B x act_dim
  Eigen::VectorXd log_std;  // act_dim, clamped to [kLogStdMin, kLogStdMax]
  Eigen::VectorXd value;    // B
};

/// Batched forward pass; obs is B x obs_dim. Throws NumericalError on
/// non-finite output.
PolicyOutput policy_forward(const MlpParams& params, const Eigen::MatrixXd& obs);

/// Diagonal-Gaussian log density of each row of `actions`.
Eigen::VectorXd gaussian_log_prob(const Eigen::MatrixXd& mean, const Eigen::VectorXd& log_std,
                                  const Eigen::MatrixXd& actions);
double gaussian_entropy(const Eigen::VectorXd& log_std);

/// Upstream gradients of a scalar loss with respect to the network outputs.
struct OutputGrad {
  Eigen::MatrixXd d_mean;     // B x act_dim
  Eigen::VectorXd d_log_std;  // act_dim (with respect to the clamped value)
  Eigen::VectorXd d_value;    // B
};

/// Reverse-mode accumulation through the MLPs; returns d loss / d params.
Eigen::VectorXd policy_backward(const MlpParams& params, const Eigen::MatrixXd& obs, const OutputGrad& g);

/// delta_t = r_t + gamma v_{t+1} (1 - done_t) - v_t,
/// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}, returns = A + v.
/// `values` has one more entry than `rewards` (the bootstrap value).
struct Gae {
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};
Gae compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values, const std::vector<std::uint8_t>& terminals,
                double gamma, double lambda);

/// Same recursion with time-limit bootstrapping: next_values[t] is the value
/// of the observation after step t (before any reset). A step that is
/// terminal and truncated still bootstraps from it in delta_t but cuts the
/// advantage recursion.
Gae compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values, const Eigen::VectorXd& next_values,
                const std::vector<std::uint8_t>& terminals, const std::vector<std::uint8_t>& truncated, double gamma,
                double lambda);

struct TrainConfig {
  std::string algorithm = "ppo";  // ppo | vpg
  long long total_steps = 200000;
  int n_envs = 128;
  int rollout_steps = 512;
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  int epochs = 4;
  int minibatch = 1024;
  double learning_rate = 1e-3;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  double reward_scale = 0.01;  // critic targets are built from scaled rewards
  std::vector<int> hidden = {64, 64};
  double init_log_std = -0.5;
  int eval_interval = 1;  // iterations between evaluations and checkpoints
  int eval_episodes = 64;
  std::string checkpoint_dir;  // empty: no checkpoints
  std::uint64_t seed = 0;
  int threads = 1;
  SetpointTask task;
  Randomization randomization;

  void validate() const;
};

/// One on-policy batch with everything the update needs.
struct RolloutBuffer {
  Eigen::MatrixXd obs;      // N x obs_dim
  Eigen::MatrixXd actions;  // N x act_dim (raw Gaussian samples)
  Eigen::VectorXd rewards;
  std::vector<std::uint8_t> terminals;
  std::vector<std::uint8_t> truncated;
  Eigen::VectorXd log_probs;
  Eigen::VectorXd values;    // N
  Eigen::MatrixXd next_obs;  // N x obs_dim, for bootstrapping
  Eigen::VectorXd final_distance;
  int n_envs = 0;
  int steps = 0;
  Eigen::VectorXd advantages;  // filled per epoch, normalized
  Eigen::VectorXd returns;
};

/// Recomputes values with the current critic, then GAE per env on the
/// rewards times reward_scale, then normalizes advantages to mean 0 and std 1.
void refresh_advantages(RolloutBuffer& buf, const MlpParams& params, double gamma, double lambda,
                        double reward_scale = 1.0);

struct LossTerms {
  double loss = 0.0;
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  Eigen::VectorXd grad;
};

/// Clipped-surrogate loss -E[min(rA, clip(r) A)] + c_v E[(V - R)^2] - c_e H
/// and its gradient over the rows `idx` of the buffer.
LossTerms ppo_loss(const MlpParams& params, const RolloutBuffer& buf, const std::vector<int>& idx, double clip,
                   double value_coef, double entropy_coef);
/// -E[log pi(a|o) A] + c_v E[(V - R)^2] - c_e H.
LossTerms vpg_loss(const MlpParams& params, const RolloutBuffer& buf, const std::vector<int>& idx, double value_coef,
                   double entropy_coef);

class Adam {
 public:
  Adam() = default;
  explicit Adam(Eigen::Index n, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);

  Eigen::VectorXd m, v;
  long long t = 0;
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct UpdateMetrics {
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  int aborted = 0;  // minibatches skipped for a non-finite loss
};

/// Epochs of shuffled minibatch steps (PPO or VPG per cfg.algorithm) with the
/// global gradient norm clipped at cfg.max_grad_norm.
UpdateMetrics ppo_update(MlpParams& params, Adam& opt, RolloutBuffer& buf, const TrainConfig& cfg, Rng& rng);

/// Collects one batch with the stochastic policy; actions are sampled from
/// each env's stream and clamped to [-1, 1] before reaching the env.
RolloutBuffer collect_buffer(VecEnv& env, const MlpParams& params, int steps, std::vector<Rng>& action_rngs);

/// Clamped mean action.
Eigen::MatrixXd deterministic_actions(const MlpParams& params, const Eigen::MatrixXd& obs);

struct EvalResult {
  double mean_final_distance = 0.0;
  double mean_return = 0.0;
};

/// One episode in each of `episodes` environments seeded from `seed`; the
/// distance is taken at each env's first terminal step.
EvalResult evaluate(const TrainConfig& cfg, const BatchPolicy& policy, int episodes, std::uint64_t seed);
EvalResult evaluate_params(const TrainConfig& cfg, const MlpParams& params, int episodes, std::uint64_t seed);
EvalResult evaluate_random(const TrainConfig& cfg, int episodes, std::uint64_t seed);

/// Seed of the evaluation environments for a training seed.
std::uint64_t eval_seed(std::uint64_t train_seed);

struct CurveRow {
  int iteration = 0;
  long long env_steps = 0;
  double mean_return = 0.0;         // per-episode training return
  double mean_final_distance = 0.0; // deterministic evaluation
  double surrogate = 0.0;
  double value_loss = 0.0;
  double approx_kl = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;

  bool operator==(const CurveRow&) const = default;
};

struct TrainResult {
  MlpParams params;
  std::vector<CurveRow> curve;
  std::vector<std::string> incidents;
};

TrainResult train(const TrainConfig& cfg);

std::string curve_csv(const std::vector<CurveRow>& curve);

/// Persisted policy: parameters plus the observation constants of the task.
struct Checkpoint {
  MlpParams params;
  double pos_scale = 1.0;
  double vel_scale = 0.5;
  int iteration = 0;
  long long env_steps = 0;
};

/// Binary layout: "FFRL", u32 version, u32 shape count, u32 shapes
/// (obs_dim, act_dim, hidden...), u64 value count, f64 values (parameters,
/// pos_scale, vel_scale), u64 iteration, u64 env_steps, u64 FNV-1a checksum of
/// all preceding bytes. Everything little-endian. Written to a temporary file
/// and renamed into place; a JSON sidecar (path + ".json") carries the same
/// metadata in readable form.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt, const std::string& sidecar_extra_json = "{}");
/// Throws ConfigError on a bad magic, version, checksum, or size.
Checkpoint load_checkpoint(const std::string& path);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

/// Deployed policy: mean action of the observation built from the reference
/// position and the inertial velocity with the checkpoint's scales.
class PolicyController : public Controller {
 public:
  PolicyController(const ThrusterSystem& system, Checkpoint ckpt);
  ControlOutput compute(const State& state, const ReferenceFn& reference, double t) override;
  void reset() override {}
  std::string name() const override { return "policy"; }

 private:
  SetpointTask task_;
  Checkpoint ckpt_;
};

}  // namespace ffsim
