#include "ffsim/vec_env.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "ffsim/error.hpp"

namespace ffsim {

void SetpointTask::validate() const {
  body.validate();
  if (thrusters.count() != 12) throw ConfigError("task.thrusters: need the 12-thruster pair layout");
  for (int j = 0; j < 6; ++j) {
    const Vec3 axis = (j % 2 == 0 ? 1.0 : -1.0) * Vec3::Unit(j / 2);
    for (int k = 0; k < 2; ++k) {
      if ((thrusters.directions()[static_cast<std::size_t>(2 * j + k)] - axis).norm() > 1e-9) {
        throw ConfigError("task.thrusters: thruster " + std::to_string(2 * j + k) + " is not along its pair axis");
      }
    }
  }
  if (!(dt > 0.0)) throw ConfigError("task.dt: must be > 0");
  if (horizon < 1) throw ConfigError("task.horizon: must be >= 1");
  if (!(pos_scale > 0.0) || !(vel_scale > 0.0)) throw ConfigError("task: scales must be > 0");
  if (!(bound > 0.0)) throw ConfigError("task.bound: must be > 0");
  if (!(effort_weight >= 0.0) || !(bonus >= 0.0) || !(bonus_tol > 0.0)) throw ConfigError("task: bad reward terms");
}

void Randomization::validate() const {
  if (!(position_low.array() <= position_high.array()).all()) throw ConfigError("randomization.position: low > high");
  if (!(velocity_low.array() <= velocity_high.array()).all()) throw ConfigError("randomization.velocity: low > high");
  if (!(attitude_cone >= 0.0)) throw ConfigError("randomization.attitude_cone: must be >= 0");
  if (!(fault_probability >= 0.0 && fault_probability <= 1.0)) {
    throw ConfigError("randomization.fault_probability: must lie in [0, 1]");
  }
}

void VecEnvConfig::validate() const {
  if (n_envs < 1) throw ConfigError("n_envs: must be >= 1");
  if (threads < 0) throw ConfigError("threads: must be >= 0");
  task.validate();
  randomization.validate();
}

Eigen::VectorXd action_to_thrust(const SetpointTask& task, const Action& action) {
  Eigen::VectorXd u(12);
  const Eigen::VectorXd& u_max = task.thrusters.u_max();
  for (int j = 0; j < 6; ++j) {
    const double a = std::clamp(action[j], 0.0, 1.0);
    u[2 * j] = a * u_max[2 * j];
    u[2 * j + 1] = a * u_max[2 * j + 1];
  }
  return u;
}

Obs task_observation(const SetpointTask& task, const State& state) {
  Obs o;
  o.head<3>() = (task.setpoint - state.position) / task.pos_scale;
  o.tail<3>() = quat_to_rotation(state.attitude) * state.velocity / task.vel_scale;
  return o;
}

double task_reward(const SetpointTask& task, const State& state, const Eigen::VectorXd& thrust) {
  const double e = (task.setpoint - state.position).norm();
  const double v = state.velocity.norm();
  const bool bonus = e < task.bonus_tol && v < task.bonus_tol;
  return -e - task.effort_weight * thrust.lpNorm<1>() + (bonus ? task.bonus : 0.0);
}

SetpointEnv::SetpointEnv(const SetpointTask& task, const Randomization& rand, Rng stream)
    : task_(&task), rand_(&rand), rng_(stream) {
  reset();
}

Obs SetpointEnv::reset() {
  const Randomization& r = *rand_;
  State s;
  for (int i = 0; i < 3; ++i) s.position[i] = task_->setpoint[i] + rng_.uniform(r.position_low[i], r.position_high[i]);
  if (r.attitude_cone > 0.0) {
    Vec3 axis(rng_.normal(), rng_.normal(), rng_.normal());
    axis.normalize();
    s.attitude = quat_exp(rng_.uniform(0.0, r.attitude_cone) * axis);
  }
  Vec3 v_inertial;
  for (int i = 0; i < 3; ++i) v_inertial[i] = rng_.uniform(r.velocity_low[i], r.velocity_high[i]);
  s.velocity = quat_to_rotation(s.attitude).transpose() * v_inertial;
  stuck_ = -1;
  if (r.fault_probability > 0.0 && rng_.uniform() < r.fault_probability) {
    stuck_ = static_cast<int>(rng_.next_u64() % 12);
  }
  state_ = s;
  t_ = 0;
  ++episodes_;
  return observe();
}

double SetpointEnv::distance() const { return (task_->setpoint - state_.position).norm(); }

EnvStep SetpointEnv::step(const Action& action) {
  if (!action.allFinite()) throw InvalidInputError("non-finite action");
  Eigen::VectorXd u = action_to_thrust(*task_, action);
  if (stuck_ >= 0) u[stuck_] = apply_fault(StuckOff{}, u[stuck_], task_->thrusters.u_max()[stuck_], 0.0, rng_);
  Wrench w = mix(task_->thrusters, u);
  w.torque.setZero();
  state_ = ffsim::step(state_, task_->body, w, task_->dt);
  ++t_;
  EnvStep out;
  out.reward = task_reward(*task_, state_, u);
  out.final_distance = distance();
  out.final_obs = observe();
  const bool out_of_bounds = out.final_distance > task_->bound;
  out.terminal = out_of_bounds || t_ >= task_->horizon;
  out.truncated = out.terminal && !out_of_bounds;
  out.obs = out.terminal ? reset() : out.final_obs;
  return out;
}

VecEnv::VecEnv(VecEnvConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  task_ = std::make_unique<SetpointTask>(cfg_.task);
  rand_ = std::make_unique<Randomization>(cfg_.randomization);
  const Rng master(cfg_.master_seed);
  envs_.reserve(static_cast<std::size_t>(cfg_.n_envs));
  for (int i = 0; i < cfg_.n_envs; ++i) envs_.emplace_back(*task_, *rand_, master.split(static_cast<std::uint64_t>(i)));
  const int threads = cfg_.threads == 0 ? hardware_threads() : cfg_.threads;
  pool_ = std::make_unique<ThreadPool>(std::min(threads, cfg_.n_envs));
}

Eigen::MatrixXd VecEnv::observations() const {
  Eigen::MatrixXd o(size(), kObsDim);
  for (int i = 0; i < size(); ++i) o.row(i) = envs_[static_cast<std::size_t>(i)].observe().transpose();
  return o;
}

VecStep VecEnv::step(const Eigen::MatrixXd& actions) {
  if (actions.rows() != size() || actions.cols() != kActDim) {
    throw InvalidInputError("vec_step: actions must be " + std::to_string(size()) + " x " + std::to_string(kActDim));
  }
  const int n = size();
  VecStep out;
  out.obs.resize(n, kObsDim);
  out.final_obs.resize(n, kObsDim);
  out.rewards.resize(n);
  out.final_distance.resize(n);
  out.terminals.assign(static_cast<std::size_t>(n), 0);
  out.truncated.assign(static_cast<std::size_t>(n), 0);
  pool_->parallel_for(n, [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      EnvStep s;
      try {
        s = envs_[static_cast<std::size_t>(i)].step(actions.row(i).transpose());
      } catch (const Error& e) {
        const std::string msg = "env " + std::to_string(i) + ": " + e.what();
        if (e.kind() == ErrorKind::InvalidInput) throw InvalidInputError(msg);
        throw NumericalError(msg);
      }
      out.obs.row(i) = s.obs.transpose();
      out.final_obs.row(i) = s.final_obs.transpose();
      out.rewards[i] = s.reward;
      out.final_distance[i] = s.final_distance;
      out.terminals[static_cast<std::size_t>(i)] = s.terminal ? 1 : 0;
      out.truncated[static_cast<std::size_t>(i)] = s.truncated ? 1 : 0;
    }
  });
  return out;
}

RolloutBatch collect_rollout(VecEnv& env, int steps, const BatchPolicy& policy) {
  const int n = env.size();
  RolloutBatch b;
  b.n_envs = n;
  b.steps = steps;
  b.observations.resize(static_cast<Eigen::Index>(n) * steps, kObsDim);
  b.actions.resize(static_cast<Eigen::Index>(n) * steps, kActDim);
  b.rewards.resize(static_cast<Eigen::Index>(n) * steps);
  b.final_distance.resize(static_cast<Eigen::Index>(n) * steps);
  b.next_observations.resize(static_cast<Eigen::Index>(n) * steps, kObsDim);
  b.terminals.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(steps), 0);
  b.truncated.assign(b.terminals.size(), 0);
  Eigen::MatrixXd obs = env.observations();
  for (int t = 0; t < steps; ++t) {
    const Eigen::MatrixXd act = policy(obs, t);
    const VecStep s = env.step(act);
    for (int i = 0; i < n; ++i) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * steps + t;
      b.observations.row(row) = obs.row(i);
      b.actions.row(row) = act.row(i);
      b.rewards[row] = s.rewards[i];
      b.final_distance[row] = s.final_distance[i];
      b.next_observations.row(row) = s.final_obs.row(i);
      b.terminals[static_cast<std::size_t>(row)] = s.terminals[static_cast<std::size_t>(i)];
      b.truncated[static_cast<std::size_t>(row)] = s.truncated[static_cast<std::size_t>(i)];
    }
    obs = s.obs;
  }
  b.final_observations = obs;
  return b;
}

RandomPolicy::RandomPolicy(int n_envs, std::uint64_t seed) {
  const Rng master(seed);
  for (int i = 0; i < n_envs; ++i) streams_.push_back(master.split(static_cast<std::uint64_t>(i)));
}

Eigen::MatrixXd RandomPolicy::operator()(const Eigen::MatrixXd& obs, int) {
  Eigen::MatrixXd a(obs.rows(), kActDim);
  for (Eigen::Index i = 0; i < obs.rows(); ++i) {
    for (int j = 0; j < kActDim; ++j) a(i, j) = streams_[static_cast<std::size_t>(i)].uniform(-1.0, 1.0);
  }
  return a;
}

BenchReport make_report(int n_envs, double env_steps_per_s, double dt, double ref_steps_per_s, int ref_n_envs) {
  BenchReport r;
  r.n_envs = n_envs;
  r.env_steps_per_s = env_steps_per_s;
  r.sim_s_per_s = env_steps_per_s * dt;
  r.speedup = env_steps_per_s / ref_steps_per_s;
  r.parallel_efficiency = r.speedup / (static_cast<double>(n_envs) / static_cast<double>(ref_n_envs));
  return r;
}

std::vector<BenchReport> run_benchmark(const BenchOptions& opt) {
  if (opt.n_envs.empty()) throw InvalidInputError("bench: empty env list");
  for (int n : opt.n_envs) {
    if (n < 1) throw InvalidInputError("bench: env counts must be >= 1");
  }
  if (opt.steps < 1 || !(opt.dt > 0.0) || opt.warmup_episodes < 0) throw InvalidInputError("bench: bad options");
  std::vector<BenchReport> out;
  double ref_sps = 0.0;
  for (int n : opt.n_envs) {
    VecEnvConfig cfg;
    cfg.n_envs = n;
    cfg.task.dt = opt.dt;
    cfg.task.horizon = opt.steps;
    cfg.master_seed = opt.seed;
    cfg.threads = opt.threads;
    VecEnv env(cfg);
    RandomPolicy policy(n, Rng(opt.seed).split(1000).key());
    const BatchPolicy fn = [&policy](const Eigen::MatrixXd& o, int t) { return policy(o, t); };
    for (int w = 0; w < opt.warmup_episodes; ++w) collect_rollout(env, opt.steps, fn);
    const auto t0 = std::chrono::steady_clock::now();
    const RolloutBatch b = collect_rollout(env, opt.steps, fn);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double sps = static_cast<double>(n) * opt.steps / std::max(elapsed, 1e-12);
    if (out.empty()) ref_sps = sps;
    BenchReport r = make_report(n, sps, opt.dt, ref_sps, opt.n_envs.front());
    r.mean_reward = b.rewards.mean();
    out.push_back(r);
  }
  return out;
}

std::string bench_csv(const std::vector<BenchReport>& rows) {
  std::string s = "n_envs,env_steps_per_s,sim_s_per_s,speedup,parallel_eff\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.n_envs, r.env_steps_per_s, r.sim_s_per_s,
                  r.speedup, r.parallel_efficiency);
    s += buf;
  }
  return s;
}

}  // namespace ffsim
