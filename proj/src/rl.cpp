#include "ffsim/rl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ffsim/error.hpp"

namespace ffsim {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

MlpParams::MlpParams(int obs_dim, int act_dim, std::vector<int> hidden)
    : obs_dim_(obs_dim), act_dim_(act_dim), hidden_(std::move(hidden)) {
  if (obs_dim < 1 || act_dim < 1) throw InvalidInputError("mlp: dimensions must be >= 1");
  for (int h : hidden_) {
    if (h < 1) throw InvalidInputError("mlp: hidden sizes must be >= 1");
  }
  std::size_t off = 0;
  for (int l = 0; l < layers(); ++l) {
    actor_offsets_.push_back(off);
    off += static_cast<std::size_t>(layer_in(false, l) * layer_out(false, l) + layer_out(false, l));
  }
  log_std_offset_ = off;
  off += static_cast<std::size_t>(act_dim);
  for (int l = 0; l < layers(); ++l) {
    critic_offsets_.push_back(off);
    off += static_cast<std::size_t>(layer_in(true, l) * layer_out(true, l) + layer_out(true, l));
  }
  data_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(off));
}

int MlpParams::layer_in(bool, int l) const { return l == 0 ? obs_dim_ : hidden_[static_cast<std::size_t>(l - 1)]; }

int MlpParams::layer_out(bool critic, int l) const {
  if (l == layers() - 1) return critic ? 1 : act_dim_;
  return hidden_[static_cast<std::size_t>(l)];
}

std::size_t MlpParams::weight_offset(bool critic, int l) const {
  return (critic ? critic_offsets_ : actor_offsets_)[static_cast<std::size_t>(l)];
}

std::size_t MlpParams::bias_offset(bool critic, int l) const {
  return weight_offset(critic, l) + static_cast<std::size_t>(layer_in(critic, l) * layer_out(critic, l));
}

Eigen::Map<const Eigen::MatrixXd> MlpParams::weight(bool critic, int l) const {
  return {data_.data() + weight_offset(critic, l), layer_out(critic, l), layer_in(critic, l)};
}

Eigen::Map<const Eigen::VectorXd> MlpParams::bias(bool critic, int l) const {
  return {data_.data() + bias_offset(critic, l), layer_out(critic, l)};
}

Eigen::Map<const Eigen::VectorXd> MlpParams::log_std() const {
  return {data_.data() + log_std_offset_, act_dim_};
}

MlpParams MlpParams::init(int obs_dim, int act_dim, const std::vector<int>& hidden, Rng& rng, double init_log_std) {
  MlpParams p(obs_dim, act_dim, hidden);
  for (bool critic : {false, true}) {
    for (int l = 0; l < p.layers(); ++l) {
      const int in = p.layer_in(critic, l);
      const int out = p.layer_out(critic, l);
      // Output layers start small so the initial policy is near zero.
      const double last_scale = critic ? 1.0 : 0.01;
      const double bound = (l == p.layers() - 1 ? last_scale : 1.0) * std::sqrt(6.0 / (in + out));
      double* w = p.data_.data() + p.weight_offset(critic, l);
      for (int i = 0; i < in * out; ++i) w[i] = rng.uniform(-bound, bound);
    }
  }
  p.data_.segment(static_cast<Eigen::Index>(p.log_std_offset_), act_dim).setConstant(init_log_std);
  return p;
}

namespace {

struct Trace {
  std::vector<Eigen::MatrixXd> acts;  // acts[0] = input (in x B); acts[l + 1] = layer l output
};

Eigen::MatrixXd mlp_forward(const MlpParams& p, bool critic, const Eigen::MatrixXd& x, Trace* trace) {
  Eigen::MatrixXd a = x;
  if (trace) trace->acts.push_back(a);
  for (int l = 0; l < p.layers(); ++l) {
    Eigen::MatrixXd z = p.weight(critic, l) * a;
    z.colwise() += p.bias(critic, l);
    if (l < p.layers() - 1) z = z.array().tanh().matrix();
    a = std::move(z);
    if (trace) trace->acts.push_back(a);
  }
  return a;
}

void mlp_backward(const MlpParams& p, bool critic, const Trace& trace, Eigen::MatrixXd delta, Eigen::VectorXd& grad) {
  for (int l = p.layers() - 1; l >= 0; --l) {
    if (l < p.layers() - 1) delta = (delta.array() * (1.0 - trace.acts[static_cast<std::size_t>(l + 1)].array().square())).matrix();
    const Eigen::MatrixXd& in = trace.acts[static_cast<std::size_t>(l)];
    const Eigen::Index rows = delta.rows();
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + p.weight_offset(critic, l), rows, in.rows());
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + p.bias_offset(critic, l), rows);
    gw.noalias() += delta * in.transpose();
    gb += delta.rowwise().sum();
    if (l > 0) delta = p.weight(critic, l).transpose() * delta;
  }
}

Eigen::VectorXd clamped_log_std(const MlpParams& p) {
  return p.log_std().cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
}

}  // namespace

PolicyOutput policy_forward(const MlpParams& params, const Eigen::MatrixXd& obs) {
  if (obs.cols() != params.obs_dim()) throw InvalidInputError("policy_forward: observation dimension mismatch");
  const Eigen::MatrixXd x = obs.transpose();
  PolicyOutput out;
  out.mean = mlp_forward(params, false, x, nullptr).transpose();
  out.value = mlp_forward(params, true, x, nullptr).row(0).transpose();
  out.log_std = clamped_log_std(params);
  if (!out.mean.allFinite() || !out.value.allFinite() || !out.log_std.allFinite()) {
    throw NumericalError("policy_forward: non-finite output (corrupted parameters)");
  }
  return out;
}

Eigen::VectorXd gaussian_log_prob(const Eigen::MatrixXd& mean, const Eigen::VectorXd& log_std,
                                  const Eigen::MatrixXd& actions) {
  const Eigen::RowVectorXd inv_std = (-log_std.array()).exp().matrix().transpose();
  const Eigen::MatrixXd z = ((actions - mean).array().rowwise() * inv_std.array()).matrix();
  const double norm = log_std.sum() + 0.5 * kLog2Pi * static_cast<double>(log_std.size());
  return (-0.5 * z.rowwise().squaredNorm()).array() - norm;
}

double gaussian_entropy(const Eigen::VectorXd& log_std) {
  return log_std.sum() + 0.5 * (1.0 + kLog2Pi) * static_cast<double>(log_std.size());
}

Eigen::VectorXd policy_backward(const MlpParams& params, const Eigen::MatrixXd& obs, const OutputGrad& g) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.size());
  const Eigen::MatrixXd x = obs.transpose();
  Trace ta;
  mlp_forward(params, false, x, &ta);
  mlp_backward(params, false, ta, g.d_mean.transpose(), grad);
  Trace tc;
  mlp_forward(params, true, x, &tc);
  mlp_backward(params, true, tc, g.d_value.transpose(), grad);
  const auto ls = params.log_std();
  for (int j = 0; j < params.act_dim(); ++j) {
    if (ls[j] >= kLogStdMin && ls[j] <= kLogStdMax) {
      grad[static_cast<Eigen::Index>(params.log_std_offset()) + j] += g.d_log_std[j];
    }
  }
  return grad;
}

Gae compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values, const std::vector<std::uint8_t>& terminals,
                double gamma, double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n + 1 || static_cast<Eigen::Index>(terminals.size()) != n) {
    throw InvalidInputError("compute_gae: need n rewards, n terminals and n + 1 values");
  }
  Gae g;
  g.advantages.resize(n);
  double next = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double live = terminals[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * values[t + 1] * live - values[t];
    next = delta + gamma * lambda * live * next;
    g.advantages[t] = next;
  }
  g.returns = g.advantages + values.head(n);
  return g;
}

Gae compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values, const Eigen::VectorXd& next_values,
                const std::vector<std::uint8_t>& terminals, const std::vector<std::uint8_t>& truncated, double gamma,
                double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || next_values.size() != n || static_cast<Eigen::Index>(terminals.size()) != n ||
      static_cast<Eigen::Index>(truncated.size()) != n) {
    throw InvalidInputError("compute_gae: rewards, values, next values, terminals and truncations must align");
  }
  Gae g;
  g.advantages.resize(n);
  double next = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const auto k = static_cast<std::size_t>(t);
    const double boot = terminals[k] && !truncated[k] ? 0.0 : 1.0;
    const double live = terminals[k] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_values[t] * boot - values[t];
    next = delta + gamma * lambda * live * next;
    g.advantages[t] = next;
  }
  g.returns = g.advantages + values;
  return g;
}

void TrainConfig::validate() const {
  if (algorithm != "ppo" && algorithm != "vpg") throw ConfigError("train.algorithm: expected ppo or vpg");
  if (total_steps < 0) throw ConfigError("train.total_steps: must be >= 0");
  if (n_envs < 1 || rollout_steps < 1) throw ConfigError("train: n_envs and rollout_steps must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("train.gamma: must lie in (0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("train.lambda: must lie in [0, 1]");
  if (!(clip > 0.0)) throw ConfigError("train.clip: must be > 0");
  if (epochs < 1 || minibatch < 1) throw ConfigError("train: epochs and minibatch must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate: must be > 0");
  if (!(max_grad_norm > 0.0)) throw ConfigError("train.max_grad_norm: must be > 0");
  if (!(reward_scale > 0.0)) throw ConfigError("train.reward_scale: must be > 0");
  if (eval_interval < 1 || eval_episodes < 1) throw ConfigError("train: eval_interval and eval_episodes must be >= 1");
  if (threads < 0) throw ConfigError("train.threads: must be >= 0");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("train.hidden: sizes must be >= 1");
  }
  task.validate();
  randomization.validate();
}

void refresh_advantages(RolloutBuffer& buf, const MlpParams& params, double gamma, double lambda,
                        double reward_scale) {
  const int n = buf.n_envs;
  const int T = buf.steps;
  buf.values = policy_forward(params, buf.obs).value;
  const Eigen::VectorXd next = policy_forward(params, buf.next_obs).value;
  buf.advantages.resize(buf.values.size());
  buf.returns.resize(buf.values.size());
  for (int i = 0; i < n; ++i) {
    const Eigen::Index off = static_cast<Eigen::Index>(i) * T;
    const std::vector<std::uint8_t> term(buf.terminals.begin() + off, buf.terminals.begin() + off + T);
    const std::vector<std::uint8_t> trunc(buf.truncated.begin() + off, buf.truncated.begin() + off + T);
    const Gae g = compute_gae(reward_scale * buf.rewards.segment(off, T), buf.values.segment(off, T),
                              next.segment(off, T), term, trunc, gamma, lambda);
    buf.advantages.segment(off, T) = g.advantages;
    buf.returns.segment(off, T) = g.returns;
  }
  const double mean = buf.advantages.mean();
  const double var = (buf.advantages.array() - mean).square().mean();
  const double sd = std::sqrt(var);
  buf.advantages = (buf.advantages.array() - mean) / (sd > 1e-12 ? sd : 1.0);
}

namespace {

template <typename F>
LossTerms policy_loss(const MlpParams& params, const RolloutBuffer& buf, const std::vector<int>& idx, double value_coef,
                      double entropy_coef, F&& per_sample) {
  const Eigen::Index b = static_cast<Eigen::Index>(idx.size());
  if (b == 0) throw InvalidInputError("loss: empty minibatch");
  Eigen::MatrixXd obs(b, params.obs_dim());
  Eigen::MatrixXd act(b, params.act_dim());
  Eigen::VectorXd adv(b), ret(b), old_lp(b);
  for (Eigen::Index k = 0; k < b; ++k) {
    const int r = idx[static_cast<std::size_t>(k)];
    obs.row(k) = buf.obs.row(r);
    act.row(k) = buf.actions.row(r);
    adv[k] = buf.advantages[r];
    ret[k] = buf.returns[r];
    old_lp[k] = buf.log_probs[r];
  }
  const PolicyOutput out = policy_forward(params, obs);
  const Eigen::VectorXd lp = gaussian_log_prob(out.mean, out.log_std, act);
  const double inv_b = 1.0 / static_cast<double>(b);

  LossTerms L;
  Eigen::VectorXd d_lp(b);
  double surr = 0.0;
  double kl = 0.0;
  int clipped = 0;
  for (Eigen::Index k = 0; k < b; ++k) {
    double s = 0.0;
    double ds = 0.0;
    bool c = false;
    per_sample(lp[k], old_lp[k], adv[k], s, ds, c);
    surr += s;
    d_lp[k] = -ds * inv_b;
    kl += old_lp[k] - lp[k];
    clipped += c ? 1 : 0;
  }
  L.surrogate = -surr * inv_b;
  L.approx_kl = kl * inv_b;
  L.clip_fraction = clipped * inv_b;
  const Eigen::VectorXd verr = out.value - ret;
  L.value_loss = verr.squaredNorm() * inv_b;
  L.entropy = gaussian_entropy(out.log_std);
  L.loss = L.surrogate + value_coef * L.value_loss - entropy_coef * L.entropy;

  // d log p / d mean = (a - mu) / sigma^2, d log p / d log sigma = z^2 - 1.
  const Eigen::RowVectorXd inv_var = (-2.0 * out.log_std.array()).exp().matrix().transpose();
  const Eigen::MatrixXd diff = act - out.mean;
  OutputGrad g;
  g.d_mean = (diff.array().rowwise() * inv_var.array()).colwise() * d_lp.array();
  const Eigen::MatrixXd z2 = (diff.array().square().rowwise() * inv_var.array()).matrix();
  g.d_log_std = ((z2.array() - 1.0).colwise() * d_lp.array()).colwise().sum().transpose();
  g.d_log_std.array() -= entropy_coef;
  g.d_value = 2.0 * value_coef * inv_b * verr;
  L.grad = policy_backward(params, obs, g);
  return L;
}

}  // namespace

LossTerms ppo_loss(const MlpParams& params, const RolloutBuffer& buf, const std::vector<int>& idx, double clip,
                   double value_coef, double entropy_coef) {
  return policy_loss(params, buf, idx, value_coef, entropy_coef,
                     [clip](double lp, double old_lp, double a, double& s, double& ds, bool& c) {
                       const double ratio = std::exp(lp - old_lp);
                       const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
                       const double unclipped_term = ratio * a;
                       const double clipped_term = clipped * a;
                       c = clipped != ratio;
                       if (unclipped_term <= clipped_term) {
                         s = unclipped_term;
                         ds = ratio * a;  // d(ratio A)/d log p
                       } else {
                         s = clipped_term;
                         ds = 0.0;
                       }
                     });
}

LossTerms vpg_loss(const MlpParams& params, const RolloutBuffer& buf, const std::vector<int>& idx, double value_coef,
                   double entropy_coef) {
  return policy_loss(params, buf, idx, value_coef, entropy_coef,
                     [](double lp, double, double a, double& s, double& ds, bool& c) {
                       s = lp * a;
                       ds = a;
                       c = false;
                     });
}

Adam::Adam(Eigen::Index n, double lr_, double b1, double b2, double e)
    : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)), lr(lr_), beta1(b1), beta2(b2), eps(e) {}

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

UpdateMetrics ppo_update(MlpParams& params, Adam& opt, RolloutBuffer& buf, const TrainConfig& cfg, Rng& rng) {
  UpdateMetrics m;
  const int N = static_cast<int>(buf.obs.rows());
  std::vector<int> perm(static_cast<std::size_t>(N));
  int count = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    refresh_advantages(buf, params, cfg.gamma, cfg.lambda, cfg.reward_scale);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = N - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    for (int start = 0; start < N; start += cfg.minibatch) {
      const int end = std::min(N, start + cfg.minibatch);
      const std::vector<int> idx(perm.begin() + start, perm.begin() + end);
      LossTerms L = cfg.algorithm == "vpg" ? vpg_loss(params, buf, idx, cfg.value_coef, cfg.entropy_coef)
                                           : ppo_loss(params, buf, idx, cfg.clip, cfg.value_coef, cfg.entropy_coef);
      if (!std::isfinite(L.loss) || !L.grad.allFinite()) {
        ++m.aborted;
        continue;
      }
      const double norm = L.grad.norm();
      if (norm > cfg.max_grad_norm) L.grad *= cfg.max_grad_norm / norm;
      Eigen::VectorXd next = params.data();
      opt.step(next, L.grad);
      if (!next.allFinite()) {
        ++m.aborted;
        continue;
      }
      params.data() = std::move(next);
      m.surrogate += L.surrogate;
      m.value_loss += L.value_loss;
      m.entropy += L.entropy;
      m.approx_kl += L.approx_kl;
      m.clip_fraction += L.clip_fraction;
      ++count;
    }
  }
  if (count > 0) {
    m.surrogate /= count;
    m.value_loss /= count;
    m.entropy /= count;
    m.approx_kl /= count;
    m.clip_fraction /= count;
  }
  return m;
}

Eigen::MatrixXd deterministic_actions(const MlpParams& params, const Eigen::MatrixXd& obs) {
  return policy_forward(params, obs).mean.cwiseMax(-1.0).cwiseMin(1.0);
}

RolloutBuffer collect_buffer(VecEnv& env, const MlpParams& params, int steps, std::vector<Rng>& action_rngs) {
  const int n = env.size();
  RolloutBuffer buf;
  buf.n_envs = n;
  buf.steps = steps;
  const Eigen::Index N = static_cast<Eigen::Index>(n) * steps;
  buf.obs.resize(N, kObsDim);
  buf.actions.resize(N, kActDim);
  buf.log_probs.resize(N);
  Eigen::MatrixXd raw(n, kActDim);
  const BatchPolicy policy = [&](const Eigen::MatrixXd& obs, int t) {
    const PolicyOutput out = policy_forward(params, obs);
    const Eigen::VectorXd sd = out.log_std.array().exp();
    for (int i = 0; i < n; ++i) {
      Rng& r = action_rngs[static_cast<std::size_t>(i)];
      for (int j = 0; j < kActDim; ++j) raw(i, j) = out.mean(i, j) + sd[j] * r.normal();
    }
    const Eigen::VectorXd lp = gaussian_log_prob(out.mean, out.log_std, raw);
    for (int i = 0; i < n; ++i) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * steps + t;
      buf.actions.row(row) = raw.row(i);
      buf.log_probs[row] = lp[i];
    }
    return Eigen::MatrixXd(raw.cwiseMax(-1.0).cwiseMin(1.0));
  };
  RolloutBatch b = collect_rollout(env, steps, policy);
  buf.obs = std::move(b.observations);
  buf.rewards = std::move(b.rewards);
  buf.terminals = std::move(b.terminals);
  buf.truncated = std::move(b.truncated);
  buf.next_obs = std::move(b.next_observations);
  buf.final_distance = std::move(b.final_distance);
  return buf;
}

std::uint64_t eval_seed(std::uint64_t train_seed) { return Rng(train_seed).split(0xE7A1).key(); }

EvalResult evaluate(const TrainConfig& cfg, const BatchPolicy& policy, int episodes, std::uint64_t seed) {
  VecEnvConfig vc;
  vc.n_envs = episodes;
  vc.task = cfg.task;
  vc.randomization = cfg.randomization;
  vc.master_seed = seed;
  vc.threads = cfg.threads;
  VecEnv env(vc);
  Eigen::VectorXd final_dist = Eigen::VectorXd::Zero(episodes);
  Eigen::VectorXd ret = Eigen::VectorXd::Zero(episodes);
  std::vector<bool> done(static_cast<std::size_t>(episodes), false);
  int remaining = episodes;
  Eigen::MatrixXd obs = env.observations();
  for (int t = 0; t < cfg.task.horizon && remaining > 0; ++t) {
    const VecStep s = env.step(policy(obs, t));
    for (int i = 0; i < episodes; ++i) {
      if (done[static_cast<std::size_t>(i)]) continue;
      ret[i] += s.rewards[i];
      if (s.terminals[static_cast<std::size_t>(i)]) {
        final_dist[i] = s.final_distance[i];
        done[static_cast<std::size_t>(i)] = true;
        --remaining;
      }
    }
    obs = s.obs;
  }
  return {final_dist.mean(), ret.mean()};
}

EvalResult evaluate_params(const TrainConfig& cfg, const MlpParams& params, int episodes, std::uint64_t seed) {
  return evaluate(
      cfg, [&params](const Eigen::MatrixXd& obs, int) { return deterministic_actions(params, obs); }, episodes, seed);
}

EvalResult evaluate_random(const TrainConfig& cfg, int episodes, std::uint64_t seed) {
  RandomPolicy rp(episodes, Rng(seed).split(77).key());
  return evaluate(cfg, [&rp](const Eigen::MatrixXd& obs, int t) { return rp(obs, t); }, episodes, seed);
}

namespace {

std::string train_sidecar(const TrainConfig& cfg) {
  const nlohmann::json j = {{"algorithm", cfg.algorithm},   {"total_steps", cfg.total_steps},
                            {"n_envs", cfg.n_envs},         {"rollout_steps", cfg.rollout_steps},
                            {"gamma", cfg.gamma},           {"lambda", cfg.lambda},
                            {"clip", cfg.clip},             {"epochs", cfg.epochs},
                            {"minibatch", cfg.minibatch},   {"learning_rate", cfg.learning_rate},
                            {"entropy_coef", cfg.entropy_coef}, {"value_coef", cfg.value_coef},
                            {"max_grad_norm", cfg.max_grad_norm}, {"reward_scale", cfg.reward_scale},
                            {"hidden", cfg.hidden},
                            {"init_log_std", cfg.init_log_std}, {"seed", cfg.seed},
                            {"task_dt", cfg.task.dt},       {"task_horizon", cfg.task.horizon}};
  return j.dump();
}

void write_checkpoint_pair(const TrainConfig& cfg, const MlpParams& params, int iteration, long long steps) {
  if (cfg.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(cfg.checkpoint_dir);
  Checkpoint c{params, cfg.task.pos_scale, cfg.task.vel_scale, iteration, steps};
  const std::string side = train_sidecar(cfg);
  save_checkpoint(cfg.checkpoint_dir + "/latest.ffrl", c, side);
  char name[64];
  std::snprintf(name, sizeof name, "/iter_%04d.ffrl", iteration);
  save_checkpoint(cfg.checkpoint_dir + name, c, side);
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  TrainResult res;
  Rng master(cfg.seed);
  Rng init_rng = master.split(1);
  res.params = MlpParams::init(kObsDim, kActDim, cfg.hidden, init_rng, cfg.init_log_std);
  Adam opt(res.params.size(), cfg.learning_rate);
  const long long per_iter = static_cast<long long>(cfg.n_envs) * cfg.rollout_steps;
  const int iterations = static_cast<int>(cfg.total_steps / per_iter);
  const std::uint64_t eseed = eval_seed(cfg.seed);
  write_checkpoint_pair(cfg, res.params, 0, 0);
  long long steps = 0;
  for (int it = 1; it <= iterations; ++it) {
    try {
      // Every iteration starts fresh episodes from its own streams.
      const Rng iter_rng = master.split(100).split(static_cast<std::uint64_t>(it));
      VecEnvConfig vc;
      vc.n_envs = cfg.n_envs;
      vc.task = cfg.task;
      vc.randomization = cfg.randomization;
      vc.master_seed = iter_rng.split(0).key();
      vc.threads = cfg.threads;
      VecEnv env(vc);
      std::vector<Rng> action_rngs;
      for (int i = 0; i < cfg.n_envs; ++i) action_rngs.push_back(iter_rng.split(1).split(static_cast<std::uint64_t>(i)));
      RolloutBuffer buf = collect_buffer(env, res.params, cfg.rollout_steps, action_rngs);
      steps += per_iter;
      Rng shuffle = iter_rng.split(2);
      const MlpParams before = res.params;
      const UpdateMetrics um = ppo_update(res.params, opt, buf, cfg, shuffle);
      if (um.aborted > 0) {
        res.incidents.push_back("iteration " + std::to_string(it) + ": " + std::to_string(um.aborted) +
                                " minibatch updates aborted on non-finite loss");
      }
      if (!res.params.data().allFinite()) {
        res.params = before;
        res.incidents.push_back("iteration " + std::to_string(it) + ": update discarded");
      }
      CurveRow row;
      row.iteration = it;
      row.env_steps = steps;
      const int episodes = std::max<int>(1, static_cast<int>(std::count(buf.terminals.begin(), buf.terminals.end(), 1)));
      row.mean_return = buf.rewards.sum() / episodes;
      row.surrogate = um.surrogate;
      row.value_loss = um.value_loss;
      row.approx_kl = um.approx_kl;
      row.entropy = um.entropy;
      row.clip_fraction = um.clip_fraction;
      if (it % cfg.eval_interval == 0 || it == iterations) {
        row.mean_final_distance = evaluate_params(cfg, res.params, cfg.eval_episodes, eseed).mean_final_distance;
        write_checkpoint_pair(cfg, res.params, it, steps);
      } else {
        row.mean_final_distance = std::nan("");
      }
      res.curve.push_back(row);
    } catch (const Error& e) {
      const std::string msg = "training iteration " + std::to_string(it) + ": " + e.what();
      if (e.kind() == ErrorKind::Numerical) throw NumericalError(msg);
      if (e.kind() == ErrorKind::Config) throw ConfigError(msg);
      throw InvalidInputError(msg);
    }
  }
  return res;
}

std::string curve_csv(const std::vector<CurveRow>& curve) {
  std::string s = "iteration,env_steps,mean_return,mean_final_distance,surrogate,value_loss,approx_kl,entropy,clip_fraction\n";
  char buf[512];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof buf, "%d,%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iteration, r.env_steps,
                  r.mean_return, r.mean_final_distance, r.surrogate, r.value_loss, r.approx_kl, r.entropy,
                  r.clip_fraction);
    s += buf;
  }
  return s;
}

namespace {

constexpr char kMagic[4] = {'F', 'F', 'R', 'L'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a(const std::string& bytes, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put_le(std::string& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    std::memcpy(&bits, &value, sizeof value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > b_.size()) throw ConfigError("checkpoint: truncated file");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      double d;
      std::memcpy(&d, &bits, sizeof d);
      return d;
    } else {
      return static_cast<T>(bits);
    }
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& b_;
  std::size_t pos_ = 4;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  std::vector<std::uint32_t> shapes = {static_cast<std::uint32_t>(c.params.obs_dim()),
                                       static_cast<std::uint32_t>(c.params.act_dim())};
  for (int h : c.params.hidden()) shapes.push_back(static_cast<std::uint32_t>(h));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shapes.size()));
  for (auto s : shapes) put_le<std::uint32_t>(out, s);
  const auto& d = c.params.data();
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d.size()) + 2);
  for (Eigen::Index i = 0; i < d.size(); ++i) put_le<double>(out, d[i]);
  put_le<double>(out, c.pos_scale);
  put_le<double>(out, c.vel_scale);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(c.iteration));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(c.env_steps));
  put_le<std::uint64_t>(out, fnv1a(out, out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw ConfigError("checkpoint: bad magic");
  if (bytes.size() < 12) throw ConfigError("checkpoint: truncated file");
  Reader r(bytes);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto n_shapes = r.get<std::uint32_t>();
  if (n_shapes < 2 || n_shapes > 64) throw ConfigError("checkpoint: bad shape table");
  std::vector<std::uint32_t> shapes;
  for (std::uint32_t i = 0; i < n_shapes; ++i) shapes.push_back(r.get<std::uint32_t>());
  const auto count = r.get<std::uint64_t>();
  if (bytes.size() < r.pos() + 8 || (bytes.size() - r.pos()) / 8 < count) throw ConfigError("checkpoint: truncated file");
  std::vector<int> hidden(shapes.begin() + 2, shapes.end());
  Checkpoint c;
  try {
    c.params = MlpParams(static_cast<int>(shapes[0]), static_cast<int>(shapes[1]), hidden);
  } catch (const Error& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
  if (count != static_cast<std::uint64_t>(c.params.size()) + 2) {
    throw ConfigError("checkpoint: expected " + std::to_string(c.params.size() + 2) + " values for the shape table, found " +
                      std::to_string(count));
  }
  for (Eigen::Index i = 0; i < c.params.size(); ++i) c.params.data()[i] = r.get<double>();
  c.pos_scale = r.get<double>();
  c.vel_scale = r.get<double>();
  c.iteration = static_cast<int>(r.get<std::uint64_t>());
  c.env_steps = static_cast<long long>(r.get<std::uint64_t>());
  const std::size_t body = r.pos();
  const auto sum = r.get<std::uint64_t>();
  if (r.pos() != bytes.size()) throw ConfigError("checkpoint: trailing bytes");
  if (sum != fnv1a(bytes, body)) throw ConfigError("checkpoint: checksum mismatch");
  if (!c.params.data().allFinite()) throw ConfigError("checkpoint: non-finite parameters");
  return c;
}

namespace {

void write_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("error while writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw ConfigError("cannot rename " + tmp + ": " + ec.message());
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c, const std::string& sidecar_extra_json) {
  write_atomic(path, encode_checkpoint(c));
  nlohmann::json side = {{"format", "FFRL"},
                         {"version", kCheckpointVersion},
                         {"obs_dim", c.params.obs_dim()},
                         {"act_dim", c.params.act_dim()},
                         {"hidden", c.params.hidden()},
                         {"parameters", c.params.size()},
                         {"pos_scale", c.pos_scale},
                         {"vel_scale", c.vel_scale},
                         {"iteration", c.iteration},
                         {"env_steps", c.env_steps}};
  try {
    side["config"] = nlohmann::json::parse(sidecar_extra_json);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInputError(std::string("checkpoint sidecar: ") + e.what());
  }
  write_atomic(path + ".json", side.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

PolicyController::PolicyController(const ThrusterSystem& system, Checkpoint ckpt) : ckpt_(std::move(ckpt)) {
  task_.thrusters = system;
  task_.pos_scale = ckpt_.pos_scale;
  task_.vel_scale = ckpt_.vel_scale;
  try {
    task_.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("policy controller: ") + e.what());
  }
  if (ckpt_.params.obs_dim() != kObsDim || ckpt_.params.act_dim() != kActDim) {
    throw ConfigError("policy controller: expected obs/act dims " + std::to_string(kObsDim) + "/" +
                      std::to_string(kActDim) + ", found " + std::to_string(ckpt_.params.obs_dim()) + "/" +
                      std::to_string(ckpt_.params.act_dim()));
  }
}

ControlOutput PolicyController::compute(const State& state, const ReferenceFn& reference, double t) {
  task_.setpoint = reference(t).position;
  const Obs o = task_observation(task_, state);
  const Eigen::MatrixXd a = deterministic_actions(ckpt_.params, o.transpose());
  ControlOutput out;
  out.u = action_to_thrust(task_, a.row(0).transpose());
  out.wrench_desired = mix(task_.thrusters, out.u);
  return out;
}

}  // namespace ffsim
