#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ffsim/error.hpp"
#include "ffsim/rl.hpp"
#include "ffsim/sim.hpp"

using namespace ffsim;

namespace {

MlpParams random_params(int obs, int act, const std::vector<int>& hidden, std::uint64_t seed, double scale = 0.5) {
  MlpParams p(obs, act, hidden);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = scale * rng.normal();
  return p;
}

// A buffer of one env with `n` steps sampled around the current policy.
RolloutBuffer fixture_buffer(const MlpParams& p, int n, std::uint64_t seed) {
  Rng rng(seed);
  RolloutBuffer b;
  b.n_envs = 1;
  b.steps = n;
  b.obs.resize(n, p.obs_dim());
  for (Eigen::Index i = 0; i < b.obs.size(); ++i) b.obs.data()[i] = rng.normal();
  const PolicyOutput out = policy_forward(p, b.obs);
  b.actions.resize(n, p.act_dim());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p.act_dim(); ++j) b.actions(i, j) = out.mean(i, j) + std::exp(out.log_std[j]) * rng.normal();
  }
  b.log_probs = gaussian_log_prob(out.mean, out.log_std, b.actions);
  b.rewards.resize(n);
  for (int i = 0; i < n; ++i) b.rewards[i] = rng.normal();
  b.terminals.assign(static_cast<std::size_t>(n), 0);
  b.terminals.back() = 1;
  b.truncated.assign(static_cast<std::size_t>(n), 0);
  b.next_obs.resize(n, p.obs_dim());
  b.next_obs.topRows(n - 1) = b.obs.bottomRows(n - 1);
  b.next_obs.row(n - 1).setZero();
  b.values = out.value;
  b.advantages.resize(n);
  b.returns.resize(n);
  for (int i = 0; i < n; ++i) {
    b.advantages[i] = rng.normal();
    b.returns[i] = rng.normal();
  }
  return b;
}

std::vector<int> all_rows(int n) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

double max_rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

template <typename LossFn>
Eigen::VectorXd fd_gradient(MlpParams p, LossFn&& loss, double h = 1e-6) {
  Eigen::VectorXd g(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double x = p.data()[i];
    p.data()[i] = x + h;
    const double up = loss(p);
    p.data()[i] = x - h;
    const double down = loss(p);
    p.data()[i] = x;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ffsim_rl_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Forward, ZeroParamsGiveZeroOutputs) {
  MlpParams p(kObsDim, kActDim, {64, 64});
  Eigen::MatrixXd obs = Eigen::MatrixXd::Random(5, kObsDim);
  const PolicyOutput out = policy_forward(p, obs);
  EXPECT_EQ(out.mean.norm(), 0.0);
  EXPECT_EQ(out.value.norm(), 0.0);
  EXPECT_EQ(out.log_std.norm(), 0.0);
}

TEST(Forward, HandComputedTwoLayer) {
  // obs 2 -> hidden 2 (tanh) -> 1, for both heads.
  MlpParams p(2, 1, {2});
  auto& d = p.data();
  const auto set = [&](bool critic, int l, std::initializer_list<double> w, std::initializer_list<double> b) {
    std::size_t k = p.weight_offset(critic, l);
    for (double x : w) d[static_cast<Eigen::Index>(k++)] = x;
    k = p.bias_offset(critic, l);
    for (double x : b) d[static_cast<Eigen::Index>(k++)] = x;
  };
  // column-major W: (W00, W10, W01, W11)
  set(false, 0, {0.5, -0.25, 1.0, 0.75}, {0.1, -0.2});
  set(false, 1, {2.0, -1.0}, {0.3});
  set(true, 0, {-0.5, 0.4, 0.2, 0.1}, {0.0, 0.05});
  set(true, 1, {1.5, 0.5}, {-0.1});
  d[static_cast<Eigen::Index>(p.log_std_offset())] = 9.0;  // clamped to 2
  Eigen::MatrixXd obs(1, 2);
  obs << 0.3, -0.7;
  const double x0 = 0.3, x1 = -0.7;
  const double h0 = std::tanh(0.5 * x0 + 1.0 * x1 + 0.1);
  const double h1 = std::tanh(-0.25 * x0 + 0.75 * x1 - 0.2);
  const double mean = 2.0 * h0 - 1.0 * h1 + 0.3;
  const double c0 = std::tanh(-0.5 * x0 + 0.2 * x1 + 0.0);
  const double c1 = std::tanh(0.4 * x0 + 0.1 * x1 + 0.05);
  const double value = 1.5 * c0 + 0.5 * c1 - 0.1;
  const PolicyOutput out = policy_forward(p, obs);
  EXPECT_NEAR(out.mean(0, 0), mean, 1e-10);
  EXPECT_NEAR(out.value[0], value, 1e-10);
  EXPECT_EQ(out.log_std[0], kLogStdMax);
}

TEST(Forward, ObservationWidthMismatch) {
  MlpParams p(kObsDim, kActDim, {8});
  EXPECT_THROW(policy_forward(p, Eigen::MatrixXd::Zero(1, 5)), InvalidInputError);
}

TEST(Forward, NonFiniteParametersRaise) {
  MlpParams p(kObsDim, kActDim, {8});
  p.data()[3] = std::nan("");
  EXPECT_THROW(policy_forward(p, Eigen::MatrixXd::Ones(1, kObsDim)), NumericalError);
}

TEST(Gaussian, LogProbMatchesDensity) {
  Eigen::MatrixXd mean(2, 3), act(2, 3);
  mean << 0.1, -0.4, 0.0, 1.0, 2.0, -3.0;
  act << 0.3, -0.1, 0.5, 0.0, 2.5, -2.0;
  Eigen::VectorXd ls(3);
  ls << -0.5, 0.0, 0.7;
  const Eigen::VectorXd lp = gaussian_log_prob(mean, ls, act);
  for (int i = 0; i < 2; ++i) {
    double density = 1.0;
    for (int j = 0; j < 3; ++j) {
      const double s = std::exp(ls[j]);
      const double z = (act(i, j) - mean(i, j)) / s;
      density *= std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * M_PI));
    }
    EXPECT_NEAR(lp[i], std::log(density), 1e-10);
  }
  EXPECT_NEAR(gaussian_entropy(ls), 0.2 + 1.5 * std::log(2.0 * M_PI * M_E), 1e-12);
}

TEST(Gae, LambdaZeroIsTdError) {
  Eigen::VectorXd r(4), v(5);
  r << 1.0, -0.5, 2.0, 0.25;
  v << 0.3, 0.1, -0.2, 0.4, 0.9;
  const std::vector<std::uint8_t> done = {0, 1, 0, 0};
  const double g = 0.9;
  const Gae out = compute_gae(r, v, done, g, 0.0);
  for (int t = 0; t < 4; ++t) {
    const double live = done[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    EXPECT_EQ(out.advantages[t], r[t] + g * v[t + 1] * live - v[t]);
    EXPECT_EQ(out.returns[t], out.advantages[t] + v[t]);
  }
}

TEST(Gae, MonteCarloLimit) {
  Eigen::VectorXd r(5), v(6);
  r << 1.0, 2.0, -1.0, 0.5, 3.0;
  v << 0.2, -0.3, 0.7, 0.1, 0.0, 100.0;
  const std::vector<std::uint8_t> done = {0, 0, 0, 0, 1};
  const Gae out = compute_gae(r, v, done, 1.0, 1.0);
  for (int t = 0; t < 5; ++t) EXPECT_NEAR(out.advantages[t], r.tail(5 - t).sum() - v[t], 1e-14);
}

TEST(Gae, MatchesQuadraticOracle) {
  Rng rng(12);
  const int T = 20;
  Eigen::VectorXd r(T), v(T + 1);
  std::vector<std::uint8_t> done(T);
  for (int t = 0; t < T; ++t) {
    r[t] = rng.normal();
    done[static_cast<std::size_t>(t)] = rng.uniform() < 0.2 ? 1 : 0;
  }
  for (int t = 0; t <= T; ++t) v[t] = rng.normal();
  const double g = 0.97, l = 0.9;
  const Gae out = compute_gae(r, v, done, g, l);
  for (int t = 0; t < T; ++t) {
    double a = 0.0;
    for (int k = t; k < T; ++k) {
      double w = std::pow(g * l, k - t);
      for (int j = t; j < k; ++j) w *= done[static_cast<std::size_t>(j)] ? 0.0 : 1.0;
      const double live = done[static_cast<std::size_t>(k)] ? 0.0 : 1.0;
      a += w * (r[k] + g * v[k + 1] * live - v[k]);
    }
    EXPECT_NEAR(out.advantages[t], a, 1e-12) << t;
  }
}

TEST(Gae, BootstrappedFormReducesToPlain) {
  Rng rng(13);
  const int T = 12;
  Eigen::VectorXd r(T), v(T + 1);
  std::vector<std::uint8_t> done(T), none(T, 0);
  for (int t = 0; t < T; ++t) {
    r[t] = rng.normal();
    done[static_cast<std::size_t>(t)] = rng.uniform() < 0.25 ? 1 : 0;
  }
  for (int t = 0; t <= T; ++t) v[t] = rng.normal();
  const Gae a = compute_gae(r, v, done, 0.95, 0.8);
  const Gae b = compute_gae(r, v.head(T), v.tail(T), done, none, 0.95, 0.8);
  EXPECT_LT((a.advantages - b.advantages).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((a.returns - b.returns).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Gae, TruncationBootstrapsButCutsRecursion) {
  Eigen::VectorXd r(3), v(3), next(3);
  r << 1.0, 2.0, 3.0;
  v << 0.5, -0.5, 0.25;
  next << 4.0, 7.0, 9.0;  // step 1 ends by time limit; its successor value is 7
  const std::vector<std::uint8_t> done = {0, 1, 0}, trunc = {0, 1, 0};
  const double g = 0.9, l = 0.5;
  const Gae out = compute_gae(r, v, next, done, trunc, g, l);
  const double a2 = 3.0 + g * 9.0 - 0.25;
  const double a1 = 2.0 + g * 7.0 + 0.5;
  const double a0 = 1.0 + g * 4.0 - 0.5 + g * l * a1;
  EXPECT_NEAR(out.advantages[2], a2, 1e-14);
  EXPECT_NEAR(out.advantages[1], a1, 1e-14);
  EXPECT_NEAR(out.advantages[0], a0, 1e-14);
  // a true terminal drops the successor value
  const Gae term = compute_gae(r, v, next, done, {0, 0, 0}, g, l);
  EXPECT_NEAR(term.advantages[1], 2.0 + 0.5, 1e-14);
}

TEST(Gae, LengthMismatch) {
  EXPECT_THROW(compute_gae(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3), {0, 0, 0}, 0.9, 0.9),
               InvalidInputError);
}

TEST(Gradient, FiveParameterMicroNet) {
  // obs 1, act 1, no hidden layer: actor (w, b), log_std, critic (w, b)
  const MlpParams p = random_params(1, 1, {}, 3);
  ASSERT_EQ(p.size(), 5);
  const RolloutBuffer buf = fixture_buffer(p, 7, 4);
  const auto idx = all_rows(7);
  const auto loss = [&](const MlpParams& q) { return ppo_loss(q, buf, idx, 1e6, 0.5, 0.01).loss; };
  const Eigen::VectorXd g = ppo_loss(p, buf, idx, 1e6, 0.5, 0.01).grad;
  EXPECT_LT(max_rel_error(g, fd_gradient(p, loss)), 1e-5);
}

TEST(Gradient, TwoHiddenLayersPpoAndVpg) {
  MlpParams p = random_params(4, 3, {5, 4}, 5);
  RolloutBuffer buf = fixture_buffer(p, 11, 6);
  // move away from the sampling policy so ratios differ from 1
  p.data() += 0.05 * random_params(4, 3, {5, 4}, 7, 1.0).data();
  const auto idx = all_rows(11);
  const auto ppo = [&](const MlpParams& q) { return ppo_loss(q, buf, idx, 0.2, 0.5, 0.01).loss; };
  const auto vpg = [&](const MlpParams& q) { return vpg_loss(q, buf, idx, 0.5, 0.01).loss; };
  EXPECT_LT(max_rel_error(ppo_loss(p, buf, idx, 0.2, 0.5, 0.01).grad, fd_gradient(p, ppo)), 1e-5);
  EXPECT_LT(max_rel_error(vpg_loss(p, buf, idx, 0.5, 0.01).grad, fd_gradient(p, vpg)), 1e-5);
}

TEST(Ppo, InfiniteClipMatchesVpgDirection) {
  const MlpParams p = random_params(kObsDim, kActDim, {16, 16}, 8, 0.3);
  RolloutBuffer buf = fixture_buffer(p, 64, 9);
  refresh_advantages(buf, p, 0.99, 1.0);
  const auto idx = all_rows(64);
  const Eigen::VectorXd a = ppo_loss(p, buf, idx, 1e300, 0.0, 0.0).grad;
  const Eigen::VectorXd b = vpg_loss(p, buf, idx, 0.0, 0.0).grad;
  const double cosine = a.dot(b) / (a.norm() * b.norm());
  EXPECT_GT(cosine, 0.999);

  // One full-batch epoch of each update moves the parameters the same way.
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.minibatch = 64;
  cfg.lambda = 1.0;
  cfg.clip = 1e300;
  cfg.max_grad_norm = 1e300;
  MlpParams pp = p, pv = p;
  Adam op(p.size()), ov(p.size());
  Rng r1(1), r2(1);
  RolloutBuffer b1 = buf, b2 = buf;
  ppo_update(pp, op, b1, cfg, r1);
  cfg.algorithm = "vpg";
  ppo_update(pv, ov, b2, cfg, r2);
  const Eigen::VectorXd dp = pp.data() - p.data();
  const Eigen::VectorXd dv = pv.data() - p.data();
  EXPECT_GT(dp.dot(dv) / (dp.norm() * dv.norm()), 0.999);
}

TEST(Ppo, ZeroAdvantageLeavesPolicyGradientZero) {
  const MlpParams p = random_params(3, 2, {4}, 10);
  RolloutBuffer buf = fixture_buffer(p, 9, 11);
  buf.advantages.setZero();
  const auto idx = all_rows(9);
  const LossTerms L = ppo_loss(p, buf, idx, 0.2, 0.5, 0.0);
  const Eigen::Index critic_start = static_cast<Eigen::Index>(p.weight_offset(true, 0));
  EXPECT_EQ(L.grad.head(critic_start).norm(), 0.0);
  EXPECT_GT(L.grad.tail(p.size() - critic_start).norm(), 0.0);
}

TEST(Ppo, ClippedSamplesHaveZeroGradient) {
  const MlpParams p = random_params(3, 2, {4}, 12);
  RolloutBuffer buf = fixture_buffer(p, 6, 13);
  // ratio = e^1 > 1.2 with positive advantage; ratio = e^-1 < 0.8 with negative advantage
  for (int i = 0; i < 6; ++i) {
    const bool up = i % 2 == 0;
    buf.log_probs[i] -= up ? 1.0 : -1.0;
    buf.advantages[i] = up ? 1.0 + i : -1.0 - i;
  }
  const LossTerms L = ppo_loss(p, buf, all_rows(6), 0.2, 0.0, 0.0);
  EXPECT_EQ(L.grad.norm(), 0.0);
  EXPECT_EQ(L.clip_fraction, 1.0);
  // adverse-sign side stays unclipped and has a gradient
  buf.advantages = -buf.advantages;
  EXPECT_GT(ppo_loss(p, buf, all_rows(6), 0.2, 0.0, 0.0).grad.norm(), 0.0);
}

TEST(Buffer, AdvantagesNormalized) {
  const MlpParams p = random_params(kObsDim, kActDim, {8}, 14);
  RolloutBuffer buf = fixture_buffer(p, 50, 15);
  buf.rewards *= 30.0;
  refresh_advantages(buf, p, 0.99, 0.95);
  const double mean = buf.advantages.mean();
  const double sd = std::sqrt((buf.advantages.array() - mean).square().mean());
  EXPECT_NEAR(mean, 0.0, 1e-6);
  EXPECT_NEAR(sd, 1.0, 1e-6);
  EXPECT_LT((buf.values - policy_forward(p, buf.obs).value).norm(), 1e-15);
}

TEST(Ppo, NonFiniteLossKeepsParameters) {
  MlpParams p = random_params(kObsDim, kActDim, {8}, 16);
  RolloutBuffer buf = fixture_buffer(p, 20, 17);
  buf.rewards[3] = std::nan("");
  TrainConfig cfg;
  cfg.minibatch = 20;
  cfg.epochs = 2;
  const MlpParams before = p;
  Adam opt(p.size());
  Rng rng(0);
  const UpdateMetrics m = ppo_update(p, opt, buf, cfg, rng);
  EXPECT_EQ(m.aborted, 2);
  EXPECT_TRUE(p == before);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  Checkpoint c{random_params(kObsDim, kActDim, {7, 5}, 18), 1.5, 0.25, 3, 12345};
  const std::string dir = temp_dir("roundtrip");
  save_checkpoint(dir + "/a.ffrl", c);
  const Checkpoint d = load_checkpoint(dir + "/a.ffrl");
  EXPECT_TRUE(d.params == c.params);
  EXPECT_EQ(d.pos_scale, 1.5);
  EXPECT_EQ(d.vel_scale, 0.25);
  EXPECT_EQ(d.iteration, 3);
  EXPECT_EQ(d.env_steps, 12345);
  EXPECT_TRUE(std::filesystem::exists(dir + "/a.ffrl.json"));
  EXPECT_FALSE(std::filesystem::exists(dir + "/a.ffrl.tmp"));
  EXPECT_EQ(encode_checkpoint(d), slurp(dir + "/a.ffrl"));
}

TEST(Checkpoint, TruncatedOrCorruptFilesRejected) {
  Checkpoint c{random_params(kObsDim, kActDim, {4}, 19), 1.0, 0.5, 0, 0};
  const std::string bytes = encode_checkpoint(c);
  for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{11}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, n)), ConfigError) << n;
  }
  std::string flipped = bytes;
  flipped[40] ^= 0x10;
  try {
    decode_checkpoint(flipped);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), ConfigError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.ffrl"), ConfigError);
}

TEST(Checkpoint, ShapeMismatchNamesShapes) {
  Checkpoint c{MlpParams(4, 6, {8}), 1.0, 0.5, 0, 0};
  try {
    PolicyController ctl(ThrusterSystem::default_layout(), c);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("6/6"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4/6"), std::string::npos) << msg;
  }
}

TEST(Deploy, ControllerMatchesEnvironmentRollout) {
  Rng init(20);
  TrainConfig tc;
  const MlpParams p = MlpParams::init(kObsDim, kActDim, {16, 16}, init, -0.5);
  MlpParams q = p;
  // make the policy do something visible
  q.data() = p.data() + 0.3 * random_params(kObsDim, kActDim, {16, 16}, 21, 1.0).data();
  const std::string dir = temp_dir("deploy");
  save_checkpoint(dir + "/p.ffrl", Checkpoint{q, tc.task.pos_scale, tc.task.vel_scale, 0, 0});

  SetpointEnv env(tc.task, tc.randomization, Rng(5));
  const State start = env.state();
  ScenarioConfig sc;
  sc.dt = tc.task.dt;
  sc.duration = 100 * tc.task.dt;
  sc.initial_state = start;
  sc.controller.type = "policy";
  sc.controller.period_steps = 1;
  sc.controller.policy_path = dir + "/p.ffrl";
  sc.plan.type = "setpoint";
  sc.plan.setpoint = Setpoint{};
  const EpisodeResult r = run_episode(sc);
  ASSERT_EQ(r.log.size(), 100u);
  for (int k = 0; k < 100; ++k) {
    const Eigen::MatrixXd a = deterministic_actions(q, env.observe().transpose());
    env.step(a.row(0).transpose());
    const StepLog& row = r.log[static_cast<std::size_t>(k)];
    ASSERT_LT((row.state.position - env.state().position).norm(), 1e-12) << k;
    ASSERT_LT((row.state.velocity - env.state().velocity).norm(), 1e-12) << k;
  }
  EXPECT_GT((env.state().position - start.position).norm(), 1e-3);
}

TEST(Train, ZeroStepsReturnsInitialParams) {
  TrainConfig cfg;
  cfg.total_steps = 0;
  const TrainResult r = train(cfg);
  Rng init = Rng(cfg.seed).split(1);
  EXPECT_TRUE(r.params == MlpParams::init(kObsDim, kActDim, cfg.hidden, init, cfg.init_log_std));
  EXPECT_TRUE(r.curve.empty());
}

TEST(Train, SeededRunsAreIdentical) {
  TrainConfig cfg;
  cfg.n_envs = 4;
  cfg.rollout_steps = 32;
  cfg.total_steps = 256;
  cfg.minibatch = 32;
  cfg.eval_episodes = 4;
  cfg.hidden = {8};
  const std::string dir_a = temp_dir("train_a");
  cfg.checkpoint_dir = dir_a;
  const TrainResult a = train(cfg);
  cfg.checkpoint_dir = temp_dir("train_b");
  cfg.threads = 2;
  const TrainResult b = train(cfg);
  ASSERT_EQ(a.curve.size(), 2u);
  EXPECT_EQ(curve_csv(a.curve), curve_csv(b.curve));
  EXPECT_TRUE(a.params == b.params);
  EXPECT_EQ(slurp(dir_a + "/latest.ffrl"), slurp(cfg.checkpoint_dir + "/latest.ffrl"));
  EXPECT_TRUE(std::filesystem::exists(cfg.checkpoint_dir + "/iter_0002.ffrl"));
  const Checkpoint last = load_checkpoint(cfg.checkpoint_dir + "/latest.ffrl");
  EXPECT_TRUE(last.params == b.params);
  EXPECT_EQ(last.iteration, 2);
  EXPECT_EQ(last.env_steps, 256);
  EXPECT_FALSE(a.params == MlpParams());
}

TEST(Train, InvalidConfig) {
  TrainConfig cfg;
  cfg.gamma = 0.0;
  EXPECT_THROW(train(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.algorithm = "dqn";
  EXPECT_THROW(train(cfg), ConfigError);
}
