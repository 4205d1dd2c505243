#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "ffsim/control.hpp"
#include "ffsim/error.hpp"
#include "test_helpers.hpp"

using namespace ffsim;
using ffsim::testing::random_state;
using ffsim::testing::random_unit_quat;
using ffsim::testing::random_vec;

namespace {

constexpr double kPi = 3.14159265358979323846;

Setpoint setpoint_of(const State& s) { return Setpoint{s.position, s.attitude, s.velocity, s.angular_velocity}; }

// Two opposing thrusters through the CoM along x.
ThrusterSystem line_pair() {
  return ThrusterSystem({Vec3::Zero(), Vec3::Zero()}, {Vec3::UnitX(), -Vec3::UnitX()}, Eigen::Vector2d(1.0, 1.0));
}

}  // namespace

TEST(AttitudeError, ZeroAtReference) {
  Rng rng(1);
  const Quat q = random_unit_quat(rng);
  EXPECT_LT(attitude_error(q, q).norm(), 1e-15);
}

TEST(AttitudeError, QuarterTurnAboutZ) {
  const Vec3 e = attitude_error(quat_exp(Vec3(0, 0, kPi / 2)), Quat(1, 0, 0, 0));
  EXPECT_LT((e - Vec3(0, 0, kPi / 2)).norm(), 1e-12);
}

TEST(AttitudeError, NormIsGeodesicAngle) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const Quat a = random_unit_quat(rng), b = random_unit_quat(rng);
    const double geodesic = 2.0 * std::acos(std::min(1.0, std::abs(a.dot(b))));
    EXPECT_NEAR(attitude_error(a, b).norm(), geodesic, 1e-10);
  }
}

TEST(AttitudeError, HalfTurnTieBreak) {
  const Vec3 e = attitude_error(Quat(0, 0, -1, 0), Quat(1, 0, 0, 0));
  EXPECT_LT((e - Vec3(0, kPi, 0)).norm(), 1e-12);
}

TEST(Pd, AtSetpointGivesZero) {
  Rng rng(3);
  const State s = random_state(rng);
  const auto out = pd_control(s, setpoint_of(s), PdGains{}, ThrusterSystem::default_layout());
  EXPECT_LT(out.wrench_desired.force.norm() + out.wrench_desired.torque.norm(), 1e-15);
  EXPECT_LT(out.u.norm(), 1e-12);
}

TEST(Pd, ProportionalForce) {
  PdGains g;
  State s;
  Setpoint sp;
  sp.position = Vec3(0.3, 0, 0);
  const auto out = pd_control(s, sp, g, ThrusterSystem::default_layout());
  EXPECT_LT((out.wrench_desired.force - Vec3(g.kp_pos * 0.3, 0, 0)).norm(), 1e-15);
  EXPECT_EQ(out.wrench_desired.torque.norm(), 0.0);
}

TEST(Pd, CommandsStayInBounds) {
  Rng rng(4);
  const auto sys = ThrusterSystem::default_layout();
  for (int i = 0; i < 50; ++i) {
    const State s = random_state(rng);
    Setpoint sp;
    sp.position = random_vec(rng, 5.0);
    const auto out = pd_control(s, sp, PdGains{}, sys);
    EXPECT_TRUE((out.u.array() >= 0.0).all());
    EXPECT_TRUE((out.u.array() <= sys.u_max().array()).all());
  }
}

TEST(Pd, WrenchIsWorldFrameEquivariant) {
  Rng rng(5);
  const auto sys = ThrusterSystem::default_layout();
  for (int i = 0; i < 50; ++i) {
    State s = random_state(rng);
    Setpoint sp{random_vec(rng), random_unit_quat(rng), random_vec(rng, 0.1), random_vec(rng, 0.1)};
    const auto base = pd_control(s, sp, PdGains{}, sys);
    const Quat g = random_unit_quat(rng);
    const Mat3 rg = quat_to_rotation(g);
    s.position = rg * s.position;
    s.attitude = quat_multiply(g, s.attitude);
    sp.position = rg * sp.position;
    sp.attitude = quat_multiply(g, sp.attitude);
    const auto rot = pd_control(s, sp, PdGains{}, sys);
    EXPECT_LT((rot.wrench_desired.force - base.wrench_desired.force).norm(), 1e-10);
    EXPECT_LT((rot.wrench_desired.torque - base.wrench_desired.torque).norm(), 1e-10);
  }
}

TEST(Pd, CriticallyDampedDoubleIntegrator) {
  // m = 1, Kp = 1, Kd = 2: e(t) = (1 + t) e^-t for a unit step from rest.
  // The loop is sampled with a zero-order hold, so agreement is O(dt).
  BodyParams body;
  body.mass = 1.0;
  PdGains g{1.0, 2.0, 1.0, 1.0};
  const auto sys = ThrusterSystem::default_layout();
  State s;
  Setpoint sp;
  sp.position = Vec3(1.0, 0, 0);
  const double dt = 0.001;
  double prev = 1.0;
  for (int k = 1; k <= 10000; ++k) {
    const auto out = pd_control(s, sp, g, sys);
    s = step(s, body, out.wrench_desired, dt);
    const double e = 1.0 - s.position.x();
    const double t = k * dt;
    EXPECT_NEAR(e, (1.0 + t) * std::exp(-t), dt);
    EXPECT_GT(e, 0.0);
    EXPECT_LE(e, prev);
    prev = e;
  }
}

TEST(Mpc, AtReferenceCommandsNothing) {
  Rng rng(6);
  State s = random_state(rng);
  s.velocity.setZero();
  s.angular_velocity.setZero();
  const auto sys = ThrusterSystem::default_layout();
  MpcConfig cfg;
  const std::vector<Setpoint> ref(static_cast<std::size_t>(cfg.horizon), setpoint_of(s));
  const auto sol = mpc_control(s, ref, cfg, BodyParams{}, sys);
  EXPECT_LE((sys.mixer() * sol.output.u).norm(), 1e-6);
}

TEST(Mpc, MatchesDenseQpOnLinearInstance) {
  // 1-D double integrator, m = 1, thrusters +-x, H = 10. The RK4 map is exact
  // for piecewise-constant force, so the oracle uses the closed form.
  BodyParams body;
  body.mass = 1.0;
  body.inertia = Mat3::Identity();
  const auto sys = line_pair();
  MpcConfig cfg;
  cfg.horizon = 10;
  cfg.qp_iters = 5000;
  const int h = cfg.horizon;
  Setpoint target;
  target.position = Vec3(1.0, 0, 0);
  const std::vector<Setpoint> ref(static_cast<std::size_t>(h), target);
  const auto sol = mpc_control(State{}, ref, cfg, body, sys);

  // Oracle: cost(u) = sum_k q_pos (p_k - 1)^2 + q_vel v_k^2 + r_u |u|^2 with
  // p, v affine in u. Exact coordinate descent on the box QP.
  const int nv = 2 * h;
  const double dt = cfg.dt;
  Eigen::MatrixXd sp(h, nv), sv(h, nv);
  sp.setZero();
  sv.setZero();
  for (int k = 0; k < h; ++k) {
    for (int j = 0; j <= k; ++j) {
      const double steps_after = k - j;
      const double dp = dt * dt / 2 + steps_after * dt * dt;
      sp(k, 2 * j) = dp;
      sp(k, 2 * j + 1) = -dp;
      sv(k, 2 * j) = dt;
      sv(k, 2 * j + 1) = -dt;
    }
  }
  const Eigen::MatrixXd hq = cfg.q_pos * sp.transpose() * sp + cfg.q_vel * sv.transpose() * sv +
                             cfg.r_u * Eigen::MatrixXd::Identity(nv, nv);
  const Eigen::VectorXd c = -cfg.q_pos * sp.transpose() * Eigen::VectorXd::Ones(h);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(nv);
  for (int sweep = 0; sweep < 200000; ++sweep) {
    double change = 0.0;
    for (int i = 0; i < nv; ++i) {
      const double gi = hq.row(i).dot(u) + c[i];
      const double ui = std::clamp(u[i] - gi / hq(i, i), 0.0, 1.0);
      change = std::max(change, std::abs(ui - u[i]));
      u[i] = ui;
    }
    if (change < 1e-14) break;
  }
  const double oracle = u.dot(hq * u) + 2.0 * c.dot(u) + cfg.q_pos * h;
  EXPECT_NEAR(sol.output.diagnostics.cost, oracle, 1e-4);
}

TEST(Mpc, CostNeverIncreasesAcrossRounds) {
  Rng rng(7);
  const auto sys = ThrusterSystem::default_layout();
  MpcConfig cfg;
  for (int i = 0; i < 5; ++i) {
    State s = random_state(rng);
    Setpoint sp{random_vec(rng, 0.5), random_unit_quat(rng), Vec3::Zero(), Vec3::Zero()};
    const auto sol = mpc_control(s, {sp}, cfg, BodyParams{}, sys);
    const auto& hist = sol.output.diagnostics.cost_history;
    ASSERT_GE(hist.size(), 1u);
    for (std::size_t k = 1; k < hist.size(); ++k) EXPECT_LE(hist[k], hist[k - 1]);
    EXPECT_TRUE((sol.output.u.array() >= 0.0).all());
    EXPECT_TRUE((sol.output.u.array() <= sys.u_max().array()).all());
  }
}

TEST(Mpc, NonFiniteProblemRaisesSolverError) {
  Setpoint sp;
  sp.position = Vec3(std::nan(""), 0, 0);
  EXPECT_THROW(mpc_control(State{}, {sp}, MpcConfig{}, BodyParams{}, ThrusterSystem::default_layout()), SolverError);
}

TEST(Mpc, ControllerFallsBackToPd) {
  MpcController ctl(ThrusterSystem::default_layout(), BodyParams{}, MpcConfig{}, PdGains{});
  Setpoint bad;
  bad.position = Vec3(std::nan(""), 0, 0);
  int calls = 0;
  const auto out = ctl.compute(State{}, [&](double) { return ++calls == 1 ? bad : Setpoint{}; }, 0.0);
  EXPECT_TRUE(out.diagnostics.fallback);
  EXPECT_EQ(out.u.norm(), 0.0);
}

TEST(Mpc, ClosedLoopStepSettles) {
  const auto sys = ThrusterSystem::default_layout();
  BodyParams body;
  MpcController ctl(sys, body, MpcConfig{}, PdGains{});
  Setpoint target;
  target.position = Vec3(1.0, 0, 0);
  const ReferenceFn ref = [&](double) { return target; };
  State s;
  const double dt = 0.02;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(sys.count());
  for (int k = 0; k < 1500; ++k) {
    if (k % 5 == 0) u = ctl.compute(s, ref, k * dt).u;
    const Eigen::Matrix<double, 6, 1> w = sys.mixer() * u;
    s = step(s, body, Wrench{w.head<3>(), w.tail<3>()}, dt);
  }
  EXPECT_LE((s.position - target.position).norm(), 0.05);
}

// Holds the origin against a constant external push; returns the final offset.
double hold_against_push(MpcController& ctl, const Vec3& push) {
  const auto sys = ThrusterSystem::default_layout();
  BodyParams body;
  const ReferenceFn ref = [](double) { return Setpoint{}; };
  State s;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(sys.count());
  for (int k = 0; k < 1500; ++k) {
    if (k % 5 == 0) u = ctl.compute(s, ref, k * 0.02).u;
    const Eigen::Matrix<double, 6, 1> w = sys.mixer() * u;
    s = step(s, body, Wrench{w.head<3>() + push, w.tail<3>()}, 0.02);
  }
  return s.position.norm();
}

TEST(Mpc, DisturbanceObserverRemovesOffset) {
  const Vec3 push(0.1, -0.05, 0.0);
  MpcController plain(ThrusterSystem::default_layout(), BodyParams{}, MpcConfig{}, PdGains{});
  MpcController observed(ThrusterSystem::default_layout(), BodyParams{}, MpcConfig{}, PdGains{}, std::nullopt, 0.5);
  const double e_plain = hold_against_push(plain, push);
  const double e_obs = hold_against_push(observed, push);
  EXPECT_GT(e_plain, 0.005);
  EXPECT_LT(e_obs, 0.1 * e_plain);
  EXPECT_NEAR(observed.disturbance_estimate().force.x(), 0.1, 1e-3);
  EXPECT_NEAR(observed.disturbance_estimate().force.y(), -0.05, 1e-3);
  EXPECT_EQ(plain.disturbance_estimate().force.norm(), 0.0);
}

TEST(Mpc, ObserverGainOutOfRange) {
  EXPECT_THROW(MpcController(ThrusterSystem::default_layout(), BodyParams{}, MpcConfig{}, PdGains{}, std::nullopt, 1.5),
               ConfigError);
}

TEST(Mpc, SolveTimeIsReasonable) {
  const auto sys = ThrusterSystem::default_layout();
  Setpoint sp;
  sp.position = Vec3(0.5, 0.2, -0.1);
  const auto t0 = std::chrono::steady_clock::now();
  const auto sol = mpc_control(State{}, {sp}, MpcConfig{}, BodyParams{}, sys);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  RecordProperty("solve_ms", std::to_string(secs * 1e3));
  std::printf("cold MPC solve: %.2f ms, %d rounds\n", secs * 1e3, sol.output.diagnostics.iterations);
  EXPECT_LT(secs, 1.0);
}

TEST(GpResidual, ImprovesBiasedMassPrediction) {
  // Plant is 20 % heavier than the model. Samples are one-step velocity
  // mismatches under random commands.
  const auto sys = ThrusterSystem::default_layout();
  BodyParams model, plant;
  plant.mass = 12.0;
  MpcConfig cfg;
  Rng rng(8);
  const int n_samples = 80;
  Eigen::MatrixXd inputs(n_samples, 6), targets(n_samples, 3);
  for (int i = 0; i < n_samples; ++i) {
    State s;
    s.velocity = random_vec(rng, 0.05);
    Eigen::VectorXd u(sys.count());
    for (int j = 0; j < sys.count(); ++j) u[j] = rng.uniform(0.0, sys.u_max()[j]);
    const Eigen::Matrix<double, 6, 1> g = sys.mixer() * u;
    const Wrench w{g.head<3>(), Vec3::Zero()};
    const State a = integrate_rk4(s, plant, w, cfg.dt);
    const State b = integrate_rk4(s, model, w, cfg.dt);
    inputs.row(i) = residual_features(s.velocity, w.force).transpose();
    targets.row(i) = ((a.velocity - b.velocity) / cfg.dt).transpose();
  }
  const AccelResidual res = fit_accel_residual(inputs, targets, default_residual_learning().hyper);

  double err_plain = 0.0, err_gp = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd useq(cfg.horizon * sys.count());
    for (Eigen::Index j = 0; j < useq.size(); ++j) useq[j] = rng.uniform(0.0, 0.4);
    const auto truth = predict_trajectory(State{}, useq, cfg, plant, sys);
    const auto plain = predict_trajectory(State{}, useq, cfg, model, sys);
    const auto with_gp = predict_trajectory(State{}, useq, cfg, model, sys, &res);
    err_plain += (truth.back().position - plain.back().position).norm();
    err_gp += (truth.back().position - with_gp.back().position).norm();
  }
  EXPECT_LT(err_gp, err_plain);
  EXPECT_LT(err_gp, 0.5 * err_plain);
}

TEST(GpResidual, ControllerLearnsOnline) {
  const auto sys = ThrusterSystem::default_layout();
  BodyParams model, plant;
  plant.mass = 12.0;
  MpcController ctl(sys, model, MpcConfig{}, PdGains{}, default_residual_learning());
  EXPECT_EQ(ctl.name(), "gp_mpc");
  Setpoint target;
  target.position = Vec3(0.5, 0, 0);
  State s;
  Eigen::VectorXd u;
  for (int k = 0; k < 100; ++k) {
    if (k % 5 == 0) u = ctl.compute(s, [&](double) { return target; }, k * 0.02).u;
    const Eigen::Matrix<double, 6, 1> w = sys.mixer() * u;
    s = step(s, plant, Wrench{w.head<3>(), w.tail<3>()}, 0.02);
  }
  EXPECT_EQ(ctl.residual_samples(), 19);
  ASSERT_NE(ctl.residual(), nullptr);
}

TEST(Effort, Definitions) {
  EXPECT_EQ(control_effort({}, 0.02), 0.0);
  EXPECT_EQ(control_effort({Eigen::VectorXd::Zero(12)}, 0.02), 0.0);
  std::vector<Eigen::VectorXd> constant(7, Eigen::Vector2d(1.5, 0.5));
  EXPECT_NEAR(control_effort(constant, 0.02), 2.0, 1e-15);
  // Hand sum: |u|_1 = 1, 1, 0.3 -> mean 2.3 / 3.
  std::vector<Eigen::VectorXd> fixture = {Eigen::Vector2d(1, 0), Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(0.2, 0.1)};
  EXPECT_NEAR(control_effort(fixture, 0.1), 2.3 / 3.0, 1e-15);
}
