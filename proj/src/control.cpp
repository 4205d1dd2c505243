#include "ffsim/control.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "ffsim/error.hpp"

namespace ffsim {

Vec3 attitude_error(const Quat& q, const Quat& q_ref) {
  Vec3 e = quat_log(quat_multiply(quat_conjugate(q_ref), q));
  constexpr double kPi = 3.14159265358979323846;
  if (std::abs(e.norm() - kPi) < 1e-12) {
    for (int i = 0; i < 3; ++i) {
      if (e[i] != 0.0) {
        if (e[i] < 0.0) e = -e;
        break;
      }
    }
  }
  return e;
}

void PdGains::validate() const {
  if (!(kp_pos > 0.0) || !(kd_vel > 0.0) || !(kp_att > 0.0) || !(kd_rate > 0.0)) {
    throw ConfigError("pd gains must all be > 0");
  }
}

ControlOutput pd_control(const State& state, const Setpoint& sp, const PdGains& gains, const ThrusterSystem& system) {
  const Mat3 r_ib = quat_to_rotation(state.attitude);
  ControlOutput out;
  out.wrench_desired.force =
      r_ib.transpose() * (gains.kp_pos * (sp.position - state.position)) + gains.kd_vel * (sp.velocity - state.velocity);
  out.wrench_desired.torque = -gains.kp_att * attitude_error(state.attitude, sp.attitude) -
                              gains.kd_rate * (state.angular_velocity - sp.angular_velocity);
  out.u = allocate(system, out.wrench_desired).cwiseMax(0.0).cwiseMin(system.u_max());
  return out;
}

void MpcConfig::validate() const {
  if (horizon < 1) throw ConfigError("mpc.horizon must be >= 1");
  if (!(dt > 0.0) || dt > kMaxDt) throw ConfigError("mpc.dt must lie in (0, 0.1]");
  if (!(q_pos >= 0.0) || !(q_att >= 0.0) || !(q_vel >= 0.0) || !(q_rate >= 0.0)) {
    throw ConfigError("mpc weights must be >= 0");
  }
  if (!(r_u > 0.0)) throw ConfigError("mpc.r_u must be > 0");
  if (max_iters < 1 || qp_iters < 1) throw ConfigError("mpc.max_iters and mpc.qp_iters must be >= 1");
  if (!(tol >= 0.0)) throw ConfigError("mpc.tol must be >= 0");
}

Eigen::Matrix<double, 6, 1> residual_features(const Vec3& velocity, const Vec3& force) {
  Eigen::Matrix<double, 6, 1> x;
  x << velocity, force;
  return x;
}

Vec3 AccelResidual::predict(const Vec3& velocity, const Vec3& force) const {
  const Eigen::VectorXd x = residual_features(velocity, force);
  Vec3 out;
  for (int i = 0; i < 3; ++i) out[i] = gp_predict(axes[static_cast<std::size_t>(i)], x).mean;
  return out;
}

AccelResidual fit_accel_residual(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                                 const GpHyperparameters& hyper) {
  if (inputs.cols() != 6 || targets.cols() != 3 || inputs.rows() != targets.rows()) {
    throw InvalidInputError("fit_accel_residual: expected N x 6 inputs and N x 3 targets");
  }
  AccelResidual r;
  for (int i = 0; i < 3; ++i) r.axes[static_cast<std::size_t>(i)] = gp_fit(inputs, targets.col(i), hyper);
  return r;
}

namespace {

constexpr int kTangent = 12;
using TangentVec = Eigen::Matrix<double, kTangent, 1>;

State retract(const State& x, const TangentVec& d) {
  State y = x;
  y.position += d.segment<3>(0);
  y.attitude = quat_normalized(quat_multiply(x.attitude, quat_exp(d.segment<3>(3))));
  y.velocity += d.segment<3>(6);
  y.angular_velocity += d.segment<3>(9);
  return y;
}

TangentVec local(const State& x, const State& y) {
  TangentVec d;
  d.segment<3>(0) = y.position - x.position;
  d.segment<3>(3) = quat_log(quat_multiply(quat_conjugate(x.attitude), y.attitude));
  d.segment<3>(6) = y.velocity - x.velocity;
  d.segment<3>(9) = y.angular_velocity - x.angular_velocity;
  return d;
}

TangentVec tracking_error(const State& x, const Setpoint& sp) {
  TangentVec e;
  e.segment<3>(0) = x.position - sp.position;
  e.segment<3>(3) = attitude_error(x.attitude, sp.attitude);
  e.segment<3>(6) = x.velocity - sp.velocity;
  e.segment<3>(9) = x.angular_velocity - sp.angular_velocity;
  return e;
}

TangentVec weights(const MpcConfig& cfg) {
  TangentVec w;
  w << Vec3::Constant(cfg.q_pos), Vec3::Constant(cfg.q_att), Vec3::Constant(cfg.q_vel), Vec3::Constant(cfg.q_rate);
  return w;
}

State model_step(const State& x, const Wrench& w, const MpcConfig& cfg, const BodyParams& body,
                 const AccelResidual* residual, const Wrench& bias) {
  Wrench total = w + bias;
  if (residual != nullptr) total.force += body.mass * residual->predict(x.velocity, w.force);
  return integrate_rk4(x, body, total, cfg.dt);
}

Wrench wrench_of(const ThrusterSystem& system, const Eigen::VectorXd& u) {
  const Eigen::Matrix<double, 6, 1> g = system.mixer() * u;
  return Wrench{g.head<3>(), g.tail<3>()};
}

}  // namespace

std::vector<State> predict_trajectory(const State& x0, const Eigen::VectorXd& u_seq, const MpcConfig& cfg,
                                      const BodyParams& body, const ThrusterSystem& system,
                                      const AccelResidual* residual, const Wrench& bias) {
  const int n = system.count();
  if (u_seq.size() != static_cast<Eigen::Index>(cfg.horizon) * n) {
    throw InvalidInputError("predict_trajectory: command sequence length must be horizon * n_u");
  }
  std::vector<State> traj;
  traj.reserve(static_cast<std::size_t>(cfg.horizon) + 1);
  traj.push_back(x0);
  for (int k = 0; k < cfg.horizon; ++k) {
    const Eigen::VectorXd uk = u_seq.segment(static_cast<Eigen::Index>(k) * n, n);
    traj.push_back(model_step(traj.back(), wrench_of(system, uk), cfg, body, residual, bias));
  }
  return traj;
}

double mpc_cost(const std::vector<State>& traj, const Eigen::VectorXd& u_seq, const std::vector<Setpoint>& reference,
                const MpcConfig& cfg, int /*n_u*/) {
  const TangentVec w = weights(cfg);
  double cost = cfg.r_u * u_seq.squaredNorm();
  for (int k = 0; k < cfg.horizon; ++k) {
    const TangentVec e = tracking_error(traj[static_cast<std::size_t>(k) + 1], reference[static_cast<std::size_t>(k)]);
    cost += e.cwiseProduct(w).dot(e);
  }
  return cost;
}

MpcSolution mpc_control(const State& state, const std::vector<Setpoint>& reference_in, const MpcConfig& cfg,
                        const BodyParams& body, const ThrusterSystem& system, const AccelResidual* residual,
                        const Eigen::VectorXd& warm_start, const Wrench& bias) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  if (reference_in.empty()) throw InvalidInputError("mpc_control: empty reference");
  const int h = cfg.horizon;
  const int n = system.count();
  const Eigen::Index nv = static_cast<Eigen::Index>(h) * n;
  const Eigen::Index nx = static_cast<Eigen::Index>(h) * kTangent;
  std::vector<Setpoint> reference = reference_in;
  reference.resize(static_cast<std::size_t>(h), reference_in.back());

  const Eigen::VectorXd u_max = system.u_max().replicate(h, 1);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(nv);
  if (warm_start.size() == nv) u = warm_start.cwiseMax(0.0).cwiseMin(u_max);

  const TangentVec sqrt_w = weights(cfg).cwiseSqrt();
  std::vector<State> traj = predict_trajectory(state, u, cfg, body, system, residual, bias);
  double cost = mpc_cost(traj, u, reference, cfg, n);

  MpcSolution sol;
  auto& diag = sol.output.diagnostics;
  diag.cost_history.push_back(cost);

  constexpr double kFd = 1e-6;
  std::vector<Eigen::Matrix<double, kTangent, kTangent>> a(static_cast<std::size_t>(h));
  std::vector<Eigen::MatrixXd> b(static_cast<std::size_t>(h));
  Eigen::MatrixXd m(nx, nv);
  Eigen::VectorXd e_bar(nx);

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    ++diag.iterations;
    // Linearise the one-step map about the current rollout.
    for (int k = 0; k < h; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const State& xk = traj[ks];
      const Wrench wk = wrench_of(system, u.segment(static_cast<Eigen::Index>(k) * n, n));
      const State& fk = traj[ks + 1];
      for (int i = 0; i < kTangent; ++i) {
        TangentVec d = TangentVec::Zero();
        d[i] = kFd;
        const State plus = model_step(retract(xk, d), wk, cfg, body, residual, bias);
        const State minus = model_step(retract(xk, -d), wk, cfg, body, residual, bias);
        a[ks].col(i) = (local(fk, plus) - local(fk, minus)) / (2.0 * kFd);
      }
      Eigen::Matrix<double, kTangent, 6> g;
      for (int i = 0; i < 6; ++i) {
        Wrench wp = wk, wm = wk;
        if (i < 3) {
          wp.force[i] += kFd;
          wm.force[i] -= kFd;
        } else {
          wp.torque[i - 3] += kFd;
          wm.torque[i - 3] -= kFd;
        }
        g.col(i) = (local(fk, model_step(xk, wp, cfg, body, residual, bias)) -
                    local(fk, model_step(xk, wm, cfg, body, residual, bias))) /
                   (2.0 * kFd);
      }
      b[ks] = g * system.mixer();
    }

    // Weighted error and its Jacobian w.r.t. the tangent perturbation.
    std::vector<Eigen::Matrix<double, kTangent, kTangent>> ej(static_cast<std::size_t>(h));
    for (int k = 0; k < h; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const State& xk = traj[ks + 1];
      const TangentVec e0 = tracking_error(xk, reference[ks]);
      e_bar.segment<kTangent>(static_cast<Eigen::Index>(k) * kTangent) = sqrt_w.cwiseProduct(e0);
      Eigen::Matrix<double, kTangent, kTangent> jac = Eigen::Matrix<double, kTangent, kTangent>::Identity();
      for (int i = 3; i < 6; ++i) {
        TangentVec d = TangentVec::Zero();
        d[i] = kFd;
        jac.col(i) = (tracking_error(retract(xk, d), reference[ks]) - tracking_error(retract(xk, -d), reference[ks])) /
                     (2.0 * kFd);
      }
      ej[ks] = sqrt_w.asDiagonal() * jac;
    }

    // Condensed sensitivity: block (k, j) maps command j onto state k + 1.
    m.setZero();
    for (int j = 0; j < h; ++j) {
      Eigen::MatrixXd p = b[static_cast<std::size_t>(j)];
      for (int k = j; k < h; ++k) {
        if (k > j) p = a[static_cast<std::size_t>(k)] * p;
        m.block(static_cast<Eigen::Index>(k) * kTangent, static_cast<Eigen::Index>(j) * n, kTangent, n) =
            ej[static_cast<std::size_t>(k)] * p;
      }
    }

    // Box QP in u:  ||e_bar + M (u - u_bar)||^2 + r_u ||u||^2.
    Eigen::MatrixXd hess = m.transpose() * m;
    hess.diagonal().array() += cfg.r_u;
    const Eigen::VectorXd lin = m.transpose() * e_bar - hess * u + cfg.r_u * u;
    Eigen::VectorXd v = Eigen::VectorXd::Ones(nv) / std::sqrt(static_cast<double>(nv));
    double lip = 0.0;
    for (int i = 0; i < 30; ++i) {
      const Eigen::VectorXd hv = hess * v;
      lip = hv.norm();
      if (!(lip > 0.0)) break;
      v = hv / lip;
    }
    lip = std::max(lip * 1.01, cfg.r_u);
    Eigen::VectorXd z = u, y = u, z_prev = u;
    double tk = 1.0;
    for (int it = 0; it < cfg.qp_iters; ++it) {
      const Eigen::VectorXd grad = hess * y + lin;
      z = (y - grad / lip).cwiseMax(0.0).cwiseMin(u_max);
      if (!z.allFinite()) {
        std::ostringstream os;
        os << "mpc QP diverged at SQP round " << iter << ", iteration " << it;
        throw SolverError(os.str());
      }
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
      // Restart momentum when it points uphill.
      if ((z - z_prev).dot(y - z) > 0.0) {
        tk = 1.0;
        y = z;
      } else {
        y = z + ((tk - 1.0) / t_next) * (z - z_prev);
        tk = t_next;
      }
      const double change = (z - z_prev).cwiseAbs().maxCoeff();
      z_prev = z;
      if (change < 1e-10) break;
    }

    // Accept only on decrease of the nonlinear cost; halve otherwise.
    bool accepted = false;
    double alpha = 1.0;
    Eigen::VectorXd u_new;
    std::vector<State> traj_new;
    double cost_new = cost;
    for (int ls = 0; ls < 10; ++ls) {
      u_new = (u + alpha * (z - u)).cwiseMax(0.0).cwiseMin(u_max);
      traj_new = predict_trajectory(state, u_new, cfg, body, system, residual, bias);
      cost_new = mpc_cost(traj_new, u_new, reference, cfg, n);
      if (std::isfinite(cost_new) && cost_new < cost) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    const double drop = cost - cost_new;
    u = u_new;
    traj = std::move(traj_new);
    cost = cost_new;
    diag.cost_history.push_back(cost);
    if (drop < cfg.tol * std::max(1.0, cost)) break;
  }

  diag.cost = cost;
  sol.plan = u;
  sol.output.u = u.head(n);
  sol.output.wrench_desired = wrench_of(system, sol.output.u);
  diag.solve_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sol;
}

double control_effort(const std::vector<Eigen::VectorXd>& u_log, double dt) {
  if (u_log.empty()) return 0.0;
  double integral = 0.0;
  for (const auto& u : u_log) integral += u.lpNorm<1>() * dt;
  return integral / (static_cast<double>(u_log.size()) * dt);
}

PdController::PdController(ThrusterSystem system, PdGains gains) : system_(std::move(system)), gains_(gains) {
  gains_.validate();
}

ControlOutput PdController::compute(const State& state, const ReferenceFn& reference, double t) {
  const auto t0 = std::chrono::steady_clock::now();
  ControlOutput out = pd_control(state, reference(t), gains_, system_);
  out.diagnostics.solve_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

ResidualLearning default_residual_learning() {
  ResidualLearning l;
  l.hyper.lengthscale = (Eigen::VectorXd(6) << 0.2, 0.2, 0.2, 0.5, 0.5, 0.5).finished();
  l.hyper.signal_var = 1e-3;
  l.hyper.noise_var = 1e-8;
  return l;
}

MpcController::MpcController(ThrusterSystem system, BodyParams model, MpcConfig cfg, PdGains fallback_gains,
                             std::optional<ResidualLearning> learning, double observer_gain)
    : system_(std::move(system)),
      model_(model),
      cfg_(cfg),
      fallback_(fallback_gains),
      learning_(std::move(learning)),
      observer_gain_(observer_gain) {
  if (!(observer_gain >= 0.0 && observer_gain <= 1.0)) throw ConfigError("observer gain must lie in [0, 1]");
  const Eigen::Matrix<double, 6, 1> reach = system_.mixer().cwiseAbs() * system_.u_max();
  bias_limit_ = Wrench{reach.head<3>(), reach.tail<3>()};
  model_.validate();
  cfg_.validate();
  fallback_.validate();
  if (learning_ && (learning_->window < 1 || learning_->min_samples < 1)) {
    throw ConfigError("residual learning window and min_samples must be >= 1");
  }
}

void MpcController::reset() {
  warm_ = Eigen::VectorXd();
  samples_.clear();
  last_state_.reset();
  last_u_ = Eigen::VectorXd();
  residual_.reset();
  bias_ = Wrench{};
}

void MpcController::update_bias(const State& state, double t) {
  const double h = t - last_t_;
  if (!last_state_ || last_u_.size() != system_.count() || !(h > 0.0)) return;
  const State pred = integrate_rk4(*last_state_, model_, wrench_of(system_, last_u_) + bias_, h);
  const Mat3 r_pred = quat_to_rotation(pred.attitude);
  const Vec3 dv = r_pred.transpose() * (quat_to_rotation(state.attitude) * state.velocity) - pred.velocity;
  const Vec3 force = model_.mass * dv / h;
  const Vec3 torque = model_.inertia * (state.angular_velocity - pred.angular_velocity) / h;
  if (!force.allFinite() || !torque.allFinite()) return;
  bias_.force = (bias_.force + observer_gain_ * force).cwiseMax(-bias_limit_.force).cwiseMin(bias_limit_.force);
  bias_.torque = (bias_.torque + observer_gain_ * torque).cwiseMax(-bias_limit_.torque).cwiseMin(bias_limit_.torque);
}

void MpcController::observe(const State& state, double t) {
  const double h = t - last_t_;
  if (!last_state_ || last_u_.size() != system_.count() || !(h > 0.0)) return;
  const Wrench w = wrench_of(system_, last_u_);
  const State pred = integrate_rk4(*last_state_, model_, w, h);
  // Compare the velocities in the actual end body frame.
  const Mat3 r_act = quat_to_rotation(state.attitude);
  const Mat3 r_pred = quat_to_rotation(pred.attitude);
  const Vec3 mismatch = (state.velocity - r_act.transpose() * (r_pred * pred.velocity)) / h;
  if (!mismatch.allFinite()) return;
  samples_.push_back({residual_features(last_state_->velocity, w.force), mismatch});
  const auto window = static_cast<std::size_t>(learning_->window);
  if (samples_.size() > window) samples_.erase(samples_.begin(), samples_.end() - static_cast<std::ptrdiff_t>(window));
  if (samples_.size() < static_cast<std::size_t>(learning_->min_samples)) return;

  const auto count = static_cast<Eigen::Index>(samples_.size());
  Eigen::MatrixXd inputs(count, 6), targets(count, 3);
  for (Eigen::Index i = 0; i < count; ++i) {
    inputs.row(i) = samples_[static_cast<std::size_t>(i)].input.transpose();
    targets.row(i) = samples_[static_cast<std::size_t>(i)].target.transpose();
  }
  try {
    residual_ = std::make_shared<const AccelResidual>(fit_accel_residual(inputs, targets, learning_->hyper));
  } catch (const NumericalError&) {
    // Keep the previous model when the window is degenerate.
  }
}

ControlOutput MpcController::compute(const State& state, const ReferenceFn& reference, double t) {
  const auto t0 = std::chrono::steady_clock::now();
  if (learning_) observe(state, t);
  if (observer_gain_ > 0.0) update_bias(state, t);
  std::vector<Setpoint> ref;
  ref.reserve(static_cast<std::size_t>(cfg_.horizon));
  for (int k = 0; k < cfg_.horizon; ++k) ref.push_back(reference(t + (k + 1) * cfg_.dt));

  ControlOutput out;
  try {
    MpcSolution sol = mpc_control(state, ref, cfg_, model_, system_, residual_.get(), warm_, bias_);
    const Eigen::Index n = system_.count();
    warm_.resize(sol.plan.size());
    warm_.head(sol.plan.size() - n) = sol.plan.tail(sol.plan.size() - n);
    warm_.tail(n) = sol.plan.tail(n);
    out = std::move(sol.output);
  } catch (const SolverError&) {
    out = pd_control(state, reference(t), fallback_, system_);
    out.diagnostics.fallback = true;
    warm_ = Eigen::VectorXd();
  }
  last_state_ = state;
  last_u_ = out.u;
  last_t_ = t;
  out.diagnostics.solve_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace ffsim
