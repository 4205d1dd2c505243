#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ffsim/actuation.hpp"
#include "ffsim/gp.hpp"
#include "ffsim/rigid_body.hpp"

namespace ffsim {

struct Setpoint {
  Vec3 position = Vec3::Zero();          // inertial, m
  Quat attitude = Quat(1, 0, 0, 0);      // q_IB
  Vec3 velocity = Vec3::Zero();          // body frame, m/s
  Vec3 angular_velocity = Vec3::Zero();  // body frame, rad/s

  bool operator==(const Setpoint&) const = default;
};

/// Reference as a function of time; the MPC samples it over its horizon.
using ReferenceFn = std::function<Setpoint(double)>;

struct ControlDiagnostics {
  int iterations = 0;
  double cost = 0.0;
  double solve_time_s = 0.0;  // wall clock, not deterministic
  bool fallback = false;      // MPC failed and PD produced the command
  std::vector<double> cost_history;
};

struct ControlOutput {
  Eigen::VectorXd u;  // in [0, u_max]
  Wrench wrench_desired;
  ControlDiagnostics diagnostics;
};

/// Rotation vector of q_ref^-1 (x) q, angle in [0, pi]. At exactly pi the
/// first nonzero component is made positive.
Vec3 attitude_error(const Quat& q, const Quat& q_ref);

struct PdGains {
  double kp_pos = 2.0;
  double kd_vel = 6.0;
  double kp_att = 0.3;
  double kd_rate = 0.4;

  void validate() const;

  bool operator==(const PdGains&) const = default;
};

/// PD pose tracking, then allocation onto the thrusters.
ControlOutput pd_control(const State& state, const Setpoint& sp, const PdGains& gains, const ThrusterSystem& system);

struct MpcConfig {
  int horizon = 20;
  double dt = 0.1;  // control period, s
  double q_pos = 10.0;
  double q_att = 5.0;
  double q_vel = 1.0;
  double q_rate = 1.0;
  double r_u = 0.1;
  int max_iters = 5;   // SQP rounds
  double tol = 1e-6;   // stop when the cost drops by less than tol * max(1, cost)
  int qp_iters = 200;  // projected-gradient iterations per round

  void validate() const;

  bool operator==(const MpcConfig&) const = default;
};

/// Learned additive term on the body-frame linear acceleration: one GP per
/// axis over the input (v_B, F_B).
struct AccelResidual {
  std::array<GpModel, 3> axes;

  Vec3 predict(const Vec3& velocity, const Vec3& force) const;
};

Eigen::Matrix<double, 6, 1> residual_features(const Vec3& velocity, const Vec3& force);

/// Fits the three axis GPs. `inputs` is N x 6 (see residual_features),
/// `targets` is N x 3.
AccelResidual fit_accel_residual(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                                 const GpHyperparameters& hyper);

/// Open-loop prediction used inside the MPC: RK4 over dt per command, with
/// the residual mean (if any) held constant over each step. `u_seq` holds
/// horizon commands back to back. Returns horizon + 1 states.
/// `bias` is a constant body-frame wrench added to every step.
std::vector<State> predict_trajectory(const State& x0, const Eigen::VectorXd& u_seq, const MpcConfig& cfg,
                                      const BodyParams& body, const ThrusterSystem& system,
                                      const AccelResidual* residual = nullptr, const Wrench& bias = Wrench{});

/// Stage cost summed over the horizon; reference[k] is compared with the
/// predicted state after k + 1 commands.
double mpc_cost(const std::vector<State>& traj, const Eigen::VectorXd& u_seq, const std::vector<Setpoint>& reference,
                const MpcConfig& cfg, int n_u);

struct MpcSolution {
  ControlOutput output;
  Eigen::VectorXd plan;  // horizon commands, for warm starting
};

/// Sequential linearisation MPC over thruster commands. Throws SolverError if
/// the QP iterates stop being finite.
MpcSolution mpc_control(const State& state, const std::vector<Setpoint>& reference, const MpcConfig& cfg,
                        const BodyParams& body, const ThrusterSystem& system, const AccelResidual* residual = nullptr,
                        const Eigen::VectorXd& warm_start = Eigen::VectorXd(), const Wrench& bias = Wrench{});

/// Time average of ||u||_1 (the integral of ||u||_1 dt divided by duration).
double control_effort(const std::vector<Eigen::VectorXd>& u_log, double dt);

class Controller {
 public:
  virtual ~Controller() = default;
  /// Called once per control period with the state and the reference.
  virtual ControlOutput compute(const State& state, const ReferenceFn& reference, double t) = 0;
  virtual void reset() {}
  virtual std::string name() const = 0;
};

class PdController : public Controller {
 public:
  PdController(ThrusterSystem system, PdGains gains);
  ControlOutput compute(const State& state, const ReferenceFn& reference, double t) override;
  std::string name() const override { return "pd"; }

 private:
  ThrusterSystem system_;
  PdGains gains_;
};

/// Settings for learning the residual online from the controller's own
/// one-step prediction errors.
struct ResidualLearning {
  GpHyperparameters hyper;
  int window = 60;       // most recent samples kept
  int min_samples = 10;  // before the first fit

  bool operator==(const ResidualLearning&) const = default;
};

ResidualLearning default_residual_learning();

class MpcController : public Controller {
 public:
  /// `model` is the controller's idea of the plant; it may differ from the
  /// simulated body. With `learning` set, the controller fits an
  /// AccelResidual on the mismatch it observes between control updates.
  /// A positive `observer_gain` turns on a constant body-wrench disturbance
  /// estimate: after each period the one-step prediction error (as a wrench)
  /// times the gain is added to the estimate, which the prediction model then
  /// includes. This gives the loop integral action against unmodelled
  /// actuator faults.
  MpcController(ThrusterSystem system, BodyParams model, MpcConfig cfg, PdGains fallback_gains,
                std::optional<ResidualLearning> learning = std::nullopt, double observer_gain = 0.0);

  ControlOutput compute(const State& state, const ReferenceFn& reference, double t) override;
  void reset() override;
  std::string name() const override { return learning_ ? "gp_mpc" : "mpc"; }

  /// Installs a fixed residual model (replaces any learned one).
  void set_residual(std::shared_ptr<const AccelResidual> residual) { residual_ = std::move(residual); }
  const AccelResidual* residual() const { return residual_.get(); }
  int residual_samples() const { return static_cast<int>(samples_.size()); }
  const Wrench& disturbance_estimate() const { return bias_; }

 private:
  void observe(const State& state, double t);
  void update_bias(const State& state, double t);

  ThrusterSystem system_;
  BodyParams model_;
  MpcConfig cfg_;
  PdGains fallback_;
  std::optional<ResidualLearning> learning_;
  std::shared_ptr<const AccelResidual> residual_;
  Eigen::VectorXd warm_;

  struct Sample {
    Eigen::Matrix<double, 6, 1> input;
    Vec3 target;
  };
  std::vector<Sample> samples_;
  std::optional<State> last_state_;
  Eigen::VectorXd last_u_;
  double last_t_ = 0.0;
  double observer_gain_ = 0.0;
  Wrench bias_;
  Wrench bias_limit_;
};

}  // namespace ffsim
