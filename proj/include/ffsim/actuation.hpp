#pragma once

#include <functional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ffsim/rigid_body.hpp"
#include "ffsim/rng.hpp"

namespace ffsim {

using Mixer = Eigen::Matrix<double, 6, Eigen::Dynamic>;

/// Thruster geometry and the mixer B mapping per-thruster thrust to a body
/// wrench: column j is (d_j, p_j x d_j).
class ThrusterSystem {
 public:
  ThrusterSystem() = default;

  /// Builds the mixer and validates: unit directions, 0 < u_max < inf.
  /// Throws ConfigError.
  ThrusterSystem(std::vector<Vec3> positions, std::vector<Vec3> directions, Eigen::VectorXd u_max);

  /// Twelve thrusters on a 0.3 m cube, two per direction (+x, -x, +y, -y, +z,
  /// -z, in that index order). The two thrusters of a direction sit at +-0.15 m
  /// so firing them together is torque-free and firing them differentially
  /// gives torque about one axis.
  static ThrusterSystem default_layout(double u_max = 0.4);

  int count() const { return static_cast<int>(positions_.size()); }
  const std::vector<Vec3>& positions() const { return positions_; }
  const std::vector<Vec3>& directions() const { return directions_; }
  const Eigen::VectorXd& u_max() const { return u_max_; }
  const Mixer& mixer() const { return mixer_; }
  /// ||B^T B||_2, the Lipschitz constant used by `allocate`.
  double lipschitz() const { return lipschitz_; }
  int rank() const;

  bool operator==(const ThrusterSystem& o) const {
    return positions_ == o.positions_ && directions_ == o.directions_ && u_max_ == o.u_max_;
  }

 private:
  std::vector<Vec3> positions_;
  std::vector<Vec3> directions_;
  Eigen::VectorXd u_max_;
  Mixer mixer_;
  double lipschitz_ = 0.0;
};

// Fault models g_i(u): demanded -> actual thrust for one thruster.

struct Nominal {
  bool operator==(const Nominal&) const = default;
};
struct StuckOff {
  bool operator==(const StuckOff&) const = default;
};
struct StuckOn {
  bool operator==(const StuckOn&) const = default;
};
struct Saturation {
  double u_sat = 0.0;

  bool operator==(const Saturation&) const = default;
};
/// Piecewise-linear map through (input, output) breakpoints, sorted by input.
/// Inputs beyond the last breakpoint extrapolate the final segment.
struct FaultyValve {
  std::vector<std::pair<double, double>> breakpoints;

  bool operator==(const FaultyValve&) const = default;
};
/// u (1 + A sin(2 pi f t)) + N(0, noise_std^2), clamped to [0, u_max].
struct Instability {
  double amplitude = 0.2;
  double frequency = 1.0;
  double noise_std = 0.0;

  bool operator==(const Instability&) const = default;
};
/// A GP posterior draw tabulated on a grid over [0, u_max]; evaluated by
/// linear interpolation.
struct GpSample {
  std::vector<double> grid;
  std::vector<double> values;

  bool operator==(const GpSample&) const = default;
};

using FaultModel = std::variant<Nominal, StuckOff, StuckOn, Saturation, FaultyValve, Instability, GpSample>;

std::string fault_kind_name(const FaultModel& fault);

/// Checks the per-kind parameter invariants against `u_max`. Throws ConfigError.
void validate_fault(const FaultModel& fault, double u_max);

/// Default breakpoints (0,0), (0.3 u_max, 0.1 u_max), (u_max, 0.8 u_max).
FaultyValve default_faulty_valve(double u_max);
/// Default A = 0.2, f = 1 Hz, noise_std = 0.05 u_max.
Instability default_instability(double u_max);

/// Draws a GP fault map: a zero-mean RBF GP on the residual g(u) - u,
/// conditioned on g(0) = 0, sampled on `grid_points` points over [0, u_max].
/// Defaults follow lengthscale = 0.3 u_max, signal std = 0.25 u_max.
GpSample draw_gp_fault(double u_max, Rng& rng, int grid_points = 21, double lengthscale_frac = 0.3,
                       double signal_std_frac = 0.25);

/// u_act = g(u_dem). Stochastic kinds draw only from `rng`. The result always
/// lies in [0, u_max]. Throws InvalidInputError if u_dem is outside [0, u_max].
double apply_fault(const FaultModel& fault, double u_dem, double u_max, double t, Rng& rng);

/// A fault attached to one thruster for t in [t_on, t_off).
struct ScheduledFault {
  int thruster = 0;
  FaultModel model = Nominal{};
  double t_on = 0.0;
  double t_off = 1e300;

  bool active(double t) const { return t >= t_on && t < t_off; }
  bool operator==(const ScheduledFault&) const = default;
};

/// Applies every scheduled fault whose window contains t; other thrusters are
/// nominal. When two windows overlap on a thruster, the later entry wins.
Eigen::VectorXd apply_faults(const ThrusterSystem& system, const std::vector<ScheduledFault>& schedule,
                             const Eigen::VectorXd& u_dem, double t, Rng& rng);

/// Bit mask of thrusters with an active fault at t (annotation for logs).
std::uint64_t active_fault_mask(const std::vector<ScheduledFault>& schedule, double t);

/// [F; T] = B u.
Wrench mix(const ThrusterSystem& system, const Eigen::VectorXd& u);

struct AllocationResult {
  Eigen::VectorXd u;
  double residual = 0.0;
  int iterations = 0;
};

/// Box-constrained least squares min ||B u - w||^2, 0 <= u <= u_max, by
/// accelerated projected gradient with fixed step 1 / ||B^T B||.
AllocationResult allocate_detailed(const ThrusterSystem& system, const Wrench& desired, int max_iters = 500,
                                   double tol = 1e-8);

inline Eigen::VectorXd allocate(const ThrusterSystem& system, const Wrench& desired) {
  return allocate_detailed(system, desired).u;
}

// Additive disturbances.

struct NoDisturbance {
  bool operator==(const NoDisturbance&) const = default;
};
struct WhiteNoiseWrench {
  double std_force = 0.0;
  double std_torque = 0.0;

  bool operator==(const WhiteNoiseWrench&) const = default;
};
struct ConstantWrench {
  Wrench wrench;

  bool operator==(const ConstantWrench&) const = default;
};
/// User term, e.g. relative-orbit (CW) or J2 corrections expressed as a body
/// wrench.
struct CallbackTerm {
  std::function<Wrench(const State&, double)> term;

  /// Callbacks have no value identity; two terms compare equal only when both
  /// are empty.
  bool operator==(const CallbackTerm& o) const { return !term && !o.term; }
};

using Disturbance = std::variant<NoDisturbance, WhiteNoiseWrench, ConstantWrench, CallbackTerm>;

void validate_disturbance(const Disturbance& d);

/// Throws NumericalError if a callback returns a non-finite wrench.
Wrench sample_disturbance(const Disturbance& d, const State& state, double t, Rng& rng);

}  // namespace ffsim
