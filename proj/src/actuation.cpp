#include "ffsim/actuation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "ffsim/error.hpp"
#include "ffsim/gp.hpp"

namespace ffsim {

ThrusterSystem::ThrusterSystem(std::vector<Vec3> positions, std::vector<Vec3> directions, Eigen::VectorXd u_max)
    : positions_(std::move(positions)), directions_(std::move(directions)), u_max_(std::move(u_max)) {
  const auto n = positions_.size();
  if (n == 0 || directions_.size() != n || static_cast<std::size_t>(u_max_.size()) != n) {
    throw ConfigError("thrusters: positions, directions and u_max must be non-empty and equally long");
  }
  mixer_.resize(6, static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    if (!positions_[j].allFinite()) throw ConfigError("thrusters: non-finite position");
    if (std::abs(directions_[j].norm() - 1.0) > 1e-9) {
      std::ostringstream os;
      os << "thrusters: direction " << j << " is not unit length";
      throw ConfigError(os.str());
    }
    if (!(u_max_[j] > 0.0) || !std::isfinite(u_max_[j])) {
      std::ostringstream os;
      os << "thrusters: u_max[" << j << "] must be finite and > 0";
      throw ConfigError(os.str());
    }
    const auto col = static_cast<Eigen::Index>(j);
    mixer_.block<3, 1>(0, col) = directions_[j];
    mixer_.block<3, 1>(3, col) = positions_[j].cross(directions_[j]);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(mixer_.transpose() * mixer_, Eigen::EigenvaluesOnly);
  lipschitz_ = eig.eigenvalues().maxCoeff();
}

ThrusterSystem ThrusterSystem::default_layout(double u_max) {
  constexpr double a = 0.15;
  const std::vector<Vec3> positions = {
      {-a, a, 0},  {-a, -a, 0},  // +x
      {a, a, 0},   {a, -a, 0},   // -x
      {0, -a, a},  {0, -a, -a},  // +y
      {0, a, a},   {0, a, -a},   // -y
      {a, 0, -a},  {-a, 0, -a},  // +z
      {a, 0, a},   {-a, 0, a},   // -z
  };
  std::vector<Vec3> directions;
  const std::vector<Vec3> axes = {Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0),
                                  Vec3(0, -1, 0), Vec3(0, 0, 1), Vec3(0, 0, -1)};
  for (const Vec3& d : axes) {
    directions.push_back(d);
    directions.push_back(d);
  }
  return ThrusterSystem(positions, directions, Eigen::VectorXd::Constant(12, u_max));
}

int ThrusterSystem::rank() const {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(mixer_);
  lu.setThreshold(1e-10);
  return static_cast<int>(lu.rank());
}

std::string fault_kind_name(const FaultModel& fault) {
  struct Visitor {
    std::string operator()(const Nominal&) const { return "nominal"; }
    std::string operator()(const StuckOff&) const { return "stuck_off"; }
    std::string operator()(const StuckOn&) const { return "stuck_on"; }
    std::string operator()(const Saturation&) const { return "saturation"; }
    std::string operator()(const FaultyValve&) const { return "faulty_valve"; }
    std::string operator()(const Instability&) const { return "instability"; }
    std::string operator()(const GpSample&) const { return "gp_sample"; }
  };
  return std::visit(Visitor{}, fault);
}

void validate_fault(const FaultModel& fault, double u_max) {
  if (const auto* s = std::get_if<Saturation>(&fault)) {
    if (!(s->u_sat > 0.0 && s->u_sat <= u_max)) throw ConfigError("saturation: u_sat must lie in (0, u_max]");
  } else if (const auto* v = std::get_if<FaultyValve>(&fault)) {
    const auto& bp = v->breakpoints;
    if (bp.size() < 2) throw ConfigError("faulty_valve: need at least two breakpoints");
    if (bp.front().first != 0.0 || bp.front().second != 0.0) {
      throw ConfigError("faulty_valve: first breakpoint must be (0, 0)");
    }
    for (std::size_t i = 1; i < bp.size(); ++i) {
      if (!(bp[i].first > bp[i - 1].first)) throw ConfigError("faulty_valve: breakpoint inputs must increase");
      if (bp[i].second < bp[i - 1].second) throw ConfigError("faulty_valve: breakpoint outputs must not decrease");
    }
  } else if (const auto* ins = std::get_if<Instability>(&fault)) {
    if (!(ins->amplitude >= 0.0) || !(ins->frequency > 0.0) || !(ins->noise_std >= 0.0)) {
      throw ConfigError("instability: need amplitude >= 0, frequency > 0, noise_std >= 0");
    }
  } else if (const auto* g = std::get_if<GpSample>(&fault)) {
    if (g->grid.size() < 2 || g->grid.size() != g->values.size()) {
      throw ConfigError("gp_sample: grid and values must have equal length >= 2");
    }
  }
}

FaultyValve default_faulty_valve(double u_max) {
  return FaultyValve{{{0.0, 0.0}, {0.3 * u_max, 0.1 * u_max}, {u_max, 0.8 * u_max}}};
}

Instability default_instability(double u_max) { return Instability{0.2, 1.0, 0.05 * u_max}; }

GpSample draw_gp_fault(double u_max, Rng& rng, int grid_points, double lengthscale_frac, double signal_std_frac) {
  if (grid_points < 2) throw InvalidInputError("draw_gp_fault: need at least two grid points");
  GpHyperparameters hyper;
  hyper.lengthscale = Eigen::VectorXd::Constant(1, lengthscale_frac * u_max);
  hyper.signal_var = std::pow(signal_std_frac * u_max, 2);
  hyper.noise_var = 0.0;
  // Anchor g(0) = 0: the residual g(u) - u is conditioned to vanish at u = 0.
  const GpModel anchor = gp_fit(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1), hyper);
  Eigen::MatrixXd grid(grid_points, 1);
  for (int i = 0; i < grid_points; ++i) grid(i, 0) = u_max * i / (grid_points - 1);
  const Eigen::VectorXd residual = gp_sample_path(anchor, grid, rng);
  GpSample out;
  for (int i = 0; i < grid_points; ++i) {
    out.grid.push_back(grid(i, 0));
    out.values.push_back(grid(i, 0) + residual[i]);
  }
  return out;
}

namespace {

double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  std::size_t hi = static_cast<std::size_t>(it - xs.begin());
  hi = std::clamp<std::size_t>(hi, 1, xs.size() - 1);
  const std::size_t lo = hi - 1;
  const double s = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return ys[lo] + s * (ys[hi] - ys[lo]);
}

}  // namespace

double apply_fault(const FaultModel& fault, double u_dem, double u_max, double t, Rng& rng) {
  if (!(u_dem >= 0.0 && u_dem <= u_max)) {
    std::ostringstream os;
    os << "apply_fault: demanded thrust " << u_dem << " outside [0, " << u_max << "]";
    throw InvalidInputError(os.str());
  }
  struct Visitor {
    double u, u_max, t;
    Rng& rng;
    double operator()(const Nominal&) const { return u; }
    double operator()(const StuckOff&) const { return 0.0; }
    double operator()(const StuckOn&) const { return u_max; }
    double operator()(const Saturation& s) const { return std::min(u, s.u_sat); }
    double operator()(const FaultyValve& v) const {
      std::vector<double> xs, ys;
      for (const auto& [x, y] : v.breakpoints) {
        xs.push_back(x);
        ys.push_back(y);
      }
      return interpolate(xs, ys, u);
    }
    double operator()(const Instability& p) const {
      const double noise = rng.normal() * p.noise_std;
      return u * (1.0 + p.amplitude * std::sin(2.0 * std::numbers::pi * p.frequency * t)) + noise;
    }
    double operator()(const GpSample& g) const { return interpolate(g.grid, g.values, u); }
  };
  const double out = std::visit(Visitor{u_dem, u_max, t, rng}, fault);
  return std::clamp(out, 0.0, u_max);
}

Eigen::VectorXd apply_faults(const ThrusterSystem& system, const std::vector<ScheduledFault>& schedule,
                             const Eigen::VectorXd& u_dem, double t, Rng& rng) {
  if (u_dem.size() != system.count()) throw InvalidInputError("apply_faults: command length mismatch");
  std::vector<const FaultModel*> active(static_cast<std::size_t>(system.count()), nullptr);
  for (const auto& f : schedule) {
    if (f.thruster < 0 || f.thruster >= system.count()) throw InvalidInputError("apply_faults: bad thruster index");
    if (f.active(t)) active[static_cast<std::size_t>(f.thruster)] = &f.model;
  }
  Eigen::VectorXd u_act(u_dem.size());
  static const FaultModel kNominal = Nominal{};
  for (int i = 0; i < system.count(); ++i) {
    const FaultModel& model = active[static_cast<std::size_t>(i)] ? *active[static_cast<std::size_t>(i)] : kNominal;
    u_act[i] = apply_fault(model, u_dem[i], system.u_max()[i], t, rng);
  }
  return u_act;
}

std::uint64_t active_fault_mask(const std::vector<ScheduledFault>& schedule, double t) {
  std::uint64_t mask = 0;
  for (const auto& f : schedule) {
    if (f.active(t) && f.thruster >= 0 && f.thruster < 64) mask |= (std::uint64_t{1} << f.thruster);
  }
  return mask;
}

Wrench mix(const ThrusterSystem& system, const Eigen::VectorXd& u) {
  if (u.size() != system.count()) {
    std::ostringstream os;
    os << "mix: expected " << system.count() << " commands, got " << u.size();
    throw InvalidInputError(os.str());
  }
  if (!u.allFinite()) throw InvalidInputError("mix: non-finite command");
  const Eigen::Matrix<double, 6, 1> w = system.mixer() * u;
  return Wrench{w.head<3>(), w.tail<3>()};
}

AllocationResult allocate_detailed(const ThrusterSystem& system, const Wrench& desired, int max_iters, double tol) {
  const Mixer& b = system.mixer();
  Eigen::Matrix<double, 6, 1> w;
  w << desired.force, desired.torque;
  const Eigen::VectorXd& ub = system.u_max();
  const double step = 1.0 / system.lipschitz();
  const auto project = [&](Eigen::VectorXd v) { return v.cwiseMax(0.0).cwiseMin(ub).eval(); };

  AllocationResult out;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(system.count());
  Eigen::VectorXd y = u;
  double momentum = 1.0;
  Eigen::Matrix<double, 6, 1> r = b * u - w;
  out.residual = r.norm();
  int it = 0;
  while (it < max_iters && out.residual > tol) {
    ++it;
    const Eigen::VectorXd grad = b.transpose() * (b * y - w);
    const Eigen::VectorXd next = project(y - step * grad);
    const double next_momentum = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    // Restart the momentum whenever the step points uphill.
    if ((y - next).dot(next - u) > 0.0) {
      y = next;
      momentum = 1.0;
    } else {
      y = next + ((momentum - 1.0) / next_momentum) * (next - u);
      momentum = next_momentum;
    }
    const double moved = (next - u).lpNorm<Eigen::Infinity>();
    u = next;
    r = b * u - w;
    out.residual = r.norm();
    if (moved < 1e-16) break;
  }
  out.u = u;
  out.iterations = it;
  return out;
}

void validate_disturbance(const Disturbance& d) {
  if (const auto* n = std::get_if<WhiteNoiseWrench>(&d)) {
    if (!(n->std_force >= 0.0) || !(n->std_torque >= 0.0)) throw ConfigError("white_noise: std must be >= 0");
  } else if (const auto* c = std::get_if<ConstantWrench>(&d)) {
    if (!c->wrench.all_finite()) throw ConfigError("constant disturbance wrench must be finite");
  } else if (const auto* cb = std::get_if<CallbackTerm>(&d)) {
    if (!cb->term) throw ConfigError("callback disturbance has no function");
  }
}

Wrench sample_disturbance(const Disturbance& d, const State& state, double t, Rng& rng) {
  struct Visitor {
    const State& state;
    double t;
    Rng& rng;
    Wrench operator()(const NoDisturbance&) const { return {}; }
    Wrench operator()(const WhiteNoiseWrench& n) const {
      Wrench w;
      for (int i = 0; i < 3; ++i) w.force[i] = n.std_force * rng.normal();
      for (int i = 0; i < 3; ++i) w.torque[i] = n.std_torque * rng.normal();
      return w;
    }
    Wrench operator()(const ConstantWrench& c) const { return c.wrench; }
    Wrench operator()(const CallbackTerm& c) const {
      Wrench w = c.term(state, t);
      if (!w.all_finite()) throw NumericalError("disturbance callback returned a non-finite wrench");
      return w;
    }
  };
  return std::visit(Visitor{state, t, rng}, d);
}

}  // namespace ffsim
