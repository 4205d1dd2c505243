#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ffsim/actuation.hpp"
#include "ffsim/error.hpp"
#include "test_helpers.hpp"

using namespace ffsim;

namespace {

ThrusterSystem single_thruster(const Vec3& position, const Vec3& direction, double u_max = 5.0) {
  return ThrusterSystem({position}, {direction}, Eigen::VectorXd::Constant(1, u_max));
}

std::vector<FaultModel> all_kinds(double u_max, Rng& rng) {
  return {Nominal{},
          StuckOff{},
          StuckOn{},
          Saturation{0.5 * u_max},
          default_faulty_valve(u_max),
          default_instability(u_max),
          draw_gp_fault(u_max, rng)};
}

}  // namespace

TEST(ApplyFault, ClosedFormClasses) {
  Rng rng(1);
  EXPECT_EQ(apply_fault(StuckOff{}, 0.7, 1.0, 0.0, rng), 0.0);
  EXPECT_EQ(apply_fault(StuckOn{}, 0.0, 1.0, 0.0, rng), 1.0);
  EXPECT_EQ(apply_fault(Saturation{0.5}, 0.8, 1.0, 0.0, rng), 0.5);
  EXPECT_EQ(apply_fault(Saturation{0.5}, 0.3, 1.0, 0.0, rng), 0.3);
  // Deterministic kinds never touch the stream.
  EXPECT_EQ(rng.counter(), 0u);
}

TEST(ApplyFault, NominalIsExactIdentity) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(0.0, 0.4);
    EXPECT_EQ(apply_fault(Nominal{}, u, 0.4, rng.uniform(0, 100), rng), u);
  }
}

TEST(ApplyFault, OutputAlwaysWithinBounds) {
  Rng rng(3);
  const double u_max = 0.4;
  for (const auto& fault : all_kinds(u_max, rng)) {
    for (int i = 0; i < 2000; ++i) {
      const double u = rng.uniform(0.0, u_max);
      const double out = apply_fault(fault, u, u_max, rng.uniform(0, 50), rng);
      EXPECT_GE(out, 0.0) << fault_kind_name(fault);
      EXPECT_LE(out, u_max) << fault_kind_name(fault);
    }
  }
}

TEST(ApplyFault, FaultyValveInterpolatesBreakpoints) {
  Rng rng(4);
  const auto valve = default_faulty_valve(1.0);
  EXPECT_DOUBLE_EQ(apply_fault(valve, 0.0, 1.0, 0, rng), 0.0);
  EXPECT_DOUBLE_EQ(apply_fault(valve, 0.3, 1.0, 0, rng), 0.1);
  EXPECT_DOUBLE_EQ(apply_fault(valve, 1.0, 1.0, 0, rng), 0.8);
  EXPECT_DOUBLE_EQ(apply_fault(valve, 0.15, 1.0, 0, rng), 0.05);
  EXPECT_DOUBLE_EQ(apply_fault(valve, 0.65, 1.0, 0, rng), 0.45);
}

TEST(ApplyFault, InstabilityWithoutNoiseFollowsSinusoid) {
  Rng rng(5);
  const Instability p{0.2, 1.0, 0.0};
  EXPECT_NEAR(apply_fault(p, 0.2, 1.0, 0.25, rng), 0.2 * 1.2, 1e-15);
  EXPECT_NEAR(apply_fault(p, 0.2, 1.0, 0.75, rng), 0.2 * 0.8, 1e-15);
}

TEST(ApplyFault, StochasticKindsAreSeedReproducible) {
  const double u_max = 0.4;
  for (int kind = 0; kind < 2; ++kind) {
    Rng a(99), b(99);
    const FaultModel fa = kind == 0 ? FaultModel(default_instability(u_max)) : FaultModel(draw_gp_fault(u_max, a));
    const FaultModel fb = kind == 0 ? FaultModel(default_instability(u_max)) : FaultModel(draw_gp_fault(u_max, b));
    for (int i = 0; i < 200; ++i) {
      const double u = 0.002 * i;
      EXPECT_EQ(apply_fault(fa, u, u_max, 0.02 * i, a), apply_fault(fb, u, u_max, 0.02 * i, b));
    }
  }
}

TEST(ApplyFault, GpSampleStartsAtZeroAndStaysNearNominal) {
  Rng rng(6);
  const auto g = draw_gp_fault(0.4, rng);
  EXPECT_LT(std::abs(g.values.front()), 1e-3);
  // 0.25 u_max prior std: a draw beyond 6 sigma would indicate a broken sampler.
  for (std::size_t i = 0; i < g.grid.size(); ++i) EXPECT_LT(std::abs(g.values[i] - g.grid[i]), 0.6);
}

TEST(ApplyFault, RejectsOutOfRangeDemand) {
  Rng rng(7);
  EXPECT_THROW(apply_fault(Nominal{}, -0.1, 1.0, 0, rng), InvalidInputError);
  EXPECT_THROW(apply_fault(StuckOff{}, 1.5, 1.0, 0, rng), InvalidInputError);
}

TEST(ApplyFault, ParameterValidation) {
  EXPECT_THROW(validate_fault(Saturation{0.0}, 1.0), ConfigError);
  EXPECT_THROW(validate_fault(Saturation{1.5}, 1.0), ConfigError);
  EXPECT_THROW(validate_fault(FaultyValve{{{0, 0}, {0.5, 0.4}, {1.0, 0.3}}}, 1.0), ConfigError);
  EXPECT_THROW(validate_fault(FaultyValve{{{0, 0.1}, {1.0, 0.3}}}, 1.0), ConfigError);
  EXPECT_THROW(validate_fault(Instability{-0.1, 1.0, 0.0}, 1.0), ConfigError);
  EXPECT_THROW(validate_fault(Instability{0.1, 0.0, 0.0}, 1.0), ConfigError);
  EXPECT_NO_THROW(validate_fault(default_faulty_valve(1.0), 1.0));
}

TEST(Schedule, FaultsOnlyInsideWindow) {
  const auto sys = ThrusterSystem::default_layout();
  std::vector<ScheduledFault> schedule = {{3, StuckOn{}, 1.0, 2.0}, {5, StuckOff{}, 0.0, 1e300}};
  Rng rng(8);
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(12, 0.1);
  Eigen::VectorXd before = apply_faults(sys, schedule, u, 0.5, rng);
  EXPECT_EQ(before[3], 0.1);
  EXPECT_EQ(before[5], 0.0);
  Eigen::VectorXd during = apply_faults(sys, schedule, u, 1.5, rng);
  EXPECT_EQ(during[3], 0.4);
  Eigen::VectorXd after = apply_faults(sys, schedule, u, 2.0, rng);
  EXPECT_EQ(after[3], 0.1);
  EXPECT_EQ(active_fault_mask(schedule, 1.5), (1u << 3) | (1u << 5));
  EXPECT_EQ(active_fault_mask(schedule, 2.5), 1u << 5);
}

TEST(Mixer, DefaultLayoutInvariants) {
  const auto sys = ThrusterSystem::default_layout();
  EXPECT_EQ(sys.count(), 12);
  EXPECT_EQ(sys.rank(), 6);
  for (int j = 0; j < 12; ++j) {
    EXPECT_NEAR(sys.directions()[j].norm(), 1.0, 1e-12);
    EXPECT_EQ(Vec3(sys.mixer().block<3, 1>(0, j)), sys.directions()[j]);
    EXPECT_EQ(Vec3(sys.mixer().block<3, 1>(3, j)), sys.positions()[j].cross(sys.directions()[j]));
  }
  // Torque-balanced pairs.
  for (int p = 0; p < 6; ++p) {
    const Vec3 t = sys.mixer().block<3, 1>(3, 2 * p) + sys.mixer().block<3, 1>(3, 2 * p + 1);
    EXPECT_EQ(t.norm(), 0.0);
  }
}

TEST(Mixer, ZeroCommandZeroWrench) {
  const Wrench w = mix(ThrusterSystem::default_layout(), Eigen::VectorXd::Zero(12));
  EXPECT_EQ(w.force.norm() + w.torque.norm(), 0.0);
}

TEST(Mixer, ThrusterAtOrigin) {
  const Wrench w = mix(single_thruster(Vec3::Zero(), Vec3::UnitX()), Eigen::VectorXd::Constant(1, 2.0));
  EXPECT_EQ(w.force, Vec3(2, 0, 0));
  EXPECT_EQ(w.torque, Vec3::Zero());
}

TEST(Mixer, LeverArmTorque) {
  // (0,1,0) x (1,0,0) = (0,0,-1)
  const Wrench w = mix(single_thruster(Vec3::UnitY(), Vec3::UnitX()), Eigen::VectorXd::Constant(1, 1.0));
  EXPECT_EQ(w.force, Vec3(1, 0, 0));
  EXPECT_EQ(w.torque, Vec3(0, 0, -1));
}

TEST(Mixer, Linear) {
  const auto sys = ThrusterSystem::default_layout();
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd a(12), b(12);
    for (int j = 0; j < 12; ++j) {
      a[j] = rng.uniform(0, 0.4);
      b[j] = rng.uniform(0, 0.4);
    }
    const Wrench wa = mix(sys, a), wb = mix(sys, b), wab = mix(sys, a + b);
    EXPECT_LT((wab.force - wa.force - wb.force).norm(), 1e-12);
    EXPECT_LT((wab.torque - wa.torque - wb.torque).norm(), 1e-12);
  }
}

TEST(Mixer, LengthMismatch) {
  EXPECT_THROW(mix(ThrusterSystem::default_layout(), Eigen::VectorXd::Zero(5)), InvalidInputError);
}

TEST(Mixer, BadGeometryRejected) {
  EXPECT_THROW(single_thruster(Vec3::Zero(), Vec3(1, 1, 0)), ConfigError);
  EXPECT_THROW(single_thruster(Vec3::Zero(), Vec3::UnitX(), 0.0), ConfigError);
}

TEST(Allocate, ZeroWrench) {
  const auto u = allocate(ThrusterSystem::default_layout(), Wrench{});
  EXPECT_EQ(u.norm(), 0.0);
}

TEST(Allocate, FeasibleForceReachesHandSolution) {
  // The +x pair at 0.25 N each produces exactly (0.5, 0, 0) with zero torque,
  // so the optimum residual is zero.
  const auto sys = ThrusterSystem::default_layout();
  Eigen::VectorXd hand = Eigen::VectorXd::Zero(12);
  hand[0] = hand[1] = 0.25;
  const Wrench target{Vec3(0.5, 0, 0), Vec3::Zero()};
  const Wrench hw = mix(sys, hand);
  ASSERT_LT((hw.force - target.force).norm() + hw.torque.norm(), 1e-15);
  const auto res = allocate_detailed(sys, target);
  EXPECT_LE(res.residual, 1e-6);
  EXPECT_TRUE((res.u.array() >= 0).all() && (res.u.array() <= 0.4).all());
}

TEST(Allocate, InfeasibleMatchesBestBoxVertex) {
  const auto sys = ThrusterSystem::default_layout();
  const double total = sys.u_max().sum();
  const Wrench target{Vec3(10 * total, 0, 0), Vec3::Zero()};
  Eigen::Matrix<double, 6, 1> w;
  w << target.force, target.torque;

  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_u;
  for (int mask = 0; mask < (1 << 12); ++mask) {
    Eigen::VectorXd u(12);
    for (int j = 0; j < 12; ++j) u[j] = (mask >> j & 1) ? 0.4 : 0.0;
    const double r = (sys.mixer() * u - w).norm();
    if (r < best) {
      best = r;
      best_u = u;
    }
  }
  const auto res = allocate_detailed(sys, target);
  EXPECT_NEAR(res.residual, best, 1e-9);
  EXPECT_LT((res.u - best_u).norm(), 1e-9);
  EXPECT_EQ(res.u[0], 0.4);
  EXPECT_EQ(res.u[1], 0.4);
}

TEST(Allocate, RoundTripThroughMixer) {
  const auto sys = ThrusterSystem::default_layout();
  Rng rng(10);
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd u(12);
    for (int j = 0; j < 12; ++j) u[j] = rng.uniform(0.02, 0.38);
    const Wrench w = mix(sys, u);
    const Wrench back = mix(sys, allocate(sys, w));
    EXPECT_LT((back.force - w.force).norm() + (back.torque - w.torque).norm(), 1e-6);
  }
}

TEST(Disturbance, NoneAndConstant) {
  Rng rng(11);
  const Wrench z = sample_disturbance(NoDisturbance{}, State{}, 3.0, rng);
  EXPECT_EQ(z.force.norm() + z.torque.norm(), 0.0);
  const ConstantWrench c{Wrench{Vec3(0, 0, 0.1), Vec3::Zero()}};
  for (double t : {0.0, 1.0, 100.0}) {
    const Wrench w = sample_disturbance(c, State{}, t, rng);
    EXPECT_EQ(w.force, Vec3(0, 0, 0.1));
    EXPECT_EQ(w.torque, Vec3::Zero());
  }
}

TEST(Disturbance, WhiteNoiseMeanIsZero) {
  Rng rng(12);
  const WhiteNoiseWrench d{0.1, 0.1};
  const int n = 100000;
  Eigen::Matrix<double, 6, 1> sum = Eigen::Matrix<double, 6, 1>::Zero();
  for (int i = 0; i < n; ++i) {
    const Wrench w = sample_disturbance(d, State{}, 0.0, rng);
    sum.head<3>() += w.force;
    sum.tail<3>() += w.torque;
  }
  const double bound = 3.0 * 0.1 / std::sqrt(static_cast<double>(n));
  for (int k = 0; k < 6; ++k) EXPECT_LT(std::abs(sum[k] / n), bound);
}

TEST(Disturbance, CallbackEvaluatedAtStateAndTime) {
  Rng rng(13);
  CallbackTerm cb{[](const State& s, double t) { return Wrench{s.position * t, Vec3::Zero()}; }};
  State s;
  s.position = Vec3(1, 2, 3);
  EXPECT_EQ(sample_disturbance(cb, s, 2.0, rng).force, Vec3(2, 4, 6));
  CallbackTerm bad{[](const State&, double) { return Wrench{Vec3(NAN, 0, 0), Vec3::Zero()}; }};
  EXPECT_THROW(sample_disturbance(bad, s, 0.0, rng), NumericalError);
}
