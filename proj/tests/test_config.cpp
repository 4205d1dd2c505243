#include <gtest/gtest.h>

#include <string>

#include "ffsim/config.hpp"
#include "ffsim/error.hpp"

using namespace ffsim;

namespace {

std::string error_of(const std::string& text) {
  try {
    load_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, MinimalDocumentTakesDefaults) {
  const ScenarioConfig cfg = load_config(R"({"schema": 1})");
  EXPECT_EQ(cfg, ScenarioConfig{});
  EXPECT_EQ(cfg.dt, 0.02);
  EXPECT_EQ(cfg.duration, 10.0);
  EXPECT_EQ(cfg.thrusters.count(), 12);
  EXPECT_EQ(cfg.controller.type, "mpc");
  EXPECT_EQ(cfg.plan.type, "setpoint");
  EXPECT_FALSE(cfg.contact.enabled);
  EXPECT_EQ(cfg.body.mass, 10.0);
}

TEST(Config, MissingSchemaRejected) {
  EXPECT_NE(error_of("{}").find("schema"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema": 2})").find("schema"), std::string::npos);
}

TEST(Config, ThrusterOutOfRangeNamesField) {
  const std::string msg = error_of(R"({"schema": 1, "faults": [{"thruster": 99, "kind": "stuck_on"}]})");
  EXPECT_NE(msg.find("faults[0].thruster"), std::string::npos) << msg;
  EXPECT_NE(msg.find("99"), std::string::npos) << msg;
}

TEST(Config, FaultWindowMustBeOrdered) {
  const std::string msg =
      error_of(R"({"schema": 1, "faults": [{"thruster": 0, "kind": "stuck_on", "t_on": 5, "t_off": 2}]})");
  EXPECT_NE(msg.find("faults[0]"), std::string::npos) << msg;
}

TEST(Config, UnknownKeyNamesPath) {
  const std::string msg = error_of(R"({"schema": 1, "controller": {"typ": "pd"}})");
  EXPECT_NE(msg.find("controller.typ"), std::string::npos) << msg;
}

TEST(Config, SyntaxErrorReportsLine) {
  const std::string msg = error_of("{\n\"schema\": 1,\n\"dt\": ,\n}");
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_NE(error_of(R"({"schema": 1, "dt": 0})").find("dt"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema": 1, "dt": 0.5})").find("dt"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema": 1, "body": {"mass": -1}})").find("body"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema": 1, "controller": {"type": "lqr"}})").find("controller.type"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema": 1, "controller": {"type": "policy"}})").find("controller"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema": 1, "faults": [{"thruster": 0, "kind": "saturation", "u_sat": 9}]})").find("faults[0]"),
            std::string::npos);
}

TEST(Config, RoundTripFullDocument) {
  const std::string text = R"({
    "schema": 1, "name": "rt", "seed": 17, "dt": 0.01, "duration": 3.5, "log": false,
    "body": {"mass": 12.5, "inertia": [0.2, 0.25, 0.3]},
    "initial_state": {"position": [0.1, -0.2, 0.3], "velocity": [0.01, 0, 0]},
    "faults": [
      {"thruster": 0, "kind": "stuck_on", "t_on": 1, "t_off": 2},
      {"thruster": 3, "kind": "saturation", "u_sat": 0.1},
      {"thruster": 4, "kind": "faulty_valve"},
      {"thruster": 5, "kind": "instability", "amplitude": 0.3},
      {"thruster": 6, "kind": "gp_sample"},
      {"thruster": 7, "kind": "stuck_off", "t_on": 0.5}
    ],
    "disturbances": [{"kind": "white_noise", "std_force": 0.01}, {"kind": "constant", "torque": [0, 0, 0.001]}],
    "controller": {"type": "gp_mpc", "period_steps": 3, "mpc": {"horizon": 12}, "model_mass_scale": 1.2},
    "plan": {"type": "docking", "docking": {"pre_dock": {"position": [0.6, 0, 0]}, "dock": {"position": [0.14, 0, 0]}}},
    "contact": {"enabled": true, "stiffness": 300, "shapes": [{"type": "plane", "normal": [1, 0, 0]},
                {"type": "box", "half_extents": [0.1, 0.2, 0.3], "center": [0, 2, 0]}]}
  })";
  const ScenarioConfig a = load_config(text);
  const std::string s1 = serialize_config(a);
  const ScenarioConfig b = load_config(s1);
  EXPECT_EQ(a, b);
  EXPECT_EQ(serialize_config(b), s1);
  EXPECT_EQ(b.faults.size(), 6u);
  EXPECT_EQ(b.controller.mpc.horizon, 12);
  EXPECT_EQ(b.contact.model.world.size(), 2u);
}

TEST(Config, GpSampleFaultDrawnFromSeed) {
  const std::string t1 = R"({"schema": 1, "seed": 4, "faults": [{"thruster": 2, "kind": "gp_sample"}]})";
  const std::string t2 = R"({"schema": 1, "seed": 5, "faults": [{"thruster": 2, "kind": "gp_sample"}]})";
  EXPECT_EQ(load_config(t1), load_config(t1));
  EXPECT_NE(load_config(t1).faults[0], load_config(t2).faults[0]);
}

TEST(Config, CallbackDisturbanceNotSerializable) {
  ScenarioConfig cfg;
  cfg.disturbances.push_back(CallbackTerm{[](const State&, double) { return Wrench{}; }});
  EXPECT_THROW(serialize_config(cfg), ConfigError);
}

TEST(Config, MissingFileIsConfigError) {
  EXPECT_THROW(load_config_file("/nonexistent/scenario.json"), ConfigError);
}
