#include "ffsim/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ffsim/error.hpp"

namespace ffsim {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) { throw ConfigError(path + ": " + msg); }

// Reads an object field by field and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }
  const json& raw(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) fail(at(key), "missing required field");
    return j_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    return as_number(j_.at(key), at(key));
  }
  int integer(const std::string& key, int fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) fail(at(key), "expected an integer");
    return v.get<int>();
  }
  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) fail(at(key), "expected true or false");
    return v.get<bool>();
  }
  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_string()) fail(at(key), "expected a string");
    return v.get<std::string>();
  }
  Vec3 vec3(const std::string& key, const Vec3& fallback) {
    if (!has(key)) return fallback;
    return as_vec3(j_.at(key), at(key));
  }
  Quat quat(const std::string& key, const Quat& fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() != 4) fail(at(key), "expected [w, x, y, z]");
    Quat q;
    for (int i = 0; i < 4; ++i) q[i] = as_number(v[static_cast<std::size_t>(i)], at(key));
    if (std::abs(q.norm() - 1.0) > 1e-9) fail(at(key), "quaternion must be unit length");
    return q;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) fail(at(it.key()), "unknown field");
    }
  }

  static double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(path, "must be finite");
    return x;
  }
  static Vec3 as_vec3(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 3) fail(path, "expected a 3-vector");
    return Vec3(as_number(v[0], path), as_number(v[1], path), as_number(v[2], path));
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
json to_json(const Quat& q) { return json::array({q[0], q[1], q[2], q[3]}); }

json setpoint_json(const Setpoint& sp) {
  return {{"position", to_json(sp.position)},
          {"attitude", to_json(sp.attitude)},
          {"velocity", to_json(sp.velocity)},
          {"angular_velocity", to_json(sp.angular_velocity)}};
}

Setpoint read_setpoint(const json& j, const std::string& path) {
  Fields f(j, path);
  Setpoint sp;
  sp.position = f.vec3("position", sp.position);
  sp.attitude = f.quat("attitude", sp.attitude);
  sp.velocity = f.vec3("velocity", sp.velocity);
  sp.angular_velocity = f.vec3("angular_velocity", sp.angular_velocity);
  f.finish();
  return sp;
}

BodyParams read_body(const json& j, const std::string& path) {
  Fields f(j, path);
  BodyParams b;
  b.mass = f.number("mass", b.mass);
  if (f.has("inertia")) {
    const json& v = f.raw("inertia");
    const std::string p = f.at("inertia");
    if (v.is_array() && v.size() == 3 && v[0].is_number()) {
      b.inertia = Fields::as_vec3(v, p).asDiagonal();
    } else if (v.is_array() && v.size() == 3) {
      for (int r = 0; r < 3; ++r) b.inertia.row(r) = Fields::as_vec3(v[static_cast<std::size_t>(r)], p).transpose();
    } else {
      fail(p, "expected a diagonal [a, b, c] or a 3x3 matrix");
    }
  }
  f.finish();
  return b;
}

json body_json(const BodyParams& b) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) rows.push_back(to_json(Vec3(b.inertia.row(r).transpose())));
  return {{"mass", b.mass}, {"inertia", rows}};
}

ThrusterSystem read_thrusters(const json& j, const std::string& path) {
  Fields f(j, path);
  const std::string layout = f.string("layout", "custom");
  ThrusterSystem sys;
  if (layout == "default") {
    sys = ThrusterSystem::default_layout(f.number("u_max", 0.4));
  } else if (layout == "custom") {
    const json& pos = f.raw("positions");
    const json& dir = f.raw("directions");
    const json& um = f.raw("u_max");
    if (!pos.is_array() || !dir.is_array() || !um.is_array()) fail(path, "positions, directions, u_max must be arrays");
    std::vector<Vec3> p, d;
    Eigen::VectorXd u(static_cast<Eigen::Index>(um.size()));
    for (std::size_t i = 0; i < pos.size(); ++i) p.push_back(Fields::as_vec3(pos[i], f.at("positions")));
    for (std::size_t i = 0; i < dir.size(); ++i) d.push_back(Fields::as_vec3(dir[i], f.at("directions")));
    for (std::size_t i = 0; i < um.size(); ++i) {
      u[static_cast<Eigen::Index>(i)] = Fields::as_number(um[i], f.at("u_max"));
    }
    try {
      sys = ThrusterSystem(p, d, u);
    } catch (const ConfigError& e) {
      fail(path, e.what());
    }
  } else {
    fail(f.at("layout"), "expected \"default\" or \"custom\"");
  }
  f.finish();
  return sys;
}

json thrusters_json(const ThrusterSystem& sys) {
  json p = json::array(), d = json::array(), u = json::array();
  for (int i = 0; i < sys.count(); ++i) {
    p.push_back(to_json(sys.positions()[static_cast<std::size_t>(i)]));
    d.push_back(to_json(sys.directions()[static_cast<std::size_t>(i)]));
    u.push_back(sys.u_max()[i]);
  }
  return {{"layout", "custom"}, {"positions", p}, {"directions", d}, {"u_max", u}};
}

ScheduledFault read_fault(const json& j, const std::string& path, const ThrusterSystem& sys, Rng& rng) {
  Fields f(j, path);
  ScheduledFault sf;
  sf.thruster = f.integer("thruster", -1);
  if (sf.thruster < 0 || sf.thruster >= sys.count()) {
    std::ostringstream os;
    os << "index " << sf.thruster << " out of range for " << sys.count() << " thrusters";
    fail(f.at("thruster"), os.str());
  }
  sf.t_on = f.number("t_on", 0.0);
  sf.t_off = f.number("t_off", sf.t_off);
  const double u_max = sys.u_max()[sf.thruster];
  const std::string kind = f.string("kind", "");
  if (kind == "nominal") {
    sf.model = Nominal{};
  } else if (kind == "stuck_off") {
    sf.model = StuckOff{};
  } else if (kind == "stuck_on") {
    sf.model = StuckOn{};
  } else if (kind == "saturation") {
    sf.model = Saturation{f.number("u_sat", 0.5 * u_max)};
  } else if (kind == "faulty_valve") {
    FaultyValve fv = default_faulty_valve(u_max);
    if (f.has("breakpoints")) {
      const json& b = f.raw("breakpoints");
      if (!b.is_array()) fail(f.at("breakpoints"), "expected [[input, output], ...]");
      fv.breakpoints.clear();
      for (const auto& pt : b) {
        if (!pt.is_array() || pt.size() != 2) fail(f.at("breakpoints"), "expected [input, output] pairs");
        fv.breakpoints.emplace_back(Fields::as_number(pt[0], f.at("breakpoints")),
                                    Fields::as_number(pt[1], f.at("breakpoints")));
      }
    }
    sf.model = fv;
  } else if (kind == "instability") {
    Instability in = default_instability(u_max);
    in.amplitude = f.number("amplitude", in.amplitude);
    in.frequency = f.number("frequency", in.frequency);
    in.noise_std = f.number("noise_std", in.noise_std);
    sf.model = in;
  } else if (kind == "gp_sample") {
    if (f.has("grid")) {
      GpSample g;
      g.grid = f.raw("grid").get<std::vector<double>>();
      g.values = f.raw("values").get<std::vector<double>>();
      sf.model = g;
    } else {
      const int points = f.integer("grid_points", 21);
      const double ls = f.number("lengthscale_frac", 0.3);
      const double sd = f.number("signal_std_frac", 0.25);
      sf.model = draw_gp_fault(u_max, rng, points, ls, sd);
    }
  } else {
    fail(f.at("kind"), "unknown fault kind \"" + kind + "\"");
  }
  if (!(sf.t_on < sf.t_off)) fail(path, "t_on must be < t_off");
  try {
    validate_fault(sf.model, u_max);
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
  f.finish();
  return sf;
}

json fault_json(const ScheduledFault& sf) {
  json j = {{"thruster", sf.thruster}, {"kind", fault_kind_name(sf.model)}, {"t_on", sf.t_on}, {"t_off", sf.t_off}};
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Saturation>) {
          j["u_sat"] = m.u_sat;
        } else if constexpr (std::is_same_v<T, FaultyValve>) {
          json b = json::array();
          for (const auto& [in, out] : m.breakpoints) b.push_back(json::array({in, out}));
          j["breakpoints"] = b;
        } else if constexpr (std::is_same_v<T, Instability>) {
          j["amplitude"] = m.amplitude;
          j["frequency"] = m.frequency;
          j["noise_std"] = m.noise_std;
        } else if constexpr (std::is_same_v<T, GpSample>) {
          j["grid"] = m.grid;
          j["values"] = m.values;
        }
      },
      sf.model);
  return j;
}

Disturbance read_disturbance(const json& j, const std::string& path) {
  Fields f(j, path);
  const std::string kind = f.string("kind", "");
  Disturbance d;
  if (kind == "none") {
    d = NoDisturbance{};
  } else if (kind == "white_noise") {
    d = WhiteNoiseWrench{f.number("std_force", 0.0), f.number("std_torque", 0.0)};
  } else if (kind == "constant") {
    d = ConstantWrench{Wrench{f.vec3("force", Vec3::Zero()), f.vec3("torque", Vec3::Zero())}};
  } else {
    fail(f.at("kind"), "unknown disturbance kind \"" + kind + "\"");
  }
  try {
    validate_disturbance(d);
  } catch (const Error& e) {
    fail(path, e.what());
  }
  f.finish();
  return d;
}

json disturbance_json(const Disturbance& d) {
  if (std::holds_alternative<NoDisturbance>(d)) return {{"kind", "none"}};
  if (const auto* w = std::get_if<WhiteNoiseWrench>(&d)) {
    return {{"kind", "white_noise"}, {"std_force", w->std_force}, {"std_torque", w->std_torque}};
  }
  if (const auto* c = std::get_if<ConstantWrench>(&d)) {
    return {{"kind", "constant"}, {"force", to_json(c->wrench.force)}, {"torque", to_json(c->wrench.torque)}};
  }
  throw ConfigError("disturbances: callback terms cannot be serialized");
}

ControllerConfig read_controller(const json& j, const std::string& path) {
  Fields f(j, path);
  ControllerConfig c;
  c.type = f.string("type", c.type);
  if (c.type != "pd" && c.type != "mpc" && c.type != "gp_mpc" && c.type != "policy") {
    fail(f.at("type"), "expected pd, mpc, gp_mpc or policy");
  }
  c.period_steps = f.integer("period_steps", c.period_steps);
  if (f.has("pd")) {
    Fields g(f.raw("pd"), f.at("pd"));
    c.pd.kp_pos = g.number("kp_pos", c.pd.kp_pos);
    c.pd.kd_vel = g.number("kd_vel", c.pd.kd_vel);
    c.pd.kp_att = g.number("kp_att", c.pd.kp_att);
    c.pd.kd_rate = g.number("kd_rate", c.pd.kd_rate);
    g.finish();
  }
  if (f.has("mpc")) {
    Fields m(f.raw("mpc"), f.at("mpc"));
    c.mpc.horizon = m.integer("horizon", c.mpc.horizon);
    c.mpc.dt = m.number("dt", c.mpc.dt);
    c.mpc.q_pos = m.number("q_pos", c.mpc.q_pos);
    c.mpc.q_att = m.number("q_att", c.mpc.q_att);
    c.mpc.q_vel = m.number("q_vel", c.mpc.q_vel);
    c.mpc.q_rate = m.number("q_rate", c.mpc.q_rate);
    c.mpc.r_u = m.number("r_u", c.mpc.r_u);
    c.mpc.max_iters = m.integer("max_iters", c.mpc.max_iters);
    c.mpc.tol = m.number("tol", c.mpc.tol);
    c.mpc.qp_iters = m.integer("qp_iters", c.mpc.qp_iters);
    m.finish();
  }
  c.model_mass_scale = f.number("model_mass_scale", c.model_mass_scale);
  c.observer_gain = f.number("observer_gain", c.observer_gain);
  if (f.has("residual")) {
    Fields r(f.raw("residual"), f.at("residual"));
    if (r.has("lengthscale")) {
      const json& l = r.raw("lengthscale");
      if (!l.is_array() || l.size() != 6) fail(r.at("lengthscale"), "expected 6 lengthscales");
      for (int i = 0; i < 6; ++i) {
        c.residual.hyper.lengthscale[i] = Fields::as_number(l[static_cast<std::size_t>(i)], r.at("lengthscale"));
      }
    }
    c.residual.hyper.signal_var = r.number("signal_var", c.residual.hyper.signal_var);
    c.residual.hyper.noise_var = r.number("noise_var", c.residual.hyper.noise_var);
    c.residual.window = r.integer("window", c.residual.window);
    c.residual.min_samples = r.integer("min_samples", c.residual.min_samples);
    r.finish();
  }
  c.policy_path = f.string("policy", c.policy_path);
  f.finish();
  return c;
}

json controller_json(const ControllerConfig& c) {
  const auto& m = c.mpc;
  json ls = json::array();
  for (Eigen::Index i = 0; i < c.residual.hyper.lengthscale.size(); ++i) ls.push_back(c.residual.hyper.lengthscale[i]);
  return {{"type", c.type},
          {"period_steps", c.period_steps},
          {"pd", {{"kp_pos", c.pd.kp_pos}, {"kd_vel", c.pd.kd_vel}, {"kp_att", c.pd.kp_att}, {"kd_rate", c.pd.kd_rate}}},
          {"mpc",
           {{"horizon", m.horizon},
            {"dt", m.dt},
            {"q_pos", m.q_pos},
            {"q_att", m.q_att},
            {"q_vel", m.q_vel},
            {"q_rate", m.q_rate},
            {"r_u", m.r_u},
            {"max_iters", m.max_iters},
            {"tol", m.tol},
            {"qp_iters", m.qp_iters}}},
          {"model_mass_scale", c.model_mass_scale},
          {"observer_gain", c.observer_gain},
          {"residual",
           {{"lengthscale", ls},
            {"signal_var", c.residual.hyper.signal_var},
            {"noise_var", c.residual.hyper.noise_var},
            {"window", c.residual.window},
            {"min_samples", c.residual.min_samples}}},
          {"policy", c.policy_path}};
}

PlanConfig read_plan(const json& j, const std::string& path) {
  Fields f(j, path);
  PlanConfig p;
  p.type = f.string("type", p.type);
  if (p.type != "setpoint" && p.type != "inspection" && p.type != "docking") {
    fail(f.at("type"), "expected setpoint, inspection or docking");
  }
  if (f.has("setpoint")) p.setpoint = read_setpoint(f.raw("setpoint"), f.at("setpoint"));
  if (f.has("inspection")) {
    Fields g(f.raw("inspection"), f.at("inspection"));
    auto& in = p.inspection;
    in.target_center = g.vec3("target_center", in.target_center);
    in.target_radius = g.number("target_radius", in.target_radius);
    in.n_waypoints = g.integer("n_waypoints", in.n_waypoints);
    in.standoff = g.number("standoff", in.standoff);
    const std::string mode = g.string("attitude_mode", "point_at_target");
    if (mode == "point_at_target") {
      in.attitude_mode = AttitudeMode::PointAtTarget;
    } else if (mode == "fixed") {
      in.attitude_mode = AttitudeMode::Fixed;
    } else {
      fail(g.at("attitude_mode"), "expected point_at_target or fixed");
    }
    in.plane_normal = g.vec3("plane_normal", in.plane_normal);
    in.dwell = g.number("dwell", in.dwell);
    in.transit_speed = g.number("transit_speed", in.transit_speed);
    g.finish();
  }
  if (f.has("docking")) {
    Fields g(f.raw("docking"), f.at("docking"));
    auto& d = p.docking;
    if (g.has("pre_dock")) d.pre_dock = read_setpoint(g.raw("pre_dock"), g.at("pre_dock"));
    if (g.has("dock")) d.dock = read_setpoint(g.raw("dock"), g.at("dock"));
    d.approach_speed = g.number("approach_speed", d.approach_speed);
    d.transit_speed = g.number("transit_speed", d.transit_speed);
    d.turn_rate = g.number("turn_rate", d.turn_rate);
    d.gate_position_tol = g.number("gate_position_tol", d.gate_position_tol);
    d.gate_attitude_tol = g.number("gate_attitude_tol", d.gate_attitude_tol);
    d.gate_hold = g.number("gate_hold", d.gate_hold);
    g.finish();
  }
  f.finish();
  return p;
}

json plan_json(const PlanConfig& p) {
  const auto& in = p.inspection;
  const auto& d = p.docking;
  return {{"type", p.type},
          {"setpoint", setpoint_json(p.setpoint)},
          {"inspection",
           {{"target_center", to_json(in.target_center)},
            {"target_radius", in.target_radius},
            {"n_waypoints", in.n_waypoints},
            {"standoff", in.standoff},
            {"attitude_mode", in.attitude_mode == AttitudeMode::PointAtTarget ? "point_at_target" : "fixed"},
            {"plane_normal", to_json(in.plane_normal)},
            {"dwell", in.dwell},
            {"transit_speed", in.transit_speed}}},
          {"docking",
           {{"pre_dock", setpoint_json(d.pre_dock)},
            {"dock", setpoint_json(d.dock)},
            {"approach_speed", d.approach_speed},
            {"transit_speed", d.transit_speed},
            {"turn_rate", d.turn_rate},
            {"gate_position_tol", d.gate_position_tol},
            {"gate_attitude_tol", d.gate_attitude_tol},
            {"gate_hold", d.gate_hold}}}};
}

ContactConfig read_contact(const json& j, const std::string& path) {
  Fields f(j, path);
  ContactConfig c;
  c.enabled = f.boolean("enabled", c.enabled);
  c.model.body_shape.radius = f.number("body_radius", c.model.body_shape.radius);
  c.model.body_shape.center = f.vec3("body_center", c.model.body_shape.center);
  c.model.stiffness = f.number("stiffness", c.model.stiffness);
  c.model.damping = f.number("damping", c.model.damping);
  c.max_force = f.number("max_force", c.max_force);
  if (f.has("shapes")) {
    const json& shapes = f.raw("shapes");
    if (!shapes.is_array()) fail(f.at("shapes"), "expected an array");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      const std::string p = f.at("shapes") + "[" + std::to_string(i) + "]";
      Fields s(shapes[i], p);
      const std::string type = s.string("type", "");
      if (type == "plane") {
        c.model.world.emplace_back(Plane{s.vec3("normal", Vec3::UnitZ()), s.number("offset", 0.0)});
      } else if (type == "sphere") {
        c.model.world.emplace_back(Sphere{s.number("radius", 0.15), s.vec3("center", Vec3::Zero())});
      } else if (type == "box") {
        c.model.world.emplace_back(Box{s.vec3("half_extents", Vec3::Constant(0.5)), s.vec3("center", Vec3::Zero()),
                                       s.quat("attitude", Quat(1, 0, 0, 0))});
      } else {
        fail(s.at("type"), "expected plane, sphere or box");
      }
      s.finish();
    }
  }
  if (f.has("settle")) {
    Fields s(f.raw("settle"), f.at("settle"));
    c.settle.position = s.number("position", c.settle.position);
    c.settle.velocity = s.number("velocity", c.settle.velocity);
    c.settle.duration = s.number("duration", c.settle.duration);
    s.finish();
  }
  f.finish();
  return c;
}

json contact_json(const ContactConfig& c) {
  json shapes = json::array();
  for (const auto& s : c.model.world) {
    if (const auto* p = std::get_if<Plane>(&s)) {
      shapes.push_back({{"type", "plane"}, {"normal", to_json(p->normal)}, {"offset", p->offset}});
    } else if (const auto* sp = std::get_if<Sphere>(&s)) {
      shapes.push_back({{"type", "sphere"}, {"radius", sp->radius}, {"center", to_json(sp->center)}});
    } else if (const auto* b = std::get_if<Box>(&s)) {
      shapes.push_back({{"type", "box"},
                        {"half_extents", to_json(b->half_extents)},
                        {"center", to_json(b->center)},
                        {"attitude", to_json(b->attitude)}});
    }
  }
  return {{"enabled", c.enabled},
          {"body_radius", c.model.body_shape.radius},
          {"body_center", to_json(c.model.body_shape.center)},
          {"stiffness", c.model.stiffness},
          {"damping", c.model.damping},
          {"max_force", c.max_force},
          {"shapes", shapes},
          {"settle",
           {{"position", c.settle.position}, {"velocity", c.settle.velocity}, {"duration", c.settle.duration}}}};
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  return 1 + static_cast<std::size_t>(
                 std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(std::min(byte, text.size())), '\n'));
}

}  // namespace

InspectionPlan InspectionConfig::build() const {
  InspectionPlan plan =
      plan_inspection(target_center, target_radius, n_waypoints, standoff, attitude_mode, plane_normal);
  plan.dwell = dwell;
  plan.transit_speed = transit_speed;
  return plan;
}

void ScenarioConfig::validate() const {
  if (schema != kSchemaVersion) fail("schema", "unsupported version " + std::to_string(schema));
  try {
    body.validate();
  } catch (const ConfigError& e) {
    fail("body", e.what());
  }
  if (!initial_state.all_finite()) fail("initial_state", "must be finite");
  if (std::abs(initial_state.attitude.norm() - 1.0) > 1e-9) fail("initial_state.attitude", "must be unit length");
  if (thrusters.count() == 0) fail("thrusters", "need at least one thruster");
  for (std::size_t i = 0; i < faults.size(); ++i) {
    const std::string p = "faults[" + std::to_string(i) + "]";
    const auto& f = faults[i];
    if (f.thruster < 0 || f.thruster >= thrusters.count()) {
      fail(p + ".thruster", "index " + std::to_string(f.thruster) + " out of range for " +
                                std::to_string(thrusters.count()) + " thrusters");
    }
    if (!(f.t_on < f.t_off)) fail(p, "t_on must be < t_off");
    try {
      validate_fault(f.model, thrusters.u_max()[f.thruster]);
    } catch (const ConfigError& e) {
      fail(p, e.what());
    }
  }
  for (std::size_t i = 0; i < disturbances.size(); ++i) {
    try {
      validate_disturbance(disturbances[i]);
    } catch (const Error& e) {
      fail("disturbances[" + std::to_string(i) + "]", e.what());
    }
  }
  if (controller.period_steps < 1) fail("controller.period_steps", "must be >= 1");
  if (!(controller.model_mass_scale > 0.0)) fail("controller.model_mass_scale", "must be > 0");
  if (!(controller.observer_gain >= 0.0 && controller.observer_gain <= 1.0)) {
    fail("controller.observer_gain", "must lie in [0, 1]");
  }
  try {
    controller.pd.validate();
    controller.mpc.validate();
  } catch (const ConfigError& e) {
    fail("controller", e.what());
  }
  if (controller.residual.hyper.lengthscale.size() != 6 || !(controller.residual.hyper.lengthscale.array() > 0).all() ||
      !(controller.residual.hyper.signal_var > 0) || !(controller.residual.hyper.noise_var >= 0) ||
      controller.residual.window < 1 || controller.residual.min_samples < 1) {
    fail("controller.residual", "need 6 positive lengthscales, signal_var > 0, noise_var >= 0, window/min_samples >= 1");
  }
  if (controller.type == "policy" && controller.policy_path.empty()) fail("controller.policy", "checkpoint path required");
  try {
    if (plan.type == "inspection") plan.inspection.build().validate();
    if (plan.type == "docking") plan.docking.validate();
  } catch (const Error& e) {
    fail("plan", e.what());
  }
  if (std::abs(plan.setpoint.attitude.norm() - 1.0) > 1e-9) fail("plan.setpoint.attitude", "must be unit length");
  if (contact.enabled) {
    if (!(contact.model.stiffness > 0.0) || !(contact.model.damping >= 0.0)) {
      fail("contact", "need stiffness > 0 and damping >= 0");
    }
    if (!(contact.model.body_shape.radius > 0.0)) fail("contact.body_radius", "must be > 0");
    try {
      validate_shapes(contact.model.body_shape, contact.model.world);
    } catch (const ConfigError& e) {
      fail("contact.shapes", e.what());
    }
    if (!(contact.settle.position > 0) || !(contact.settle.velocity > 0) || !(contact.settle.duration >= 0)) {
      fail("contact.settle", "tolerances must be > 0");
    }
  }
  if (!(contact.max_force > 0.0)) fail("contact.max_force", "must be > 0");
  if (!(dt > 0.0) || dt > kMaxDt) fail("dt", "must lie in (0, 0.1]");
  if (!(duration >= 0.0)) fail("duration", "must be >= 0");
}

ScenarioConfig load_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::ostringstream os;
    os << "config parse error at line " << line_of(text, e.byte) << ": " << e.what();
    throw ConfigError(os.str());
  }
  ScenarioConfig cfg;
  try {
    Fields f(j, "");
    cfg.schema = f.integer("schema", -1);
    if (cfg.schema != kSchemaVersion) fail("schema", "expected " + std::to_string(kSchemaVersion));
    cfg.name = f.string("name", cfg.name);
    cfg.seed = f.has("seed") ? f.raw("seed").get<std::uint64_t>() : 0;
    cfg.dt = f.number("dt", cfg.dt);
    cfg.duration = f.number("duration", cfg.duration);
    cfg.log_enabled = f.boolean("log", cfg.log_enabled);
    if (f.has("body")) cfg.body = read_body(f.raw("body"), "body");
    if (f.has("initial_state")) {
      const Setpoint s = read_setpoint(f.raw("initial_state"), "initial_state");
      cfg.initial_state = State{s.position, s.attitude, s.velocity, s.angular_velocity};
    }
    if (f.has("thrusters")) cfg.thrusters = read_thrusters(f.raw("thrusters"), "thrusters");
    // GP fault maps drawn at load come from their own stream of the seed.
    Rng fault_rng = Rng(cfg.seed).split(7);
    if (f.has("faults")) {
      const json& fs = f.raw("faults");
      if (!fs.is_array()) fail("faults", "expected an array");
      for (std::size_t i = 0; i < fs.size(); ++i) {
        cfg.faults.push_back(read_fault(fs[i], "faults[" + std::to_string(i) + "]", cfg.thrusters, fault_rng));
      }
    }
    if (f.has("disturbances")) {
      const json& ds = f.raw("disturbances");
      if (!ds.is_array()) fail("disturbances", "expected an array");
      for (std::size_t i = 0; i < ds.size(); ++i) {
        cfg.disturbances.push_back(read_disturbance(ds[i], "disturbances[" + std::to_string(i) + "]"));
      }
    }
    if (f.has("controller")) cfg.controller = read_controller(f.raw("controller"), "controller");
    if (f.has("plan")) cfg.plan = read_plan(f.raw("plan"), "plan");
    if (f.has("contact")) cfg.contact = read_contact(f.raw("contact"), "contact");
    f.finish();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ScenarioConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_config(ss.str());
}

std::string serialize_config(const ScenarioConfig& cfg, int indent) {
  json faults = json::array(), dist = json::array();
  for (const auto& f : cfg.faults) faults.push_back(fault_json(f));
  for (const auto& d : cfg.disturbances) dist.push_back(disturbance_json(d));
  const json j = {{"schema", cfg.schema},
                  {"name", cfg.name},
                  {"seed", cfg.seed},
                  {"dt", cfg.dt},
                  {"duration", cfg.duration},
                  {"log", cfg.log_enabled},
                  {"body", body_json(cfg.body)},
                  {"initial_state", setpoint_json(Setpoint{cfg.initial_state.position, cfg.initial_state.attitude,
                                                           cfg.initial_state.velocity,
                                                           cfg.initial_state.angular_velocity})},
                  {"thrusters", thrusters_json(cfg.thrusters)},
                  {"faults", faults},
                  {"disturbances", dist},
                  {"controller", controller_json(cfg.controller)},
                  {"plan", plan_json(cfg.plan)},
                  {"contact", contact_json(cfg.contact)}};
  return j.dump(indent);
}

}  // namespace ffsim
