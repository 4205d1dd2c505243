#include "ffsim/sim.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ffsim/error.hpp"
#include "ffsim/policy.hpp"

namespace ffsim {

using nlohmann::json;

namespace {

[[noreturn]] void rethrow_at_step(const Error& e, int step) {
  const std::string msg = "step " + std::to_string(step) + ": " + e.what();
  switch (e.kind()) {
    case ErrorKind::InvalidInput: throw InvalidInputError(msg);
    case ErrorKind::Config: throw ConfigError(msg);
    case ErrorKind::Numerical: throw NumericalError(msg);
    case ErrorKind::Verification: throw VerificationError(msg);
  }
  throw NumericalError(msg);
}

double lateral_distance(const Vec3& position, const Setpoint& ref) {
  const Vec3 e = position - ref.position;
  const Vec3 v = quat_to_rotation(ref.attitude) * ref.velocity;
  if (v.norm() <= 1e-12) return e.norm();
  const Vec3 d = v.normalized();
  return (e - e.dot(d) * d).norm();
}

}  // namespace

std::unique_ptr<Controller> make_controller(const ScenarioConfig& cfg) {
  const auto& c = cfg.controller;
  BodyParams model = cfg.body;
  model.mass *= c.model_mass_scale;
  if (c.type == "pd") return std::make_unique<PdController>(cfg.thrusters, c.pd);
  if (c.type == "mpc") return std::make_unique<MpcController>(cfg.thrusters, model, c.mpc, c.pd, std::nullopt,
                                                                   c.observer_gain);
  if (c.type == "gp_mpc") return std::make_unique<MpcController>(cfg.thrusters, model, c.mpc, c.pd, c.residual,
                                                                      c.observer_gain);
  if (c.type == "policy") return load_policy_controller(c.policy_path, cfg.thrusters);
  throw ConfigError("controller.type: unknown controller \"" + c.type + "\"");
}

Episode::Episode(ScenarioConfig cfg, std::unique_ptr<Controller> controller)
    : cfg_(std::move(cfg)),
      controller_(std::move(controller)),
      state_(cfg_.initial_state),
      fault_rng_(Rng(cfg_.seed).split(1)),
      disturbance_rng_(Rng(cfg_.seed).split(2)) {
  cfg_.validate();
  if (!controller_) controller_ = make_controller(cfg_);
  if (cfg_.plan.type == "inspection") inspection_ = cfg_.plan.inspection.build();
  if (cfg_.plan.type == "docking") docking_.emplace(cfg_.plan.docking);
  u_hold_ = Eigen::VectorXd::Zero(cfg_.thrusters.count());
  total_steps_ = static_cast<int>(std::llround(cfg_.duration / cfg_.dt));
}

Setpoint Episode::reference_at(double t) const {
  if (inspection_) return reference_trajectory(*inspection_, t);
  if (docking_) return docking_->reference(t);
  return cfg_.plan.setpoint;
}

StepLog Episode::advance() {
  const int k = static_cast<int>(rows_.size());
  const double dt = cfg_.dt;
  const double t = k * dt;
  const double t_next = (k + 1) * dt;

  StepLog row;
  row.step = k;
  row.t = t_next;
  if (docking_) row.stage = static_cast<int>(docking_->update(state_, t, record_.settled).stage);

  if (k % cfg_.controller.period_steps == 0) {
    const ReferenceFn ref = [this](double tt) { return reference_at(tt); };
    ControlOutput out = controller_->compute(state_, ref, t);
    u_hold_ = out.u.cwiseMax(0.0).cwiseMin(cfg_.thrusters.u_max());
    last_diag_ = std::move(out.diagnostics);
  }
  row.u_dem = u_hold_;
  row.u_act = apply_faults(cfg_.thrusters, cfg_.faults, u_hold_, t, fault_rng_);
  row.fault_mask = active_fault_mask(cfg_.faults, t);
  row.ctrl_iterations = last_diag_.iterations;
  row.ctrl_cost = last_diag_.cost;
  row.ctrl_fallback = last_diag_.fallback ? 1 : 0;

  for (const auto& d : cfg_.disturbances) row.disturbance += sample_disturbance(d, state_, t, disturbance_rng_);
  for (const auto& hook : pre_hooks_) hook(state_, t, row.disturbance);
  row.wrench = mix(cfg_.thrusters, row.u_act) + row.disturbance;

  State start = state_;
  if (cfg_.contact.enabled) {
    const ContactStep cs = resolve_contacts(cfg_.contact.model, cfg_.body, state_, row.wrench, dt, warm_impulses_);
    warm_impulses_ = cs.result.impulses;
    row.n_contacts = static_cast<int>((cs.result.impulses.array() > 0.0).count());
    row.contact_force = cs.result.total_wrench.force.norm();
    start = apply_impulses(state_, cfg_.body, cs.result, dt);
  }
  state_ = ffsim::step(start, cfg_.body, row.wrench, dt);
  row.state = state_;

  row.setpoint = reference_at(t_next);
  if (inspection_) {
    row.lateral_error = lateral_error(*inspection_, t_next, state_.position);
  } else {
    row.lateral_error = lateral_distance(state_.position, row.setpoint);
  }
  const Setpoint goal = docking_ ? cfg_.plan.docking.dock : row.setpoint;
  row.goal_position_error = (state_.position - goal.position).norm();
  row.goal_attitude_error = attitude_error(state_.attitude, goal.attitude).norm();
  row.speed = state_.velocity.norm();
  record_ = update_record(record_, row.n_contacts > 0, row.contact_force, row.goal_position_error, row.speed, t_next,
                          cfg_.contact.settle);
  return row;
}

const StepLog& Episode::step() {
  if (finished()) throw InvalidInputError("episode already finished");
  StepLog row;
  try {
    row = advance();
  } catch (const Error& e) {
    rethrow_at_step(e, static_cast<int>(rows_.size()));
  }
  rows_.push_back(std::move(row));
  for (const auto& hook : post_hooks_) hook(rows_.back());
  return rows_.back();
}

void Episode::run() {
  while (!finished()) step();
}

EpisodeResult run_episode(const ScenarioConfig& cfg) {
  Episode ep(cfg);
  ep.run();
  return {ep.log(), ep.summary()};
}

EpisodeSummary summarize(const std::vector<StepLog>& rows, const ScenarioConfig& cfg) {
  EpisodeSummary s;
  s.steps = static_cast<int>(rows.size());
  if (rows.empty()) return s;
  s.duration = rows.back().t;
  std::vector<Eigen::VectorXd> u_log;
  u_log.reserve(rows.size());
  double lat_sum = 0.0;
  for (const auto& r : rows) {
    lat_sum += r.lateral_error;
    s.max_lateral_error = std::max(s.max_lateral_error, r.lateral_error);
    u_log.push_back(r.u_act);
    s.contact = update_record(s.contact, r.n_contacts > 0, r.contact_force, r.goal_position_error, r.speed, r.t,
                              cfg.contact.settle);
    if (r.stage >= static_cast<int>(DockingStage::GateHold)) s.rendezvous = true;
  }
  s.mean_lateral_error = lat_sum / static_cast<double>(rows.size());
  s.mean_control_effort = control_effort(u_log, cfg.dt);
  s.final_position_error = rows.back().goal_position_error;
  s.final_attitude_error = rows.back().goal_attitude_error;
  s.docked = s.contact.settled;
  s.bounded_contact = s.contact.peak_force <= cfg.contact.max_force;
  return s;
}

bool summaries_match(const EpisodeSummary& a, const EpisodeSummary& b, double tol) {
  const auto near = [tol](double x, double y) { return std::abs(x - y) <= tol; };
  const auto near_opt = [&](const std::optional<double>& x, const std::optional<double>& y) {
    return x.has_value() == y.has_value() && (!x || near(*x, *y));
  };
  return a.steps == b.steps && near(a.duration, b.duration) && near(a.mean_lateral_error, b.mean_lateral_error) &&
         near(a.max_lateral_error, b.max_lateral_error) && near(a.mean_control_effort, b.mean_control_effort) &&
         near_opt(a.contact.first_contact_time, b.contact.first_contact_time) &&
         near(a.contact.peak_force, b.contact.peak_force) && a.contact.settled == b.contact.settled &&
         near_opt(a.contact.settle_time, b.contact.settle_time) &&
         near_opt(a.contact.window_start, b.contact.window_start) &&
         near(a.final_position_error, b.final_position_error) &&
         near(a.final_attitude_error, b.final_attitude_error) && a.rendezvous == b.rendezvous &&
         a.docked == b.docked && a.bounded_contact == b.bounded_contact;
}

std::vector<std::string> log_columns(int n_thrusters) {
  std::vector<std::string> c = {"t",  "step", "px", "py", "pz", "qw", "qx", "qy", "qz",
                                "vx", "vy",   "vz", "wx", "wy", "wz"};
  for (int i = 0; i < n_thrusters; ++i) c.push_back("u_dem_" + std::to_string(i));
  for (int i = 0; i < n_thrusters; ++i) c.push_back("u_act_" + std::to_string(i));
  for (const char* name : {"fx", "fy", "fz", "tx", "ty", "tz", "dist_fx", "dist_fy", "dist_fz", "dist_tx", "dist_ty",
                           "dist_tz", "contact_force", "n_contacts", "sp_px", "sp_py", "sp_pz", "sp_qw", "sp_qx",
                           "sp_qy", "sp_qz", "sp_vx", "sp_vy", "sp_vz", "sp_wx", "sp_wy", "sp_wz", "lateral_error",
                           "goal_position_error", "goal_attitude_error", "speed", "stage", "fault_mask",
                           "ctrl_iterations", "ctrl_cost", "ctrl_fallback"}) {
    c.emplace_back(name);
  }
  return c;
}

namespace {

void put(std::string& line, double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g,", x);
  line += buf;
}

template <typename V>
void put_all(std::string& line, const V& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put(line, v[i]);
}

}  // namespace

void write_log(std::ostream& out, const ScenarioConfig& cfg, const std::vector<StepLog>& rows) {
  const int n = cfg.thrusters.count();
  const json header = {{"schema", kSchemaVersion}, {"config", json::parse(serialize_config(cfg))}};
  out << "# " << header.dump() << '\n';
  const auto cols = log_columns(n);
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  std::string line;
  for (const auto& r : rows) {
    line.clear();
    put(line, r.t);
    line += std::to_string(r.step) + ",";
    put_all(line, r.state.position);
    put_all(line, r.state.attitude);
    put_all(line, r.state.velocity);
    put_all(line, r.state.angular_velocity);
    put_all(line, r.u_dem);
    put_all(line, r.u_act);
    put_all(line, r.wrench.force);
    put_all(line, r.wrench.torque);
    put_all(line, r.disturbance.force);
    put_all(line, r.disturbance.torque);
    put(line, r.contact_force);
    line += std::to_string(r.n_contacts) + ",";
    put_all(line, r.setpoint.position);
    put_all(line, r.setpoint.attitude);
    put_all(line, r.setpoint.velocity);
    put_all(line, r.setpoint.angular_velocity);
    put(line, r.lateral_error);
    put(line, r.goal_position_error);
    put(line, r.goal_attitude_error);
    put(line, r.speed);
    line += std::to_string(r.stage) + ",";
    line += std::to_string(r.fault_mask) + ",";
    line += std::to_string(r.ctrl_iterations) + ",";
    put(line, r.ctrl_cost);
    line += std::to_string(r.ctrl_fallback);
    out << line << '\n';
  }
}

void write_log_file(const std::string& path, const ScenarioConfig& cfg, const std::vector<StepLog>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write log file " + path);
  write_log(out, cfg, rows);
  if (!out) throw ConfigError("error while writing " + path);
}

namespace {

class RowReader {
 public:
  RowReader(const std::string& line, int line_no) : line_no_(line_no) {
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      fields_.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  std::size_t size() const { return fields_.size(); }

  double real() {
    const std::string& f = next();
    char* end = nullptr;
    const double x = std::strtod(f.c_str(), &end);
    if (f.empty() || end != f.c_str() + f.size()) bad(f);
    return x;
  }
  long long integer() {
    const std::string& f = next();
    char* end = nullptr;
    const long long x = std::strtoll(f.c_str(), &end, 10);
    if (f.empty() || end != f.c_str() + f.size()) bad(f);
    return x;
  }
  std::uint64_t unsigned_integer() {
    const std::string& f = next();
    char* end = nullptr;
    const unsigned long long x = std::strtoull(f.c_str(), &end, 10);
    if (f.empty() || end != f.c_str() + f.size()) bad(f);
    return x;
  }
  template <typename V>
  void fill(V& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = real();
  }

 private:
  const std::string& next() {
    if (pos_ >= fields_.size()) throw ConfigError("log line " + std::to_string(line_no_) + ": too few columns");
    return fields_[pos_++];
  }
  [[noreturn]] void bad(const std::string& f) const {
    throw ConfigError("log line " + std::to_string(line_no_) + ": cannot parse \"" + f + "\"");
  }

  std::vector<std::string> fields_;
  std::size_t pos_ = 0;
  int line_no_;
};

}  // namespace

ParsedLog read_log(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw ConfigError("log: missing JSON header line");
  ParsedLog out;
  try {
    const json header = json::parse(line.substr(2));
    if (header.at("schema").get<int>() != kSchemaVersion) throw ConfigError("log: unsupported schema");
    out.config = load_config(header.at("config").dump());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("log header: ") + e.what());
  }
  const int n = out.config.thrusters.count();
  const auto cols = log_columns(n);
  if (!std::getline(in, line)) throw ConfigError("log: missing column header");
  std::string expect;
  for (std::size_t i = 0; i < cols.size(); ++i) expect += (i ? "," : "") + cols[i];
  if (line != expect) throw ConfigError("log: column header does not match the schema");
  int line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    RowReader rr(line, line_no);
    if (rr.size() != cols.size()) throw ConfigError("log line " + std::to_string(line_no) + ": wrong column count");
    StepLog r;
    r.t = rr.real();
    r.step = static_cast<int>(rr.integer());
    rr.fill(r.state.position);
    rr.fill(r.state.attitude);
    rr.fill(r.state.velocity);
    rr.fill(r.state.angular_velocity);
    r.u_dem.resize(n);
    r.u_act.resize(n);
    rr.fill(r.u_dem);
    rr.fill(r.u_act);
    rr.fill(r.wrench.force);
    rr.fill(r.wrench.torque);
    rr.fill(r.disturbance.force);
    rr.fill(r.disturbance.torque);
    r.contact_force = rr.real();
    r.n_contacts = static_cast<int>(rr.integer());
    rr.fill(r.setpoint.position);
    rr.fill(r.setpoint.attitude);
    rr.fill(r.setpoint.velocity);
    rr.fill(r.setpoint.angular_velocity);
    r.lateral_error = rr.real();
    r.goal_position_error = rr.real();
    r.goal_attitude_error = rr.real();
    r.speed = rr.real();
    r.stage = static_cast<int>(rr.integer());
    r.fault_mask = rr.unsigned_integer();
    r.ctrl_iterations = static_cast<int>(rr.integer());
    r.ctrl_cost = rr.real();
    r.ctrl_fallback = static_cast<int>(rr.integer());
    out.rows.push_back(std::move(r));
  }
  return out;
}

ParsedLog read_log_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read log file " + path);
  return read_log(in);
}

namespace {

json opt(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string summary_to_json(const EpisodeSummary& s, int indent) {
  const json j = {{"steps", s.steps},
                  {"duration", s.duration},
                  {"mean_lateral_error", s.mean_lateral_error},
                  {"max_lateral_error", s.max_lateral_error},
                  {"mean_control_effort", s.mean_control_effort},
                  {"first_contact_time", opt(s.contact.first_contact_time)},
                  {"peak_contact_force", s.contact.peak_force},
                  {"settled", s.contact.settled},
                  {"settle_time", opt(s.contact.settle_time)},
                  {"settle_window_start", opt(s.contact.window_start)},
                  {"final_position_error", s.final_position_error},
                  {"final_attitude_error", s.final_attitude_error},
                  {"rendezvous_success", s.rendezvous},
                  {"dock_success", s.docked},
                  {"bounded_contact", s.bounded_contact}};
  return j.dump(indent) + "\n";
}

EpisodeSummary summary_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    EpisodeSummary s;
    s.steps = j.at("steps").get<int>();
    s.duration = j.at("duration").get<double>();
    s.mean_lateral_error = j.at("mean_lateral_error").get<double>();
    s.max_lateral_error = j.at("max_lateral_error").get<double>();
    s.mean_control_effort = j.at("mean_control_effort").get<double>();
    s.contact.first_contact_time = opt_from(j.at("first_contact_time"));
    s.contact.peak_force = j.at("peak_contact_force").get<double>();
    s.contact.settled = j.at("settled").get<bool>();
    s.contact.settle_time = opt_from(j.at("settle_time"));
    s.contact.window_start = opt_from(j.at("settle_window_start"));
    s.final_position_error = j.at("final_position_error").get<double>();
    s.final_attitude_error = j.at("final_attitude_error").get<double>();
    s.rendezvous = j.at("rendezvous_success").get<bool>();
    s.docked = j.at("dock_success").get<bool>();
    s.bounded_contact = j.at("bounded_contact").get<bool>();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("summary: ") + e.what());
  }
}

}  // namespace ffsim
