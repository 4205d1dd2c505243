#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ffsim/config.hpp"

namespace ffsim {

/// One row per physics step. Row k covers [k dt, (k + 1) dt): `t` is the end
/// of the step and `state` the state there; commands, wrenches and the stage
/// are the ones applied during the step; the setpoint and the error columns
/// are evaluated at `t`.
struct StepLog {
  int step = 0;
  double t = 0.0;
  State state;
  Eigen::VectorXd u_dem;
  Eigen::VectorXd u_act;
  Wrench wrench;       // thrust + disturbance, body frame
  Wrench disturbance;  // body frame
  double contact_force = 0.0;  // |total contact force|, N
  int n_contacts = 0;          // contacts with a positive impulse
  Setpoint setpoint;
  double lateral_error = 0.0;
  double goal_position_error = 0.0;
  double goal_attitude_error = 0.0;
  double speed = 0.0;
  int stage = -1;  // DockingStage, or -1 without a docking plan
  std::uint64_t fault_mask = 0;
  int ctrl_iterations = 0;
  double ctrl_cost = 0.0;
  int ctrl_fallback = 0;

  bool operator==(const StepLog&) const = default;
};

struct EpisodeSummary {
  int steps = 0;
  double duration = 0.0;
  double mean_lateral_error = 0.0;
  double max_lateral_error = 0.0;
  double mean_control_effort = 0.0;
  ContactRecord contact;
  double final_position_error = 0.0;
  double final_attitude_error = 0.0;
  bool rendezvous = false;       // docking gate reached
  bool docked = false;           // contact settled
  bool bounded_contact = false;  // peak contact force within contact.max_force

  bool operator==(const EpisodeSummary&) const = default;
};

/// Recomputes the summary from the rows alone.
EpisodeSummary summarize(const std::vector<StepLog>& rows, const ScenarioConfig& cfg);

/// Field-wise comparison with an absolute tolerance on the real-valued fields.
bool summaries_match(const EpisodeSummary& a, const EpisodeSummary& b, double tol = 1e-12);

/// pd / mpc / gp_mpc / policy from the controller section.
std::unique_ptr<Controller> make_controller(const ScenarioConfig& cfg);

class Episode {
 public:
  /// Hook run before the physics of every step; may add to the wrench.
  using PreStepHook = std::function<void(const State& state, double t, Wrench& extra)>;
  using PostStepHook = std::function<void(const StepLog& row)>;

  explicit Episode(ScenarioConfig cfg, std::unique_ptr<Controller> controller = nullptr);

  int total_steps() const { return total_steps_; }
  bool finished() const { return static_cast<int>(rows_.size()) >= total_steps_; }
  /// Advances one physics step. Errors are rethrown with the step index; the
  /// rows so far stay available.
  const StepLog& step();
  void run();

  const std::vector<StepLog>& log() const { return rows_; }
  const State& state() const { return state_; }
  const ContactRecord& contact_record() const { return record_; }
  EpisodeSummary summary() const { return summarize(rows_, cfg_); }
  const ScenarioConfig& config() const { return cfg_; }

  void add_pre_step_hook(PreStepHook hook) { pre_hooks_.push_back(std::move(hook)); }
  void add_post_step_hook(PostStepHook hook) { post_hooks_.push_back(std::move(hook)); }

 private:
  StepLog advance();
  Setpoint reference_at(double t) const;

  ScenarioConfig cfg_;
  std::unique_ptr<Controller> controller_;
  std::optional<InspectionPlan> inspection_;
  std::optional<DockingSupervisor> docking_;
  State state_;
  Rng fault_rng_;
  Rng disturbance_rng_;
  Eigen::VectorXd u_hold_;
  ControlDiagnostics last_diag_;
  Eigen::VectorXd warm_impulses_;
  ContactRecord record_;
  std::vector<StepLog> rows_;
  std::vector<PreStepHook> pre_hooks_;
  std::vector<PostStepHook> post_hooks_;
  int total_steps_ = 0;
};

struct EpisodeResult {
  std::vector<StepLog> log;
  EpisodeSummary summary;
};

EpisodeResult run_episode(const ScenarioConfig& cfg);

/// Column names of the CSV log for `n_thrusters`.
std::vector<std::string> log_columns(int n_thrusters);

/// Line 1: "# " + JSON header with the resolved config. Line 2: column names.
/// Then one row per step, numbers printed with 17 significant digits.
void write_log(std::ostream& out, const ScenarioConfig& cfg, const std::vector<StepLog>& rows);
void write_log_file(const std::string& path, const ScenarioConfig& cfg, const std::vector<StepLog>& rows);

struct ParsedLog {
  ScenarioConfig config;
  std::vector<StepLog> rows;
};

/// Throws ConfigError on malformed input.
ParsedLog read_log(std::istream& in);
ParsedLog read_log_file(const std::string& path);

std::string summary_to_json(const EpisodeSummary& s, int indent = 2);
EpisodeSummary summary_from_json(const std::string& text);

}  // namespace ffsim
