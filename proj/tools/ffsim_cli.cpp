#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ffsim/config.hpp"
#include "ffsim/error.hpp"
#include "ffsim/rl.hpp"
#include "ffsim/scenarios.hpp"
#include "ffsim/sim.hpp"
#include "ffsim/vec_env.hpp"

namespace fs = std::filesystem;
using namespace ffsim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitVerification = 3;

std::string default_out_dir() {
  const char* env = std::getenv("FFSIM_OUT_DIR");
  return env && *env ? env : "out";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("error while writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
  return fs::path(dir);
}

void write_episode(const fs::path& out, const ScenarioConfig& cfg, const EpisodeResult& r) {
  write_log_file((out / "log.csv").string(), cfg, r.log);
  write_text(out / "summary.json", summary_to_json(r.summary) + "\n");
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<int> parse_env_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int n = 0;
    try {
      n = std::stoi(item, &used);
    } catch (const std::exception&) {
      throw InvalidInputError("--envs: cannot parse \"" + item + "\"");
    }
    if (used != item.size()) throw InvalidInputError("--envs: cannot parse \"" + item + "\"");
    if (n < 1) throw InvalidInputError("--envs: counts must be >= 1");
    out.push_back(n);
  }
  if (out.empty()) throw InvalidInputError("--envs: empty list");
  return out;
}

int run_simulate(const std::string& config_path, std::uint64_t seed, bool seed_set, const std::string& out_dir) {
  ScenarioConfig cfg = load_config_file(config_path);
  if (seed_set) cfg.seed = seed;
  cfg.validate();
  const fs::path out = prepare_out(out_dir);
  std::cout << "simulate: " << cfg.name << "\n";
  const EpisodeResult r = run_episode(cfg);
  write_episode(out, cfg, r);
  std::cout << "steps " << r.summary.steps << "  mean_lateral_error " << fmt("%.6g", r.summary.mean_lateral_error)
            << "  mean_control_effort " << fmt("%.6g", r.summary.mean_control_effort) << "  final_position_error "
            << fmt("%.6g", r.summary.final_position_error) << "\n";
  return kExitOk;
}

int run_inspect(const std::string& mode_text, std::uint64_t seed, const std::string& out_dir) {
  std::string mode_name = mode_text;
  for (char& c : mode_name) c = c == '-' ? '_' : c;
  const FailureMode mode = parse_failure_mode(mode_name);
  ScenarioConfig cfg = inspection_config(mode);
  cfg.seed = seed;
  const fs::path out = prepare_out(out_dir);
  const EpisodeResult r = run_episode(cfg);
  write_episode(out, cfg, r);
  std::cout << "inspection " << failure_mode_name(mode) << ": mean lateral error "
            << fmt("%.4f", r.summary.mean_lateral_error) << " m, max lateral error "
            << fmt("%.4f", r.summary.max_lateral_error) << " m, mean control effort "
            << fmt("%.4f", r.summary.mean_control_effort) << " N\n";
  return kExitOk;
}

int run_dock(std::uint64_t seed, const std::string& out_dir) {
  const ScenarioConfig cfg = docking_config(seed);
  const fs::path out = prepare_out(out_dir);
  const EpisodeResult r = run_episode(cfg);
  write_episode(out, cfg, r);
  const EpisodeSummary& s = r.summary;
  std::cout << "docking seed " << seed << ": rendezvous " << (s.rendezvous ? "yes" : "no") << ", docked "
            << (s.docked ? "yes" : "no") << ", first contact "
            << (s.contact.first_contact_time ? fmt("%.2f s", *s.contact.first_contact_time) : std::string("none"))
            << ", peak contact force " << fmt("%.3f", s.contact.peak_force) << " N, final position error "
            << fmt("%.4f", s.final_position_error) << " m\n";
  return kExitOk;
}

struct TrainFlags {
  long long total_steps = -1;
  int n_envs = 0;
  int rollout_steps = 0;
  std::string algorithm;
  int threads = 1;
  int eval_episodes = 0;
};

int run_train(const TrainFlags& f, std::uint64_t seed, const std::string& out_dir) {
  TrainConfig cfg;
  cfg.seed = seed;
  if (f.total_steps >= 0) cfg.total_steps = f.total_steps;
  if (f.n_envs > 0) cfg.n_envs = f.n_envs;
  if (f.rollout_steps > 0) cfg.rollout_steps = f.rollout_steps;
  if (!f.algorithm.empty()) cfg.algorithm = f.algorithm;
  if (f.eval_episodes > 0) cfg.eval_episodes = f.eval_episodes;
  cfg.threads = f.threads;
  const fs::path out = prepare_out(out_dir);
  cfg.checkpoint_dir = (out / "checkpoints").string();
  cfg.validate();
  const TrainResult r = train(cfg);
  write_text(out / "curve.csv", curve_csv(r.curve));
  const std::uint64_t es = eval_seed(cfg.seed);
  const EvalResult policy = evaluate_params(cfg, r.params, cfg.eval_episodes, es);
  const EvalResult random = evaluate_random(cfg, cfg.eval_episodes, es);
  nlohmann::json summary = {{"iterations", r.curve.size()},
                            {"env_steps", r.curve.empty() ? 0 : r.curve.back().env_steps},
                            {"policy_mean_final_distance", policy.mean_final_distance},
                            {"policy_mean_return", policy.mean_return},
                            {"random_mean_final_distance", random.mean_final_distance},
                            {"random_mean_return", random.mean_return},
                            {"incidents", r.incidents}};
  write_text(out / "train_summary.json", summary.dump(2) + "\n");
  for (const auto& inc : r.incidents) std::cerr << "warning: " << inc << "\n";
  std::cout << "train: " << r.curve.size() << " iterations, policy final distance "
            << fmt("%.4f", policy.mean_final_distance) << " m, random " << fmt("%.4f", random.mean_final_distance)
            << " m\n";
  return kExitOk;
}

int run_bench(const std::string& envs, int steps, double dt, int warmup, int threads, std::uint64_t seed,
              const std::string& out_dir) {
  BenchOptions opt;
  opt.n_envs = parse_env_list(envs);
  opt.steps = steps;
  opt.dt = dt;
  opt.warmup_episodes = warmup;
  opt.threads = threads;
  opt.seed = seed;
  const fs::path out = prepare_out(out_dir);
  const auto rows = run_benchmark(opt);
  const std::string csv = bench_csv(rows);
  write_text(out / "bench.csv", csv);
  // Timings vary run to run; the simulated batches do not.
  nlohmann::json digest = nlohmann::json::array();
  for (const auto& r : rows) digest.push_back({{"n_envs", r.n_envs}, {"mean_reward", r.mean_reward}});
  write_text(out / "bench_digest.json", digest.dump(2) + "\n");
  std::cout << csv;
  return kExitOk;
}

int run_replay(const std::string& log_path, std::string summary_path) {
  if (summary_path.empty()) summary_path = (fs::path(log_path).parent_path() / "summary.json").string();
  const ParsedLog log = read_log_file(log_path);
  const EpisodeSummary stored = summary_from_json(read_text(summary_path));
  const EpisodeSummary recomputed = summarize(log.rows, log.config);
  if (!summaries_match(recomputed, stored)) {
    std::cerr << "replay: summary mismatch\nstored:\n"
              << summary_to_json(stored) << "\nrecomputed:\n"
              << summary_to_json(recomputed) << "\n";
    return kExitVerification;
  }
  std::cout << "replay: " << log.rows.size() << " rows, summary verified\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Free-flyer simulation, control and learning toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::string out_dir = default_out_dir();
  app.add_option("--seed", seed, "Master seed")->capture_default_str();
  app.add_option("--out", out_dir, "Output directory (default $FFSIM_OUT_DIR or ./out)");

  auto* simulate = app.add_subcommand("simulate", "Run a scenario config");
  std::string config_path;
  simulate->add_option("--config", config_path, "Scenario JSON")->required()->check(CLI::ExistingFile);
  simulate->add_option("--seed", seed, "Master seed");
  simulate->add_option("--out", out_dir, "Output directory");

  auto* inspect = app.add_subcommand("inspect", "Inspection orbit under an actuator condition");
  std::string failure = "nominal";
  inspect->add_option("--failure", failure, "nominal | stuck-off | stuck-on")
      ->check(CLI::IsMember({"nominal", "stuck-off", "stuck-on", "stuck_off", "stuck_on"}))
      ->capture_default_str();
  inspect->add_option("--seed", seed, "Master seed");
  inspect->add_option("--out", out_dir, "Output directory");

  auto* dock = app.add_subcommand("dock", "Docking approach with contact");
  dock->add_option("--seed", seed, "Start-pose seed");
  dock->add_option("--out", out_dir, "Output directory");

  auto* trainc = app.add_subcommand("train", "Train a setpoint policy");
  TrainFlags tf;
  trainc->add_option("--total-steps", tf.total_steps, "Environment steps")->check(CLI::NonNegativeNumber);
  trainc->add_option("--envs", tf.n_envs, "Parallel environments")->check(CLI::PositiveNumber);
  trainc->add_option("--rollout-steps", tf.rollout_steps, "Steps per env per batch")->check(CLI::PositiveNumber);
  trainc->add_option("--algorithm", tf.algorithm, "ppo | vpg")->check(CLI::IsMember({"ppo", "vpg"}));
  trainc->add_option("--threads", tf.threads, "Worker threads (0: all)")->check(CLI::NonNegativeNumber);
  trainc->add_option("--eval-episodes", tf.eval_episodes, "Evaluation episodes")->check(CLI::PositiveNumber);
  trainc->add_option("--seed", seed, "Master seed");
  trainc->add_option("--out", out_dir, "Output directory");

  auto* bench = app.add_subcommand("bench", "Rollout throughput benchmark");
  std::string envs = "1,256";
  int steps = 512;
  double dt = 0.02;
  int warmup = 1;
  int threads = 0;
  bench->add_option("--envs", envs, "Comma-separated env counts; the first is the reference")->capture_default_str();
  bench->add_option("--steps", steps, "Rollout length")->capture_default_str();
  bench->add_option("--dt", dt, "Time step, s")->capture_default_str();
  bench->add_option("--warmup", warmup, "Untimed warmup rollouts")->capture_default_str();
  bench->add_option("--threads", threads, "Worker threads (0: all)")->capture_default_str();
  bench->add_option("--seed", seed, "Master seed");
  bench->add_option("--out", out_dir, "Output directory");

  auto* replay = app.add_subcommand("replay", "Verify a log against its stored summary");
  std::string log_path;
  std::string summary_path;
  replay->add_option("--log", log_path, "Log CSV")->required()->check(CLI::ExistingFile);
  replay->add_option("--summary", summary_path, "Summary JSON (default: summary.json next to the log)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (*simulate) return run_simulate(config_path, seed, simulate->count("--seed") + app.count("--seed") > 0, out_dir);
    if (*inspect) return run_inspect(failure, seed, out_dir);
    if (*dock) return run_dock(seed, out_dir);
    if (*trainc) return run_train(tf, seed, out_dir);
    if (*bench) return run_bench(envs, steps, dt, warmup, threads, seed, out_dir);
    if (*replay) return run_replay(log_path, summary_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::Numerical:
        return kExitNumerical;
      case ErrorKind::Verification:
        return kExitVerification;
      default:
        return kExitUsage;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
