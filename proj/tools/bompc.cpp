// bompc: closed-loop charging simulation and Bayesian-optimization tuning of
// the charging MPC.
//
//   bompc simulate --config run.toml [--out dir] [--force]
//   bompc tune     --config run.toml [--out dir] [--seed n] [--force]
//   bompc eval     --config run.toml --theta best_theta.json [--out dir] [--force]
//
// Exit status: 0 success, 2 configuration or usage error, 3 runtime failure.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "bompc/config.hpp"
#include "bompc/io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace bompc;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kRuntime = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("bompc");
  logger->set_pattern("%^[%l]%$ %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("BOMPC_LOG")) {
    const auto level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off") {
      spdlog::warn("BOMPC_LOG='{}' not recognized; using 'warn'", env);
    } else {
      spdlog::set_level(level);
    }
  }
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json summary_json(const Study& study, std::span<const double> theta, const EpisodeResult& r,
                  const std::vector<std::string>& warnings) {
  json j;
  j["case"] = to_string(study.config.case_kind);
  j["theta"] = std::vector<double>(theta.begin(), theta.end());
  j["G"] = r.objective;
  j["max_violation_v"] = r.max_violation;
  json t = json::object();
  t["0.8"] = optional_number(r.time_to_soc[0]);
  t["0.9"] = optional_number(r.time_to_soc[1]);
  t["0.95"] = optional_number(r.time_to_soc[2]);
  j["time_to_soc_s"] = t;
  j["final_soc"] = r.trajectory.back().z;
  j["steps"] = study.config.steps;
  j["ts_s"] = study.config.ts;
  j["mismatch"] = {{"enabled", study.config.mismatch},
                   {"seed", study.config.mismatch_spec.seed},
                   {"delta", study.config.mismatch_spec.delta}};
  j["failed"] = r.failed;
  if (r.failed) j["failure"] = r.failure;
  j["warnings"] = warnings;
  return j;
}

void prepare_output(const fs::path& dir, const std::vector<std::string>& files, bool force) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory " + dir.string() + ": " + ec.message());
  if (force) return;
  for (const auto& f : files) {
    if (fs::exists(dir / f)) {
      throw UsageError((dir / f).string() + " already exists; choose another --out or pass --force");
    }
  }
}

std::vector<double> read_theta(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const std::exception& e) {
    throw UsageError("theta file " + path.string() + ": " + e.what());
  }
  const json* arr = &j;
  if (j.is_object()) {
    if (!j.contains("theta")) throw UsageError("theta file " + path.string() + ": missing key 'theta'");
    arr = &j["theta"];
  }
  if (!arr->is_array()) throw UsageError("theta file " + path.string() + ": 'theta' must be an array of numbers");
  std::vector<double> theta;
  for (const auto& v : *arr) {
    if (!v.is_number()) throw UsageError("theta file " + path.string() + ": 'theta' must be an array of numbers");
    theta.push_back(v.get<double>());
  }
  return theta;
}

void report_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) spdlog::warn("{}", w);
}

int finish_episode(const Study& study, std::span<const double> theta, const fs::path& out,
                   const std::string& trajectory_name, const std::string& summary_name, bool print) {
  const CaseConfig cc = study.controller(theta);
  report_warnings(cc.warnings);
  const EpisodeResult r = run_episode(study.plant, cc.controller, study.episode);
  write_file_atomic(out / trajectory_name, trajectory_csv(r.trajectory));
  write_file_atomic(out / summary_name, summary_json(study, theta, r, cc.warnings).dump(2) + "\n");
  spdlog::info("G = {:.6g}, max violation = {:.3g} V", r.objective, r.max_violation);
  if (print) {
    json j;
    j["G"] = r.objective;
    j["max_violation_v"] = r.max_violation;
    j["t95_s"] = optional_number(r.time_to_soc[2]);
    std::cout << j.dump() << std::endl;
  }
  if (r.failed) {
    spdlog::error("episode failed: {}", r.failure);
    return kRuntime;
  }
  return kOk;
}

Study load_study(const fs::path& config_path, const std::optional<fs::path>& out, std::optional<std::uint64_t> seed) {
  RunConfig cfg = load_run_config(config_path);
  if (out) cfg.out = *out;
  if (seed) cfg.bo_seed = *seed;
  Study study = make_study(cfg);
  report_warnings(study.plant.warnings());
  return study;
}

int cmd_simulate(const Study& study, bool force) {
  prepare_output(study.config.out, {"trajectory.csv", "summary.json"}, force);
  return finish_episode(study, study.theta0, study.config.out, "trajectory.csv", "summary.json", false);
}

int cmd_eval(const Study& study, const fs::path& theta_path, bool force) {
  const std::vector<double> theta = read_theta(theta_path);
  const std::size_t want = study.domain ? study.domain->dim() : 0;
  if (theta.size() != want) {
    throw UsageError("theta has " + std::to_string(theta.size()) + " components; case '" +
                     to_string(study.config.case_kind) + "' expects " + std::to_string(want));
  }
  prepare_output(study.config.out, {"trajectory.csv", "summary.json"}, force);
  return finish_episode(study, theta, study.config.out, "trajectory.csv", "summary.json", true);
}

int cmd_tune(const Study& study, bool force) {
  if (!study.domain) throw UsageError("tune needs case = \"backoff\" or \"model\"");
  const fs::path out = study.config.out;
  prepare_output(out, {"bo_trace.jsonl", "best_theta.json", "trajectory_best.csv", "summary_best.json"}, force);

  auto objective = [&](std::span<const double> theta) { return study.objective(theta); };
  auto observer = [&](const BoRecord& r) {
    spdlog::info("n={} g={:.8g} best={:.8g}{}", r.n, r.g, r.best_g, r.failed ? " (failed)" : "");
  };
  const BoTrace trace = run_bo(objective, *study.domain, study.bo_settings(), observer);
  const BoRecord& best = trace.best();
  write_file_atomic(out / "bo_trace.jsonl", bo_trace_jsonl(trace));

  json bt;
  bt["case"] = to_string(study.config.case_kind);
  bt["theta"] = best.theta;
  bt["g"] = best.g;
  bt["n"] = best.n;
  bt["bo_seed"] = trace.seed;
  write_file_atomic(out / "best_theta.json", bt.dump(2) + "\n");
  return finish_episode(study, best.theta, out, "trajectory_best.csv", "summary_best.json", false);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Bayesian-optimization tuning of a battery fast-charging MPC"};
  app.require_subcommand(1);

  fs::path config;
  std::optional<fs::path> out;
  std::optional<std::uint64_t> seed;
  fs::path theta;
  bool force = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "run configuration file")->required();
    sub->add_option("--out", out, "output directory (overrides the config's 'out')");
    sub->add_option("--seed", seed, "BO seed (overrides the config's 'bo.seed')");
    sub->add_flag("--force", force, "overwrite existing output files");
  };
  auto* simulate = app.add_subcommand("simulate", "run one closed-loop episode at the untuned parameters");
  auto* tune = app.add_subcommand("tune", "tune the case's parameters by Bayesian optimization");
  auto* eval = app.add_subcommand("eval", "run one episode at the parameters in a theta file");
  add_common(simulate);
  add_common(tune);
  add_common(eval);
  eval->add_option("--theta", theta, "JSON file with a 'theta' array (or a bare array)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    const Study study = load_study(config, out, seed);
    if (simulate->parsed()) return cmd_simulate(study, force);
    if (tune->parsed()) return cmd_tune(study, force);
    return cmd_eval(study, theta, force);
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const IngestionError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    // Model, controller and domain validation.
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntime;
  }
}
