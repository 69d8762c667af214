#pragma once

// Run configuration: a flat `key = value` file (TOML subset) that fully
// determines a simulate/tune/eval run, and the wiring from it to plant,
// controller and tuning domain.
//
//   # comment
//   cell_table = "../data/cell_nmc_synthetic.csv"
//   case = "backoff"          # nominal | backoff | model
//   horizon = 10
//   mismatch.seed = 3
//
// Strings are double-quoted, booleans are true/false, everything else is a
// number. Relative paths are resolved against the config file's directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bompc/bo.hpp"
#include "bompc/ecm.hpp"
#include "bompc/harness.hpp"
#include "bompc/ocp.hpp"

namespace bompc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CaseKind { nominal, backoff, model };

inline const char* to_string(CaseKind c) {
  switch (c) {
    case CaseKind::nominal: return "nominal";
    case CaseKind::backoff: return "backoff";
    case CaseKind::model: return "model";
  }
  return "unknown";
}

struct RunConfig {
  std::filesystem::path cell_table;
  CellConstants cell;
  CaseKind case_kind = CaseKind::nominal;

  double ts = 10.0;
  int steps = 240;
  int horizon = 10;
  double c1 = 1e-3;
  double lambda = 1e4;
  double epsilon = 1e-8;
  double z_init = 0.1;
  double u1_init = 0.0;
  JacobianMode jacobian = JacobianMode::analytic;

  bool mismatch = true;
  MismatchSpec mismatch_spec{.seed = 23};

  int bo_budget = 50;
  int bo_n_init = 5;
  std::uint64_t bo_seed = 1;
  std::optional<double> bo_lower;
  std::optional<double> bo_upper;

  std::filesystem::path out = "out";
};

namespace detail {

struct ConfigValue {
  enum class Kind { string, boolean, number } kind;
  std::string text;
  int line;
};

inline std::string strip_comment(std::string_view s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return std::string(s.substr(0, i));
  }
  return std::string(s);
}

inline std::map<std::string, ConfigValue> parse_key_values(std::istream& in, const std::string& source) {
  std::map<std::string, ConfigValue> kv;
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = strip_comment(raw);
    const auto view = trim(line);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    const auto where = source + ": line " + std::to_string(lineno);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(trim(view.substr(0, eq)));
    const auto value = trim(view.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": missing key");
    if (value.empty()) throw ConfigError(where + ": missing value for '" + key + "'");
    if (kv.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    ConfigValue v{ConfigValue::Kind::number, std::string(value), lineno};
    if (value.front() == '"') {
      if (value.size() < 2 || value.back() != '"') throw ConfigError(where + ": unterminated string for '" + key + "'");
      v = {ConfigValue::Kind::string, std::string(value.substr(1, value.size() - 2)), lineno};
    } else if (value == "true" || value == "false") {
      v.kind = ConfigValue::Kind::boolean;
    }
    kv.emplace(key, std::move(v));
  }
  return kv;
}

}  // namespace detail

/// Parses a run configuration. `base_dir` anchors relative paths. Errors
/// name the offending key.
inline RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir,
                                  const std::string& source = "<config>") {
  auto kv = detail::parse_key_values(in, source);
  RunConfig c;

  std::set<std::string> used;
  auto take = [&](const std::string& key) -> std::optional<detail::ConfigValue> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    used.insert(key);
    return it->second;
  };
  auto number = [&](const std::string& key, double& out) {
    if (auto v = take(key)) {
      double d;
      if (v->kind != detail::ConfigValue::Kind::number || !detail::parse_double(v->text, d)) {
        throw ConfigError(source + ": line " + std::to_string(v->line) + ": " + key + " must be a finite number");
      }
      out = d;
    }
  };
  auto integer = [&](const std::string& key, auto& out) {
    double d = static_cast<double>(out);
    bool present = kv.count(key) > 0;
    number(key, d);
    if (present) {
      if (d != std::floor(d) || d < 0.0 || d > 9.007199254740992e15) {
        throw ConfigError(source + ": " + key + " must be a non-negative integer");
      }
      out = static_cast<std::remove_reference_t<decltype(out)>>(d);
    }
  };
  auto boolean = [&](const std::string& key, bool& out) {
    if (auto v = take(key)) {
      if (v->kind != detail::ConfigValue::Kind::boolean) {
        throw ConfigError(source + ": line " + std::to_string(v->line) + ": " + key + " must be true or false");
      }
      out = v->text == "true";
    }
  };
  auto string = [&](const std::string& key) -> std::optional<std::string> {
    auto v = take(key);
    if (!v) return std::nullopt;
    if (v->kind != detail::ConfigValue::Kind::string) {
      throw ConfigError(source + ": line " + std::to_string(v->line) + ": " + key + " must be a quoted string");
    }
    return v->text;
  };

  auto table = string("cell_table");
  if (!table) throw ConfigError(source + ": cell_table is required");
  c.cell_table = std::filesystem::path(*table).is_absolute() ? std::filesystem::path(*table) : base_dir / *table;

  if (auto s = string("case")) {
    if (*s == "nominal") c.case_kind = CaseKind::nominal;
    else if (*s == "backoff") c.case_kind = CaseKind::backoff;
    else if (*s == "model") c.case_kind = CaseKind::model;
    else throw ConfigError(source + ": case must be one of nominal, backoff, model (got '" + *s + "')");
  }

  number("cell.eta", c.cell.eta);
  number("cell.q", c.cell.q);
  number("cell.i_max", c.cell.i_max);
  number("cell.v_t_min", c.cell.v_t_min);
  number("cell.v_t_max", c.cell.v_t_max);

  number("ts", c.ts);
  integer("steps", c.steps);
  integer("horizon", c.horizon);
  number("c1", c.c1);
  number("lambda", c.lambda);
  number("epsilon", c.epsilon);
  number("z_init", c.z_init);
  number("u1_init", c.u1_init);
  if (auto s = string("solver.jacobian")) {
    if (*s == "analytic") c.jacobian = JacobianMode::analytic;
    else if (*s == "forward_difference") c.jacobian = JacobianMode::forward_difference;
    else throw ConfigError(source + ": solver.jacobian must be analytic or forward_difference");
  }

  boolean("mismatch.enabled", c.mismatch);
  integer("mismatch.seed", c.mismatch_spec.seed);
  number("mismatch.delta", c.mismatch_spec.delta);
  boolean("mismatch.per_knot", c.mismatch_spec.per_knot);
  if (auto s = string("mismatch.params")) {
    c.mismatch_spec.r0 = c.mismatch_spec.r1 = c.mismatch_spec.c1 = false;
    for (auto name : detail::split(*s, ',')) {
      if (name == "r0") c.mismatch_spec.r0 = true;
      else if (name == "r1") c.mismatch_spec.r1 = true;
      else if (name == "c1") c.mismatch_spec.c1 = true;
      else if (!name.empty()) throw ConfigError(source + ": mismatch.params: unknown parameter '" + std::string(name) + "'");
    }
  }

  integer("bo.budget", c.bo_budget);
  integer("bo.n_init", c.bo_n_init);
  integer("bo.seed", c.bo_seed);
  if (kv.count("bo.lower")) { double v = 0; number("bo.lower", v); c.bo_lower = v; }
  if (kv.count("bo.upper")) { double v = 0; number("bo.upper", v); c.bo_upper = v; }

  if (auto s = string("out")) c.out = std::filesystem::path(*s).is_absolute() ? std::filesystem::path(*s) : base_dir / *s;

  for (const auto& [key, v] : kv) {
    if (!used.count(key)) {
      throw ConfigError(source + ": line " + std::to_string(v.line) + ": unknown key '" + key + "'");
    }
  }

  auto positive = [&](const char* key, double v) {
    if (!(v > 0.0)) throw ConfigError(source + ": " + key + " must be positive");
  };
  positive("ts", c.ts);
  if (c.steps < 1) throw ConfigError(source + ": steps must be at least 1");
  if (c.horizon < 1) throw ConfigError(source + ": horizon must be at least 1");
  positive("c1", c.c1);
  positive("lambda", c.lambda);
  if (!(c.epsilon >= 0.0)) throw ConfigError(source + ": epsilon must be non-negative");
  if (!(c.mismatch_spec.delta >= 0.0 && c.mismatch_spec.delta < 1.0)) {
    throw ConfigError(source + ": mismatch.delta must lie in [0, 1)");
  }
  if (c.bo_budget < 1) throw ConfigError(source + ": bo.budget must be at least 1");
  if (c.bo_n_init < 1) throw ConfigError(source + ": bo.n_init must be at least 1");
  if (c.bo_lower && c.bo_upper && !(*c.bo_lower <= *c.bo_upper)) {
    throw ConfigError(source + ": bo.lower must not exceed bo.upper");
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  return parse_run_config(in, path.parent_path(), path.string());
}

/// Everything a run needs, built once from a RunConfig: the plant, the
/// (possibly disturbed) prediction model, the untuned controller, and for
/// the tuning cases the parameter domain and starting point.
struct Study {
  RunConfig config;
  CellParams plant;
  CellParams prediction;
  OcpConfig base;
  std::optional<ParamDomain> domain;
  std::vector<double> theta0;
  EpisodeSettings episode;

  /// Controller for parameter vector `theta` (must be empty for the nominal
  /// case).
  CaseConfig controller(std::span<const double> theta) const {
    switch (config.case_kind) {
      case CaseKind::nominal:
        if (!theta.empty()) throw HarnessError("the nominal case takes no parameters");
        return {base, {}};
      case CaseKind::backoff: return case_backoff_in(theta);
      case CaseKind::model: return case_model(theta, base, *domain);
    }
    throw HarnessError("unknown case");
  }

  EpisodeResult run(std::span<const double> theta) const { return run_episode(plant, controller(theta).controller, episode); }

  /// G(theta); throws when the episode fails so the tuner can penalize it.
  double objective(std::span<const double> theta) const {
    const EpisodeResult r = run(theta);
    if (r.failed) throw HarnessError("episode failed: " + r.failure);
    return r.objective;
  }

  BoSettings bo_settings() const {
    BoSettings s;
    s.budget = config.bo_budget;
    s.n_init = config.bo_n_init;
    s.seed = config.bo_seed;
    s.theta0 = theta0;
    return s;
  }

 private:
  CaseConfig case_backoff_in(std::span<const double> theta) const {
    if (domain->lower == backoff_domain().lower && domain->upper == backoff_domain().upper) {
      return case_backoff(theta, base);
    }
    CaseConfig out{base, {}};
    const auto values = detail::clip_into(theta, *domain, out.warnings);
    out.controller.backoff = Spline(case_knots(), values).with_floor(0.0);
    return out;
  }
};

inline Study make_study(const RunConfig& config) {
  CellParams plant = load_parameter_table(config.cell_table.string(), config.cell);
  CellParams prediction = config.mismatch ? make_mismatch(plant, config.mismatch_spec) : plant;
  OcpConfig base(prediction);
  base.horizon = static_cast<std::size_t>(config.horizon);
  base.lambda = config.lambda;
  base.epsilon = config.epsilon;
  base.ts = config.ts;
  validate(base);

  EpisodeSettings episode;
  episode.steps = config.steps;
  episode.c1 = config.c1;
  episode.x_init = {config.z_init, config.u1_init};
  episode.solver.jacobian = config.jacobian;

  std::optional<ParamDomain> domain;
  std::vector<double> theta0;
  if (config.case_kind != CaseKind::nominal) {
    ParamDomain d = config.case_kind == CaseKind::backoff ? backoff_domain() : model_domain(plant);
    if (config.bo_lower) std::fill(d.lower.begin(), d.lower.end(), *config.bo_lower);
    if (config.bo_upper) std::fill(d.upper.begin(), d.upper.end(), *config.bo_upper);
    if (config.case_kind == CaseKind::backoff && d.lower.front() < 0.0) {
      throw ConfigError("bo.lower must be non-negative for the backoff case");
    }
    if (config.case_kind == CaseKind::model && !(d.lower.front() > 0.0)) {
      throw ConfigError("bo.lower must be positive for the model case");
    }
    domain = ParamDomain(d.lower, d.upper);
    theta0 = config.case_kind == CaseKind::backoff ? std::vector<double>(kCaseKnots, 0.0)
                                                   : sample_r1_at_knots(prediction);
    theta0 = domain->clip(theta0);
  }
  return Study{config, std::move(plant), std::move(prediction), std::move(base), std::move(domain),
               std::move(theta0), episode};
}

}  // namespace bompc
