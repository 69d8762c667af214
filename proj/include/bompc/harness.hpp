#pragma once

// Closed-loop charging episodes, the episode score G, model-plant mismatch,
// and the two tunable controller parameterizations (voltage backoff spline
// and prediction-model R1 spline).

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bompc/bo.hpp"
#include "bompc/ecm.hpp"
#include "bompc/ocp.hpp"
#include "bompc/random.hpp"
#include "bompc/spline.hpp"

namespace bompc {

class HarnessError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One row of a closed-loop trajectory. Row k holds the state x_k, the
/// current applied from it and the terminal voltage during that step. The
/// final row (k = M) has no step of its own and repeats the last current
/// and voltage.
struct EpisodeStep {
  int k = 0;
  double t_s = 0.0;
  double i_a = 0.0;
  double z = 0.0;
  double u1_v = 0.0;
  double vt_v = 0.0;
  double vt_limit_v = 0.0;  // controller's upper voltage limit at z_k

  friend bool operator==(const EpisodeStep&, const EpisodeStep&) = default;
};

inline constexpr std::array<double, 3> kSocMilestones = {0.8, 0.9, 0.95};

struct EpisodeResult {
  std::vector<EpisodeStep> trajectory;
  double objective = 0.0;
  double max_violation = 0.0;
  std::array<std::optional<double>, 3> time_to_soc{};
  bool failed = false;
  std::string failure;

  std::optional<double> time_to(double soc) const {
    for (std::size_t i = 0; i < kSocMilestones.size(); ++i) {
      if (kSocMilestones[i] == soc) return time_to_soc[i];
    }
    for (const auto& row : trajectory) {
      if (row.z >= soc) return row.t_s;
    }
    return std::nullopt;
  }
};

struct EpisodeSettings {
  int steps = 240;
  double c1 = 1e-3;
  EcmState x_init{0.1, 0.0};
  SolverSettings solver;
};

/// G = sum_k [ -c1 (1 - z_k)^2 - max(0, V_k - v_t_max)^2 ] over every
/// recorded row (the last row carries the held final voltage).
inline double closed_loop_objective(std::span<const EpisodeStep> trajectory, double c1, double v_t_max) {
  double g = 0.0;
  for (const auto& row : trajectory) {
    const double shortfall = 1.0 - row.z;
    const double excess = std::max(0.0, row.vt_v - v_t_max);
    g -= c1 * shortfall * shortfall + excess * excess;
  }
  return g;
}

inline double closed_loop_objective(const EpisodeResult& result, double c1, double v_t_max) {
  return closed_loop_objective(result.trajectory, c1, v_t_max);
}

inline double max_violation(std::span<const EpisodeStep> trajectory, double v_t_max) {
  double m = 0.0;
  for (const auto& row : trajectory) m = std::max(m, row.vt_v - v_t_max);
  return m;
}

/// Fills objective, max violation and milestone times from the trajectory.
inline void summarize(EpisodeResult& result, double c1, double v_t_max) {
  result.objective = closed_loop_objective(result, c1, v_t_max);
  result.max_violation = max_violation(result.trajectory, v_t_max);
  for (std::size_t i = 0; i < kSocMilestones.size(); ++i) {
    result.time_to_soc[i].reset();
    for (const auto& row : result.trajectory) {
      if (row.z >= kSocMilestones[i]) {
        result.time_to_soc[i] = row.t_s;
        break;
      }
    }
  }
}

/// Runs M closed-loop steps: the MPC (on its own prediction model) picks the
/// current, the plant model advances. A solver exception ends the episode
/// early and marks it failed; the partial trajectory is kept.
inline EpisodeResult run_episode(const CellParams& plant, const OcpConfig& controller, const EpisodeSettings& settings) {
  if (settings.steps < 1) throw HarnessError("episode: steps must be at least 1");
  MpcController mpc(controller, settings.solver);
  EpisodeResult out;
  out.trajectory.reserve(static_cast<std::size_t>(settings.steps) + 1);
  EcmState x = settings.x_init;
  double last_i = 0.0;
  double last_v = plant.ocv()(x.z) + x.u1;
  int k = 0;
  try {
    for (; k < settings.steps; ++k) {
      const double current = mpc_policy(mpc, x);
      const StepResult s = step(plant, x, current, controller.ts);
      out.trajectory.push_back({k, k * controller.ts, current, x.z, x.u1, s.v_t, controller.upper_limit(x.z)});
      last_i = current;
      last_v = s.v_t;
      x = s.next;
    }
  } catch (const std::exception& e) {
    out.failed = true;
    out.failure = "step " + std::to_string(k) + ": " + e.what();
  }
  out.trajectory.push_back({k, k * controller.ts, last_i, x.z, x.u1, last_v, controller.upper_limit(x.z)});
  summarize(out, settings.c1, plant.constants().v_t_max);
  return out;
}

/// Which curves a mismatch disturbs and how.
struct MismatchSpec {
  std::uint64_t seed = 0;
  double delta = 0.5;
  bool r0 = true;
  bool r1 = true;
  bool c1 = true;
  /// One factor per knot instead of one per curve.
  bool per_knot = false;
};

struct MismatchFactors {
  std::vector<double> r0;
  std::vector<double> r1;
  std::vector<double> c1;
};

/// Multiplicative factors ~ U[1 - delta, 1 + delta], drawn in the fixed
/// order r0, r1, c1 whether or not a curve is selected (unselected curves
/// get factor 1), so the draw for one curve does not depend on the others'
/// selection.
inline MismatchFactors mismatch_factors(std::size_t knots, const MismatchSpec& spec) {
  if (!(spec.delta >= 0.0 && spec.delta < 1.0)) throw HarnessError("mismatch: delta must lie in [0, 1)");
  Rng rng(spec.seed);
  const std::size_t draws = spec.per_knot ? knots : 1;
  auto draw = [&](bool selected) {
    std::vector<double> f(draws);
    for (auto& v : f) v = rng.uniform(1.0 - spec.delta, 1.0 + spec.delta);
    if (!selected) std::fill(f.begin(), f.end(), 1.0);
    if (!spec.per_knot) f.assign(knots, f.front());
    return f;
  };
  MismatchFactors out;
  out.r0 = draw(spec.r0);
  out.r1 = draw(spec.r1);
  out.c1 = draw(spec.c1);
  return out;
}

/// Copy of `cell` with r0, r1, c1 scaled by seeded factors; OCV untouched.
inline CellParams make_mismatch(const CellParams& cell, const MismatchSpec& spec) {
  CellTable t = cell.table();
  const MismatchFactors f = mismatch_factors(t.soc.size(), spec);
  for (std::size_t i = 0; i < t.soc.size(); ++i) {
    t.r0[i] *= f.r0[i];
    t.r1[i] *= f.r1[i];
    t.c1[i] *= f.c1[i];
  }
  return CellParams(std::move(t), cell.constants());
}

inline constexpr std::size_t kCaseKnots = 7;

inline std::vector<double> case_knots() { return uniform_grid(0.0, 1.0, kCaseKnots); }

/// Controller built from a parameter vector, plus any clipping notes.
struct CaseConfig {
  OcpConfig controller;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<double> clip_into(std::span<const double> theta, const ParamDomain& domain,
                                     std::vector<std::string>& warnings) {
  if (theta.size() != domain.dim()) {
    throw HarnessError("theta has " + std::to_string(theta.size()) + " components, expected " +
                       std::to_string(domain.dim()));
  }
  std::vector<double> out(theta.begin(), theta.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i])) throw HarnessError("theta component " + std::to_string(i) + " is not finite");
    const double c = std::clamp(out[i], domain.lower[i], domain.upper[i]);
    if (c != out[i]) {
      warnings.push_back("theta[" + std::to_string(i) + "] = " + std::to_string(out[i]) + " clipped to " +
                         std::to_string(c));
      out[i] = c;
    }
  }
  return out;
}

}  // namespace detail

/// Backoff knot values in volts, each in [0, 0.5].
inline ParamDomain backoff_domain() { return ParamDomain::uniform(kCaseKnots, 0.0, 0.5); }

/// Installs b(z) = spline over 7 uniform SOC knots through theta as the
/// upper-voltage backoff. Evaluations are floored at 0 V.
inline CaseConfig case_backoff(std::span<const double> theta, const OcpConfig& base) {
  CaseConfig out{base, {}};
  const auto values = detail::clip_into(theta, backoff_domain(), out.warnings);
  out.controller.backoff = Spline(case_knots(), values).with_floor(0.0);
  return out;
}

/// R1 knot values in ohms, each in [0.25, 4] x the mean of the reference
/// table's R1 column.
inline ParamDomain model_domain(const CellParams& reference) {
  const auto& r1 = reference.table().r1;
  const double mean = std::accumulate(r1.begin(), r1.end(), 0.0) / static_cast<double>(r1.size());
  return ParamDomain::uniform(kCaseKnots, 0.25 * mean, 4.0 * mean);
}

/// Replaces the prediction model's R1 curve with a spline over 7 uniform SOC
/// knots through theta (evaluations floored at the domain's lower bound).
/// R0 and C1 keep whatever the base prediction model has; backoff is
/// removed.
inline CaseConfig case_model(std::span<const double> theta, const OcpConfig& base, const ParamDomain& domain) {
  CaseConfig out{base, {}};
  const auto values = detail::clip_into(theta, domain, out.warnings);
  const double floor = *std::min_element(domain.lower.begin(), domain.lower.end());
  out.controller.model = base.model.with_r1(Spline(case_knots(), values).with_floor(floor));
  out.controller.backoff.reset();
  return out;
}

/// The prediction model's R1 curve sampled at the case knots; the untuned
/// starting point of the R1 case.
inline std::vector<double> sample_r1_at_knots(const CellParams& model) {
  std::vector<double> out;
  for (double z : case_knots()) out.push_back(model.r1()(z));
  return out;
}

}  // namespace bompc
