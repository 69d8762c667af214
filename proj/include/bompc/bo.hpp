#pragma once

// Bayesian optimization (maximization) with a GP surrogate and Expected
// Improvement, run as a strictly sequential loop: fit, propose, evaluate,
// append.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bompc/gp.hpp"
#include "bompc/random.hpp"

namespace bompc {

class BoError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Box-shaped tuning domain.
struct ParamDomain {
  std::vector<double> lower;
  std::vector<double> upper;

  ParamDomain(std::vector<double> lo, std::vector<double> hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.empty() || lower.size() != upper.size()) throw BoError("domain: bounds must be non-empty and equal length");
    for (std::size_t i = 0; i < lower.size(); ++i) {
      if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) || !(lower[i] <= upper[i])) {
        throw BoError("domain: bound " + std::to_string(i) + " is not finite and ordered");
      }
    }
  }

  static ParamDomain uniform(std::size_t dim, double lo, double hi) {
    return {std::vector<double>(dim, lo), std::vector<double>(dim, hi)};
  }

  std::size_t dim() const { return lower.size(); }

  bool contains(std::span<const double> theta) const {
    if (theta.size() != dim()) return false;
    for (std::size_t i = 0; i < dim(); ++i) {
      if (!(theta[i] >= lower[i] && theta[i] <= upper[i])) return false;
    }
    return true;
  }

  std::vector<double> clip(std::span<const double> theta) const {
    std::vector<double> out(theta.begin(), theta.end());
    for (std::size_t i = 0; i < dim(); ++i) out[i] = std::clamp(out[i], lower[i], upper[i]);
    return out;
  }

  /// Maps a point of the unit cube into the box.
  std::vector<double> from_unit(std::span<const double> u) const {
    std::vector<double> out(dim());
    for (std::size_t i = 0; i < dim(); ++i) out[i] = std::clamp(lower[i] + u[i] * (upper[i] - lower[i]), lower[i], upper[i]);
    return out;
  }

  InputBounds as_bounds() const { return {lower, upper}; }
};

inline double normal_pdf(double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); }
inline double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); }

/// EI margin as a fraction of the model's target scale.
inline constexpr double kEiMarginFraction = 0.01;

/// Expected Improvement for maximization over `best`, with margin
/// xi = 0.01 * target scale:
///   EI = (mu - best - xi) Phi(t) + s phi(t),  t = (mu - best - xi) / s,
/// and max(0, mu - best - xi) when s = 0.
inline double expected_improvement(double mean, double sd, double best, double margin) {
  const double gain = mean - best - margin;
  if (!(sd > 0.0)) return std::max(0.0, gain);
  const double t = gain / sd;
  return std::max(0.0, gain * normal_cdf(t) + sd * normal_pdf(t));
}

inline double expected_improvement(const GpModel& model, std::span<const double> query, double best) {
  const Posterior p = model.posterior(query);
  return expected_improvement(p.mean, std::sqrt(p.variance), best, kEiMarginFraction * model.scaling().y_scale);
}

struct AcquisitionSettings {
  int samples = 512;
  int refine_top = 8;
  int refine_iterations = 50;
  double initial_step = 0.05;  // fraction of each domain width
  /// Also refine from the best observed point.
  bool refine_incumbent = true;
};

/// Approximate argmax of EI over the domain: score `samples` shifted-Halton
/// points, refine the best `refine_top` by projected coordinate search, and
/// return the best refined point. The incumbent is the largest observed
/// target. Deterministic given `seed`.
inline std::vector<double> propose_next(const GpModel& model, const ParamDomain& domain, std::uint64_t seed,
                                        const AcquisitionSettings& settings = {}) {
  if (static_cast<std::size_t>(model.dim()) != domain.dim()) throw BoError("propose_next: dimension mismatch");
  const std::size_t dim = domain.dim();
  const double best = model.dataset().size() > 0 ? model.dataset().targets.maxCoeff()
                                                 : -std::numeric_limits<double>::infinity();
  auto score = [&](std::span<const double> theta) {
    return std::isfinite(best) ? expected_improvement(model, theta, best) : model.posterior(theta).variance;
  };

  const auto unit = shifted_halton(static_cast<std::size_t>(settings.samples), dim, seed);
  struct Candidate {
    std::vector<double> theta;
    double ei;
  };
  std::vector<Candidate> cands;
  cands.reserve(static_cast<std::size_t>(settings.samples));
  for (int s = 0; s < settings.samples; ++s) {
    auto theta = domain.from_unit(std::span<const double>(unit).subspan(static_cast<std::size_t>(s) * dim, dim));
    const double ei = score(theta);
    cands.push_back({std::move(theta), ei});
  }
  // Stable order keeps ties deterministic.
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.ei > b.ei; });

  std::vector<Candidate> starts(cands.begin(),
                                cands.begin() + std::min<std::ptrdiff_t>(settings.refine_top, std::ssize(cands)));
  if (settings.refine_incumbent && std::isfinite(best)) {
    Eigen::Index arg = 0;
    model.dataset().targets.maxCoeff(&arg);
    std::vector<double> theta(dim);
    for (std::size_t d = 0; d < dim; ++d) theta[d] = model.dataset().inputs(arg, static_cast<Eigen::Index>(d));
    theta = domain.clip(theta);
    const double ei = score(theta);
    starts.push_back({std::move(theta), ei});
  }

  Candidate winner = cands.front();
  for (const Candidate& start : starts) {
    Candidate cur = start;
    double step = settings.initial_step;
    for (int it = 0; it < settings.refine_iterations; ++it) {
      bool improved = false;
      for (std::size_t d = 0; d < dim; ++d) {
        const double width = domain.upper[d] - domain.lower[d];
        for (double dir : {+1.0, -1.0}) {
          std::vector<double> trial = cur.theta;
          trial[d] = std::clamp(trial[d] + dir * step * width, domain.lower[d], domain.upper[d]);
          if (trial[d] == cur.theta[d]) continue;
          const double ei = score(trial);
          if (ei > cur.ei) {
            cur = {std::move(trial), ei};
            improved = true;
            break;
          }
        }
      }
      if (!improved) step *= 0.5;
    }
    if (cur.ei > winner.ei) winner = std::move(cur);
  }
  return winner.theta;
}

struct BoRecord {
  int n = 0;
  std::vector<double> theta;
  double g = 0.0;
  double best_g = 0.0;
  bool failed = false;
  /// Hyperparameters of the surrogate that proposed theta (absent for the
  /// initial design).
  std::optional<GpHyperparameters> surrogate;
};

struct BoTrace {
  std::uint64_t seed = 0;
  std::vector<BoRecord> records;

  const BoRecord& best() const {
    if (records.empty()) throw BoError("trace is empty");
    auto it = std::max_element(records.begin(), records.end(),
                               [](const BoRecord& a, const BoRecord& b) { return a.g < b.g; });
    return *it;
  }
};

struct BoSettings {
  /// Acquisition-driven evaluations after the initial design.
  int budget = 50;
  /// Initial design size, theta0 included.
  int n_init = 5;
  std::uint64_t seed = 1;
  /// First evaluated point; the domain centre when empty.
  std::vector<double> theta0;
  AcquisitionSettings acquisition;
  GpFitSettings gp;
};

using Objective = std::function<double(std::span<const double>)>;
using BoObserver = std::function<void(const BoRecord&)>;

/// Sequential BO: n_init design points (theta0 first, then a seeded
/// shifted-Halton design), then `budget` rounds of fit -> propose ->
/// evaluate -> append. A throwing or non-finite objective is recorded as the
/// worst value so far minus one target standard deviation and the loop
/// continues.
inline BoTrace run_bo(const Objective& objective, const ParamDomain& domain, const BoSettings& settings,
                      const BoObserver& observer = {}) {
  if (settings.budget < 1) throw BoError("run_bo: budget must be at least 1");
  if (settings.n_init < 1) throw BoError("run_bo: n_init must be at least 1");
  const std::size_t dim = domain.dim();

  BoTrace trace;
  trace.seed = settings.seed;
  std::vector<double> observed;

  auto penalized = [&]() {
    if (observed.empty()) return -1.0;
    const double worst = *std::min_element(observed.begin(), observed.end());
    double scale = 1.0;
    if (observed.size() >= 2) {
      const double m = std::accumulate(observed.begin(), observed.end(), 0.0) / static_cast<double>(observed.size());
      double v = 0.0;
      for (double o : observed) v += (o - m) * (o - m);
      v /= static_cast<double>(observed.size());
      if (v > 0.0) scale = std::sqrt(v);
    }
    return worst - scale;
  };

  auto evaluate = [&](std::vector<double> theta, std::optional<GpHyperparameters> hp) {
    BoRecord rec;
    rec.n = static_cast<int>(trace.records.size());
    double g = 0.0;
    try {
      g = objective(theta);
      rec.failed = !std::isfinite(g);
    } catch (const std::exception&) {
      rec.failed = true;
    }
    if (rec.failed) g = penalized();
    rec.theta = std::move(theta);
    rec.g = g;
    rec.best_g = trace.records.empty() ? g : std::max(trace.records.back().best_g, g);
    rec.surrogate = std::move(hp);
    observed.push_back(g);
    trace.records.push_back(rec);
    if (observer) observer(trace.records.back());
  };

  std::vector<double> theta0 = settings.theta0;
  if (theta0.empty()) {
    theta0.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) theta0[i] = 0.5 * (domain.lower[i] + domain.upper[i]);
  }
  if (theta0.size() != dim) throw BoError("run_bo: theta0 dimension does not match the domain");
  evaluate(domain.clip(theta0), std::nullopt);

  Rng rng(settings.seed);
  const std::uint64_t design_seed = rng.next_u64();
  const auto design = shifted_halton(static_cast<std::size_t>(settings.n_init - 1), dim, design_seed);
  for (int i = 1; i < settings.n_init; ++i) {
    evaluate(domain.from_unit(std::span<const double>(design).subspan(static_cast<std::size_t>(i - 1) * dim, dim)),
             std::nullopt);
  }

  for (int it = 0; it < settings.budget; ++it) {
    GpDataset data;
    const auto n = static_cast<Eigen::Index>(trace.records.size());
    data.inputs.resize(n, static_cast<Eigen::Index>(dim));
    data.targets.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& r = trace.records[static_cast<std::size_t>(i)];
      for (std::size_t d = 0; d < dim; ++d) data.inputs(i, static_cast<Eigen::Index>(d)) = r.theta[d];
      data.targets(i) = r.g;
    }
    const GpModel model = fit_gp(data, domain.as_bounds(), settings.gp);
    auto next = propose_next(model, domain, rng.next_u64(), settings.acquisition);
    evaluate(std::move(next), model.hyperparameters());
  }
  return trace;
}

}  // namespace bompc
