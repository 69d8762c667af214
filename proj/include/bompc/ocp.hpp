#pragma once

// Finite-horizon charging OCP and the MPC policy built on it.
//
//   min_I  sum_{i=0..N} (1 - z_i)^2
//        + lambda * sum_{i=0..N-1} [ max(0, V_i - (v_max - b(z_i)))^2 + max(0, v_min - V_i)^2 ]
//        + epsilon * sum_i I_i^2
//   s.t.   0 <= I_i <= i_max,  (z, u1) rolled out through the prediction model.
//
// Voltage limits are soft (quadratic penalty); the current box is hard and
// enforced by projection.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bompc/ecm.hpp"
#include "bompc/spline.hpp"

namespace bompc {

class OcpError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct OcpConfig {
  explicit OcpConfig(CellParams prediction_model) : model(std::move(prediction_model)) {
    i_max = model.constants().i_max;
  }

  std::size_t horizon = 10;
  CellParams model;
  /// Upper-voltage backoff b(z) in volts; empty means zero.
  std::optional<Spline> backoff;
  double lambda = 1e4;
  double epsilon = 1e-8;
  double ts = 10.0;
  double i_min = 0.0;
  double i_max = 6.0;

  double backoff_at(double z) const { return backoff ? backoff->eval(z) : 0.0; }
  double upper_limit(double z) const { return model.constants().v_t_max - backoff_at(z); }
};

/// Throws OcpError naming the first violated field.
inline void validate(const OcpConfig& cfg) {
  if (cfg.horizon < 1) throw OcpError("ocp: horizon must be at least 1");
  if (!(cfg.lambda > 0.0)) throw OcpError("ocp: lambda must be positive");
  if (!(cfg.epsilon >= 0.0)) throw OcpError("ocp: epsilon must be non-negative");
  if (!(cfg.ts > 0.0)) throw OcpError("ocp: ts must be positive");
  if (!(cfg.i_min <= cfg.i_max) || !std::isfinite(cfg.i_min) || !std::isfinite(cfg.i_max)) {
    throw OcpError("ocp: input bounds must be finite and ordered");
  }
  if (cfg.backoff) {
    for (int i = 0; i <= 1000; ++i) {
      if (cfg.backoff->eval(i / 1000.0) < 0.0) throw OcpError("ocp: backoff must be non-negative on [0, 1]");
    }
  }
}

struct Rollout {
  std::vector<EcmState> states;  // N+1
  std::vector<double> voltages;  // N
};

inline Rollout rollout(const OcpConfig& cfg, const EcmState& x0, std::span<const double> inputs) {
  Rollout r;
  r.states.reserve(inputs.size() + 1);
  r.voltages.reserve(inputs.size());
  r.states.push_back(x0);
  for (double current : inputs) {
    const StepResult s = step(cfg.model, r.states.back(), current, cfg.ts);
    r.voltages.push_back(s.v_t);
    r.states.push_back(s.next);
  }
  return r;
}

namespace detail {

inline double hinge_sq(double v) { return v > 0.0 ? v * v : 0.0; }

/// Cost without precondition checks; the solver probes slightly outside the
/// box when differencing at the upper bound.
inline double ocp_cost_unchecked(const OcpConfig& cfg, const EcmState& x0, std::span<const double> inputs) {
  const auto& k = cfg.model.constants();
  double tracking = 0.0;
  double penalty = 0.0;
  double effort = 0.0;
  EcmState x = x0;
  for (double current : inputs) {
    const PointParams p = cfg.model.at(x.z);
    const double v = p.ocv + x.u1 + p.r0 * current;
    tracking += (1.0 - x.z) * (1.0 - x.z);
    penalty += hinge_sq(v - (k.v_t_max - cfg.backoff_at(x.z))) + hinge_sq(k.v_t_min - v);
    effort += current * current;
    const double decay = std::exp(-cfg.ts / (p.r1 * p.c1));
    x.u1 = (x.u1 - p.r1 * current) * decay + p.r1 * current;
    x.z += (k.eta * cfg.ts / k.q) * current;
  }
  tracking += (1.0 - x.z) * (1.0 - x.z);
  return tracking + cfg.lambda * penalty + cfg.epsilon * effort;
}

/// Cost and its exact gradient by a backward (adjoint) sweep over the
/// rollout. Parameter slopes in z come from the spline derivatives.
inline double ocp_cost_and_gradient(const OcpConfig& cfg, const EcmState& x0, std::span<const double> inputs,
                                    std::span<double> grad) {
  const auto& k = cfg.model.constants();
  const std::size_t n = inputs.size();
  const double kappa = k.eta * cfg.ts / k.q;

  struct Stage {
    EcmState x;
    PointParams p;
    double decay;
    double v;
  };
  std::vector<Stage> stages(n);
  double cost = 0.0;
  EcmState x = x0;
  for (std::size_t i = 0; i < n; ++i) {
    const double current = inputs[i];
    const PointParams p = cfg.model.at(x.z);
    const double v = p.ocv + x.u1 + p.r0 * current;
    const double decay = std::exp(-cfg.ts / (p.r1 * p.c1));
    cost += (1.0 - x.z) * (1.0 - x.z) + cfg.epsilon * current * current +
            cfg.lambda * (hinge_sq(v - (k.v_t_max - cfg.backoff_at(x.z))) + hinge_sq(k.v_t_min - v));
    stages[i] = {x, p, decay, v};
    x.u1 = (x.u1 - p.r1 * current) * decay + p.r1 * current;
    x.z += kappa * current;
  }
  cost += (1.0 - x.z) * (1.0 - x.z);

  double adj_z = -2.0 * (1.0 - x.z);
  double adj_u = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const Stage& st = stages[i];
    const double current = inputs[i];
    const double z = st.x.z;
    const PointParams dp = cfg.model.slope_at(z);
    const double b_slope = cfg.backoff ? cfg.backoff->derivative(z) : 0.0;
    const double upper = st.v - (k.v_t_max - cfg.backoff_at(z));
    const double pu = upper > 0.0 ? 2.0 * cfg.lambda * upper : 0.0;
    const double lower = k.v_t_min - st.v;
    const double pl = lower > 0.0 ? 2.0 * cfg.lambda * lower : 0.0;
    const double dv_dz = dp.ocv + dp.r0 * current;

    const double tau = st.p.r1 * st.p.c1;
    const double dtau_dz = dp.r1 * st.p.c1 + st.p.r1 * dp.c1;
    const double ddecay_dz = st.decay * cfg.ts / (tau * tau) * dtau_dz;
    const double du_dz = st.x.u1 * ddecay_dz + current * ((1.0 - st.decay) * dp.r1 - st.p.r1 * ddecay_dz);
    const double du_di = st.p.r1 * (1.0 - st.decay);

    grad[i] = (pu - pl) * st.p.r0 + 2.0 * cfg.epsilon * current + adj_z * kappa + adj_u * du_di;
    const double next_adj_z = -2.0 * (1.0 - z) + pu * (dv_dz + b_slope) - pl * dv_dz + adj_z + adj_u * du_dz;
    const double next_adj_u = (pu - pl) + adj_u * st.decay;
    adj_z = next_adj_z;
    adj_u = next_adj_u;
  }
  return cost;
}

}  // namespace detail

/// OCP objective for an N-long input sequence inside the box.
inline double ocp_cost(const OcpConfig& cfg, const EcmState& x0, std::span<const double> inputs) {
  if (inputs.size() != cfg.horizon) {
    throw OcpError("ocp_cost: expected " + std::to_string(cfg.horizon) + " inputs, got " +
                   std::to_string(inputs.size()));
  }
  constexpr double kTol = 1e-9;
  for (double current : inputs) {
    if (!(current >= cfg.i_min - kTol && current <= cfg.i_max + kTol)) {
      throw OcpError("ocp_cost: input outside bounds");
    }
  }
  return detail::ocp_cost_unchecked(cfg, x0, inputs);
}

enum class SolverStatus { converged, max_iterations, degenerate };

inline const char* to_string(SolverStatus s) {
  switch (s) {
    case SolverStatus::converged: return "converged";
    case SolverStatus::max_iterations: return "max-iterations";
    case SolverStatus::degenerate: return "degenerate";
  }
  return "unknown";
}

/// How the solver obtains the residual Jacobian: forward sensitivities of
/// the rollout, or forward differences of the residual vector.
enum class JacobianMode { analytic, forward_difference };

struct SolverSettings {
  JacobianMode jacobian = JacobianMode::analytic;
  int max_iterations = 200;
  double gradient_tol = 1e-7;   // projected-gradient infinity norm
  double decrease_tol = 1e-12;  // absolute cost decrease per iteration
  double fd_relative_step = 1e-6;
};

struct OcpSolution {
  std::vector<double> inputs;
  std::vector<EcmState> states;
  std::vector<double> voltages;
  double objective = 0.0;
  SolverStatus status = SolverStatus::converged;
  int iterations = 0;
};

namespace detail {

/// The OCP cost is the squared norm of this vector:
///   [1 - z_i (i = 0..N) | sqrt(lambda)*upper hinge_i | sqrt(lambda)*lower hinge_i | sqrt(epsilon)*I_i].
inline std::vector<double> ocp_residuals(const OcpConfig& cfg, const EcmState& x0, std::span<const double> inputs) {
  const auto& k = cfg.model.constants();
  const std::size_t n = inputs.size();
  const double sl = std::sqrt(cfg.lambda);
  const double se = std::sqrt(cfg.epsilon);
  std::vector<double> r(4 * n + 1, 0.0);
  EcmState x = x0;
  for (std::size_t i = 0; i < n; ++i) {
    const double current = inputs[i];
    const PointParams p = cfg.model.at(x.z);
    const double v = p.ocv + x.u1 + p.r0 * current;
    r[i] = 1.0 - x.z;
    r[n + 1 + i] = sl * std::max(0.0, v - (k.v_t_max - cfg.backoff_at(x.z)));
    r[2 * n + 1 + i] = sl * std::max(0.0, k.v_t_min - v);
    r[3 * n + 1 + i] = se * current;
    const double decay = std::exp(-cfg.ts / (p.r1 * p.c1));
    x.u1 = (x.u1 - p.r1 * current) * decay + p.r1 * current;
    x.z += (k.eta * cfg.ts / k.q) * current;
  }
  r[n] = 1.0 - x.z;
  return r;
}

/// Residuals and their Jacobian (rows x N, row-major) by propagating
/// d(z, u1)/dI_j forward through the rollout.
inline std::vector<double> ocp_residual_jacobian(const OcpConfig& cfg, const EcmState& x0,
                                                 std::span<const double> inputs, std::vector<double>& jac) {
  const auto& k = cfg.model.constants();
  const std::size_t n = inputs.size();
  const std::size_t rows = 4 * n + 1;
  const double sl = std::sqrt(cfg.lambda);
  const double se = std::sqrt(cfg.epsilon);
  const double kappa = k.eta * cfg.ts / k.q;
  std::vector<double> r(rows, 0.0);
  jac.assign(rows * n, 0.0);
  std::vector<double> dz(n, 0.0);  // dz_i/dI_j for the current stage i
  std::vector<double> du(n, 0.0);
  EcmState x = x0;
  for (std::size_t i = 0; i < n; ++i) {
    const double current = inputs[i];
    const PointParams p = cfg.model.at(x.z);
    const PointParams dp = cfg.model.slope_at(x.z);
    const double v = p.ocv + x.u1 + p.r0 * current;
    const double upper = v - (k.v_t_max - cfg.backoff_at(x.z));
    const double lower = k.v_t_min - v;
    const double b_slope = cfg.backoff ? cfg.backoff->derivative(x.z) : 0.0;
    const double dv_dz = dp.ocv + dp.r0 * current;

    r[i] = 1.0 - x.z;
    r[n + 1 + i] = sl * std::max(0.0, upper);
    r[2 * n + 1 + i] = sl * std::max(0.0, lower);
    r[3 * n + 1 + i] = se * current;
    for (std::size_t j = 0; j < n; ++j) {
      jac[i * n + j] = -dz[j];
      const double dv = dv_dz * dz[j] + du[j] + (i == j ? p.r0 : 0.0);
      if (upper > 0.0) jac[(n + 1 + i) * n + j] = sl * (dv + b_slope * dz[j]);
      if (lower > 0.0) jac[(2 * n + 1 + i) * n + j] = -sl * dv;
    }
    jac[(3 * n + 1 + i) * n + i] = se;

    const double tau = p.r1 * p.c1;
    const double decay = std::exp(-cfg.ts / tau);
    const double ddecay_dz = decay * cfg.ts / (tau * tau) * (dp.r1 * p.c1 + p.r1 * dp.c1);
    const double du_dz = x.u1 * ddecay_dz + current * ((1.0 - decay) * dp.r1 - p.r1 * ddecay_dz);
    for (std::size_t j = 0; j < n; ++j) {
      du[j] = decay * du[j] + du_dz * dz[j] + (i == j ? p.r1 * (1.0 - decay) : 0.0);
      if (j == i) dz[j] += kappa;
    }
    x.u1 = (x.u1 - p.r1 * current) * decay + p.r1 * current;
    x.z += kappa * current;
  }
  r[n] = 1.0 - x.z;
  for (std::size_t j = 0; j < n; ++j) jac[n * n + j] = -dz[j];
  return r;
}

inline double squared_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double e : v) acc += e * e;
  return acc;
}

/// Projected Gauss-Newton over the input box. Variables sitting on a bound
/// with the gradient pushing outward are held fixed; the Gauss-Newton system
/// is solved on the rest and the step is projected back onto the box, with
/// Armijo backtracking along the projection arc.
class BoxGaussNewton {
 public:
  BoxGaussNewton(const OcpConfig& cfg, const EcmState& x0, const SolverSettings& settings)
      : cfg_(cfg), x0_(x0), settings_(settings), n_(cfg.horizon) {}

  OcpSolution solve(std::vector<double> x) {
    for (auto& v : x) v = clip(v);
    std::vector<double> jac;
    std::vector<double> r = linearize(x, jac);
    double f = squared_norm(r);
    if (!std::isfinite(f)) return finish(std::move(x), SolverStatus::degenerate, 0);

    const std::size_t rows = r.size();
    std::vector<double> g(n_), trial(n_), d(n_);
    for (int it = 0; it < settings_.max_iterations; ++it) {
      for (std::size_t j = 0; j < n_; ++j) {
        double acc = 0.0;
        for (std::size_t row = 0; row < rows; ++row) acc += jac[row * n_ + j] * r[row];
        g[j] = 2.0 * acc;
      }
      if (!std::all_of(g.begin(), g.end(), [](double e) { return std::isfinite(e); })) {
        return finish(std::move(x), SolverStatus::degenerate, it);
      }
      double pg = 0.0;
      for (std::size_t j = 0; j < n_; ++j) pg = std::max(pg, std::abs(x[j] - clip(x[j] - g[j])));
      if (pg <= settings_.gradient_tol) return finish(std::move(x), SolverStatus::converged, it);

      // Bertsekas-style epsilon-active set.
      const double band = std::min(1e-6, pg);
      std::vector<std::size_t> free;
      for (std::size_t j = 0; j < n_; ++j) {
        const bool low = x[j] <= cfg_.i_min + band && g[j] > 0.0;
        const bool high = x[j] >= cfg_.i_max - band && g[j] < 0.0;
        if (!(low || high)) free.push_back(j);
      }
      std::fill(d.begin(), d.end(), 0.0);
      if (!free.empty()) {
        const auto m = static_cast<Eigen::Index>(free.size());
        Eigen::MatrixXd h(m, m);
        Eigen::VectorXd rhs(m);
        for (Eigen::Index a = 0; a < m; ++a) {
          rhs(a) = -g[free[a]];
          for (Eigen::Index b = 0; b <= a; ++b) {
            double acc = 0.0;
            for (std::size_t row = 0; row < rows; ++row) acc += jac[row * n_ + free[a]] * jac[row * n_ + free[b]];
            h(a, b) = h(b, a) = 2.0 * acc;
          }
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
        Eigen::VectorXd step = ldlt.solve(rhs);
        double mu = 1e-12 * std::max(1.0, h.diagonal().maxCoeff());
        while ((ldlt.info() != Eigen::Success || !step.allFinite() || step.dot(rhs) <= 0.0) && mu < 1e12) {
          ldlt.compute(h + mu * Eigen::MatrixXd::Identity(m, m));
          step = ldlt.solve(rhs);
          mu *= 100.0;
        }
        for (Eigen::Index a = 0; a < m; ++a) d[free[a]] = step(a);
      }

      double f_trial = f;
      bool accepted = false;
      double alpha = 1.0;
      for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
        double decrease = 0.0;
        for (std::size_t j = 0; j < n_; ++j) {
          trial[j] = clip(x[j] + alpha * d[j]);
          decrease += g[j] * (trial[j] - x[j]);
        }
        f_trial = ocp_cost_unchecked(cfg_, x0_, trial);
        if (std::isfinite(f_trial) && f_trial <= f + 1e-4 * decrease) {
          accepted = true;
          break;
        }
      }
      if (!accepted) return finish(std::move(x), SolverStatus::converged, it + 1);

      const double drop = f - f_trial;
      x = trial;
      r = linearize(x, jac);
      f = squared_norm(r);
      if (drop <= settings_.decrease_tol) return finish(std::move(x), SolverStatus::converged, it + 1);
    }
    return finish(std::move(x), SolverStatus::max_iterations, settings_.max_iterations);
  }

 private:
  double clip(double v) const { return std::clamp(v, cfg_.i_min, cfg_.i_max); }

  std::vector<double> linearize(std::vector<double>& x, std::vector<double>& jac) const {
    if (settings_.jacobian == JacobianMode::analytic) return ocp_residual_jacobian(cfg_, x0_, x, jac);
    std::vector<double> r = ocp_residuals(cfg_, x0_, x);
    const std::size_t rows = r.size();
    jac.assign(rows * n_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
      const double xj = x[j];
      const double h = settings_.fd_relative_step * std::max(std::abs(xj), 1.0);
      x[j] = xj + h;
      const std::vector<double> rp = ocp_residuals(cfg_, x0_, x);
      x[j] = xj;
      for (std::size_t row = 0; row < rows; ++row) jac[row * n_ + j] = (rp[row] - r[row]) / h;
    }
    return r;
  }

  OcpSolution finish(std::vector<double> x, SolverStatus status, int iterations) const {
    OcpSolution sol;
    Rollout ro = rollout(cfg_, x0_, x);
    sol.objective = ocp_cost_unchecked(cfg_, x0_, x);
    if (status != SolverStatus::degenerate && !std::isfinite(sol.objective)) status = SolverStatus::degenerate;
    sol.inputs = std::move(x);
    sol.states = std::move(ro.states);
    sol.voltages = std::move(ro.voltages);
    sol.status = status;
    sol.iterations = iterations;
    return sol;
  }

  const OcpConfig& cfg_;
  EcmState x0_;
  SolverSettings settings_;
  std::size_t n_;
};

}  // namespace detail

/// Solves the OCP from `x0` by single shooting over the N currents.
/// Never throws for non-convergence; the status says what happened.
inline OcpSolution solve_ocp(const OcpConfig& cfg, const EcmState& x0,
                             std::optional<std::span<const double>> warm_start = std::nullopt,
                             const SolverSettings& settings = {}) {
  if (!std::isfinite(x0.z) || !std::isfinite(x0.u1)) throw OcpError("solve_ocp: non-finite initial state");
  if (cfg.horizon < 1) throw OcpError("solve_ocp: horizon must be at least 1");
  std::vector<double> guess(cfg.horizon, 0.5 * (cfg.i_min + cfg.i_max));
  if (warm_start && warm_start->size() == cfg.horizon) guess.assign(warm_start->begin(), warm_start->end());
  return detail::BoxGaussNewton(cfg, x0, settings).solve(std::move(guess));
}

/// Receding-horizon controller: solves the OCP at each state and applies the
/// first input. Keeps the previous plan, shifted by one stage with the last
/// stage duplicated, as the next warm start. Single owner; not thread-safe.
class MpcController {
 public:
  explicit MpcController(OcpConfig cfg, SolverSettings settings = {})
      : cfg_(std::move(cfg)), settings_(settings) {
    validate(cfg_);
  }

  double act(const EcmState& x) {
    std::optional<std::span<const double>> warm;
    if (!plan_.empty()) warm = std::span<const double>(plan_);
    last_ = solve_ocp(cfg_, x, warm, settings_);
    plan_ = last_.inputs;
    std::rotate(plan_.begin(), plan_.begin() + 1, plan_.end());
    plan_.back() = plan_[plan_.size() >= 2 ? plan_.size() - 2 : 0];
    return last_.inputs.front();
  }

  void reset() { plan_.clear(); }

  const OcpConfig& config() const { return cfg_; }
  const OcpSolution& last_solution() const { return last_; }

 private:
  OcpConfig cfg_;
  SolverSettings settings_;
  std::vector<double> plan_;
  OcpSolution last_;
};

/// First element of the optimal input sequence at `x`.
inline double mpc_policy(MpcController& controller, const EcmState& x) { return controller.act(x); }

}  // namespace bompc
