#pragma once

// Gaussian-process regression with a squared-exponential ARD kernel:
// posterior inference, log marginal likelihood, and hyperparameter fitting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bompc/random.hpp"

namespace bompc {

class GpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Observed points (one row of `inputs` per point) and targets.
struct GpDataset {
  Eigen::MatrixXd inputs;
  Eigen::VectorXd targets;

  Eigen::Index size() const { return targets.size(); }
  Eigen::Index dim() const { return inputs.cols(); }
};

struct GpHyperparameters {
  double signal_variance = 1.0;
  Eigen::VectorXd length_scales;
  double noise_variance = 0.0;
  double prior_mean = 0.0;
};

/// Affine maps between user coordinates and the model's internal ones:
/// internal_x = (x - offset) / scale, internal_y = (y - y_offset) / y_scale.
struct GpScaling {
  Eigen::VectorXd x_offset;
  Eigen::VectorXd x_scale;
  double y_offset = 0.0;
  double y_scale = 1.0;

  static GpScaling identity(Eigen::Index dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim), 0.0, 1.0};
  }
};

struct Posterior {
  double mean;
  double variance;
};

inline double se_kernel(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b,
                        const GpHyperparameters& hp) {
  const double r2 = ((a - b).array() / hp.length_scales.array()).square().sum();
  return hp.signal_variance * std::exp(-0.5 * r2);
}

namespace detail {

inline void check_hyperparameters(const GpHyperparameters& hp, Eigen::Index dim) {
  if (!(hp.signal_variance > 0.0)) throw GpError("gp: signal variance must be positive");
  if (hp.length_scales.size() != dim) throw GpError("gp: length-scale count does not match input dimension");
  if (!(hp.length_scales.array() > 0.0).all()) throw GpError("gp: length scales must be positive");
  if (!(hp.noise_variance >= 0.0)) throw GpError("gp: noise variance must be non-negative");
}

/// Cholesky of k(X,X) + noise*I with jitter 1e-9*signal variance, raised
/// tenfold on failure up to 1e-3*signal variance.
inline Eigen::LLT<Eigen::MatrixXd> factor_gram(const Eigen::MatrixXd& x, const GpHyperparameters& hp) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      k(i, j) = k(j, i) = se_kernel(x.row(i).transpose(), x.row(j).transpose(), hp);
    }
  }
  k.diagonal().array() += hp.noise_variance;
  for (double jitter = 1e-9 * hp.signal_variance; jitter <= 1e-3 * hp.signal_variance * 1.0001; jitter *= 10.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(kj);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw GpError("gp: covariance matrix is not positive definite even after jitter");
}

inline double lml_from_factor(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& residual) {
  const Eigen::VectorXd alpha = llt.solve(residual);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double n = static_cast<double>(residual.size());
  return -0.5 * residual.dot(alpha) - 0.5 * log_det - 0.5 * n * std::log(2.0 * M_PI);
}

}  // namespace detail

/// Log marginal likelihood of `data` under constant prior mean and the SE
/// kernel: -1/2 r^T K^-1 r - 1/2 log|K| - n/2 log 2pi, r = y - m.
inline double log_marginal_likelihood(const GpDataset& data, const GpHyperparameters& hp) {
  if (data.size() < 1) throw GpError("gp: log marginal likelihood needs at least one point");
  detail::check_hyperparameters(hp, data.dim());
  const auto llt = detail::factor_gram(data.inputs, hp);
  const Eigen::VectorXd residual = data.targets.array() - hp.prior_mean;
  return detail::lml_from_factor(llt, residual);
}

/// Conditioned GP. Hyperparameters and stored data are in internal
/// coordinates; queries and results use user coordinates. Immutable.
class GpModel {
 public:
  GpModel(GpDataset data, GpHyperparameters hp) : GpModel(std::move(data), std::move(hp), std::nullopt) {}

  GpModel(GpDataset data, GpHyperparameters hp, std::optional<GpScaling> scaling)
      : raw_(std::move(data)), hp_(std::move(hp)) {
    const Eigen::Index dim = hp_.length_scales.size();
    if (raw_.size() > 0 && raw_.dim() != dim) throw GpError("gp: dataset dimension does not match length scales");
    if (raw_.inputs.rows() != raw_.targets.size()) throw GpError("gp: input and target counts differ");
    if (!raw_.inputs.allFinite() || !raw_.targets.allFinite()) throw GpError("gp: non-finite data");
    detail::check_hyperparameters(hp_, dim);
    scaling_ = scaling ? *scaling : GpScaling::identity(dim);
    if (raw_.size() > 0) {
      x_ = to_internal_inputs(raw_.inputs);
      const Eigen::VectorXd y = (raw_.targets.array() - scaling_.y_offset) / scaling_.y_scale;
      residual_ = y.array() - hp_.prior_mean;
      llt_ = detail::factor_gram(x_, hp_);
      alpha_ = llt_->solve(residual_);
    }
  }

  Eigen::Index dim() const { return hp_.length_scales.size(); }
  const GpDataset& dataset() const { return raw_; }
  const GpHyperparameters& hyperparameters() const { return hp_; }
  const GpScaling& scaling() const { return scaling_; }

  /// Posterior mean and variance (user units). Variance is clamped at 0.
  Posterior posterior(std::span<const double> query) const {
    const Posterior p = posterior_unclamped(query);
    return {p.mean, std::max(0.0, p.variance)};
  }

  Posterior posterior_unclamped(std::span<const double> query) const {
    if (static_cast<Eigen::Index>(query.size()) != dim()) {
      throw GpError("gp: query dimension " + std::to_string(query.size()) + " does not match model dimension " +
                    std::to_string(dim()));
    }
    Eigen::VectorXd q(dim());
    for (Eigen::Index d = 0; d < dim(); ++d) {
      q(d) = (query[static_cast<std::size_t>(d)] - scaling_.x_offset(d)) / scaling_.x_scale(d);
    }
    double mean = hp_.prior_mean;
    double var = hp_.signal_variance;
    if (llt_) {
      Eigen::VectorXd kq(x_.rows());
      for (Eigen::Index i = 0; i < x_.rows(); ++i) kq(i) = se_kernel(q, x_.row(i).transpose(), hp_);
      mean += kq.dot(alpha_);
      const Eigen::VectorXd v = llt_->matrixL().solve(kq);
      var -= v.squaredNorm();
    }
    return {scaling_.y_offset + scaling_.y_scale * mean, scaling_.y_scale * scaling_.y_scale * var};
  }

  /// LML of the stored data in internal coordinates.
  double log_marginal_likelihood() const {
    if (!llt_) throw GpError("gp: log marginal likelihood needs at least one point");
    return detail::lml_from_factor(*llt_, residual_);
  }

 private:
  Eigen::MatrixXd to_internal_inputs(const Eigen::MatrixXd& in) const {
    Eigen::MatrixXd out = in;
    for (Eigen::Index d = 0; d < in.cols(); ++d) {
      out.col(d) = (in.col(d).array() - scaling_.x_offset(d)) / scaling_.x_scale(d);
    }
    return out;
  }

  GpDataset raw_;
  GpHyperparameters hp_;
  GpScaling scaling_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd residual_;
  Eigen::VectorXd alpha_;
  std::optional<Eigen::LLT<Eigen::MatrixXd>> llt_;
};

/// Box over which inputs are normalized to the unit cube when fitting.
struct InputBounds {
  std::vector<double> lower;
  std::vector<double> upper;
};

struct GpFitSettings {
  int starts = 16;
  std::uint64_t seed = 0x5eed'6b1du;
  double min_step = 1e-3;  // pattern-search resolution, log units
  int max_sweeps = 200;
};

struct GpFitReport {
  std::vector<double> start_lml;  // LML at each multi-start seed point
  double best_lml = -std::numeric_limits<double>::infinity();
  bool degenerate = false;
};

namespace detail {

struct LogBox {
  std::vector<double> lo;
  std::vector<double> hi;
};

// Layout: [log length scales..., log signal variance, log noise variance].
inline GpHyperparameters unpack(std::span<const double> p, Eigen::Index dim) {
  GpHyperparameters hp;
  hp.length_scales.resize(dim);
  for (Eigen::Index d = 0; d < dim; ++d) hp.length_scales(d) = std::exp(p[static_cast<std::size_t>(d)]);
  hp.signal_variance = std::exp(p[static_cast<std::size_t>(dim)]);
  hp.noise_variance = std::exp(p[static_cast<std::size_t>(dim) + 1]);
  hp.prior_mean = 0.0;
  return hp;
}

inline double safe_lml(const GpDataset& data, std::span<const double> p) {
  try {
    const double v = log_marginal_likelihood(data, unpack(p, data.dim()));
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  } catch (const GpError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

}  // namespace detail

/// Fits hyperparameters by maximizing the log marginal likelihood.
///
/// Inputs are mapped to the unit box over `bounds` (or the data range when
/// none are given) and targets are standardized, so the prior mean is 0 in
/// internal units. The search runs a compass pattern search in log space
/// from `settings.starts` seeds; seed 0 is the geometric mid-point of the
/// box, the others a shifted Halton design. Bounds, relative to the unit
/// input range and unit target variance: length scales [1e-2, 1e1], signal
/// variance [1e-4, 1e2], noise variance [1e-8, 1e-2].
///
/// Identical targets give a constant model at floor hyperparameters.
inline GpModel fit_gp(const GpDataset& data, const std::optional<InputBounds>& bounds = std::nullopt,
                      const GpFitSettings& settings = {}, GpFitReport* report = nullptr) {
  const Eigen::Index n = data.size();
  const Eigen::Index dim = data.dim();
  if (n < 1) throw GpError("gp: fit needs at least one point");
  if (data.inputs.rows() != n) throw GpError("gp: input and target counts differ");

  GpScaling sc;
  sc.x_offset.resize(dim);
  sc.x_scale.resize(dim);
  for (Eigen::Index d = 0; d < dim; ++d) {
    double lo, hi;
    if (bounds) {
      if (bounds->lower.size() != static_cast<std::size_t>(dim) || bounds->upper.size() != static_cast<std::size_t>(dim)) {
        throw GpError("gp: bounds dimension does not match data");
      }
      lo = bounds->lower[static_cast<std::size_t>(d)];
      hi = bounds->upper[static_cast<std::size_t>(d)];
    } else {
      lo = data.inputs.col(d).minCoeff();
      hi = data.inputs.col(d).maxCoeff();
    }
    sc.x_offset(d) = lo;
    sc.x_scale(d) = (hi - lo) > 1e-12 ? (hi - lo) : 1.0;
  }
  const double mean = data.targets.mean();
  const double var = (data.targets.array() - mean).square().mean();
  const double sd = std::sqrt(var);
  sc.y_offset = mean;

  GpFitReport local;
  GpFitReport& rep = report ? *report : local;
  rep = {};

  const std::size_t np = static_cast<std::size_t>(dim) + 2;
  detail::LogBox box{std::vector<double>(np), std::vector<double>(np)};
  for (Eigen::Index d = 0; d < dim; ++d) {
    box.lo[static_cast<std::size_t>(d)] = std::log(1e-2);
    box.hi[static_cast<std::size_t>(d)] = std::log(1e1);
  }
  box.lo[np - 2] = std::log(1e-4);
  box.hi[np - 2] = std::log(1e2);
  box.lo[np - 1] = std::log(1e-8);
  box.hi[np - 1] = std::log(1e-2);

  if (n < 2 || !(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
    // Degenerate: nothing to learn from the targets' spread.
    sc.y_scale = 1.0;
    std::vector<double> p(np);
    for (std::size_t i = 0; i < np; ++i) p[i] = 0.5 * (box.lo[i] + box.hi[i]);
    if (n >= 2) {
      p[np - 2] = box.lo[np - 2];
      p[np - 1] = box.lo[np - 1];
    }
    rep.degenerate = true;
    return GpModel(data, detail::unpack(p, dim), sc);
  }
  sc.y_scale = sd;

  GpDataset internal;
  internal.inputs = data.inputs;
  for (Eigen::Index d = 0; d < dim; ++d) {
    internal.inputs.col(d) = (data.inputs.col(d).array() - sc.x_offset(d)) / sc.x_scale(d);
  }
  internal.targets = (data.targets.array() - mean) / sd;

  const auto halton = shifted_halton(static_cast<std::size_t>(std::max(settings.starts - 1, 0)), np, settings.seed);
  std::vector<double> best_p;
  double best = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < settings.starts; ++s) {
    std::vector<double> p(np);
    for (std::size_t i = 0; i < np; ++i) {
      const double u = (s == 0) ? 0.5 : halton[static_cast<std::size_t>(s - 1) * np + i];
      p[i] = box.lo[i] + u * (box.hi[i] - box.lo[i]);
    }
    double f = detail::safe_lml(internal, p);
    rep.start_lml.push_back(f);

    double step = 0.25;
    for (int sweep = 0; sweep < settings.max_sweeps && step >= settings.min_step; ++sweep) {
      bool improved = false;
      for (std::size_t i = 0; i < np; ++i) {
        for (double dir : {+1.0, -1.0}) {
          const double width = box.hi[i] - box.lo[i];
          const double cand = std::clamp(p[i] + dir * step * width, box.lo[i], box.hi[i]);
          if (cand == p[i]) continue;
          const double old = p[i];
          p[i] = cand;
          const double fc = detail::safe_lml(internal, p);
          if (fc > f) {
            f = fc;
            improved = true;
            break;
          }
          p[i] = old;
        }
      }
      if (!improved) step *= 0.5;
    }
    if (f > best || best_p.empty()) {
      best = f;
      best_p = p;
    }
  }
  rep.best_lml = best;
  if (!std::isfinite(best)) throw GpError("gp: no hyperparameter setting yields a positive-definite covariance");
  return GpModel(data, detail::unpack(best_p, dim), sc);
}

}  // namespace bompc
