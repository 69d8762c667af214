#pragma once

// Reference implementations used only by the tests. They deliberately take a
// different route from the library code they check.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "bompc/ocp.hpp"

namespace oracle {

/// Natural cubic spline by a dense solve of the full (n x n) system for the
/// second derivatives, boundary rows included, then the textbook
/// moment-form evaluation. Clamps outside the knot range.
inline double natural_spline(const std::vector<double>& x, const std::vector<double>& y, double q) {
  const int n = static_cast<int>(x.size());
  if (q <= x.front()) return y.front();
  if (q >= x.back()) return y.back();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  a(0, 0) = 1.0;
  a(n - 1, n - 1) = 1.0;
  for (int i = 1; i < n - 1; ++i) {
    const double h0 = x[i] - x[i - 1];
    const double h1 = x[i + 1] - x[i];
    a(i, i - 1) = h0 / 6.0;
    a(i, i) = (h0 + h1) / 3.0;
    a(i, i + 1) = h1 / 6.0;
    b(i) = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
  }
  const Eigen::VectorXd m = a.fullPivLu().solve(b);
  int i = 0;
  while (!(q >= x[i] && q < x[i + 1])) ++i;
  const double h = x[i + 1] - x[i];
  const double l = x[i + 1] - q;
  const double r = q - x[i];
  return m(i) * l * l * l / (6.0 * h) + m(i + 1) * r * r * r / (6.0 * h) + (y[i] / h - m(i) * h / 6.0) * l +
         (y[i + 1] / h - m(i + 1) * h / 6.0) * r;
}

/// Same construction as natural_spline() with the moments cached, for
/// oracles that evaluate many times.
class CachedSpline {
 public:
  CachedSpline(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    const int n = static_cast<int>(x_.size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    a(0, 0) = 1.0;
    a(n - 1, n - 1) = 1.0;
    for (int i = 1; i < n - 1; ++i) {
      const double h0 = x_[i] - x_[i - 1];
      const double h1 = x_[i + 1] - x_[i];
      a(i, i - 1) = h0 / 6.0;
      a(i, i) = (h0 + h1) / 3.0;
      a(i, i + 1) = h1 / 6.0;
      b(i) = (y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0;
    }
    m_ = a.fullPivLu().solve(b);
  }

  double operator()(double q) const {
    if (q <= x_.front()) return y_.front();
    if (q >= x_.back()) return y_.back();
    std::size_t i = 0;
    while (!(q >= x_[i] && q < x_[i + 1])) ++i;
    const double h = x_[i + 1] - x_[i];
    const double l = x_[i + 1] - q;
    const double r = q - x_[i];
    return m_(i) * l * l * l / (6.0 * h) + m_(i + 1) * r * r * r / (6.0 * h) + (y_[i] / h - m_(i) * h / 6.0) * l +
           (y_[i + 1] / h - m_(i + 1) * h / 6.0) * r;
  }

 private:
  std::vector<double> x_;
  std::vector<double> y_;
  Eigen::VectorXd m_;
};

/// Cost by an explicit rollout over reference splines (no backoff).
struct CostOracle {
  explicit CostOracle(const bompc::CellParams& cell)
      : k(cell.constants()),
        ocv(cell.table().soc, cell.table().ocv),
        r0(cell.table().soc, cell.table().r0),
        r1(cell.table().soc, cell.table().r1),
        c1(cell.table().soc, cell.table().c1) {}

  double operator()(bompc::EcmState x, const std::vector<double>& inputs, double lambda, double epsilon, double ts) const {
    double cost = 0.0;
    for (double i : inputs) {
      const double v = ocv(x.z) + x.u1 + r0(x.z) * i;
      const double over = std::max(0.0, v - k.v_t_max);
      const double under = std::max(0.0, k.v_t_min - v);
      cost += (1.0 - x.z) * (1.0 - x.z) + lambda * (over * over + under * under) + epsilon * i * i;
      const double a = std::exp(-ts / (r1(x.z) * c1(x.z)));
      x.u1 = a * x.u1 + (1.0 - a) * r1(x.z) * i;
      x.z += k.eta * ts / k.q * i;
    }
    return cost + (1.0 - x.z) * (1.0 - x.z);
  }

  bompc::CellConstants k;
  CachedSpline ocv, r0, r1, c1;
};

/// Best cost over the 0.1 A input grid, all 61^N sequences.
inline double grid_minimum(const CostOracle& cost, const bompc::EcmState& x0, std::size_t n, const bompc::OcpConfig& cfg) {
  std::vector<int> idx(n, 0);
  std::vector<double> inputs(n);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    for (std::size_t j = 0; j < n; ++j) inputs[j] = 0.1 * idx[j];
    best = std::min(best, cost(x0, inputs, cfg.lambda, cfg.epsilon, cfg.ts));
    std::size_t j = 0;
    while (j < n && ++idx[j] > 60) idx[j++] = 0;
    if (j == n) break;
  }
  return best;
}

/// Random points in the unit cube, pairwise at least `min_sep` apart in
/// length-scale units. Keeps the kernel matrix well conditioned so exact
/// interpolation is a fair expectation.
template <class Gen>
std::vector<std::vector<double>> separated_points(Gen& gen, int n, const std::vector<double>& ls, double min_sep) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> pts;
  for (int tries = 0; static_cast<int>(pts.size()) < n; ++tries) {
    if (tries > 100000) throw std::runtime_error("separated_points: cannot place the points");
    std::vector<double> p(ls.size());
    for (auto& v : p) v = u(gen);
    bool ok = true;
    for (const auto& q : pts) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < p.size(); ++j) d2 += (p[j] - q[j]) * (p[j] - q[j]) / (ls[j] * ls[j]);
      if (d2 < min_sep * min_sep) ok = false;
    }
    if (ok) pts.push_back(std::move(p));
  }
  return pts;
}

}  // namespace oracle
