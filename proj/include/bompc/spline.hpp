#pragma once

// Natural cubic spline interpolation in one dimension.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bompc {

class SplineError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Piecewise cubic through (knots[i], values[i]) with zero second derivative
/// at both ends. Immutable after construction.
///
/// Outside [knots.front(), knots.back()] the abscissa is clamped, so the
/// spline extrapolates with its boundary values. An optional lower floor
/// clips every evaluation from below; it is used where the interpolated
/// quantity must stay positive (resistances) or non-negative (backoff).
class Spline {
 public:
  /// Coefficients of a + b*dx + c*dx^2 + d*dx^3 on [knot_i, knot_{i+1}).
  struct Segment {
    double a;
    double b;
    double c;
    double d;
  };

  Spline(std::vector<double> knots, std::vector<double> values)
      : knots_(std::move(knots)), values_(std::move(values)) {
    if (knots_.size() != values_.size()) {
      throw SplineError("spline: knots and values differ in length (" + std::to_string(knots_.size()) +
                        " vs " + std::to_string(values_.size()) + ")");
    }
    if (knots_.size() < 2) throw SplineError("spline: at least two knots are required");
    for (std::size_t i = 0; i < knots_.size(); ++i) {
      if (!std::isfinite(knots_[i]) || !std::isfinite(values_[i])) {
        throw SplineError("spline: non-finite knot or value at index " + std::to_string(i));
      }
      if (i > 0 && !(knots_[i] > knots_[i - 1])) {
        throw SplineError("spline: knots must be strictly increasing (index " + std::to_string(i) + ")");
      }
    }
    build_segments();
  }

  double operator()(double x) const { return eval(x); }

  double eval(double x) const {
    if (!std::isfinite(x)) throw SplineError("spline: evaluation at non-finite abscissa");
    return std::max(floor_, eval_unclamped_value(x));
  }

  /// First derivative of eval(). Zero outside the knot range and wherever the
  /// floor is active.
  double derivative(double x) const {
    if (!std::isfinite(x)) throw SplineError("spline: evaluation at non-finite abscissa");
    if (x <= knots_.front() || x >= knots_.back()) return 0.0;
    auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
    const auto i = static_cast<std::size_t>(std::distance(knots_.begin(), it)) - 1;
    const Segment& s = segments_[i];
    const double dx = x - knots_[i];
    if (s.a + dx * (s.b + dx * (s.c + dx * s.d)) < floor_) return 0.0;
    return s.b + dx * (2.0 * s.c + 3.0 * dx * s.d);
  }

  /// Copy of this spline whose evaluations are clipped below at `floor`.
  Spline with_floor(double floor) const {
    Spline s = *this;
    s.floor_ = floor;
    return s;
  }

  double floor() const { return floor_; }
  std::span<const double> knots() const { return knots_; }
  std::span<const double> values() const { return values_; }
  std::span<const Segment> segments() const { return segments_; }

 private:
  double eval_unclamped_value(double x) const {
    if (x <= knots_.front()) return values_.front();
    if (x >= knots_.back()) return values_.back();
    auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
    const auto i = static_cast<std::size_t>(std::distance(knots_.begin(), it)) - 1;
    const Segment& s = segments_[i];
    const double dx = x - knots_[i];
    return s.a + dx * (s.b + dx * (s.c + dx * s.d));
  }

  void build_segments() {
    const std::size_t n = knots_.size();
    std::vector<double> h(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) h[i] = knots_[i + 1] - knots_[i];

    // Second derivatives m[i]; m[0] = m[n-1] = 0. Thomas algorithm on the
    // interior rows h[i-1] m[i-1] + 2(h[i-1]+h[i]) m[i] + h[i] m[i+1] = rhs[i].
    std::vector<double> m(n, 0.0);
    if (n > 2) {
      std::vector<double> diag(n, 0.0);
      std::vector<double> rhs(n, 0.0);
      for (std::size_t i = 1; i + 1 < n; ++i) {
        diag[i] = 2.0 * (h[i - 1] + h[i]);
        rhs[i] = 6.0 * ((values_[i + 1] - values_[i]) / h[i] - (values_[i] - values_[i - 1]) / h[i - 1]);
      }
      for (std::size_t i = 2; i + 1 < n; ++i) {
        const double w = h[i - 1] / diag[i - 1];
        diag[i] -= w * h[i - 1];
        rhs[i] -= w * rhs[i - 1];
      }
      m[n - 2] = rhs[n - 2] / diag[n - 2];
      for (std::size_t i = n - 2; i-- > 1;) m[i] = (rhs[i] - h[i] * m[i + 1]) / diag[i];
    }

    segments_.resize(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      segments_[i].a = values_[i];
      segments_[i].b = (values_[i + 1] - values_[i]) / h[i] - h[i] * (2.0 * m[i] + m[i + 1]) / 6.0;
      segments_[i].c = m[i] / 2.0;
      segments_[i].d = (m[i + 1] - m[i]) / (6.0 * h[i]);
    }
  }

  std::vector<double> knots_;
  std::vector<double> values_;
  std::vector<Segment> segments_;
  double floor_ = -std::numeric_limits<double>::infinity();
};

/// Uniform grid of `count` points on [lo, hi], endpoints included.
inline std::vector<double> uniform_grid(double lo, double hi, std::size_t count) {
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i) {
    g[i] = (count == 1) ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  if (count > 1) g.back() = hi;
  return g;
}

}  // namespace bompc
