#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "bompc/spline.hpp"
#include "oracles.hpp"

using bompc::Spline;
using bompc::SplineError;

TEST(Spline, ConstantData) {
  Spline s({0.0, 1.0}, {2.0, 2.0});
  EXPECT_DOUBLE_EQ(s(0.5), 2.0);
  EXPECT_DOUBLE_EQ(s(-1.0), 2.0);
  EXPECT_DOUBLE_EQ(s(3.0), 2.0);
}

TEST(Spline, ReproducesLinearData) {
  Spline three({0.0, 0.5, 1.0}, {0.0, 0.5, 1.0});
  EXPECT_NEAR(three(0.25), 0.25, 1e-15);
  Spline two({0.0, 1.0}, {0.0, 1.0});
  EXPECT_NEAR(two(0.7), 0.7, 1e-15);

  std::vector<double> x = {0.0, 0.07, 0.3, 0.31, 0.6, 0.82, 1.0};
  std::vector<double> y;
  for (double v : x) y.push_back(-1.5 + 3.25 * v);
  Spline s(x, y);
  double worst = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double q = i / 1000.0;
    worst = std::max(worst, std::abs(s(q) - (-1.5 + 3.25 * q)));
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(Spline, ThreePointHandSolve) {
  // Interior second derivative: 2(h0 + h1) m1 = 6((0 - 1)/h1 - (1 - 0)/h0) with
  // h0 = h1 = 0.5, so m1 = -12; on [0, 0.5] at x = 0.25 the moment form gives
  // -12 * 0.25^3 / 3 + (2 + 1) * 0.25 = 0.6875.
  Spline s({0.0, 0.5, 1.0}, {0.0, 1.0, 0.0});
  EXPECT_NEAR(s(0.25), 0.6875, 1e-15);
  EXPECT_NEAR(s(0.75), 0.6875, 1e-15);
  EXPECT_NEAR(s(0.25), oracle::natural_spline({0.0, 0.5, 1.0}, {0.0, 1.0, 0.0}, 0.25), 1e-15);
}

TEST(Spline, MatchesDenseReferenceOnRandomData) {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 12;
    std::vector<double> x(n), y(n);
    double acc = -0.5;
    for (int i = 0; i < n; ++i) {
      acc += 0.05 + u(gen);
      x[i] = acc;
      y[i] = 4.0 * u(gen) - 2.0;
    }
    Spline s(x, y);
    for (int k = 0; k <= 200; ++k) {
      const double q = x.front() - 0.3 + (x.back() - x.front() + 0.6) * k / 200.0;
      EXPECT_NEAR(s(q), oracle::natural_spline(x, y, q), 1e-11) << "trial " << trial << " q " << q;
    }
  }
}

TEST(Spline, InterpolatesKnots) {
  std::vector<double> x = {0.0, 0.1, 0.25, 0.5, 0.55, 0.9, 1.0};
  std::vector<double> y = {3.0, 3.4, -2.0, 1e3, 7.5, 0.0, -1e-4};
  Spline s(x, y);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_LE(std::abs(s(x[i]) - y[i]), 1e-12 * std::max(1.0, std::abs(y[i])));
  }
}

TEST(Spline, SecondDerivativeContinuousAtInteriorKnots) {
  std::vector<double> x = {0.0, 0.2, 0.35, 0.6, 0.8, 1.0};
  std::vector<double> y = {1.0, -0.5, 0.25, 2.0, 1.5, 0.0};
  Spline s(x, y);
  const double h = 1e-4;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) {
    // One-sided second differences stay inside a single segment.
    const double left = (s(x[i]) - 2.0 * s(x[i] - h) + s(x[i] - 2.0 * h)) / (h * h);
    const double right = (s(x[i] + 2.0 * h) - 2.0 * s(x[i] + h) + s(x[i])) / (h * h);
    const double scale = std::max({1.0, std::abs(left), std::abs(right)});
    EXPECT_NEAR(left, right, 1e-2 * scale) << "knot " << i;
  }
  // Exact check on the coefficients: c is half the second derivative.
  const auto seg = s.segments();
  for (std::size_t i = 1; i < seg.size(); ++i) {
    const double hh = x[i] - x[i - 1];
    const double from_left = 2.0 * seg[i - 1].c + 6.0 * seg[i - 1].d * hh;
    const double from_right = 2.0 * seg[i].c;
    EXPECT_NEAR(from_left, from_right, 1e-6 * std::max(1.0, std::abs(from_right)));
  }
  EXPECT_EQ(seg.front().c, 0.0);
  const double hn = x.back() - x[x.size() - 2];
  EXPECT_NEAR(2.0 * seg.back().c + 6.0 * seg.back().d * hn, 0.0, 1e-9);
}

TEST(Spline, ClampsOutsideRange) {
  Spline s({0.0, 0.4, 1.0}, {1.0, 3.0, 2.0});
  for (double q : {-10.0, -0.5, -1e-9}) EXPECT_EQ(s(q), 1.0);
  for (double q : {1.0 + 1e-9, 2.0, 1e6}) EXPECT_EQ(s(q), 2.0);
  EXPECT_EQ(s.derivative(-1.0), 0.0);
  EXPECT_EQ(s.derivative(2.0), 0.0);
}

TEST(Spline, DerivativeMatchesFiniteDifference) {
  Spline s({0.0, 0.3, 0.5, 1.0}, {0.0, 1.0, -1.0, 0.5});
  for (double q : {0.05, 0.29, 0.31, 0.45, 0.77, 0.99}) {
    const double h = 1e-6;
    EXPECT_NEAR(s.derivative(q), (s(q + h) - s(q - h)) / (2.0 * h), 1e-5);
  }
}

TEST(Spline, FloorClipsEvaluations) {
  Spline s = Spline({0.0, 0.5, 1.0}, {0.0, -1.0, 0.0}).with_floor(-0.25);
  EXPECT_EQ(s(0.5), -0.25);
  EXPECT_EQ(s.derivative(0.5), 0.0);
  EXPECT_NEAR(s(0.0), 0.0, 1e-15);
  EXPECT_EQ(s.floor(), -0.25);
}

TEST(Spline, RejectsBadInput) {
  EXPECT_THROW(Spline({0.0, 1.0}, {1.0}), SplineError);
  EXPECT_THROW(Spline({0.0}, {1.0}), SplineError);
  EXPECT_THROW(Spline({0.0, 0.0}, {1.0, 2.0}), SplineError);
  EXPECT_THROW(Spline({0.0, 0.5, 0.4}, {1.0, 2.0, 3.0}), SplineError);
  EXPECT_THROW(Spline({0.0, 1.0}, {1.0, std::nan("")}), SplineError);
  EXPECT_THROW(Spline({0.0, std::numeric_limits<double>::infinity()}, {1.0, 2.0}), SplineError);
  Spline ok({0.0, 1.0}, {0.0, 1.0});
  EXPECT_THROW(ok(std::nan("")), SplineError);
  EXPECT_THROW(ok(std::numeric_limits<double>::infinity()), SplineError);
}

TEST(Spline, UniformGrid) {
  const auto g = bompc::uniform_grid(0.0, 1.0, 7);
  ASSERT_EQ(g.size(), 7u);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_EQ(g.back(), 1.0);
  EXPECT_NEAR(g[1], 1.0 / 6.0, 1e-16);
}
