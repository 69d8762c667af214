#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "bompc/bo.hpp"

using namespace bompc;

namespace {

GpModel toy_model(const std::vector<std::vector<double>>& x, const std::vector<double>& y, double ls = 0.3) {
  GpDataset d;
  d.inputs.resize(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(x[0].size()));
  d.targets.resize(static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x[i].size(); ++j) d.inputs(i, j) = x[i][j];
    d.targets(i) = y[i];
  }
  GpHyperparameters hp;
  hp.signal_variance = 1.0;
  hp.length_scales = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(x[0].size()), ls);
  hp.noise_variance = 1e-8;
  return GpModel(d, hp);
}

GpModel random_fitted_model(std::uint64_t seed, std::size_t dim, int n) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GpDataset d;
  d.inputs.resize(n, static_cast<Eigen::Index>(dim));
  d.targets.resize(n);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      d.inputs(i, static_cast<Eigen::Index>(j)) = u(gen);
      s += std::sin(4.0 * d.inputs(i, static_cast<Eigen::Index>(j)));
    }
    d.targets(i) = s + 0.05 * u(gen);
  }
  return fit_gp(d, InputBounds{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)});
}

}  // namespace

TEST(Ei, DeterministicCases) {
  EXPECT_EQ(expected_improvement(1.0, 0.0, 1.0, 0.0), 0.0);
  EXPECT_EQ(expected_improvement(1.0, 0.0, 1.0, 0.01), 0.0);
  EXPECT_DOUBLE_EQ(expected_improvement(1.0 + 0.01 + 0.5, 0.0, 1.0, 0.01), 0.5);
  EXPECT_NEAR(expected_improvement(1.01, 1.0, 1.0, 0.01), 1.0 / std::sqrt(2.0 * M_PI), 1e-15);
}

TEST(Ei, MatchesMonteCarlo) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (auto [mu, sd] : {std::pair{1.01, 1.0}, std::pair{0.3, 0.7}, std::pair{2.5, 0.4}}) {
    const double best = 1.0, margin = 0.01;
    double acc = 0.0;
    const int samples = 1000000;
    for (int i = 0; i < samples; ++i) acc += std::max(0.0, mu + sd * n01(gen) - best - margin);
    EXPECT_NEAR(expected_improvement(mu, sd, best, margin), acc / samples, 1e-2) << mu << " " << sd;
  }
}

TEST(Ei, NonNegativeOnFittedModels) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const GpModel m = random_fitted_model(s, 2, 10);
    const double best = m.dataset().targets.maxCoeff();
    for (int i = 0; i < 200; ++i) {
      const std::vector<double> q{u(gen), u(gen)};
      EXPECT_GE(expected_improvement(m, q, best), 0.0);
    }
  }
}

TEST(Propose, StaysInBounds) {
  const GpModel m = random_fitted_model(3, 3, 12);
  const ParamDomain dom{{0.0, 0.2, 0.5}, {1.0, 0.3, 0.5}};
  AcquisitionSettings fast;
  fast.samples = 64;
  fast.refine_iterations = 10;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto theta = propose_next(m, dom, seed, fast);
    EXPECT_TRUE(dom.contains(theta)) << "seed " << seed;
  }
}

TEST(Propose, OneDimensionalToyPicksTheInterior) {
  const GpModel m = toy_model({{0.0}, {1.0}}, {0.0, 0.0});
  const ParamDomain dom{{0.0}, {1.0}};
  const auto theta = propose_next(m, dom, 4);
  EXPECT_GT(theta[0], 0.2);
  EXPECT_LT(theta[0], 0.8);
  const double at = expected_improvement(m, theta, 0.0);
  EXPECT_GE(at, expected_improvement(m, std::vector<double>{0.0}, 0.0));
  EXPECT_GE(at, expected_improvement(m, std::vector<double>{1.0}, 0.0));
}

TEST(Propose, DominatesTheRawSamples) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const GpModel m = random_fitted_model(20 + seed, 2, 8);
    const ParamDomain dom = ParamDomain::uniform(2, 0.0, 1.0);
    const double best = m.dataset().targets.maxCoeff();
    const auto theta = propose_next(m, dom, seed);
    const double ei = expected_improvement(m, theta, best);
    const auto unit = shifted_halton(512, 2, seed);
    for (std::size_t i = 0; i < 512; ++i) {
      const auto raw = dom.from_unit(std::span<const double>(unit).subspan(2 * i, 2));
      EXPECT_GE(ei, expected_improvement(m, raw, best));
    }
  }
}

TEST(Propose, IsDeterministic) {
  const GpModel m = random_fitted_model(2, 2, 9);
  const ParamDomain dom = ParamDomain::uniform(2, 0.0, 1.0);
  EXPECT_EQ(propose_next(m, dom, 7), propose_next(m, dom, 7));
}

TEST(RunBo, BudgetCountsAcquisitionsAfterTheDesign) {
  const ParamDomain dom = ParamDomain::uniform(1, 0.0, 1.0);
  BoSettings s;
  s.budget = 1;
  s.n_init = 1;
  s.theta0 = {0.2};
  int calls = 0;
  const BoTrace t = run_bo([&](std::span<const double> th) { ++calls; return -th[0]; }, dom, s);
  ASSERT_EQ(t.records.size(), 2u);
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(t.records[0].theta, std::vector<double>{0.2});
  EXPECT_FALSE(t.records[0].surrogate.has_value());
  EXPECT_TRUE(t.records[1].surrogate.has_value());

  s.n_init = 4;
  s.budget = 3;
  EXPECT_EQ(run_bo([](std::span<const double> th) { return th[0]; }, dom, s).records.size(), 7u);
}

TEST(RunBo, FirstPointIsThetaZeroOrTheCentre) {
  const ParamDomain dom{{0.0, -2.0}, {1.0, 2.0}};
  BoSettings s;
  s.budget = 1;
  s.n_init = 2;
  const auto f = [](std::span<const double> th) { return -th[0] * th[0] - th[1] * th[1]; };
  EXPECT_EQ(run_bo(f, dom, s).records[0].theta, (std::vector<double>{0.5, 0.0}));
  s.theta0 = {3.0, -1.0};
  EXPECT_EQ(run_bo(f, dom, s).records[0].theta, (std::vector<double>{1.0, -1.0}));
  s.theta0 = {0.1};
  EXPECT_THROW(run_bo(f, dom, s), BoError);
}

TEST(RunBo, QuadraticOptimum) {
  const ParamDomain dom = ParamDomain::uniform(1, 0.0, 1.0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    BoSettings s;
    s.seed = seed;
    s.n_init = 5;
    s.budget = 25;
    const BoTrace t = run_bo([](std::span<const double> th) { return -(th[0] - 0.3) * (th[0] - 0.3); }, dom, s);
    ASSERT_LE(t.records.size(), 30u);
    EXPECT_LE(std::abs(t.best().theta[0] - 0.3), 0.05) << "seed " << seed;
  }
}

TEST(RunBo, BowlOptimum) {
  const ParamDomain dom = ParamDomain::uniform(2, -1.0, 1.0);
  const auto bowl = [](std::span<const double> th) {
    return 10.0 - (th[0] - 0.2) * (th[0] - 0.2) - 2.0 * (th[1] + 0.4) * (th[1] + 0.4);
  };
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    BoSettings s;
    s.seed = seed;
    s.n_init = 5;
    s.budget = 25;
    const BoTrace t = run_bo(bowl, dom, s);
    EXPECT_GE(t.best().g, 10.0 * 0.99) << "seed " << seed;
  }
}

TEST(RunBo, TraceInvariants) {
  const ParamDomain dom{{-1.0, 0.0, 2.0}, {1.0, 0.5, 4.0}};
  BoSettings s;
  s.budget = 12;
  s.seed = 9;
  const auto f = [](std::span<const double> th) { return std::sin(3 * th[0]) + th[1] * th[2]; };
  const BoTrace a = run_bo(f, dom, s);
  double best = -INFINITY;
  for (const auto& r : a.records) {
    EXPECT_TRUE(dom.contains(r.theta));
    best = std::max(best, r.g);
    EXPECT_EQ(r.best_g, best);
  }
  const BoTrace b = run_bo(f, dom, s);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].theta, b.records[i].theta);
    EXPECT_EQ(a.records[i].g, b.records[i].g);
  }
  s.seed = 10;
  EXPECT_NE(run_bo(f, dom, s).records[1].theta, a.records[1].theta);
}

TEST(RunBo, FailuresArePenalizedAndTheLoopContinues) {
  const ParamDomain dom = ParamDomain::uniform(1, 0.0, 1.0);
  BoSettings s;
  s.budget = 6;
  s.n_init = 3;
  s.theta0 = {0.9};
  int calls = 0;
  const BoTrace t = run_bo(
      [&](std::span<const double> th) {
        ++calls;
        if (calls == 3) throw std::runtime_error("boom");
        if (calls == 5) return std::nan("");
        return -(th[0] - 0.5) * (th[0] - 0.5);
      },
      dom, s);
  ASSERT_EQ(t.records.size(), 9u);
  EXPECT_TRUE(t.records[2].failed);
  const double g0 = t.records[0].g, g1 = t.records[1].g;
  const double m = 0.5 * (g0 + g1);
  const double sd = std::sqrt(0.5 * ((g0 - m) * (g0 - m) + (g1 - m) * (g1 - m)));
  EXPECT_NEAR(t.records[2].g, std::min(g0, g1) - sd, 1e-15);
  EXPECT_TRUE(t.records[4].failed);
  EXPECT_TRUE(std::isfinite(t.records[4].g));
  EXPECT_FALSE(t.records[8].failed);
}

TEST(RunBo, RejectsBadSettings) {
  const ParamDomain dom = ParamDomain::uniform(1, 0.0, 1.0);
  BoSettings s;
  s.budget = 0;
  const auto f = [](std::span<const double>) { return 0.0; };
  EXPECT_THROW(run_bo(f, dom, s), BoError);
  s.budget = 1;
  s.n_init = 0;
  EXPECT_THROW(run_bo(f, dom, s), BoError);
  EXPECT_THROW(ParamDomain({1.0}, {0.0}), BoError);
  EXPECT_THROW(ParamDomain({}, {}), BoError);
}
