#include "rmfg/rsde.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "rmfg/errors.hpp"
#include "rmfg/models.hpp"
#include "rmfg/rng.hpp"

namespace rmfg {
namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

std::shared_ptr<const RoughPath> brownian_path(const TimeGrid& grid, std::size_t k,
                                               std::uint64_t seed) {
  RandomStream rng(seed, StreamModule::kCommon, 0);
  Mat inc(grid.steps(), k);
  for (Eigen::Index i = 0; i < inc.size(); ++i) {
    inc.data()[i] = std::sqrt(grid.dt()) * rng.normal();
  }
  return std::make_shared<const RoughPath>(ito_lift(inc, grid));
}

Environment constant_env(std::shared_ptr<const CoefficientSet> model,
                         std::shared_ptr<const RoughPath> path, const Mat& cloud) {
  auto flow = std::make_shared<const MeasureFlow>(
      MeasureFlow::constant(path->grid(), cloud, model->dims.rough));
  return make_environment(std::move(model), std::move(flow), std::move(path));
}

std::shared_ptr<const RelaxedPolicy> zero_policy(const TimeGrid& grid,
                                                 std::size_t du, std::size_t d) {
  return std::make_shared<const RelaxedPolicy>(
      RelaxedPolicy::constant(grid, {Vec::Zero(du)}, {1.0}, d));
}

TEST(SolveTest, ConstantCommonNoiseIsPureTranslation) {
  TimeGrid grid(1.0, 32);
  const auto model = make_model("gaussian", {{"dim", 2}, {"c", 0.7}});
  const auto path = brownian_path(grid, 2, 1);
  const Environment env = constant_env(model, path, Mat::Zero(4, 2));
  SolveOptions opt;
  opt.particles = 5;
  opt.init = InitialLaw::gaussian(Vec::Zero(2), Vec::Ones(2));
  const RsdeSolution sol = solve(env, zero_policy(grid, 2, 2), opt);
  for (std::size_t p = 0; p < 5; ++p) {
    for (std::size_t n = 0; n <= 32; ++n) {
      for (std::size_t i = 0; i < 2; ++i) {
        const double expected =
            sol.state.value(0, p)[i] + 0.7 * (path->value(n)(i) - path->value(0)(i));
        EXPECT_NEAR(sol.state.value(n, p)[i], expected, 1e-12);
      }
    }
  }
}

std::shared_ptr<CoefficientSet> random_classical_model(std::uint64_t seed) {
  RandomStream rng(seed, StreamModule::kTest, 1);
  const double a1 = rng.normal(), a2 = rng.normal(), a3 = rng.normal();
  const double s0 = 0.5 * rng.normal(), s1 = 0.3 * rng.normal();
  auto c = std::make_shared<CoefficientSet>(*make_model("no-interaction"));
  c->drift = [=](double, const Vec& x, const EmpiricalMeasure& mu, const Vec& u) {
    return Vec::Constant(1, a1 * std::sin(x(0)) + a2 * u(0) - a3 * mu.mean()(0));
  };
  c->diffusion = [=](double, const Vec& x, const EmpiricalMeasure&) {
    return Mat::Constant(1, 1, s0 + s1 * std::cos(x(0)));
  };
  c->common = [](double, const Vec&, const EmpiricalMeasure&) {
    return Mat::Zero(1, 1).eval();
  };
  c->common_gradient = c->common;
  c->common_measure_dependent = false;
  return c;
}

TEST(SolveTest, NoCommonNoiseIsBitwiseEulerMaruyama) {
  TimeGrid grid(1.0, 20);
  const auto path = brownian_path(grid, 1, 2);
  Mat cloud(3, 1);
  cloud << -0.5, 0.1, 0.8;
  for (std::uint64_t m = 0; m < 20; ++m) {
    const auto model = random_classical_model(m);
    const Environment env = constant_env(model, path, cloud);
    const Vec u = Vec::Constant(1, 0.3);
    auto policy = std::make_shared<const RelaxedPolicy>(
        RelaxedPolicy::constant(grid, {u}, {1.0}, 1));
    SolveOptions opt;
    opt.particles = 8;
    opt.seed = m;
    opt.init = InitialLaw::gaussian(Vec::Zero(1), Vec::Ones(1));
    const RsdeSolution sol = solve(env, policy, opt);
    const EmpiricalMeasure mu(cloud);
    for (std::size_t p = 0; p < 8; ++p) {
      Vec x = sol.state.value_vector(0, p);
      for (std::size_t n = 0; n < 20; ++n) {
        const double t = grid.time(n);
        const Vec b = model->drift(t, x, mu, u);
        const Mat s = model->diffusion(t, x, mu);
        x(0) = x(0) + b(0) * grid.dt() + s(0, 0) * sol.dw(n, p, 0);
        ASSERT_EQ(sol.state.value(n + 1, p)[0], x(0)) << "model " << m;
      }
    }
  }
}

TEST(SolveTest, LinearRoughEquationConvergesToClosedForm) {
  // X_T → X₀ exp(a B_T) for a smooth driver; fit the log-log error slope.
  const double a = 0.5, x0 = 1.3;
  const auto model = make_model("linear-rough", {{"a", a}});
  std::vector<double> logN, logErr;
  for (std::size_t N : {32, 64, 128, 256}) {
    TimeGrid grid(1.0, N);
    Mat nodes(N + 1, 1);
    for (std::size_t n = 0; n <= N; ++n) {
      const double t = grid.time(n);
      nodes(n, 0) = std::sin(6.0 * t) + 0.5 * t * t;
    }
    auto path = std::make_shared<const RoughPath>(smooth_lift(nodes, grid));
    const Environment env = constant_env(model, path, Mat::Zero(1, 1));
    SolveOptions opt;
    opt.particles = 1;
    opt.init = InitialLaw::point(Vec::Constant(1, x0));
    const RsdeSolution sol = solve(env, zero_policy(grid, 1, 1), opt);
    const double exact = x0 * std::exp(a * (nodes(N, 0) - nodes(0, 0)));
    logN.push_back(std::log(static_cast<double>(N)));
    logErr.push_back(std::log(std::abs(sol.state.value(N, 0)[0] - exact)));
  }
  const double mx = (logN[0] + logN[1] + logN[2] + logN[3]) / 4.0;
  const double my = (logErr[0] + logErr[1] + logErr[2] + logErr[3]) / 4.0;
  double sxy = 0.0, sxx = 0.0;
  for (int i = 0; i < 4; ++i) {
    sxy += (logN[i] - mx) * (logErr[i] - my);
    sxx += (logN[i] - mx) * (logN[i] - mx);
  }
  EXPECT_GE(-sxy / sxx, 0.9);
}

TEST(SolveTest, DerivativeSlotEqualsCommonNoise) {
  TimeGrid grid(1.0, 16);
  const auto model = make_model("tanh-interaction");
  const auto path = brownian_path(grid, 1, 3);
  Mat cloud(50, 1);
  for (int i = 0; i < 50; ++i) cloud(i, 0) = -1.0 + 0.04 * i;
  const Environment env = constant_env(model, path, cloud);
  SolveOptions opt;
  opt.particles = 20;
  opt.init = InitialLaw::gaussian(Vec::Zero(1), Vec::Ones(1));
  const RsdeSolution sol = solve(env, zero_policy(grid, 1, 1), opt);
  const EmpiricalMeasure mu(cloud);
  for (std::size_t n = 0; n <= 16; ++n) {
    for (std::size_t p = 0; p < 20; ++p) {
      const Vec x = sol.state.value_vector(n, p);
      EXPECT_NEAR(sol.state.derivative(n, p)[0],
                  model->common(grid.time(n), x, mu)(0, 0), 1e-12);
    }
  }
}

TEST(SolveTest, FromSolutionOfStillDynamicsIsTheInitialCloud) {
  TimeGrid grid(1.0, 8);
  const auto model = make_model("gaussian", {{"c", 0.0}});
  const auto path = brownian_path(grid, 1, 4);
  const Environment env = constant_env(model, path, Mat::Zero(1, 1));
  SolveOptions opt;
  opt.particles = 30;
  opt.init = InitialLaw::gaussian(Vec::Zero(1), Vec::Ones(1));
  const MeasureFlow flow = from_solution(solve(env, zero_policy(grid, 1, 1), opt));
  for (std::size_t n = 0; n <= 8; ++n) {
    EXPECT_EQ(wasserstein2(flow.cloud(n), flow.cloud(0)), 0.0);
  }
}

TEST(SolveTest, RelabelingParticlesPermutesPaths) {
  TimeGrid grid(1.0, 10);
  const auto model = make_model("lq");
  const auto path = brownian_path(grid, 1, 5);
  const Environment env = constant_env(model, path, Mat::Zero(5, 1));
  SolveOptions opt;
  opt.particles = 6;
  opt.init = InitialLaw::gaussian(Vec::Zero(1), Vec::Ones(1));
  const RsdeSolution a = solve(env, zero_policy(grid, 1, 1), opt);
  opt.streams = {5, 4, 3, 2, 1, 0};
  const RsdeSolution b = solve(env, zero_policy(grid, 1, 1), opt);
  for (std::size_t p = 0; p < 6; ++p) {
    EXPECT_EQ(a.state.value(10, p)[0], b.state.value(10, 5 - p)[0]);
  }
  std::ostringstream sa, sb;
  Mat xa = a.state.cloud(10), xb = b.state.cloud(10);
  std::sort(xa.data(), xa.data() + xa.size());
  std::sort(xb.data(), xb.data() + xb.size());
  EXPECT_EQ(xa, xb);
}

TEST(SolveTest, MixtureDriftAverages) {
  TimeGrid grid(1.0, 4);
  const auto model = make_model("no-interaction", {{"c0", 0.0}, {"c1", 0.0}, {"q", 0.0}});
  auto c = std::make_shared<CoefficientSet>(*model);
  c->diffusion = [](double, const Vec&, const EmpiricalMeasure&) {
    return Mat::Zero(1, 1).eval();
  };
  const auto path = brownian_path(grid, 1, 6);
  const Environment env = constant_env(c, path, Mat::Zero(1, 1));
  auto policy = std::make_shared<const RelaxedPolicy>(RelaxedPolicy::constant(
      grid, {Vec::Constant(1, -1.0), Vec::Constant(1, 2.0)}, {0.25, 0.75}, 1));
  SolveOptions opt;
  opt.particles = 2;
  const RsdeSolution sol = solve(env, policy, opt);
  EXPECT_NEAR(sol.state.value(4, 0)[0], 1.25, 1e-12);
  EXPECT_NEAR(sol.mean_action[0], 1.25, 1e-15);
  // Running cost ½ r E[u²] per unit time.
  EXPECT_NEAR(sol.running_cost[0], 0.5 * (0.25 * 1.0 + 0.75 * 4.0), 1e-12);
}

TEST(SolveTest, BlowUpReportsStep) {
  TimeGrid grid(1.0, 50);
  auto c = std::make_shared<CoefficientSet>(*make_model("no-interaction"));
  c->drift = [](double, const Vec& x, const EmpiricalMeasure&, const Vec&) {
    return Vec::Constant(1, x(0) * x(0) * 100.0);
  };
  const auto path = brownian_path(grid, 1, 7);
  const Environment env = constant_env(c, path, Mat::Zero(1, 1));
  SolveOptions opt;
  opt.particles = 1;
  opt.init = InitialLaw::point(Vec::Constant(1, 1.0));
  try {
    solve(env, zero_policy(grid, 1, 1), opt);
    FAIL() << "expected divergence";
  } catch (const DivergedError& e) {
    EXPECT_GT(e.step(), 0u);
    EXPECT_LE(e.step(), 50u);
  }
}

TEST(CausalTest, PrefixPoliciesPassTheAudit) {
  TimeGrid grid(1.0, 12);
  const auto model = make_model("no-interaction");
  const auto path = brownian_path(grid, 1, 8);
  const Environment env = constant_env(model, path, Mat::Zero(1, 1));
  const std::vector<Vec> actions = {Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)};
  SolveOptions opt;
  opt.particles = 16;
  auto sign_policy = std::make_shared<const RelaxedPolicy>(RelaxedPolicy::causal(
      grid, actions, [](std::size_t step, const NoisePrefix& w, RandomStream&) {
        return step == 0 ? 0u : (w.value()(0) > 0.0 ? 1u : 0u);
      }));
  const RsdeSolution sol = realize_from_measure(env, sign_policy, opt);
  EXPECT_TRUE(sol.audit_passed());
  for (std::size_t p = 0; p < 16; ++p) {
    for (std::size_t n = 1; n < 12; ++n) {
      double w = 0.0;
      for (std::size_t j = 0; j < n; ++j) w += sol.dw(j, p, 0);
      EXPECT_EQ(sol.sampled_action[n * 16 + p], w > 0.0 ? 1 : 0);
      EXPECT_EQ(sol.audit[n * 16 + p], static_cast<long long>(n) - 1);
    }
  }
}

TEST(CausalTest, PeekingIsRejected) {
  TimeGrid grid(1.0, 6);
  const auto model = make_model("no-interaction");
  const auto path = brownian_path(grid, 1, 9);
  const Environment env = constant_env(model, path, Mat::Zero(1, 1));
  auto peek = std::make_shared<const RelaxedPolicy>(RelaxedPolicy::causal(
      grid, {Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)},
      [](std::size_t step, const NoisePrefix& w, RandomStream&) {
        return w.increment(step, 0) > 0.0 ? 1u : 0u;
      }));
  SolveOptions opt;
  opt.particles = 4;
  EXPECT_THROW(realize_from_measure(env, peek, opt), CausalityViolation);
  EXPECT_THROW(realize_from_measure(env, zero_policy(grid, 1, 1), opt), InputError);
}

TEST(CouplingTest, RefinementChangesTheMeanAtTheExpectedRate) {
  const std::size_t fine = 256, P = 4000;
  TimeGrid fine_grid(1.0, fine);
  const auto model = make_model("tanh-interaction");
  RandomStream common(11, StreamModule::kCommon, 0);
  Mat fine_inc(fine, 1);
  for (std::size_t n = 0; n < fine; ++n) {
    fine_inc(n, 0) = std::sqrt(fine_grid.dt()) * common.normal();
  }
  const RoughPath fine_path = ito_lift(fine_inc, fine_grid);
  std::vector<double> fine_w(P * fine);
  for (std::size_t p = 0; p < P; ++p) {
    RandomStream rng(12, StreamModule::kIdiosyncratic, p);
    for (std::size_t n = 0; n < fine; ++n) fine_w[p * fine + n] = std::sqrt(fine_grid.dt()) * rng.normal();
  }
  Mat cloud(64, 1);
  for (int i = 0; i < 64; ++i) cloud(i, 0) = -1.0 + i / 32.0;
  std::vector<double> means;
  for (std::size_t N : {32, 64, 128, 256}) {
    const std::size_t stride = fine / N;
    auto path = std::make_shared<const RoughPath>(fine_path.coarsened(stride));
    auto w = std::make_shared<std::vector<double>>(P * N, 0.0);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t n = 0; n < fine; ++n) (*w)[p * N + n / stride] += fine_w[p * fine + n];
    }
    const Environment env = constant_env(model, path, cloud);
    SolveOptions opt;
    opt.particles = P;
    opt.init = InitialLaw::gaussian(Vec::Zero(1), Vec::Constant(1, 0.5));
    opt.increments = w;
    const RsdeSolution sol = solve(env, zero_policy(path->grid(), 1, 1), opt);
    means.push_back(sol.state.cloud(N).mean());
  }
  // Successive changes must shrink at least like N^{-1/2}.
  const double d1 = std::abs(means[1] - means[0]);
  const double d2 = std::abs(means[2] - means[1]);
  const double d3 = std::abs(means[3] - means[2]);
  const double slope = -std::log(d3 / d1) / std::log(4.0);
  EXPECT_GE(slope, 0.5 - 0.15) << d1 << ' ' << d2 << ' ' << d3;
}

TEST(SummaryTest, CsvShape) {
  TimeGrid grid(1.0, 3);
  const auto model = make_model("gaussian", {{"dim", 2}});
  const Environment env = constant_env(model, brownian_path(grid, 2, 1), Mat::Zero(1, 2));
  SolveOptions opt;
  opt.particles = 3;
  opt.init = InitialLaw::point(Vec::Zero(2));
  std::ostringstream out;
  write_summary_csv(solve(env, zero_policy(grid, 2, 2), opt), out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')),
            "node,t,mean_0,mean_1,var_0,var_1,min_0,min_1,max_0,max_1");
}

}  // namespace
}  // namespace rmfg
