#include "rmfg/mfg.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "rmfg/errors.hpp"
#include "rmfg/models.hpp"
#include "rmfg/rng.hpp"

namespace rmfg {
namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

std::vector<Vec> scalar_actions(std::initializer_list<double> values) {
  std::vector<Vec> out;
  for (double v : values) out.push_back(Vec::Constant(1, v));
  return out;
}

std::shared_ptr<const RoughPath> still_path(const TimeGrid& grid, std::size_t k) {
  return std::make_shared<const RoughPath>(
      ito_lift(Mat::Zero(grid.steps(), k), grid));
}

std::shared_ptr<const RoughPath> brownian_path(const TimeGrid& grid, std::size_t k,
                                               std::uint64_t seed) {
  RandomStream rng(seed, StreamModule::kCommon, 0);
  Mat inc(grid.steps(), k);
  for (Eigen::Index i = 0; i < inc.size(); ++i) {
    inc.data()[i] = std::sqrt(grid.dt()) * rng.normal();
  }
  return std::make_shared<const RoughPath>(ito_lift(inc, grid));
}

Environment frozen_env(std::shared_ptr<const CoefficientSet> model,
                       std::shared_ptr<const RoughPath> path, const Mat& cloud) {
  auto flow = std::make_shared<const MeasureFlow>(
      MeasureFlow::constant(path->grid(), cloud, model->dims.rough));
  return make_environment(std::move(model), std::move(flow), std::move(path));
}

// b = u, constant σ, no common noise, f = 0, g = x².
std::shared_ptr<CoefficientSet> steering_model(double sigma) {
  auto c = std::make_shared<CoefficientSet>(*make_model("no-interaction"));
  c->diffusion = [sigma](double, const Vec&, const EmpiricalMeasure&) {
    return Mat::Constant(1, 1, sigma);
  };
  c->common = [](double, const Vec&, const EmpiricalMeasure&) {
    return Mat::Zero(1, 1).eval();
  };
  c->common_gradient = c->common;
  c->common_measure_dependent = false;
  c->running_cost = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) {
    return 0.0;
  };
  c->terminal_cost = [](const Vec& x, const EmpiricalMeasure&) {
    return x.squaredNorm();
  };
  return c;
}

std::shared_ptr<const RelaxedPolicy> constant_policy(const TimeGrid& grid,
                                                     const std::vector<Vec>& actions,
                                                     std::vector<double> probs) {
  return std::make_shared<const RelaxedPolicy>(
      RelaxedPolicy::constant(grid, actions, std::move(probs), 1));
}

TEST(CostTest, TrivialCosts) {
  const TimeGrid grid(1.0, 8);
  const auto path = still_path(grid, 1);
  const auto actions = scalar_actions({-1.0, 0.0, 1.0});
  auto c = steering_model(0.3);
  SolveOptions opt;
  opt.particles = 50;
  opt.init = InitialLaw::gaussian(Vec::Zero(1), Vec::Ones(1));

  c->terminal_cost = [](const Vec&, const EmpiricalMeasure&) { return 0.0; };
  const Mat cloud = opt.init.sample_cloud(50, 1);
  const auto uniform = constant_policy(grid, actions, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  CostEstimate zero = cost(frozen_env(c, path, cloud), uniform, opt);
  EXPECT_EQ(zero.mean, 0.0);
  EXPECT_EQ(zero.std_error, 0.0);

  c->running_cost = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) {
    return 1.0;
  };
  CostEstimate one = cost(frozen_env(c, path, cloud), uniform, opt);
  EXPECT_EQ(one.mean, 1.0);

  c->running_cost = [](double, const Vec&, const EmpiricalMeasure&, const Vec& u) {
    return u.squaredNorm();
  };
  CostEstimate still = cost(frozen_env(c, path, cloud),
                            constant_policy(grid, actions, {0.0, 1.0, 0.0}), opt);
  EXPECT_EQ(still.mean, 0.0);
}

TEST(BestResponseTest, StateIndependentChoiceIsPointwiseMinimum) {
  const TimeGrid grid(1.0, 6);
  auto c = steering_model(0.3);
  c->drift = [](double, const Vec& x, const EmpiricalMeasure&, const Vec&) {
    return Vec::Constant(1, -x(0));
  };
  c->running_cost = [](double, const Vec&, const EmpiricalMeasure&, const Vec& u) {
    return u.squaredNorm();
  };
  DpSettings dp;
  dp.lattice = StateLattice(Vec::Constant(1, -2.0), Vec::Constant(1, 2.0), {9});
  const auto actions = scalar_actions({-1.0, 0.0, 1.0});
  const DpResult br =
      best_response(frozen_env(c, still_path(grid, 1), Mat::Zero(10, 1)), actions, dp);
  for (std::uint32_t a : br.argmin) EXPECT_EQ(a, 1u);
}

// Value of the best open-loop sequence from x over `steps` moves. States are
// clamped to [lo, hi], which is what the value lattice does at its edges.
void enumerate(double x, int steps, const std::vector<double>& u,
               double* best, std::vector<std::size_t>* first, std::size_t head,
               double lo, double hi) {
  if (steps == 0) {
    const double v = x * x;
    if (v < *best - 1e-12) {
      *best = v;
      first->assign(1, head);
    } else if (std::abs(v - *best) <= 1e-12 &&
               std::find(first->begin(), first->end(), head) == first->end()) {
      first->push_back(head);
    }
    return;
  }
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double y = std::clamp(x + u[i], lo, hi);
    enumerate(y, steps - 1, u, best, first, head == SIZE_MAX ? i : head, lo, hi);
  }
}

TEST(BestResponseTest, ToyGridMatchesExhaustiveEnumeration) {
  const TimeGrid grid(3.0, 3);
  const auto c = steering_model(0.0);
  DpSettings dp;
  dp.lattice = StateLattice(Vec::Constant(1, -2.0), Vec::Constant(1, 2.0), {5});
  const std::vector<double> u = {-1.0, 0.0, 1.0};
  const DpResult br = best_response(
      frozen_env(c, still_path(grid, 1), Mat::Zero(4, 1)), scalar_actions({-1, 0, 1}), dp);
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t i = 0; i < 5; ++i) {
      const double x = dp.lattice->point(i)(0);
      double best = std::numeric_limits<double>::infinity();
      std::vector<std::size_t> first;
      enumerate(x, static_cast<int>(3 - n), u, &best, &first, SIZE_MAX, -2.0, 2.0);
      EXPECT_NEAR(br.v(n, i), best, 1e-12) << "n=" << n << " x=" << x;
      EXPECT_NE(std::find(first.begin(), first.end(), br.argmin[n * 5 + i]), first.end());
      if (first.size() == 1 && x != 0.0) {
        EXPECT_LT(u[br.argmin[n * 5 + i]] * x, 0.0);
      }
    }
  }
}

TEST(BestResponseTest, SmallNoiseSteersTowardsZero) {
  const TimeGrid grid(3.0, 3);
  const auto c = steering_model(0.05);
  DpSettings dp;
  dp.lattice = StateLattice(Vec::Constant(1, -2.0), Vec::Constant(1, 2.0), {5});
  const std::vector<double> u = {-1.0, 0.0, 1.0};
  const DpResult br = best_response(
      frozen_env(c, still_path(grid, 1), Mat::Zero(4, 1)), scalar_actions({-1, 0, 1}), dp);
  for (std::size_t i = 0; i < 5; ++i) {
    const double x = dp.lattice->point(i)(0);
    const double chosen = u[br.argmin[2 * 5 + i]];
    if (x == 0.0) {
      EXPECT_EQ(chosen, 0.0);
    } else {
      EXPECT_EQ(chosen, -std::copysign(1.0, x)) << "x=" << x;
    }
  }
}

TEST(BestResponseTest, StillDynamicsValueIsRunningCostTimesRemainingTime) {
  const TimeGrid grid(2.0, 10);
  auto c = steering_model(0.0);
  c->drift = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) {
    return Vec::Zero(1).eval();
  };
  c->diffusion = [](double, const Vec&, const EmpiricalMeasure&) {
    return Mat::Zero(1, 1).eval();
  };
  c->running_cost = [](double, const Vec& x, const EmpiricalMeasure&, const Vec& u) {
    return (u(0) - 0.5) * (u(0) - 0.5) + std::cos(x(0));
  };
  c->terminal_cost = [](const Vec&, const EmpiricalMeasure&) { return 0.0; };
  DpSettings dp;
  dp.lattice = StateLattice(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0), {7});
  const auto actions = scalar_actions({-1.0, 0.0, 0.5, 1.0});
  const DpResult br =
      best_response(frozen_env(c, brownian_path(grid, 1, 3), Mat::Zero(4, 1)), actions, dp);
  for (std::size_t n = 0; n <= grid.steps(); ++n) {
    for (std::size_t i = 0; i < 7; ++i) {
      const double x = dp.lattice->point(i)(0);
      EXPECT_NEAR(br.v(n, i), std::cos(x) * (2.0 - grid.time(n)), 1e-8);
    }
  }
  for (std::uint32_t a : br.argmin) EXPECT_EQ(a, 2u);
  EXPECT_EQ(br.escape_fraction, 0.0);
}

TEST(BestResponseTest, AffineCostTransformKeepsThePolicy) {
  const TimeGrid grid(1.0, 16);
  const auto model = make_model("tanh-interaction");
  const auto path = brownian_path(grid, 1, 11);
  RandomStream rng(5, StreamModule::kTest, 0);
  Mat cloud(200, 1);
  for (Eigen::Index i = 0; i < cloud.size(); ++i) cloud(i) = rng.normal();
  auto scaled = std::make_shared<CoefficientSet>(*model);
  const auto f = model->running_cost;
  const auto g = model->terminal_cost;
  scaled->running_cost = [f](double t, const Vec& x, const EmpiricalMeasure& mu,
                             const Vec& u) { return 2.0 * f(t, x, mu, u) + 0.7; };
  scaled->terminal_cost = [g](const Vec& x, const EmpiricalMeasure& mu) {
    return 2.0 * g(x, mu) - 1.3;
  };
  DpSettings dp;
  dp.lattice = StateLattice(Vec::Constant(1, -3.0), Vec::Constant(1, 3.0), {25});
  const auto actions = scalar_actions({-1.0, -0.5, 0.0, 0.5, 1.0});
  const DpResult a = best_response(frozen_env(model, path, cloud), actions, dp);
  const DpResult b = best_response(frozen_env(scaled, path, cloud), actions, dp);
  EXPECT_EQ(a.argmin, b.argmin);
}

TEST(BestResponseTest, EscapeIsAWarningOrAnError) {
  const TimeGrid grid(1.0, 4);
  const auto c = steering_model(1.0);
  DpSettings dp;
  dp.lattice = StateLattice(Vec::Constant(1, -0.1), Vec::Constant(1, 0.1), {3});
  const auto env = frozen_env(c, still_path(grid, 1), Mat::Zero(4, 1));
  const DpResult br = best_response(env, scalar_actions({-1, 0, 1}), dp);
  EXPECT_GT(br.escape_fraction, 0.05);
  ASSERT_EQ(br.warnings.size(), 1u);
  EXPECT_NE(br.warnings[0].find("lattice"), std::string::npos);
  dp.strict = true;
  EXPECT_THROW(best_response(env, scalar_actions({-1, 0, 1}), dp), ConfigurationError);
}

class ExploitabilityTest : public ::testing::Test {
 protected:
  void SetUp() override {
    opt.particles = 4000;
    opt.seed = 17;
    opt.init = InitialLaw::gaussian(Vec::Zero(1), Vec::Constant(1, 0.8));
    dp.lattice = StateLattice(Vec::Constant(1, -3.0), Vec::Constant(1, 3.0), {13});
  }
  const TimeGrid grid{3.0, 3};
  SolveOptions opt;
  DpSettings dp;
  const std::vector<Vec> actions = scalar_actions({-1.0, 0.0, 1.0});
};

TEST_F(ExploitabilityTest, BestResponseAgainstItselfIsZero) {
  const auto env = frozen_env(steering_model(0.2), still_path(grid, 1),
                              opt.init.sample_cloud(100, 1));
  const DpResult br = best_response(env, actions, dp);
  const Exploitability e = exploitability(env, br.policy, actions, dp, opt);
  EXPECT_LE(std::abs(e.raw), 2.0 * e.std_error + 1e-15);
}

TEST_F(ExploitabilityTest, SecondBestEverywhereIsDetected) {
  const auto env = frozen_env(steering_model(0.2), still_path(grid, 1),
                              opt.init.sample_cloud(100, 1));
  const DpResult br = best_response(env, actions, dp);
  const std::size_t L = dp.lattice->size();
  std::vector<std::uint32_t> second(br.argmin.size());
  for (std::size_t i = 0; i < second.size(); ++i) {
    std::vector<std::uint32_t> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      return br.q_values[i * 3 + a] < br.q_values[i * 3 + b];
    });
    second[i] = order[0] == br.argmin[i] ? order[1] : order[0];
  }
  ASSERT_EQ(second.size(), grid.steps() * L);
  const auto worse = pure_policy(grid, actions, *dp.lattice, second);
  const Exploitability e = exploitability(env, worse, actions, dp, opt);
  EXPECT_GT(e.raw, 4.0 * e.std_error);
  EXPECT_GT(e.cost_policy, e.cost_best);
}

TEST_F(ExploitabilityTest, ZeroCostsGiveExactlyZero) {
  auto c = steering_model(0.2);
  c->terminal_cost = [](const Vec&, const EmpiricalMeasure&) { return 0.0; };
  const auto env = frozen_env(c, still_path(grid, 1), opt.init.sample_cloud(100, 1));
  const auto uniform = constant_policy(grid, actions, {0.2, 0.3, 0.5});
  const Exploitability e = exploitability(env, uniform, actions, dp, opt);
  EXPECT_EQ(e.raw, 0.0);
  EXPECT_EQ(e.reported(), 0.0);
}

FixedPointSettings small_settings() {
  FixedPointSettings s;
  s.actions = scalar_actions({-1.0, -0.5, 0.0, 0.5, 1.0});
  s.init = InitialLaw::gaussian(Vec::Constant(1, 0.5), Vec::Constant(1, 0.5));
  s.particles = 1000;
  s.pilot_particles = 300;
  s.lattice_nodes_per_dim = 31;
  s.max_iters = 8;
  s.seed = 21;
  s.domain.M_bound = 50.0;
  s.domain.epsilon = 0.25;
  return s;
}

TEST(FixedPointTest, MeasureIndependentModelConvergesAtOnce) {
  const TimeGrid grid(1.0, 32);
  const auto model = make_model("no-interaction");
  const FixedPointResult r =
      fixed_point(model, brownian_path(grid, 1, 4), small_settings());
  EXPECT_TRUE(r.report.converged);
  EXPECT_EQ(r.report.iterations, 1u);
  ASSERT_EQ(r.report.records.size(), 2u);
  EXPECT_EQ(r.report.records[1].w2_update, 0.0);
  const IterationRecord& last = r.report.records.back();
  EXPECT_LE(std::abs(last.exploit.raw), 2.0 * last.exploit.std_error + 1e-15);
  // Consistency: the returned flow is the law of the returned solution.
  const MeasureFlow again = from_solution(*r.solution);
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    EXPECT_TRUE(r.flow->cloud(n) == again.cloud(n));
  }
}

TEST(FixedPointTest, WeakCouplingContracts) {
  const TimeGrid grid(1.0, 32);
  const auto model = make_model("lq", {{"coupling", 0.1}});
  FixedPointSettings s = small_settings();
  s.max_iters = 5;
  s.tol_w2 = 0.0;
  const FixedPointResult r = fixed_point(model, brownian_path(grid, 1, 8), s);
  const auto& rec = r.report.records;
  ASSERT_EQ(rec.size(), 6u);
  for (std::size_t i = 1; i < rec.size(); ++i) {
    if (rec[i - 1].w2_update > 0.0) {
      EXPECT_LT(rec[i].w2_update, 0.5 * rec[i - 1].w2_update) << "iteration " << i;
    } else {
      EXPECT_EQ(rec[i].w2_update, 0.0);
    }
    EXPECT_TRUE(rec[i].domain.member);
  }
  EXPECT_LT(r.report.final_exploitability,
            1e-2 + r.report.final_exploitability_error);
}

TEST(FixedPointTest, StrongCouplingReportsNonConvergence) {
  const TimeGrid grid(1.0, 16);
  const auto model = make_model("lq", {{"coupling", 4.0}});
  FixedPointSettings s = small_settings();
  s.max_iters = 3;
  s.tol_w2 = 1e-6;
  const FixedPointResult r = fixed_point(model, brownian_path(grid, 1, 9), s);
  EXPECT_FALSE(r.report.converged);
  EXPECT_EQ(r.report.iterations, 3u);
  EXPECT_EQ(r.report.records.size(), 4u);
}

TEST(FixedPointTest, ReportsSerialize) {
  const TimeGrid grid(1.0, 8);
  FixedPointSettings s = small_settings();
  s.particles = 200;
  const FixedPointResult r = fixed_point(make_model("no-interaction"), brownian_path(grid, 1, 2), s);
  std::ostringstream json, csv;
  write_report_json(r.report, json);
  write_iterations_csv(r.report, csv);
  EXPECT_NE(json.str().find("\"converged\": true"), std::string::npos);
  const std::string text = csv.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "iteration,w2_update,exploitability,exploitability_raw,exploitability_error,"
            "cost,cost_error,escape_fraction,domain_local_max,domain_member");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}

}  // namespace
}  // namespace rmfg
