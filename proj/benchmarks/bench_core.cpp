#include <benchmark/benchmark.h>

#include <cmath>
#include <memory>

#include "rmfg/measureflow.hpp"
#include "rmfg/mfg.hpp"
#include "rmfg/models.hpp"
#include "rmfg/randomize.hpp"
#include "rmfg/rng.hpp"
#include "rmfg/roughpath.hpp"
#include "rmfg/rsde.hpp"
#include "rmfg/stats.hpp"

namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

std::shared_ptr<const rmfg::RelaxedPolicy> mixture(const rmfg::TimeGrid& grid) {
  return std::make_shared<const rmfg::RelaxedPolicy>(rmfg::RelaxedPolicy::constant(
      grid, {Vec::Constant(1, -0.5), Vec::Constant(1, 0.5)}, {0.5, 0.5}, 1));
}

void BM_ItoLift(benchmark::State& state) {
  const rmfg::TimeGrid grid(1.0, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(rmfg::sample_lift(grid, 2, 7));
  }
}
BENCHMARK(BM_ItoLift)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_ChenDefect(benchmark::State& state) {
  const rmfg::TimeGrid grid(1.0, static_cast<std::size_t>(state.range(0)));
  const rmfg::RoughPath path = rmfg::sample_lift(grid, 2, 7);
  for (auto _ : state) benchmark::DoNotOptimize(rmfg::chen_defect(path));
}
BENCHMARK(BM_ChenDefect)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

// Particle solve of the tanh interaction model against a frozen flow.
void BM_Solve(benchmark::State& state) {
  const rmfg::TimeGrid grid(1.0, 64);
  const auto model = rmfg::make_model("tanh-interaction");
  auto path = std::make_shared<const rmfg::RoughPath>(rmfg::sample_lift(grid, 1, 3));
  rmfg::SolveOptions opt;
  opt.particles = static_cast<std::size_t>(state.range(0));
  opt.init = rmfg::InitialLaw::gaussian(Vec::Zero(1), Vec::Constant(1, 0.5));
  auto flow = std::make_shared<const rmfg::MeasureFlow>(
      rmfg::MeasureFlow::constant(grid, opt.init.sample_cloud(200, 1), 1));
  const rmfg::Environment env = rmfg::make_environment(model, flow, path);
  const auto policy = mixture(grid);
  for (auto _ : state) benchmark::DoNotOptimize(rmfg::solve(env, policy, opt));
  state.SetItemsProcessed(state.iterations() * state.range(0) * 64);
}
BENCHMARK(BM_Solve)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_BestResponse(benchmark::State& state) {
  const rmfg::TimeGrid grid(1.0, 32);
  const auto model = rmfg::make_model("lq");
  auto path = std::make_shared<const rmfg::RoughPath>(rmfg::sample_lift(grid, 1, 3));
  auto flow = std::make_shared<const rmfg::MeasureFlow>(
      rmfg::MeasureFlow::constant(grid, Mat::Zero(1, 1), 1));
  const rmfg::Environment env = rmfg::make_environment(model, flow, path);
  rmfg::DpSettings dp;
  const auto nodes = static_cast<std::size_t>(state.range(0));
  dp.lattice = rmfg::StateLattice(Vec::Constant(1, -4.0), Vec::Constant(1, 4.0), {nodes});
  std::vector<Vec> actions;
  for (double a : {-1.0, -0.5, 0.0, 0.5, 1.0}) actions.push_back(Vec::Constant(1, a));
  for (auto _ : state) benchmark::DoNotOptimize(rmfg::best_response(env, actions, dp));
}
BENCHMARK(BM_BestResponse)->Arg(41)->Arg(161)->Unit(benchmark::kMillisecond);

void BM_Wasserstein(benchmark::State& state) {
  rmfg::RandomStream rng(1, rmfg::StreamModule::kTest, 0);
  const auto n = state.range(0);
  Mat a(n, 2), b(n, 2);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = rng.normal();
    b.data()[i] = rng.normal() + 0.1;
  }
  for (auto _ : state) benchmark::DoNotOptimize(rmfg::wasserstein2(a, b));
}
BENCHMARK(BM_Wasserstein)->Arg(64)->Arg(2000)->Unit(benchmark::kMicrosecond);

void BM_EnergyTest(benchmark::State& state) {
  rmfg::RandomStream rng(2, rmfg::StreamModule::kTest, 0);
  const auto n = state.range(0);
  Mat a(n, 2), b(n, 2);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = rng.normal();
    b.data()[i] = rng.normal();
  }
  for (auto _ : state) benchmark::DoNotOptimize(rmfg::energy_test(a, b, 200, 5));
}
BENCHMARK(BM_EnergyTest)->Arg(200)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
