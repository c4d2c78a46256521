#include "rmfg/rsde.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "rmfg/errors.hpp"
#include "rmfg/parallel.hpp"
#include "rmfg/rng.hpp"

namespace rmfg {
namespace {

bool all_zero(const Eigen::Map<const RowMatrix>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (m(i, j) != 0.0) return false;
    }
  }
  return true;
}

// One Euler–Davie step from node n. `sampled` < 0 means: average the drift
// and running cost over the mixture `probs`.
void euler_davie_step(const Environment& env, const RelaxedPolicy& policy,
                      std::size_t n, Eigen::VectorXd& x, const double* dw,
                      std::span<const double> probs, long sampled,
                      double* mean_action, double* running) {
  const CoefficientSet& c = *env.coeffs;
  const std::size_t d = c.dims.state;
  const std::size_t l = c.dims.noise;
  const std::size_t k = c.dims.rough;
  const TimeGrid& grid = env.grid();
  const double t = grid.time(n);
  const double dt = grid.dt();
  const EmpiricalMeasure& mu = env.measure(n);
  const auto& actions = policy.actions();
  const std::size_t du = actions.front().size();

  Eigen::VectorXd bbar = Eigen::VectorXd::Zero(d);
  double cost = 0.0;
  for (std::size_t j = 0; j < du; ++j) mean_action[j] = 0.0;
  if (sampled >= 0) {
    const Eigen::VectorXd& u = actions[static_cast<std::size_t>(sampled)];
    bbar = c.drift(t, x, mu, u);
    cost = c.running_cost(t, x, mu, u);
    for (std::size_t j = 0; j < du; ++j) mean_action[j] = u(j);
  } else {
    for (std::size_t a = 0; a < probs.size(); ++a) {
      if (probs[a] == 0.0) continue;
      const Eigen::VectorXd b = c.drift(t, x, mu, actions[a]);
      for (std::size_t i = 0; i < d; ++i) bbar(i) += probs[a] * b(i);
      cost += probs[a] * c.running_cost(t, x, mu, actions[a]);
      for (std::size_t j = 0; j < du; ++j) mean_action[j] += probs[a] * actions[a](j);
    }
  }
  *running += cost * dt;

  const Eigen::MatrixXd sigma = c.diffusion(t, x, mu);
  const Eigen::MatrixXd s0 = env.common().value(n, x);
  const Eigen::VectorXd dB = env.path->increment(n, n + 1);
  const auto BB = env.path->second(n, n + 1);
  Eigen::VectorXd corr = Eigen::VectorXd::Zero(d);
  if (!all_zero(BB)) {
    const Eigen::MatrixXd hat = env.common().corrected_prime(n, x);
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t b = 0; b < k; ++b) {
        for (std::size_t a = 0; a < k; ++a) acc += hat(i * k + b, a) * BB(a, b);
      }
      corr(i) = acc;
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    double noise = 0.0;
    for (std::size_t j = 0; j < l; ++j) noise += sigma(i, j) * dw[j];
    double rough = 0.0;
    for (std::size_t a = 0; a < k; ++a) rough += s0(i, a) * dB(a);
    x(i) = x(i) + bbar(i) * dt + noise + rough + corr(i);
  }
}

void store_node(const Environment& env, ControlledEnsemble& ce, std::size_t n,
                std::size_t p, const Eigen::VectorXd& x) {
  auto v = ce.value(n, p);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x(i);
  const Eigen::MatrixXd s0 = env.common().value(n, x);
  auto dv = ce.derivative(n, p);
  const std::size_t k = ce.rough_dim();
  for (Eigen::Index i = 0; i < s0.rows(); ++i) {
    for (std::size_t a = 0; a < k; ++a) dv[i * k + a] = s0(i, a);
  }
}

void check_blowup(const Eigen::VectorXd& x, double limit, std::size_t step,
                  std::size_t particle) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x(i)) || std::abs(x(i)) > limit) {
      throw DivergedError(step, particle, std::abs(x(i)));
    }
  }
}

// Draws action index for step n, or −1 to average over the mixture.
long choose_action(const RelaxedPolicy& policy, const SolveOptions& opts,
                   std::uint64_t seed, std::uint64_t stream, std::size_t n,
                   const Eigen::VectorXd& x, const double* w_particle,
                   std::size_t steps, std::size_t l,
                   std::span<const double>* probs, long long* audit) {
  if (policy.mode() == PolicyMode::kOpenLoopCausal) {
    NoisePrefix prefix(w_particle, steps, l, n);
    RandomStream exo(seed, StreamModule::kAction, stream, n);
    const std::size_t a = policy.sampler()(n, prefix, exo);
    if (a >= policy.action_count()) {
      throw InputError("causal sampler returned an invalid action index");
    }
    if (audit) *audit = prefix.max_accessed();
    return static_cast<long>(a);
  }
  *probs = policy.probabilities(n, x);
  if (!opts.sample_actions) return -1;
  RandomStream rng(seed, StreamModule::kAction, stream, n);
  return static_cast<long>(sample_index(*probs, rng.uniform()));
}

class SolutionResampler final : public Resampler {
 public:
  SolutionResampler(Environment env, std::shared_ptr<const RelaxedPolicy> policy,
                    SolveOptions options,
                    std::shared_ptr<const std::vector<double>> states,
                    std::shared_ptr<const std::vector<double>> increments,
                    std::vector<std::uint64_t> streams)
      : env_(std::move(env)),
        policy_(std::move(policy)),
        options_(std::move(options)),
        states_(std::move(states)),
        increments_(std::move(increments)),
        streams_(std::move(streams)) {}

  std::size_t value_dim() const override { return env_.coeffs->dims.state; }
  std::size_t rough_dim() const override { return env_.coeffs->dims.rough; }

  void continue_path(std::size_t index, std::size_t from, std::size_t to,
                     std::uint64_t branch,
                     std::span<double> out) const override {
    const std::size_t d = value_dim();
    const std::size_t k = rough_dim();
    const std::size_t l = env_.coeffs->dims.noise;
    const std::size_t N = env_.grid().steps();
    const std::size_t P = streams_.size();
    const std::size_t slot = d + d * k;
    const std::uint64_t seed = mix_seed(options_.seed, branch);
    const std::uint64_t stream = streams_[index];

    std::vector<double> w(N * l, 0.0);
    std::copy(increments_->begin() + index * N * l,
              increments_->begin() + index * N * l + from * l, w.begin());
    RandomStream normal(seed, StreamModule::kResample, stream, from);
    const double sq = std::sqrt(env_.grid().dt());
    for (std::size_t i = from * l; i < to * l; ++i) w[i] = sq * normal.normal();

    Eigen::VectorXd x(d);
    for (std::size_t i = 0; i < d; ++i) x(i) = (*states_)[(from * P + index) * d + i];
    std::vector<double> mean_action(policy_->actions().front().size());
    double running = 0.0;
    for (std::size_t n = from; n <= to; ++n) {
      double* dst = &out[(n - from) * slot];
      for (std::size_t i = 0; i < d; ++i) dst[i] = x(i);
      const Eigen::MatrixXd s0 = env_.common().value(n, x);
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t a = 0; a < k; ++a) dst[d + i * k + a] = s0(i, a);
      }
      if (n == to) break;
      std::span<const double> probs;
      const long sampled = choose_action(*policy_, options_, seed, stream, n, x,
                                         w.data(), N, l, &probs, nullptr);
      euler_davie_step(env_, *policy_, n, x, &w[n * l], probs, sampled,
                       mean_action.data(), &running);
    }
  }

 private:
  Environment env_;
  std::shared_ptr<const RelaxedPolicy> policy_;
  SolveOptions options_;
  std::shared_ptr<const std::vector<double>> states_;
  std::shared_ptr<const std::vector<double>> increments_;
  std::vector<std::uint64_t> streams_;
};

}  // namespace

InitialLaw InitialLaw::point(Eigen::VectorXd x) {
  InitialLaw law;
  law.kind = Kind::kPoint;
  law.stddev = Eigen::VectorXd::Zero(x.size());
  law.mean = std::move(x);
  return law;
}

InitialLaw InitialLaw::gaussian(Eigen::VectorXd mean, Eigen::VectorXd stddev) {
  if (mean.size() != stddev.size()) {
    throw InputError("initial mean and standard deviation differ in size");
  }
  InitialLaw law;
  law.kind = Kind::kGaussian;
  law.mean = std::move(mean);
  law.stddev = std::move(stddev);
  return law;
}

InitialLaw InitialLaw::from_cloud(Eigen::MatrixXd cloud) {
  if (cloud.rows() == 0) throw InputError("initial cloud is empty");
  InitialLaw law;
  law.kind = Kind::kCloud;
  law.cloud = std::move(cloud);
  return law;
}

std::size_t InitialLaw::dim() const {
  return kind == Kind::kCloud ? static_cast<std::size_t>(cloud.cols())
                              : static_cast<std::size_t>(mean.size());
}

Eigen::VectorXd InitialLaw::sample(std::uint64_t seed,
                                   std::uint64_t stream) const {
  switch (kind) {
    case Kind::kPoint:
      return mean;
    case Kind::kGaussian: {
      RandomStream rng(seed, StreamModule::kInitial, stream);
      Eigen::VectorXd x(mean.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        x(i) = mean(i) + stddev(i) * rng.normal();
      }
      return x;
    }
    case Kind::kCloud:
      return cloud.row(static_cast<Eigen::Index>(stream % cloud.rows())).transpose();
  }
  return mean;
}

Eigen::MatrixXd InitialLaw::sample_cloud(std::size_t particles,
                                         std::uint64_t seed) const {
  Eigen::MatrixXd out(particles, dim());
  for (std::size_t p = 0; p < particles; ++p) {
    out.row(p) = sample(seed, p).transpose();
  }
  return out;
}

Environment make_environment(std::shared_ptr<const CoefficientSet> coeffs,
                             std::shared_ptr<const MeasureFlow> flow,
                             std::shared_ptr<const RoughPath> path) {
  if (!coeffs || !flow || !path) throw InputError("environment is incomplete");
  if (!(flow->grid() == path->grid())) {
    throw InputError("measure flow and rough path live on different grids");
  }
  if (path->dim() != coeffs->dims.rough) {
    throw InputError("rough path dimension does not match the model");
  }
  Environment env;
  env.field = build_flow_field(coeffs, *flow);
  env.coeffs = std::move(coeffs);
  env.flow = std::move(flow);
  env.path = std::move(path);
  return env;
}

Eigen::VectorXd RsdeSolution::w(std::size_t node, std::size_t particle) const {
  const std::size_t l = env.coeffs->dims.noise;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(l);
  for (std::size_t n = 0; n < node; ++n) {
    for (std::size_t c = 0; c < l; ++c) out(c) += dw(n, particle, c);
  }
  return out;
}

bool RsdeSolution::audit_passed() const {
  const std::size_t P = particles();
  for (std::size_t i = 0; i < audit.size(); ++i) {
    const long long step = static_cast<long long>(i / P);
    if (audit[i] >= step) return false;
  }
  return true;
}

RsdeSolution solve(const Environment& env,
                   std::shared_ptr<const RelaxedPolicy> policy,
                   const SolveOptions& options) {
  if (!policy) throw InputError("solve needs a policy");
  const CoefficientSet& c = *env.coeffs;
  const TimeGrid& grid = env.grid();
  if (!(policy->grid() == grid)) {
    throw InputError("policy and rough path live on different grids");
  }
  if (options.particles == 0) throw InputError("solve needs particles");
  if (options.init.dim() != c.dims.state) {
    throw InputError("initial law dimension does not match the model");
  }
  if (policy->actions().front().size() != c.dims.control) {
    throw InputError("action dimension does not match the model");
  }
  if (policy->mode() == PolicyMode::kFeedback &&
      policy->lattice().dim() != c.dims.state && policy->lattice().size() != 1) {
    throw InputError("policy lattice dimension does not match the state");
  }
  const std::size_t P = options.particles;
  const std::size_t N = grid.steps();
  const std::size_t d = c.dims.state;
  const std::size_t l = c.dims.noise;
  const std::size_t k = c.dims.rough;
  const std::size_t du = c.dims.control;
  if (!options.streams.empty() && options.streams.size() != P) {
    throw InputError("one stream id per particle expected");
  }
  std::vector<std::uint64_t> streams = options.streams;
  if (streams.empty()) {
    streams.resize(P);
    for (std::size_t p = 0; p < P; ++p) streams[p] = p;
  }

  std::shared_ptr<const std::vector<double>> increments = options.increments;
  if (increments) {
    if (increments->size() != P * N * l) {
      throw InputError("external increments have wrong length");
    }
  } else {
    auto w = std::make_shared<std::vector<double>>(P * N * l);
    const double sq = std::sqrt(grid.dt());
    parallel_for(P, [&](std::size_t p) {
      RandomStream rng(options.seed, StreamModule::kIdiosyncratic, streams[p]);
      for (std::size_t i = 0; i < N * l; ++i) (*w)[p * N * l + i] = sq * rng.normal();
    });
    increments = w;
  }

  RsdeSolution sol{env, policy, options, ControlledEnsemble(grid, P, d, k),
                   increments, {}, {}, {}, {}, {}};
  sol.options.streams = streams;
  sol.mean_action.assign(N * P * du, 0.0);
  sol.sampled_action.assign(N * P, -1);
  const bool causal = policy->mode() == PolicyMode::kOpenLoopCausal;
  if (causal) sol.audit.assign(N * P, -1);
  sol.running_cost.assign(P, 0.0);
  sol.terminal_cost.assign(P, 0.0);

  parallel_for(P, [&](std::size_t p) {
    Eigen::VectorXd x = options.init.sample(options.seed, streams[p]);
    const double* wp = &(*increments)[p * N * l];
    store_node(env, sol.state, 0, p, x);
    for (std::size_t n = 0; n < N; ++n) {
      std::span<const double> probs;
      const long sampled =
          choose_action(*policy, options, options.seed, streams[p], n, x, wp, N,
                        l, &probs, causal ? &sol.audit[n * P + p] : nullptr);
      sol.sampled_action[n * P + p] = static_cast<std::int32_t>(sampled);
      euler_davie_step(env, *policy, n, x, wp + n * l, probs, sampled,
                       &sol.mean_action[(n * P + p) * du],
                       &sol.running_cost[p]);
      check_blowup(x, options.blowup, n + 1, p);
      store_node(env, sol.state, n + 1, p, x);
    }
    sol.terminal_cost[p] = c.terminal_cost(x, env.measure(N));
  });

  auto states = std::make_shared<std::vector<double>>(sol.state.values());
  sol.state.record() = GenerationRecord::single(
      std::make_shared<SolutionResampler>(env, policy, sol.options, states,
                                          increments, streams),
      P);
  sol.state.record().stream_id = streams;
  return sol;
}

RsdeSolution realize_from_measure(const Environment& env,
                                  std::shared_ptr<const RelaxedPolicy> policy,
                                  const SolveOptions& options) {
  if (!policy || policy->mode() != PolicyMode::kOpenLoopCausal) {
    throw InputError("realization needs an open-loop causal policy");
  }
  return solve(env, std::move(policy), options);
}

MeasureFlow from_solution(const RsdeSolution& solution) {
  return MeasureFlow(solution.state, true);
}

void write_summary_csv(const RsdeSolution& sol, std::ostream& out) {
  const ControlledEnsemble& X = sol.state;
  const std::size_t d = X.value_dim();
  out << "node,t";
  for (const char* what : {"mean", "var", "min", "max"}) {
    for (std::size_t i = 0; i < d; ++i) out << ',' << what << '_' << i;
  }
  out << '\n' << std::setprecision(17);
  for (std::size_t n = 0; n < X.grid().nodes(); ++n) {
    const Eigen::MatrixXd cloud = X.cloud(n);
    const Eigen::VectorXd mean = cloud.colwise().mean().transpose();
    out << n << ',' << X.grid().time(n);
    for (std::size_t i = 0; i < d; ++i) out << ',' << mean(i);
    for (std::size_t i = 0; i < d; ++i) {
      const double var =
          (cloud.col(i).array() - mean(i)).square().sum() / cloud.rows();
      out << ',' << var;
    }
    for (std::size_t i = 0; i < d; ++i) out << ',' << cloud.col(i).minCoeff();
    for (std::size_t i = 0; i < d; ++i) out << ',' << cloud.col(i).maxCoeff();
    out << '\n';
  }
}

}  // namespace rmfg
