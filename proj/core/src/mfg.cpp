#include "rmfg/mfg.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "rmfg/errors.hpp"
#include "rmfg/parallel.hpp"
#include "rmfg/stats.hpp"

namespace rmfg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

CostEstimate cost_of(const RsdeSolution& sol) {
  CostEstimate out;
  const std::size_t P = sol.particles();
  out.per_particle.resize(P);
  for (std::size_t p = 0; p < P; ++p) {
    out.per_particle[p] = sol.running_cost[p] + sol.terminal_cost[p];
  }
  mean_t_stat(out.per_particle, &out.mean, &out.std_error);
  return out;
}

CostEstimate cost(const Environment& env,
                  std::shared_ptr<const RelaxedPolicy> policy,
                  const SolveOptions& options) {
  return cost_of(solve(env, std::move(policy), options));
}

std::shared_ptr<const RelaxedPolicy> pure_policy(
    const TimeGrid& grid, const std::vector<Vec>& actions,
    const StateLattice& lattice, const std::vector<std::uint32_t>& choice) {
  const std::size_t K = actions.size();
  if (choice.size() != grid.steps() * lattice.size()) {
    throw InputError("action choice table has wrong size");
  }
  std::vector<double> table(choice.size() * K, 0.0);
  for (std::size_t i = 0; i < choice.size(); ++i) {
    if (choice[i] >= K) throw InputError("action index out of range");
    table[i * K + choice[i]] = 1.0;
  }
  return std::make_shared<const RelaxedPolicy>(
      RelaxedPolicy::feedback(grid, actions, lattice, std::move(table)));
}

DpResult best_response(const Environment& env, const std::vector<Vec>& actions,
                       const DpSettings& settings) {
  if (!settings.lattice) throw ConfigurationError("best response needs a state lattice");
  if (actions.empty()) throw InputError("best response needs at least one action");
  const CoefficientSet& c = *env.coeffs;
  const StateLattice& lat = *settings.lattice;
  if (lat.dim() != c.dims.state) {
    throw InputError("lattice dimension does not match the state");
  }
  if (!c.running_cost || !c.terminal_cost) {
    throw ConfigurationError("model '" + c.name + "' defines no costs");
  }
  const TimeGrid& grid = env.grid();
  const std::size_t N = grid.steps(), L = lat.size(), K = actions.size();
  const std::size_t d = c.dims.state, l = c.dims.noise, k = c.dims.rough;
  const double dt = grid.dt();

  // Tensor Gauss–Hermite rule for ξ ~ N(0, I_l).
  const QuadratureRule rule = gauss_hermite(std::max<std::size_t>(settings.quadrature, 1));
  const std::size_t q = rule.nodes.size();
  std::vector<Vec> xi;
  std::vector<double> xw;
  std::size_t total = 1;
  for (std::size_t j = 0; j < l; ++j) total *= q;
  for (std::size_t idx = 0; idx < total; ++idx) {
    Vec z(l);
    double w = 1.0;
    std::size_t rest = idx;
    for (std::size_t j = 0; j < l; ++j) {
      z(j) = rule.nodes[rest % q];
      w *= rule.weights[rest % q];
      rest /= q;
    }
    xi.push_back(z);
    xw.push_back(w);
  }

  DpResult out{nullptr, lat, std::vector<double>((N + 1) * L), std::vector<double>(N * L * K),
               std::vector<std::uint32_t>(N * L), 0.0, {}};
  for (std::size_t i = 0; i < L; ++i) {
    out.value[N * L + i] = c.terminal_cost(lat.point(i), env.measure(N));
  }
  std::vector<double> escaped(N * L, 0.0);
  const double sq = std::sqrt(dt);
  for (std::size_t n = N; n-- > 0;) {
    const double t = grid.time(n);
    const EmpiricalMeasure& mu = env.measure(n);
    const Vec dB = env.path->increment(n, n + 1);
    const auto BB = env.path->second(n, n + 1);
    const bool has_area = BB.cwiseAbs().maxCoeff() != 0.0;
    const double* next = &out.value[(n + 1) * L];
    parallel_for(L, [&](std::size_t i) {
      const Vec x = lat.point(i);
      // Forcing shared by all actions: σ̃⁰δB + σ̂′𝔹.
      Vec forcing = env.common().value(n, x) * dB;
      if (has_area) {
        const Mat hat = env.common().corrected_prime(n, x);
        for (std::size_t a = 0; a < d; ++a) {
          double acc = 0.0;
          for (std::size_t b = 0; b < k; ++b) {
            for (std::size_t e = 0; e < k; ++e) acc += hat(a * k + b, e) * BB(e, b);
          }
          forcing(a) += acc;
        }
      }
      const Mat sigma = c.diffusion(t, x, mu);
      std::vector<std::pair<std::size_t, double>> st;
      std::vector<double> esc(K, 0.0);
      double best = 0.0;
      for (std::size_t u = 0; u < K; ++u) {
        const Vec base = x + c.drift(t, x, mu, actions[u]) * dt + forcing;
        double ev = 0.0;
        for (std::size_t r = 0; r < xi.size(); ++r) {
          const Vec y = base + sigma * (sq * xi[r]);
          if (!lat.stencil(y, st)) esc[u] += xw[r];
          double v = 0.0;
          for (const auto& [node, w] : st) v += w * next[node];
          ev += xw[r] * v;
        }
        const double qv = c.running_cost(t, x, mu, actions[u]) * dt + ev;
        out.q_values[(n * L + i) * K + u] = qv;
        if (u == 0 || qv < best) best = qv;
      }
      // Lowest index within the tie tolerance of the minimum.
      const double tol = settings.tie_tolerance * (1.0 + std::abs(best));
      std::uint32_t choice = 0;
      for (std::size_t u = 0; u < K; ++u) {
        if (out.q_values[(n * L + i) * K + u] <= best + tol) {
          choice = static_cast<std::uint32_t>(u);
          break;
        }
      }
      out.argmin[n * L + i] = choice;
      out.value[n * L + i] = out.q_values[(n * L + i) * K + choice];
      escaped[n * L + i] = esc[choice];
    });
  }
  double esc_sum = 0.0;
  for (double e : escaped) esc_sum += e;
  out.escape_fraction = esc_sum / static_cast<double>(N * L);
  if (out.escape_fraction > settings.escape_tolerance) {
    std::ostringstream msg;
    msg << "value lattice too small: " << 100.0 * out.escape_fraction
        << "% of quadrature mass leaves the box";
    if (settings.strict) throw ConfigurationError(msg.str());
    out.warnings.push_back(msg.str());
  }
  out.policy = pure_policy(grid, actions, lat, out.argmin);
  return out;
}

Exploitability exploitability(const Environment& env,
                              std::shared_ptr<const RelaxedPolicy> policy,
                              const std::vector<Vec>& actions,
                              const DpSettings& dp, const SolveOptions& options) {
  const DpResult br = best_response(env, actions, dp);
  // Common random numbers: both policies see the same X₀, W and action draws.
  const CostEstimate a = cost(env, std::move(policy), options);
  const CostEstimate b = cost(env, br.policy, options);
  std::vector<double> diff(a.per_particle.size());
  for (std::size_t p = 0; p < diff.size(); ++p) {
    diff[p] = a.per_particle[p] - b.per_particle[p];
  }
  Exploitability out;
  mean_t_stat(diff, &out.raw, &out.std_error);
  out.cost_policy = a.mean;
  out.cost_best = b.mean;
  return out;
}

StateLattice auto_lattice(const RsdeSolution& pilot, std::size_t nodes_per_dim) {
  const std::size_t d = pilot.state.value_dim();
  Vec lo = Vec::Constant(d, INFINITY), hi = Vec::Constant(d, -INFINITY);
  for (std::size_t n = 0; n < pilot.state.grid().nodes(); ++n) {
    const Mat cloud = pilot.state.cloud(n);
    const Vec mean = cloud.colwise().mean().transpose();
    for (std::size_t j = 0; j < d; ++j) {
      const double sd =
          std::sqrt((cloud.col(j).array() - mean(j)).square().mean());
      lo(j) = std::min(lo(j), mean(j) - 6.0 * sd);
      hi(j) = std::max(hi(j), mean(j) + 6.0 * sd);
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    if (hi(j) - lo(j) < 2.0) {
      const double mid = 0.5 * (lo(j) + hi(j));
      lo(j) = mid - 1.0;
      hi(j) = mid + 1.0;
    }
  }
  return StateLattice(lo, hi, std::vector<std::size_t>(d, std::max<std::size_t>(nodes_per_dim, 2)));
}

FixedPointResult fixed_point(std::shared_ptr<const CoefficientSet> coeffs,
                             std::shared_ptr<const RoughPath> path,
                             const FixedPointSettings& settings) {
  coeffs->validate();
  if (settings.actions.empty()) throw InputError("fixed point needs an action set");
  if (!(settings.damping > 0.0 && settings.damping <= 1.0)) {
    throw InputError("damping must lie in (0, 1]");
  }
  const TimeGrid& grid = path->grid();
  const std::size_t k = coeffs->dims.rough;

  SolveOptions opt;
  opt.particles = settings.particles;
  opt.seed = settings.seed;
  opt.init = settings.init;

  auto flow = std::make_shared<const MeasureFlow>(MeasureFlow::constant(
      grid, settings.init.sample_cloud(settings.particles, settings.seed), k));

  DpSettings dp = settings.dp;
  if (!dp.lattice) {
    // Pilot under the uniform mixture over actions.
    SolveOptions pilot_opt = opt;
    pilot_opt.particles = settings.pilot_particles;
    pilot_opt.seed = mix_seed(settings.seed, 0x70696c6f74ULL);
    const std::vector<double> uniform(settings.actions.size(),
                                      1.0 / static_cast<double>(settings.actions.size()));
    auto mixture = std::make_shared<const RelaxedPolicy>(RelaxedPolicy::constant(
        grid, settings.actions, uniform, coeffs->dims.state));
    const RsdeSolution pilot = solve(make_environment(coeffs, flow, path), mixture, pilot_opt);
    dp.lattice = auto_lattice(pilot, settings.lattice_nodes_per_dim);
  }

  FixedPointResult result;
  result.report.lattice = *dp.lattice;

  // One application of Φ; returns the new flow and records the policy.
  auto apply_phi = [&](const std::shared_ptr<const MeasureFlow>& mu,
                       IterationRecord& rec) {
    const Environment env = make_environment(coeffs, mu, path);
    const DpResult br = best_response(env, settings.actions, dp);
    rec.escape_fraction = br.escape_fraction;
    rec.warnings.insert(rec.warnings.end(), br.warnings.begin(), br.warnings.end());
    auto sol = std::make_shared<const RsdeSolution>(solve(env, br.policy, opt));
    const CostEstimate c = cost_of(*sol);
    rec.cost = c.mean;
    rec.cost_error = c.std_error;
    result.policy = br.policy;
    result.solution = sol;
    return std::make_shared<const MeasureFlow>(from_solution(*sol));
  };

  auto certify = [&](const std::shared_ptr<const MeasureFlow>& next,
                     const std::shared_ptr<const MeasureFlow>& prev,
                     IterationRecord& rec) {
    rec.w2_update = sup_wasserstein2(*next, *prev, settings.w2);
    const Environment env = make_environment(coeffs, next, path);
    rec.exploit = exploitability(env, result.policy, settings.actions, dp, opt);
    rec.domain = check_domain(*next, *path, settings.domain);
    if (!rec.domain.member) {
      std::ostringstream msg;
      msg << "flow leaves the domain: local norm " << rec.domain.local_max
          << " > M = " << rec.domain.M_bound << " on window [" << grid.time(rec.domain.window.first)
          << ", " << grid.time(rec.domain.window.second) << "]";
      rec.warnings.push_back(msg.str());
    }
  };

  // Initial undamped step μ¹ = Φ(μ⁰), recorded as iteration 0.
  {
    IterationRecord rec;
    rec.iteration = 0;
    auto next = apply_phi(flow, rec);
    certify(next, flow, rec);
    flow = next;
    result.report.records.push_back(std::move(rec));
  }
  for (std::size_t it = 1; it <= settings.max_iters; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    auto image = apply_phi(flow, rec);
    std::shared_ptr<const MeasureFlow> next =
        settings.damping == 1.0
            ? image
            : std::make_shared<const MeasureFlow>(
                  mix(*image, *flow, settings.damping, mix_seed(settings.seed, it)));
    certify(next, flow, rec);
    flow = next;
    const bool done = rec.w2_update < settings.tol_w2 && rec.exploit.raw < settings.tol_exp;
    result.report.records.push_back(std::move(rec));
    result.report.iterations = it;
    if (done) {
      result.report.converged = true;
      break;
    }
  }
  const IterationRecord& last = result.report.records.back();
  result.report.final_exploitability = last.exploit.reported();
  result.report.final_exploitability_raw = last.exploit.raw;
  result.report.final_exploitability_error = last.exploit.std_error;
  result.flow = flow;
  return result;
}

void write_report_json(const EquilibriumReport& report, std::ostream& out) {
  nlohmann::ordered_json j;
  j["iterations"] = report.iterations;
  j["converged"] = report.converged;
  j["final_exploitability"] = report.final_exploitability;
  j["final_exploitability_raw"] = report.final_exploitability_raw;
  j["final_exploitability_error"] = report.final_exploitability_error;
  j["lattice"] = {{"lower", std::vector<double>(report.lattice.lower().data(),
                                                report.lattice.lower().data() +
                                                    report.lattice.dim())},
                  {"upper", std::vector<double>(report.lattice.upper().data(),
                                                report.lattice.upper().data() +
                                                    report.lattice.dim())},
                  {"nodes_per_dim", report.lattice.nodes_per_dim()}};
  auto& recs = j["records"] = nlohmann::ordered_json::array();
  for (const IterationRecord& r : report.records) {
    recs.push_back({{"iteration", r.iteration},
                    {"w2_update", r.w2_update},
                    {"exploitability", r.exploit.reported()},
                    {"exploitability_raw", r.exploit.raw},
                    {"exploitability_error", r.exploit.std_error},
                    {"cost", r.cost},
                    {"cost_error", r.cost_error},
                    {"escape_fraction", r.escape_fraction},
                    {"domain",
                     {{"M_bound", r.domain.M_bound},
                      {"epsilon", r.domain.epsilon},
                      {"m", r.domain.m},
                      {"local_max", r.domain.local_max},
                      {"window", {r.domain.window.first, r.domain.window.second}},
                      {"member", r.domain.member},
                      {"lower_bound_mode", r.domain.lower_bound_mode}}},
                    {"warnings", r.warnings}});
  }
  out << j.dump(2) << '\n';
}

void write_iterations_csv(const EquilibriumReport& report, std::ostream& out) {
  out << "iteration,w2_update,exploitability,exploitability_raw,"
         "exploitability_error,cost,cost_error,escape_fraction,domain_local_max,"
         "domain_member\n"
      << std::setprecision(17);
  for (const IterationRecord& r : report.records) {
    out << r.iteration << ',' << r.w2_update << ',' << r.exploit.reported() << ','
        << r.exploit.raw << ',' << r.exploit.std_error << ',' << r.cost << ','
        << r.cost_error << ',' << r.escape_fraction << ',' << r.domain.local_max
        << ',' << (r.domain.member ? 1 : 0) << '\n';
  }
}

}  // namespace rmfg
