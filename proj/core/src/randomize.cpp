#include "rmfg/randomize.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "rmfg/errors.hpp"
#include "rmfg/parallel.hpp"
#include "rmfg/rng.hpp"

namespace rmfg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace {

// Domain-separation tags for derived seeds.
constexpr std::uint64_t kJointTag = 0x6a6f696e74ULL;
constexpr std::uint64_t kConditionalTag = 0x636f6e64ULL;
constexpr std::uint64_t kTestTag = 0x74657374ULL;

std::vector<double> as_vector(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

double z_score(double a, double b, double ea, double eb) {
  const double den = std::sqrt(ea * ea + eb * eb);
  if (den > 0.0) return (a - b) / den;
  return a == b ? 0.0 : std::copysign(INFINITY, a - b);
}

}  // namespace

Mat sample_increments(const TimeGrid& grid, std::size_t k, std::uint64_t seed,
                      std::size_t refine) {
  if (refine == 0) throw InputError("refinement factor must be positive");
  const std::size_t steps = grid.steps() * refine;
  const double sd = std::sqrt(grid.dt() / static_cast<double>(refine));
  Mat inc(steps, k);
  for (std::size_t n = 0; n < steps; ++n) {
    RandomStream rng(seed, StreamModule::kCommon, 0, n);
    for (std::size_t a = 0; a < k; ++a) inc(n, a) = sd * rng.normal();
  }
  return inc;
}

RoughPath sample_lift(const TimeGrid& grid, std::size_t k, std::uint64_t seed,
                      std::size_t refine) {
  const Mat inc = sample_increments(grid, k, seed, refine);
  if (refine == 1) return ito_lift(inc, grid);
  return ito_lift(inc, TimeGrid(grid.horizon(), grid.steps() * refine)).coarsened(refine);
}

Mat ConditionalMoments::mean_error(std::size_t particles) const {
  const double denom = std::max<double>(static_cast<double>(particles) - 1.0, 1.0);
  return (var.array() / denom).sqrt().matrix();
}

ConditionalMoments moments_of(const std::vector<Mat>& terminal) {
  const std::size_t S = terminal.size();
  if (S == 0) throw InputError("no samples");
  const Eigen::Index d = terminal[0].cols();
  ConditionalMoments m{Mat(S, d), Mat(S, d), Mat(S, d)};
  for (std::size_t s = 0; s < S; ++s) {
    const Mat& x = terminal[s];
    const Vec mean = x.colwise().mean().transpose();
    const Vec second = x.array().square().colwise().mean().transpose();
    m.mean.row(s) = mean.transpose();
    m.second.row(s) = second.transpose();
    m.var.row(s) = ((x.rowwise() - mean.transpose()).array().square().colwise().mean());
  }
  return m;
}

PooledMoments pool(const ConditionalMoments& m) {
  const double S = static_cast<double>(m.samples());
  auto column_error = [S](const Mat& v) {
    const Vec mean = v.colwise().mean().transpose();
    if (S < 2) return Vec(Vec::Zero(v.cols()));
    const Vec ss = (v.rowwise() - mean.transpose()).array().square().colwise().sum();
    return Vec((ss.array() / (S - 1.0) / S).sqrt());
  };
  PooledMoments p;
  p.mean = m.mean.colwise().mean().transpose();
  p.mean_error = column_error(m.mean);
  p.second = m.second.colwise().mean().transpose();
  p.second_error = column_error(m.second);
  const Vec between =
      (m.mean.rowwise() - p.mean.transpose()).array().square().colwise().mean();
  p.var = m.var.colwise().mean().transpose() + between;
  return p;
}

JointResult joint_simulate(std::shared_ptr<const CoefficientSet> coeffs,
                           std::shared_ptr<const RelaxedPolicy> policy,
                           const TimeGrid& grid, const JointSettings& settings) {
  coeffs->validate();
  if (policy->mode() == PolicyMode::kOpenLoopCausal) {
    throw InputError("joint simulation supports feedback policies only");
  }
  const CoefficientSet& c = *coeffs;
  const std::size_t S = settings.samples, P = settings.particles;
  const std::size_t N = grid.steps(), d = c.dims.state, l = c.dims.noise,
                    k = c.dims.rough;
  if (S == 0 || P == 0) throw InputError("joint simulation needs samples and particles");
  if (!settings.common_increments.empty() && settings.common_increments.size() != S) {
    throw InputError("common increments must be given for every sample");
  }
  if (settings.flow && settings.flow->grid().steps() != N) {
    throw InputError("external flow lives on a different grid");
  }
  const double dt = grid.dt(), sq = std::sqrt(dt);
  std::vector<Mat> terminal(S);

  parallel_for(S, [&](std::size_t s) {
    const std::uint64_t seed = mix_seed(settings.seed, s);
    Mat dB = settings.common_increments.empty()
                 ? sample_increments(grid, k, seed)
                 : settings.common_increments[s];
    if (static_cast<std::size_t>(dB.rows()) != N ||
        static_cast<std::size_t>(dB.cols()) != k) {
      throw InputError("common increments have the wrong shape");
    }
    Mat x(P, d);
    for (std::size_t p = 0; p < P; ++p) x.row(p) = settings.init.sample(seed, p).transpose();
    std::vector<RandomStream> w;
    w.reserve(P);
    for (std::size_t p = 0; p < P; ++p) w.emplace_back(seed, StreamModule::kJoint, p);
    Vec dw(l);
    for (std::size_t n = 0; n < N; ++n) {
      const double t = grid.time(n);
      const EmpiricalMeasure mu =
          settings.flow ? settings.flow->marginal(n) : EmpiricalMeasure(x);
      const Vec db = dB.row(n).transpose();
      for (std::size_t p = 0; p < P; ++p) {
        const Vec xp = x.row(p).transpose();
        const auto probs = policy->probabilities(n, xp);
        Vec bbar = Vec::Zero(d);
        for (std::size_t a = 0; a < probs.size(); ++a) {
          if (probs[a] != 0.0) bbar += probs[a] * c.drift(t, xp, mu, policy->actions()[a]);
        }
        for (std::size_t j = 0; j < l; ++j) dw(j) = sq * w[p].normal();
        const Vec next = xp + bbar * dt + c.diffusion(t, xp, mu) * dw + c.common(t, xp, mu) * db;
        if (!next.allFinite() || next.cwiseAbs().maxCoeff() > settings.blowup) {
          throw DivergedError(n + 1, s * P + p,
                              next.allFinite() ? next.cwiseAbs().maxCoeff() : NAN);
        }
        x.row(p) = next.transpose();
      }
    }
    terminal[s] = std::move(x);
  });

  JointResult out{moments_of(terminal), {}};
  if (settings.keep_terminal) out.terminal = std::move(terminal);
  return out;
}

std::string to_string(CompareMode mode) {
  return mode == CompareMode::kFrozenFlow ? "frozen-flow" : "per-sample-fixedpoint";
}

CompareMode parse_compare_mode(const std::string& text) {
  if (text == "frozen-flow") return CompareMode::kFrozenFlow;
  if (text == "per-sample-fixedpoint") return CompareMode::kPerSampleFixedPoint;
  throw InputError("unknown mode '" + text +
                   "' (expected frozen-flow or per-sample-fixedpoint)");
}

namespace {

struct PathwiseRun {
  std::vector<Mat> terminal;
  std::vector<Mat> common;  // coarse B⁰ increments per sample
  std::vector<SampleVerdict> verdicts;
};

std::shared_ptr<const MeasureFlow> frozen_flow(const CoefficientSet& c,
                                               const TimeGrid& grid,
                                               const CompareSettings& s) {
  if (s.flow) {
    if (s.flow->grid().steps() != grid.steps()) {
      throw InputError("supplied flow lives on a different grid");
    }
    return s.flow;
  }
  return std::make_shared<const MeasureFlow>(MeasureFlow::constant(
      grid, s.init.sample_cloud(s.particles, s.seed), c.dims.rough));
}

PathwiseRun run_pathwise(std::shared_ptr<const CoefficientSet> coeffs,
                         std::shared_ptr<const RelaxedPolicy> policy,
                         const TimeGrid& grid, const CompareSettings& s) {
  coeffs->validate();
  const std::size_t S = s.samples, N = grid.steps(), k = coeffs->dims.rough;
  if (S == 0 || s.particles == 0) throw InputError("comparison needs samples and particles");
  if (policy->grid().steps() != N) throw InputError("policy lives on a different grid");
  const std::uint64_t w_seed = s.w_seed.value_or(s.seed);
  std::shared_ptr<const MeasureFlow> frozen;
  if (s.mode == CompareMode::kFrozenFlow) frozen = frozen_flow(*coeffs, grid, s);

  PathwiseRun run{std::vector<Mat>(S), std::vector<Mat>(S), std::vector<SampleVerdict>(S)};
  parallel_for(S, [&](std::size_t i) {
    const std::uint64_t lift_seed = mix_seed(s.seed, i);
    auto path = std::make_shared<const RoughPath>(sample_lift(grid, k, lift_seed, s.refine));
    SolveOptions opt;
    opt.particles = s.particles;
    opt.seed = mix_seed(w_seed, i);
    opt.init = s.init;
    std::shared_ptr<const MeasureFlow> flow = frozen;
    if (s.mode == CompareMode::kPerSampleFixedPoint) {
      SolveOptions inner = opt;
      inner.particles = s.inner_particles ? s.inner_particles : s.particles;
      flow = std::make_shared<const MeasureFlow>(MeasureFlow::constant(
          grid, s.init.sample_cloud(inner.particles, inner.seed), k));
      for (std::size_t it = 0; it < s.inner_iterations; ++it) {
        const RsdeSolution sol = solve(make_environment(coeffs, flow, path), policy, inner);
        flow = std::make_shared<const MeasureFlow>(from_solution(sol));
      }
    }
    const RsdeSolution sol = solve(make_environment(coeffs, flow, path), policy, opt);
    run.terminal[i] = sol.state.cloud(N);
    Mat inc(N, k);
    for (std::size_t n = 0; n < N; ++n) inc.row(n) = path->increment(n, n + 1).transpose();
    run.verdicts[i].lift_seed = lift_seed;
    run.verdicts[i].terminal_b = path->increment(0, N).norm();
    run.verdicts[i].chen_defect = chen_defect(*path);
    run.common[i] = std::move(inc);
  });
  return run;
}

Mat standardized_features(const ConditionalMoments& m, const Vec& scale) {
  Mat f(m.samples(), 2 * m.mean.cols());
  f << m.mean, m.var;
  return f * scale.cwiseInverse().asDiagonal();
}

}  // namespace

ConditionalMoments pathwise_moments(std::shared_ptr<const CoefficientSet> coeffs,
                                    std::shared_ptr<const RelaxedPolicy> policy,
                                    const TimeGrid& grid,
                                    const CompareSettings& settings) {
  return moments_of(run_pathwise(std::move(coeffs), std::move(policy), grid, settings).terminal);
}

CompareReport compare_pathwise_vs_randomized(
    std::shared_ptr<const CoefficientSet> coeffs,
    std::shared_ptr<const RelaxedPolicy> policy, const TimeGrid& grid,
    const CompareSettings& settings) {
  const PathwiseRun path_run = run_pathwise(coeffs, policy, grid, settings);
  const std::size_t S = settings.samples, P = settings.particles;

  JointSettings js;
  js.samples = S;
  js.particles = P;
  js.seed = mix_seed(settings.seed, kJointTag);
  js.init = settings.init;
  if (settings.mode == CompareMode::kFrozenFlow) js.flow = frozen_flow(*coeffs, grid, settings);
  const JointResult joint = joint_simulate(coeffs, policy, grid, js);

  CompareReport r;
  r.mode = settings.mode;
  r.samples = S;
  r.particles = P;
  r.pathwise = moments_of(path_run.terminal);
  r.joint = joint.moments;
  r.pathwise_pooled = pool(r.pathwise);
  r.joint_pooled = pool(r.joint);
  const Eigen::Index d = r.pathwise.mean.cols();
  r.z_mean.resize(d);
  r.z_second.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    r.z_mean(i) = z_score(r.pathwise_pooled.mean(i), r.joint_pooled.mean(i),
                          r.pathwise_pooled.mean_error(i), r.joint_pooled.mean_error(i));
    r.z_second(i) = z_score(r.pathwise_pooled.second(i), r.joint_pooled.second(i),
                            r.pathwise_pooled.second_error(i), r.joint_pooled.second_error(i));
  }
  r.max_abs_z = std::max(r.z_mean.cwiseAbs().maxCoeff(), r.z_second.cwiseAbs().maxCoeff());
  r.moments_pass = r.max_abs_z <= settings.moment_sigmas;

  // Scale each feature by its spread over both sides so means and
  // variances weigh alike; constant features keep scale 1.
  Mat both(2 * S, 2 * d);
  both << r.pathwise.mean, r.pathwise.var, r.joint.mean, r.joint.var;
  Vec scale(2 * d);
  for (Eigen::Index j = 0; j < 2 * d; ++j) {
    const double mean = both.col(j).mean();
    const double sd = std::sqrt((both.col(j).array() - mean).square().mean());
    scale(j) = sd > 0.0 ? sd : 1.0;
  }
  r.conditional_test = energy_test(standardized_features(r.pathwise, scale),
                                   standardized_features(r.joint, scale),
                                   settings.permutations, mix_seed(settings.seed, kTestTag));
  r.distribution_pass = r.conditional_test.p_value >= settings.level;

  r.per_sample = path_run.verdicts;
  for (const SampleVerdict& v : r.per_sample) {
    r.max_chen_defect = std::max(r.max_chen_defect, v.chen_defect);
  }
  if (settings.per_sample_tests) {
    JointSettings cs = js;
    cs.seed = mix_seed(settings.seed, kConditionalTag);
    cs.common_increments = path_run.common;
    cs.keep_terminal = true;
    if (settings.mode == CompareMode::kPerSampleFixedPoint) cs.flow = nullptr;
    const JointResult cond = joint_simulate(coeffs, policy, grid, cs);
    const Eigen::Index m =
        static_cast<Eigen::Index>(std::min(settings.per_sample_max_points, P));
    std::size_t rejected = 0;
    parallel_for(S, [&](std::size_t s) {
      r.per_sample[s].p_value =
          energy_test(path_run.terminal[s].topRows(m), cond.terminal[s].topRows(m),
                      settings.permutations, mix_seed(cs.seed, s))
              .p_value;
    });
    for (const SampleVerdict& v : r.per_sample) rejected += v.p_value < settings.level;
    r.per_sample_reject_fraction = static_cast<double>(rejected) / static_cast<double>(S);
  }
  return r;
}

ShuffleAudit w_shuffle_audit(std::shared_ptr<const CoefficientSet> coeffs,
                             std::shared_ptr<const RelaxedPolicy> policy,
                             const TimeGrid& grid, const CompareSettings& settings,
                             std::uint64_t other_w_seed) {
  CompareSettings other = settings;
  other.w_seed = other_w_seed;
  const ConditionalMoments a = pathwise_moments(coeffs, policy, grid, settings);
  const ConditionalMoments b = pathwise_moments(coeffs, policy, grid, other);
  const Mat ea = a.mean_error(settings.particles), eb = b.mean_error(settings.particles);
  ShuffleAudit out;
  out.z.resize(a.mean.rows(), a.mean.cols());
  for (Eigen::Index i = 0; i < a.mean.size(); ++i) {
    out.z.data()[i] =
        z_score(a.mean.data()[i], b.mean.data()[i], ea.data()[i], eb.data()[i]);
  }
  out.max_abs_z = out.z.cwiseAbs().maxCoeff();
  out.critical = bonferroni_critical(settings.level, static_cast<std::size_t>(a.mean.size()));
  out.pass = out.max_abs_z < out.critical;
  return out;
}

void write_compare_json(const CompareReport& r, std::ostream& out) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(r.mode);
  j["samples"] = r.samples;
  j["particles"] = r.particles;
  auto pooled = [](const PooledMoments& p) {
    return nlohmann::ordered_json{{"mean", as_vector(p.mean)},
                                  {"mean_error", as_vector(p.mean_error)},
                                  {"second", as_vector(p.second)},
                                  {"second_error", as_vector(p.second_error)},
                                  {"var", as_vector(p.var)}};
  };
  j["pathwise_pooled"] = pooled(r.pathwise_pooled);
  j["joint_pooled"] = pooled(r.joint_pooled);
  j["z_mean"] = as_vector(r.z_mean);
  j["z_second"] = as_vector(r.z_second);
  j["max_abs_z"] = r.max_abs_z;
  j["moments_pass"] = r.moments_pass;
  j["conditional_test"] = {{"statistic", r.conditional_test.statistic},
                           {"p_value", r.conditional_test.p_value},
                           {"permutations", r.conditional_test.permutations}};
  j["distribution_pass"] = r.distribution_pass;
  j["per_sample_reject_fraction"] = r.per_sample_reject_fraction;
  j["max_chen_defect"] = r.max_chen_defect;
  j["pass"] = r.pass();
  auto& samples = j["per_sample"] = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < r.per_sample.size(); ++s) {
    const SampleVerdict& v = r.per_sample[s];
    samples.push_back({{"sample", s},
                       {"lift_seed", v.lift_seed},
                       {"terminal_b", v.terminal_b},
                       {"chen_defect", v.chen_defect},
                       {"p_value", v.p_value}});
  }
  out << j.dump(2) << '\n';
}

void write_conditional_csv(const CompareReport& r, std::ostream& out) {
  const Eigen::Index d = r.pathwise.mean.cols();
  out << "sample,side";
  for (Eigen::Index i = 0; i < d; ++i) out << ",mean_" << i;
  for (Eigen::Index i = 0; i < d; ++i) out << ",var_" << i;
  out << '\n' << std::setprecision(17);
  auto rows = [&](const ConditionalMoments& m, const char* side) {
    for (Eigen::Index s = 0; s < m.mean.rows(); ++s) {
      out << s << ',' << side;
      for (Eigen::Index i = 0; i < d; ++i) out << ',' << m.mean(s, i);
      for (Eigen::Index i = 0; i < d; ++i) out << ',' << m.var(s, i);
      out << '\n';
    }
  };
  rows(r.pathwise, "pathwise");
  rows(r.joint, "joint");
}

}  // namespace rmfg
