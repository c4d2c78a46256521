#include "rmfg/diagnostics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>

#include "rmfg/errors.hpp"
#include "rmfg/parallel.hpp"
#include "rmfg/stats.hpp"

namespace rmfg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

Factor Factor::one(std::size_t dim) {
  Factor f;
  f.value = [](const Vec&) { return 1.0; };
  f.gradient = [dim](const Vec&) { return Vec(Vec::Zero(dim)); };
  f.hessian = [dim](const Vec&) { return Mat(Mat::Zero(dim, dim)); };
  f.constant = true;
  return f;
}

Factor Factor::bump(Vec centre, double width) {
  if (!(width > 0.0)) throw InputError("bump width must be positive");
  const double s2 = width * width;
  Factor f;
  f.value = [centre, s2](const Vec& v) {
    return std::exp(-0.5 * (v - centre).squaredNorm() / s2);
  };
  f.gradient = [centre, s2](const Vec& v) {
    const Vec z = v - centre;
    return Vec(-std::exp(-0.5 * z.squaredNorm() / s2) / s2 * z);
  };
  f.hessian = [centre, s2](const Vec& v) {
    const Vec z = v - centre;
    const double e = std::exp(-0.5 * z.squaredNorm() / s2);
    return Mat(e * (z * z.transpose() / (s2 * s2) -
                    Mat::Identity(z.size(), z.size()) / s2));
  };
  return f;
}

Factor Factor::bump_times(Vec centre, double width, std::size_t i, int power) {
  if (power != 1 && power != 2) throw InputError("bump_times supports powers 1 and 2");
  if (i >= static_cast<std::size_t>(centre.size())) {
    throw InputError("bump_times coordinate out of range");
  }
  const Factor b = bump(centre, width);
  const auto p = static_cast<double>(power);
  // h(v) = v_i^p with h′ = p v_i^{p−1} e_i, h″ = p(p−1) v_i^{p−2} e_i e_iᵀ.
  Factor f;
  f.value = [b, i, p](const Vec& v) { return b.value(v) * std::pow(v(i), p); };
  f.gradient = [b, i, p](const Vec& v) {
    Vec g = b.gradient(v) * std::pow(v(i), p);
    g(i) += b.value(v) * p * std::pow(v(i), p - 1.0);
    return g;
  };
  f.hessian = [b, i, p](const Vec& v) {
    Mat h = b.hessian(v) * std::pow(v(i), p);
    const Vec bg = b.gradient(v);
    const double dh = p * std::pow(v(i), p - 1.0);
    h.row(i) += dh * bg.transpose();
    h.col(i) += dh * bg;
    if (p == 2.0) h(i, i) += 2.0 * b.value(v);
    return h;
  };
  return f;
}

Factor Factor::coordinate(std::size_t dim, std::size_t i) {
  if (i >= dim) throw InputError("coordinate out of range");
  Factor f;
  f.value = [i](const Vec& v) { return v(i); };
  f.gradient = [dim, i](const Vec&) { return Vec(Vec::Unit(dim, i)); };
  f.hessian = [dim](const Vec&) { return Mat(Mat::Zero(dim, dim)); };
  return f;
}

std::vector<TestFunction> default_battery(std::size_t d, std::size_t l,
                                          double width) {
  const Vec cx = Vec::Zero(d), cw = Vec::Zero(l);
  std::vector<TestFunction> out;
  out.push_back({"constant", Factor::one(d), Factor::one(l)});
  out.push_back({"bump_x", Factor::bump(cx, width), Factor::one(l)});
  for (std::size_t i = 0; i < d; ++i) {
    const std::string s = std::to_string(i);
    out.push_back({"bump_x*x" + s, Factor::bump_times(cx, width, i, 1), Factor::one(l)});
    out.push_back({"bump_x*x" + s + "^2", Factor::bump_times(cx, width, i, 2),
                   Factor::one(l)});
  }
  out.push_back({"bump_w", Factor::one(d), Factor::bump(cw, width)});
  out.push_back({"bump_x*bump_w", Factor::bump(cx, width), Factor::bump(cw, width)});
  return out;
}

bool MartingaleDiagnostics::all_pass() const {
  return std::all_of(phis.begin(), phis.end(),
                     [](const PhiDiagnostics& p) { return p.pass(); });
}

namespace {

// Rough part G(W_r)·∫_r^{r+1} (𝒯, 𝒯′) d𝐁 per particle and step, with
// (𝒯, 𝒯′) = (∇F σ̃⁰, ∇(∇F σ̃⁰)X′ + ∇F σ̃′) built by composition.
std::vector<double> rough_part(const RsdeSolution& sol, const TestFunction& phi,
                               const std::vector<Vec>& wnodes) {
  const std::size_t P = sol.particles();
  const std::size_t N = sol.state.grid().steps();
  std::vector<double> out(P * N, 0.0);
  if (phi.x.constant) return out;
  const Environment& env = sol.env;
  const std::size_t d = env.coeffs->dims.state;
  const std::size_t k = env.coeffs->dims.rough;
  std::shared_ptr<const ControlledVectorField> common = env.field.common;
  const Factor F = phi.x;
  auto value = [common, F](std::size_t n, const Vec& x) {
    return Mat(F.gradient(x).transpose() * common->value(n, x));
  };
  auto prime = [common, F, d, k](std::size_t n, const Vec& x) {
    const Vec g = F.gradient(x);
    const Mat sp = common->prime(n, x);
    Mat out = Mat::Zero(k, k);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t b = 0; b < k; ++b) out.row(b) += g(i) * sp.row(i * k + b);
    }
    return out;
  };
  auto gradient = [common, F, d, k](std::size_t n, const Vec& x) {
    const Vec g = F.gradient(x);
    const Mat H = F.hessian(x);
    const Mat s0 = common->value(n, x);
    const Mat ds = common->gradient(n, x);
    Mat out(k, d);
    for (std::size_t b = 0; b < k; ++b) {
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          acc += H(i, j) * s0(i, b) + g(i) * ds(i * k + b, j);
        }
        out(b, j) = acc;
      }
    }
    return out;
  };
  auto field = std::make_shared<const ControlledVectorField>(
      sol.state.grid(), 1, d, k, value, prime, gradient, 0.0, common->gamma());
  const ControlledEnsemble T = compose(field, sol.state);
  for (std::size_t r = 0; r < N; ++r) {
    const Mat step = rough_integral(T, *env.path, r, r + 1);
    for (std::size_t p = 0; p < P; ++p) {
      out[p * N + r] = step(p, 0) * phi.w.value(wnodes[p * (N + 1) + r]);
    }
  }
  return out;
}

struct StepTerms {
  double dM = 0.0;
  Vec g;                   // Σᵀ∇φ at (X_r, W_r), length l
  std::vector<double> q;   // δM at each quadrature point
};

class StepEvaluator {
 public:
  StepEvaluator(const RsdeSolution& sol, std::size_t quadrature_nodes)
      : sol_(sol) {
    const std::size_t P = sol.particles(), N = sol.state.grid().steps();
    const std::size_t l = sol.env.coeffs->dims.noise;
    wnodes_.resize(P * (N + 1));
    for (std::size_t p = 0; p < P; ++p) {
      Vec w = Vec::Zero(l);
      wnodes_[p * (N + 1)] = w;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < l; ++c) w(c) += sol.dw(n, p, c);
        wnodes_[p * (N + 1) + n + 1] = w;
      }
    }
    brackets_.reserve(N);
    for (std::size_t n = 0; n < N; ++n) brackets_.push_back(sol.env.path->bracket(n, n + 1));

    // Tensor-product Gauss–Hermite rule for ΔW ~ N(0, Δt I_l).
    std::size_t q = quadrature_nodes;
    if (q == 0) q = l <= 3 ? 5 : (l <= 6 ? 3 : 2);
    const QuadratureRule rule = gauss_hermite(q);
    std::size_t total = 1;
    for (std::size_t c = 0; c < l; ++c) total *= q;
    const double sq = std::sqrt(sol.state.grid().dt());
    for (std::size_t idx = 0; idx < total; ++idx) {
      Vec z(l);
      double weight = 1.0;
      std::size_t rest = idx;
      for (std::size_t c = 0; c < l; ++c) {
        z(c) = sq * rule.nodes[rest % q];
        weight *= rule.weights[rest % q];
        rest /= q;
      }
      shocks_.push_back(z);
      weights_.push_back(weight);
    }
  }

  const std::vector<Vec>& wnodes() const { return wnodes_; }
  const std::vector<double>& weights() const { return weights_; }
  const Vec& w(std::size_t p, std::size_t n) const {
    return wnodes_[p * (sol_.state.grid().steps() + 1) + n];
  }

  Vec drift(std::size_t r, std::size_t p, const Vec& x) const {
    const Environment& env = sol_.env;
    const CoefficientSet& c = *env.coeffs;
    const double t = env.grid().time(r);
    const EmpiricalMeasure& mu = env.measure(r);
    const auto& actions = sol_.policy->actions();
    const std::int32_t s = sol_.sampled_action[r * sol_.particles() + p];
    if (s >= 0) return c.drift(t, x, mu, actions[static_cast<std::size_t>(s)]);
    const auto probs = sol_.policy->probabilities(r, x);
    Vec b = Vec::Zero(c.dims.state);
    for (std::size_t a = 0; a < probs.size(); ++a) {
      if (probs[a] == 0.0) continue;
      b += probs[a] * c.drift(t, x, mu, actions[a]);
    }
    return b;
  }

  // Per-(p, r) quantities shared by all test functions. Given 𝓕_r the
  // step is X_{r+1} = x̃ + σΔW_r with x̃ = X_r + b̄Δt + σ̃⁰δB + correction,
  // so the conditional law of (X_{r+1}, W_{r+1}) is that of
  // (x̃ + σz, W_r + z), z ~ N(0, Δt I).
  struct Local {
    Vec x, x1, w, w1, b;
    Mat sigma, bracket_form;  // σ̃⁰[𝐁]σ̃⁰ᵀ
    std::vector<Vec> qx, qw;
  };

  Local local(std::size_t p, std::size_t r) const {
    const Environment& env = sol_.env;
    const double t = env.grid().time(r);
    const std::size_t l = env.coeffs->dims.noise;
    Local L;
    L.x = sol_.state.value_vector(r, p);
    L.x1 = sol_.state.value_vector(r + 1, p);
    L.w = w(p, r);
    L.w1 = w(p, r + 1);
    L.b = drift(r, p, L.x);
    L.sigma = env.coeffs->diffusion(t, L.x, env.measure(r));
    const Mat s0 = env.common().value(r, L.x);
    L.bracket_form = s0 * brackets_[r] * s0.transpose();
    Vec dw(l);
    for (std::size_t c = 0; c < l; ++c) dw(c) = sol_.dw(r, p, c);
    const Vec xt = L.x1 - L.sigma * dw;
    L.qx.reserve(shocks_.size());
    L.qw.reserve(shocks_.size());
    for (const Vec& z : shocks_) {
      L.qx.push_back(xt + L.sigma * z);
      L.qw.push_back(L.w + z);
    }
    return L;
  }

  StepTerms terms(const TestFunction& phi, const Local& L, double rough,
                  bool want_compensator) const {
    const double dt = sol_.state.grid().dt();
    StepTerms out;
    if (phi.trivial()) {
      out.g = Vec::Zero(L.w.size());
      if (want_compensator) out.q.assign(L.qx.size(), 0.0);
      return out;
    }
    const double F0 = phi.x.value(L.x), G0 = phi.w.value(L.w);
    const Vec dF = phi.x.gradient(L.x), dG = phi.w.gradient(L.w);
    const Mat HF = phi.x.hessian(L.x), HG = phi.w.hessian(L.w);
    const double generator =
        G0 * L.b.dot(dF) +
        0.5 * G0 * (L.sigma * L.sigma.transpose()).cwiseProduct(HF).sum() +
        dF.dot(L.sigma * dG) + 0.5 * F0 * HG.trace();
    const double hessian_part = 0.5 * G0 * L.bracket_form.cwiseProduct(HF).sum();
    const double offset = F0 * G0 + generator * dt + rough + hessian_part;
    out.dM = phi.x.value(L.x1) * phi.w.value(L.w1) - offset;
    if (want_compensator) {
      out.g = L.sigma.transpose() * (G0 * dF) + F0 * dG;
      out.q.resize(L.qx.size());
      for (std::size_t i = 0; i < L.qx.size(); ++i) {
        out.q[i] = phi.x.value(L.qx[i]) * phi.w.value(L.qw[i]) - offset;
      }
    }
    return out;
  }

 private:
  const RsdeSolution& sol_;
  std::vector<Vec> wnodes_;
  std::vector<Mat> brackets_;
  std::vector<Vec> shocks_;
  std::vector<double> weights_;
};

// E_r[δM_a δM_b] under the scheme's one-step law.
double compensator(const StepTerms& a, const StepTerms& b,
                   const std::vector<double>& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * a.q[i] * b.q[i];
  return s;
}

double mean_of(const std::vector<double>& v, std::size_t first, std::size_t count) {
  double s = 0.0;
  for (std::size_t i = 0; i < count; ++i) s += v[first + i];
  return s / static_cast<double>(count);
}

}  // namespace

std::vector<double> martingale_increments(const RsdeSolution& sol,
                                          const TestFunction& phi) {
  const std::size_t P = sol.particles(), N = sol.state.grid().steps();
  const StepEvaluator eval(sol, 1);
  const std::vector<double> rough = rough_part(sol, phi, eval.wnodes());
  std::vector<double> out(P * N, 0.0);
  parallel_for(P, [&](std::size_t p) {
    for (std::size_t r = 0; r < N; ++r) {
      out[p * N + r] = eval.terms(phi, eval.local(p, r), rough[p * N + r], false).dM;
    }
  });
  return out;
}

MartingaleDiagnostics martingale_diagnostics(
    const RsdeSolution& sol, const std::vector<TestFunction>& battery,
    const DiagnosticsSettings& settings) {
  const std::size_t P = sol.particles(), N = sol.state.grid().steps();
  const std::size_t d = sol.env.coeffs->dims.state;
  const std::size_t l = sol.env.coeffs->dims.noise;
  const double dt = sol.state.grid().dt();
  const std::size_t windows = std::clamp<std::size_t>(settings.windows, 1, N);
  if (!(settings.level > 0.0 && settings.level < 1.0)) {
    throw InputError("diagnostics level must lie in (0, 1)");
  }

  // Cross-variation partners: M^W of w_j and of a bump in w.
  std::vector<TestFunction> partners;
  for (std::size_t j = 0; j < l; ++j) {
    partners.push_back({"w" + std::to_string(j), Factor::one(d), Factor::coordinate(l, j)});
  }
  partners.push_back({"bump_w", Factor::one(d), Factor::bump(Vec::Zero(l), 1.5)});

  std::vector<TestFunction> all = battery;
  all.insert(all.end(), partners.begin(), partners.end());
  const std::size_t B = battery.size(), A = all.size();

  const StepEvaluator eval(sol, settings.quadrature_nodes);
  std::vector<std::vector<double>> rough(A);
  for (std::size_t f = 0; f < A; ++f) rough[f] = rough_part(sol, all[f], eval.wnodes());

  // Per particle: window sums of δM, QV gaps and cross gaps.
  std::vector<double> window_sum(B * windows * P, 0.0);
  const std::size_t Q = partners.size();
  std::vector<double> qv_gap(B * P, 0.0), qv_lemma(B * P, 0.0), qv_comp(B * P, 0.0);
  std::vector<double> cross_gap(B * Q * P, 0.0), cross_lemma(B * Q * P, 0.0),
      cross_comp(B * Q * P, 0.0);
  const std::vector<double>& weights = eval.weights();
  parallel_for(P, [&](std::size_t p) {
    std::vector<StepTerms> t(A);
    for (std::size_t r = 0; r < N; ++r) {
      const auto L = eval.local(p, r);
      for (std::size_t f = 0; f < A; ++f) t[f] = eval.terms(all[f], L, rough[f][p * N + r], true);
      const std::size_t win = r * windows / N;
      for (std::size_t f = 0; f < B; ++f) {
        window_sum[(f * windows + win) * P + p] += t[f].dM;
        const double c = compensator(t[f], t[f], weights);
        qv_gap[f * P + p] += t[f].dM * t[f].dM - c;
        qv_comp[f * P + p] += c;
        qv_lemma[f * P + p] += t[f].g.squaredNorm() * dt;
        for (std::size_t q = 0; q < Q; ++q) {
          const StepTerms& u = t[B + q];
          const std::size_t at = (f * Q + q) * P + p;
          const double cc = compensator(t[f], u, weights);
          cross_gap[at] += t[f].dM * u.dM - cc;
          cross_comp[at] += cc;
          cross_lemma[at] += t[f].g.dot(u.g) * dt;
        }
      }
    }
  });

  MartingaleDiagnostics out;
  out.particles = P;
  out.steps = N;
  out.level = settings.level;
  out.low_power = P < settings.low_power_particles;
  for (std::size_t f = 0; f < B; ++f) {
    PhiDiagnostics pd;
    pd.name = battery[f].name;
    pd.trivial = battery[f].trivial();

    std::vector<Regression> regs;
    std::size_t tests = 0;
    for (std::size_t win = 0; win < windows; ++win) {
      const std::size_t s = win * N / windows;
      Mat X(P, 1 + d + l + 1);
      Vec y(P);
      const Factor feature_bump = Factor::bump(Vec::Zero(d), settings.feature_bump_width);
      for (std::size_t p = 0; p < P; ++p) {
        const Vec x = sol.state.value_vector(s, p);
        X(p, 0) = 1.0;
        X.row(p).segment(1, d) = x.transpose();
        X.row(p).segment(1 + d, l) = eval.w(p, s).transpose();
        X(p, 1 + d + l) = feature_bump.value(x);
        y(p) = window_sum[(f * windows + win) * P + p];
      }
      regs.push_back(ols_hc1(X, y));
      tests += regs.back().t_stats.size();
    }
    pd.residual_critical = bonferroni_critical(settings.level, tests);
    for (const Regression& reg : regs) {
      for (Eigen::Index j = 0; j < reg.t_stats.size(); ++j) {
        pd.residual_t.push_back(reg.t_stats(j));
        pd.residual_max_abs_t = std::max(pd.residual_max_abs_t, std::abs(reg.t_stats(j)));
      }
    }
    pd.residual_pass = pd.residual_max_abs_t < pd.residual_critical;

    const std::vector<double> qv(qv_gap.begin() + f * P, qv_gap.begin() + (f + 1) * P);
    pd.qv_t = mean_t_stat(qv, &pd.qv_mean_gap, &pd.qv_std_error);
    pd.qv_lemma_term = mean_of(qv_lemma, f * P, P);
    pd.qv_discretization = mean_of(qv_comp, f * P, P) - pd.qv_lemma_term;
    pd.qv_critical = bonferroni_critical(settings.level, 1);
    pd.qv_pass = std::abs(pd.qv_t) < pd.qv_critical;

    if (battery[f].depends_on_x()) {
      pd.cross_critical = bonferroni_critical(settings.level, partners.size());
      for (std::size_t q = 0; q < partners.size(); ++q) {
        const auto first = cross_gap.begin() + (f * Q + q) * P;
        const std::vector<double> gap(first, first + P);
        CrossCheck cc;
        cc.partner = partners[q].name;
        cc.t_stat = mean_t_stat(gap, &cc.mean_gap, &cc.std_error);
        cc.lemma_term = mean_of(cross_lemma, (f * Q + q) * P, P);
        cc.discretization = mean_of(cross_comp, (f * Q + q) * P, P) - cc.lemma_term;
        cc.pass = std::abs(cc.t_stat) < pd.cross_critical;
        pd.cross_pass = pd.cross_pass && cc.pass;
        pd.cross.push_back(cc);
      }
    }
    out.phis.push_back(std::move(pd));
  }
  return out;
}

void write_diagnostics_json(const MartingaleDiagnostics& diag, std::ostream& out) {
  nlohmann::ordered_json j;
  j["particles"] = diag.particles;
  j["steps"] = diag.steps;
  j["level"] = diag.level;
  j["low_power"] = diag.low_power;
  j["all_pass"] = diag.all_pass();
  auto& phis = j["test_functions"] = nlohmann::ordered_json::array();
  for (const PhiDiagnostics& p : diag.phis) {
    nlohmann::ordered_json e;
    e["name"] = p.name;
    e["trivial"] = p.trivial;
    e["residual"] = {{"max_abs_t", p.residual_max_abs_t},
                     {"critical", p.residual_critical},
                     {"t", p.residual_t},
                     {"pass", p.residual_pass}};
    e["quadratic_variation"] = {{"lemma_term", p.qv_lemma_term},
                                {"discretization", p.qv_discretization},
                                {"mean_gap", p.qv_mean_gap},
                                {"std_error", p.qv_std_error},
                                {"t", p.qv_t},
                                {"critical", p.qv_critical},
                                {"pass", p.qv_pass}};
    auto& cross = e["cross_variation"] = nlohmann::ordered_json::array();
    for (const CrossCheck& c : p.cross) {
      cross.push_back({{"partner", c.partner},
                       {"lemma_term", c.lemma_term},
                       {"discretization", c.discretization},
                       {"mean_gap", c.mean_gap},
                       {"std_error", c.std_error},
                       {"t", c.t_stat},
                       {"critical", p.cross_critical},
                       {"pass", c.pass}});
    }
    e["pass"] = p.pass();
    phis.push_back(std::move(e));
  }
  out << j.dump(2) << '\n';
}

AprioriSnapshot apriori_monitor(const RsdeSolution& sol,
                                const MonitorSettings& settings) {
  AprioriSnapshot snap;
  const Environment& env = sol.env;
  snap.state = estimate_norm(sol.state, *env.path, settings.norm);
  const ControlledEnsemble field = compose(env.field.common, sol.state);
  snap.field = estimate_norm(field, *env.path, settings.norm);

  const std::size_t N = sol.state.grid().steps();
  const Mat first = sol.state.cloud(0), last = sol.state.cloud(N);
  Vec lo = first.colwise().minCoeff().transpose().cwiseMin(
      last.colwise().minCoeff().transpose());
  Vec hi = first.colwise().maxCoeff().transpose().cwiseMax(
      last.colwise().maxCoeff().transpose());
  const std::vector<Vec> probes =
      make_probes(lo, hi, settings.probes_per_dim, last, 32);
  snap.cvf = cvf_norm(env.common(), *env.path, settings.norm.index, probes);
  snap.envelope =
      settings.C * std::pow(std::max(1.0, snap.cvf.total), settings.gamma_exp);
  snap.flagged = !(snap.state.combined <= snap.envelope) ||
                 !(snap.field.combined <= snap.envelope);
  return snap;
}

}  // namespace rmfg
