#include "rmfg/models.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "rmfg/errors.hpp"

namespace rmfg {
namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Params = std::map<std::string, double>;

struct Entry {
  ModelInfo info;
  std::function<CoefficientSet(const Params&)> build;
};

Mat scalar(double v) { return Mat::Constant(1, 1, v); }
double sech2(double v) {
  const double c = std::cosh(v);
  return 1.0 / (c * c);
}

// Quadratic control cost shared by several models.
void quadratic_costs(CoefficientSet& c, double r, double q, double q_terminal) {
  c.running_cost = [r, q](double, const Vec& x, const EmpiricalMeasure&,
                          const Vec& u) {
    return 0.5 * r * u.squaredNorm() + 0.5 * q * x.squaredNorm();
  };
  c.terminal_cost = [q_terminal](const Vec& x, const EmpiricalMeasure&) {
    return 0.5 * q_terminal * x.squaredNorm();
  };
}

CoefficientSet no_interaction(const Params& p) {
  CoefficientSet c;
  c.name = "no-interaction";
  const double s = p.at("sigma"), c0 = p.at("c0"), c1 = p.at("c1");
  c.drift = [](double, const Vec&, const EmpiricalMeasure&, const Vec& u) {
    return Vec(u);
  };
  c.diffusion = [s](double, const Vec&, const EmpiricalMeasure&) {
    return scalar(s);
  };
  c.common = [c0, c1](double, const Vec& x, const EmpiricalMeasure&) {
    return scalar(c0 + c1 * std::tanh(x(0)));
  };
  c.common_gradient = [c1](double, const Vec& x, const EmpiricalMeasure&) {
    return scalar(c1 * sech2(x(0)));
  };
  quadratic_costs(c, p.at("r"), p.at("q"), p.at("q_terminal"));
  c.measure_dependent = false;
  c.common_measure_dependent = false;
  c.bound = 1.0 + std::abs(s) + std::abs(c0) + std::abs(c1);
  c.lipschitz = std::abs(c1) + 1.0;
  return c;
}

CoefficientSet lq(const Params& p) {
  CoefficientSet c;
  c.name = "lq";
  const double a = p.at("coupling"), s = p.at("sigma"), c0 = p.at("c0");
  c.drift = [a](double, const Vec&, const EmpiricalMeasure& mu, const Vec& u) {
    return Vec(u + a * mu.mean());
  };
  c.diffusion = [s](double, const Vec&, const EmpiricalMeasure&) {
    return scalar(s);
  };
  c.common = [c0](double, const Vec&, const EmpiricalMeasure&) {
    return scalar(c0);
  };
  c.common_gradient = [](double, const Vec&, const EmpiricalMeasure&) {
    return scalar(0.0);
  };
  quadratic_costs(c, p.at("r"), p.at("q"), p.at("q_terminal"));
  c.measure_dependent = a != 0.0;
  c.common_measure_dependent = false;
  c.bound = 1.0 + std::abs(a) * 10.0 + std::abs(s) + std::abs(c0);
  c.lipschitz = 1.0 + std::abs(a);
  return c;
}

CoefficientSet tanh_interaction(const Params& p) {
  CoefficientSet c;
  c.name = "tanh-interaction";
  const double kappa = p.at("kappa"), s = p.at("sigma");
  const double c0 = p.at("c0"), c1 = p.at("c1");
  const double r = p.at("r"), q = p.at("q"), qT = p.at("q_terminal");
  c.drift = [kappa](double, const Vec& x, const EmpiricalMeasure& mu,
                    const Vec& u) {
    return Vec::Constant(1, u(0) - kappa * std::tanh(x(0) - mu.mean()(0)));
  };
  c.diffusion = [s](double, const Vec&, const EmpiricalMeasure&) {
    return scalar(s);
  };
  c.common = [c0, c1](double, const Vec& x, const EmpiricalMeasure& mu) {
    return scalar(c0 + c1 * std::tanh(x(0)) * std::tanh(mu.mean()(0)));
  };
  c.common_gradient = [c1](double, const Vec& x, const EmpiricalMeasure& mu) {
    return scalar(c1 * sech2(x(0)) * std::tanh(mu.mean()(0)));
  };
  // μ ↦ tanh(mean μ) has Lions derivative sech²(mean μ), constant in y.
  c.lions.eval = [c1](double, const Vec& x, const EmpiricalMeasure& mu,
                      const Vec&) {
    return scalar(c1 * std::tanh(x(0)) * sech2(mu.mean()(0)));
  };
  c.lions.independent_of_y = true;
  c.running_cost = [r, q](double, const Vec& x, const EmpiricalMeasure& mu,
                          const Vec& u) {
    const double z = x(0) - mu.mean()(0);
    return 0.5 * r * u.squaredNorm() + q * (1.0 - std::exp(-0.5 * x(0) * x(0))) +
           0.1 * q * (1.0 - std::exp(-0.5 * z * z));
  };
  c.terminal_cost = [qT](const Vec& x, const EmpiricalMeasure&) {
    return qT * (1.0 - std::exp(-0.5 * x(0) * x(0)));
  };
  c.bound = 1.0 + kappa + std::abs(s) + std::abs(c0) + std::abs(c1);
  c.lipschitz = 1.0 + kappa + std::abs(c1);
  return c;
}

CoefficientSet gaussian(const Params& p) {
  CoefficientSet c;
  c.name = "gaussian";
  const double cc = p.at("c");
  const double dim_value = p.at("dim");
  if (!(dim_value >= 1.0 && dim_value <= 8.0) ||
      dim_value != std::floor(dim_value)) {
    throw InputError("gaussian model: dim must be an integer in [1, 8]");
  }
  const std::size_t d = static_cast<std::size_t>(dim_value);
  c.dims = {d, d, d, d};
  c.drift = [d](double, const Vec&, const EmpiricalMeasure&, const Vec&) {
    return Vec(Vec::Zero(d));
  };
  c.diffusion = [d](double, const Vec&, const EmpiricalMeasure&) {
    return Mat(Mat::Zero(d, d));
  };
  c.common = [d, cc](double, const Vec&, const EmpiricalMeasure&) {
    return Mat(cc * Mat::Identity(d, d));
  };
  c.common_gradient = [d](double, const Vec&, const EmpiricalMeasure&) {
    return Mat(Mat::Zero(d * d, d));
  };
  c.running_cost = [](double, const Vec&, const EmpiricalMeasure&, const Vec& u) {
    return 0.5 * u.squaredNorm();
  };
  c.terminal_cost = [](const Vec&, const EmpiricalMeasure&) { return 0.0; };
  c.measure_dependent = false;
  c.common_measure_dependent = false;
  c.bound = std::abs(cc) * std::sqrt(static_cast<double>(d)) + 1.0;
  c.lipschitz = 0.0;
  return c;
}

CoefficientSet linear_rough(const Params& p) {
  CoefficientSet c;
  c.name = "linear-rough";
  const double a = p.at("a");
  c.drift = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) {
    return Vec(Vec::Zero(1));
  };
  c.diffusion = [](double, const Vec&, const EmpiricalMeasure&) {
    return scalar(0.0);
  };
  c.common = [a](double, const Vec& x, const EmpiricalMeasure&) {
    return scalar(a * x(0));
  };
  c.common_gradient = [a](double, const Vec&, const EmpiricalMeasure&) {
    return scalar(a);
  };
  c.running_cost = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) {
    return 0.0;
  };
  c.terminal_cost = [](const Vec&, const EmpiricalMeasure&) { return 0.0; };
  c.measure_dependent = false;
  c.common_measure_dependent = false;
  c.lipschitz = std::abs(a);
  return c;
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      {{"no-interaction",
        "b = u, sigma constant, sigma0 = c0 + c1 tanh(x); quadratic costs; "
        "nothing depends on the measure",
        {{"sigma", 0.3, "idiosyncratic volatility"},
         {"c0", 0.4, "common-noise level"},
         {"c1", 0.1, "common-noise state slope"},
         {"r", 1.0, "control cost weight"},
         {"q", 1.0, "running state cost weight"},
         {"q_terminal", 1.0, "terminal cost weight"}}},
       no_interaction},
      {{"lq",
        "b = u + coupling * mean(mu), constant sigma and sigma0, quadratic costs",
        {{"coupling", 0.1, "mean-field drift coupling"},
         {"sigma", 0.3, "idiosyncratic volatility"},
         {"c0", 0.4, "common-noise level"},
         {"r", 1.0, "control cost weight"},
         {"q", 1.0, "running state cost weight"},
         {"q_terminal", 1.0, "terminal cost weight"}}},
       lq},
      {{"tanh-interaction",
        "b = u - kappa tanh(x - mean), sigma0 = c0 + c1 tanh(x) tanh(mean); "
        "bounded costs",
        {{"kappa", 0.5, "mean-reversion towards the population"},
         {"sigma", 0.3, "idiosyncratic volatility"},
         {"c0", 0.4, "common-noise level"},
         {"c1", 0.2, "common-noise interaction"},
         {"r", 1.0, "control cost weight"},
         {"q", 1.0, "running state cost weight"},
         {"q_terminal", 1.0, "terminal cost weight"}}},
       tanh_interaction},
      {{"gaussian", "b = sigma = 0, sigma0 = c I (dim x dim)",
        {{"c", 1.0, "common-noise level"}, {"dim", 1.0, "state dimension"}}},
       gaussian},
      {{"linear-rough", "b = sigma = 0, sigma0 = a x; no costs",
        {{"a", 0.5, "linear common-noise coefficient"}}},
       linear_rough},
  };
  return entries;
}

}  // namespace

std::vector<ModelInfo> list_models() {
  std::vector<ModelInfo> out;
  for (const Entry& e : registry()) out.push_back(e.info);
  return out;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::optional<std::string> suggest_model(const std::string& name) {
  std::optional<std::string> best;
  std::size_t best_d = 0;
  for (const Entry& e : registry()) {
    const std::size_t dist = edit_distance(name, e.info.name);
    if (!best || dist < best_d) {
      best = e.info.name;
      best_d = dist;
    }
  }
  if (best && best_d <= std::max<std::size_t>(3, best->size() / 2)) return best;
  return std::nullopt;
}

std::shared_ptr<const CoefficientSet> make_model(
    const std::string& name, const std::map<std::string, double>& overrides) {
  for (const Entry& e : registry()) {
    if (e.info.name != name) continue;
    Params params;
    for (const ModelParameter& p : e.info.parameters) params[p.name] = p.value;
    for (const auto& [key, value] : overrides) {
      if (!params.count(key)) {
        std::string known;
        for (const ModelParameter& p : e.info.parameters) {
          known += (known.empty() ? "" : ", ") + p.name;
        }
        throw InputError("model '" + name + "' has no parameter '" + key +
                         "' (known: " + known + ")");
      }
      if (!std::isfinite(value)) {
        throw InputError("model parameter '" + key + "' must be finite");
      }
      params[key] = value;
    }
    auto c = std::make_shared<CoefficientSet>(e.build(params));
    c->validate();
    return c;
  }
  std::string message = "unknown model '" + name + "'";
  if (auto s = suggest_model(name)) message += "; did you mean '" + *s + "'?";
  throw InputError(message);
}

}  // namespace rmfg
