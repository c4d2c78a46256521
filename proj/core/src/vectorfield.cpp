#include "rmfg/vectorfield.hpp"

#include <algorithm>
#include <cmath>

#include "rmfg/errors.hpp"
#include "rmfg/parallel.hpp"

namespace rmfg {
namespace {

Eigen::MatrixXd central_gradient(
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h) {
  const std::size_t d = x.size();
  Eigen::MatrixXd out;
  Eigen::VectorXd xp = x, xm = x;
  for (std::size_t j = 0; j < d; ++j) {
    xp(j) = x(j) + h;
    xm(j) = x(j) - h;
    const Eigen::MatrixXd fp = f(xp);
    const Eigen::MatrixXd fm = f(xm);
    if (j == 0) out.resize(fp.size(), d);
    // Row-major flattening: entry (i, b) of f goes to row i·k + b.
    for (Eigen::Index i = 0; i < fp.rows(); ++i) {
      for (Eigen::Index b = 0; b < fp.cols(); ++b) {
        out(i * fp.cols() + b, j) = (fp(i, b) - fm(i, b)) / (2.0 * h);
      }
    }
    xp(j) = x(j);
    xm(j) = x(j);
  }
  return out;
}

Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
  Eigen::VectorXd v(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index b = 0; b < m.cols(); ++b) v(i * m.cols() + b) = m(i, b);
  }
  return v;
}

class ComposedResampler final : public Resampler {
 public:
  ComposedResampler(std::shared_ptr<const Resampler> base,
                    std::shared_ptr<const ControlledVectorField> cvf)
      : base_(std::move(base)), cvf_(std::move(cvf)) {}

  std::size_t value_dim() const override {
    return cvf_->rows() * cvf_->rough_dim();
  }
  std::size_t rough_dim() const override { return cvf_->rough_dim(); }

  void continue_path(std::size_t index, std::size_t from, std::size_t to,
                     std::uint64_t branch,
                     std::span<double> out) const override {
    const std::size_t d = base_->value_dim();
    const std::size_t k = base_->rough_dim();
    const std::size_t in_slot = d + d * k;
    const std::size_t V = value_dim();
    const std::size_t out_slot = V + V * k;
    std::vector<double> buf((to - from + 1) * in_slot);
    base_->continue_path(index, from, to, branch, buf);
    for (std::size_t n = from; n <= to; ++n) {
      const double* src = &buf[(n - from) * in_slot];
      Eigen::Map<const Eigen::VectorXd> x(src, d);
      Eigen::Map<const RowMatrix> xp(src + d, d, k);
      const Eigen::VectorXd fx = flatten(cvf_->value(n, x));
      const Eigen::MatrixXd der =
          cvf_->gradient(n, x) * xp + cvf_->prime(n, x);
      double* dst = &out[(n - from) * out_slot];
      for (std::size_t i = 0; i < V; ++i) dst[i] = fx(i);
      for (std::size_t i = 0; i < V; ++i) {
        for (std::size_t a = 0; a < k; ++a) dst[V + i * k + a] = der(i, a);
      }
    }
  }

 private:
  std::shared_ptr<const Resampler> base_;
  std::shared_ptr<const ControlledVectorField> cvf_;
};

}  // namespace

void CoefficientSet::validate() const {
  if (!drift || !diffusion || !common) {
    throw ConfigurationError("model '" + name +
                             "' lacks drift, diffusion or common-noise field");
  }
  if (!running_cost || !terminal_cost) {
    throw ConfigurationError("model '" + name + "' lacks cost functions");
  }
}

Eigen::MatrixXd CoefficientSet::common_gradient_at(
    double t, const Eigen::VectorXd& x, const EmpiricalMeasure& mu) const {
  if (common_gradient) return common_gradient(t, x, mu);
  return central_gradient(
      [&](const Eigen::VectorXd& y) { return common(t, y, mu); }, x, fd_step);
}

ControlledVectorField::ControlledVectorField(TimeGrid grid, std::size_t rows,
                                             std::size_t state_dim,
                                             std::size_t rough_dim,
                                             Field value, Field prime,
                                             Field gradient, double fd_step,
                                             double gamma)
    : grid_(grid),
      rows_(rows),
      state_dim_(state_dim),
      rough_dim_(rough_dim),
      value_(std::move(value)),
      prime_(std::move(prime)),
      gradient_(std::move(gradient)),
      fd_step_(fd_step),
      gamma_(gamma) {
  if (!value_) throw ConfigurationError("controlled vector field needs f");
  if (!(gamma > 1.0 && gamma <= 2.0)) {
    throw InputError("vector field regularity gamma must lie in (1, 2]");
  }
}

Eigen::MatrixXd ControlledVectorField::value(std::size_t node,
                                             const Eigen::VectorXd& x) const {
  return value_(node, x);
}

Eigen::MatrixXd ControlledVectorField::prime(std::size_t node,
                                             const Eigen::VectorXd& x) const {
  if (!prime_) return Eigen::MatrixXd::Zero(rows_ * rough_dim_, rough_dim_);
  return prime_(node, x);
}

Eigen::MatrixXd ControlledVectorField::gradient(
    std::size_t node, const Eigen::VectorXd& x) const {
  if (gradient_) return gradient_(node, x);
  if (!(fd_step_ > 0.0)) {
    throw ConfigurationError(
        "vector field has no gradient evaluator and no finite-difference step");
  }
  return central_gradient(
      [&](const Eigen::VectorXd& y) { return value_(node, y); }, x, fd_step_);
}

Eigen::MatrixXd ControlledVectorField::corrected_prime(
    std::size_t node, const Eigen::VectorXd& x) const {
  if (rows_ != state_dim_) {
    throw InputError("corrected derivative needs a square field");
  }
  return gradient(node, x) * value(node, x) + prime(node, x);
}

FlowField build_flow_field(std::shared_ptr<const CoefficientSet> coeffs,
                           const MeasureFlow& flow) {
  coeffs->validate();
  const TimeGrid grid = flow.grid();
  const std::size_t d = coeffs->dims.state;
  const std::size_t k = coeffs->dims.rough;
  if (flow.dim() != d || flow.rough_dim() != k) {
    throw InputError("flow dimensions do not match the model");
  }
  auto measures = std::make_shared<std::vector<EmpiricalMeasure>>();
  measures->reserve(grid.nodes());
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    measures->push_back(flow.marginal(n));
  }

  FlowField out;
  out.measures = measures;
  ControlledVectorField::Field value =
      [coeffs, measures, grid](std::size_t n, const Eigen::VectorXd& x) {
        return coeffs->common(grid.time(n), x, (*measures)[n]);
      };
  ControlledVectorField::Field gradient =
      [coeffs, measures, grid](std::size_t n, const Eigen::VectorXd& x) {
        return coeffs->common_gradient_at(grid.time(n), x, (*measures)[n]);
      };

  ControlledVectorField::Field prime;
  if (!coeffs->common_measure_dependent) {
    out.lions_method = "zero";
  } else {
    if (!flow.has_derivative()) {
      throw ConfigurationError(
          "measure flow carries no derivative particles; sigma-tilde' cannot "
          "be built");
    }
    if (coeffs->lions && coeffs->lions.independent_of_y) {
      out.lions_method = "analytic-mean";
      auto ymean = std::make_shared<std::vector<Eigen::MatrixXd>>();
      for (std::size_t n = 0; n < grid.nodes(); ++n) {
        ymean->push_back(flow.derivative_mean(n));
      }
      prime = [coeffs, measures, ymean, grid](std::size_t n,
                                              const Eigen::VectorXd& x) {
        const EmpiricalMeasure& mu = (*measures)[n];
        return Eigen::MatrixXd(coeffs->lions.eval(grid.time(n), x, mu, mu.mean()) *
                               (*ymean)[n]);
      };
    } else if (coeffs->lions) {
      out.lions_method = "analytic";
      auto derivs = std::make_shared<std::vector<std::vector<Eigen::MatrixXd>>>();
      for (std::size_t n = 0; n < grid.nodes(); ++n) {
        std::vector<Eigen::MatrixXd> row;
        for (std::size_t p = 0; p < flow.particles(); ++p) {
          row.emplace_back(flow.representation().derivative_matrix(n, p));
        }
        derivs->push_back(std::move(row));
      }
      prime = [coeffs, measures, derivs, grid, d, k](std::size_t n,
                                                     const Eigen::VectorXd& x) {
        const EmpiricalMeasure& mu = (*measures)[n];
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d * k, k);
        for (std::size_t p = 0; p < mu.size(); ++p) {
          acc += coeffs->lions.eval(grid.time(n), x, mu, mu.particle(p)) *
                 (*derivs)[n][p];
        }
        return Eigen::MatrixXd(acc / static_cast<double>(mu.size()));
      };
    } else {
      // Directional derivative of μ ↦ σ⁰(x, μ) along the particle
      // displacement Y ↦ Y + h·Y′e_a, by central differences.
      out.lions_method = "finite-difference";
      const double h = coeffs->fd_step;
      auto shifted = std::make_shared<std::vector<EmpiricalMeasure>>();
      for (std::size_t n = 0; n < grid.nodes(); ++n) {
        const Eigen::MatrixXd cloud = flow.cloud(n);
        for (std::size_t a = 0; a < k; ++a) {
          Eigen::MatrixXd dir(cloud.rows(), d);
          for (std::size_t p = 0; p < flow.particles(); ++p) {
            dir.row(p) =
                flow.representation().derivative_matrix(n, p).col(a).transpose();
          }
          shifted->emplace_back(cloud + h * dir);
          shifted->emplace_back(cloud - h * dir);
        }
      }
      prime = [coeffs, shifted, grid, d, k, h](std::size_t n,
                                               const Eigen::VectorXd& x) {
        Eigen::MatrixXd out(d * k, k);
        for (std::size_t a = 0; a < k; ++a) {
          const Eigen::MatrixXd plus =
              coeffs->common(grid.time(n), x, (*shifted)[(n * k + a) * 2]);
          const Eigen::MatrixXd minus =
              coeffs->common(grid.time(n), x, (*shifted)[(n * k + a) * 2 + 1]);
          for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t b = 0; b < k; ++b) {
              out(i * k + b, a) = (plus(i, b) - minus(i, b)) / (2.0 * h);
            }
          }
        }
        return out;
      };
    }
  }
  out.common = std::make_shared<ControlledVectorField>(
      grid, d, d, k, std::move(value), std::move(prime), std::move(gradient),
      coeffs->fd_step);
  return out;
}

ControlledVectorField build_cvf_from_flow(
    std::shared_ptr<const CoefficientSet> coeffs, const MeasureFlow& flow) {
  return *build_flow_field(std::move(coeffs), flow).common;
}

CvfNorm cvf_norm(const ControlledVectorField& cvf, const RoughPath& path,
                 const IndexPair& index,
                 const std::vector<Eigen::VectorXd>& probes) {
  if (probes.empty()) throw InputError("cvf norm needs at least one probe");
  if (!(cvf.grid() == path.grid())) {
    throw InputError("vector field and rough path live on different grids");
  }
  const std::size_t nodes = cvf.grid().nodes();
  const std::size_t Q = probes.size();
  const std::size_t k = cvf.rough_dim();
  const double gamma = cvf.gamma();

  // Tabulate f, f′, ∇f on nodes × probes.
  std::vector<Eigen::MatrixXd> f(nodes * Q), fp(nodes * Q), g(nodes * Q);
  parallel_for(nodes, [&](std::size_t n) {
    for (std::size_t q = 0; q < Q; ++q) {
      f[n * Q + q] = cvf.value(n, probes[q]);
      fp[n * Q + q] = cvf.prime(n, probes[q]);
      g[n * Q + q] = cvf.gradient(n, probes[q]);
    }
  });

  CvfNorm out;
  out.probes = Q;
  std::vector<CvfNorm> per_start(nodes);
  parallel_for(nodes, [&](std::size_t s) {
    CvfNorm& r = per_start[s];
    for (std::size_t t = s + 1; t < nodes; ++t) {
      const double h = cvf.grid().time(t) - cvf.grid().time(s);
      const Eigen::VectorXd dB = path.increment(s, t);
      const double sb = std::pow(h, index.beta);
      const double sbp = std::pow(h, index.beta_prime);
      const double sr = std::pow(h, index.beta + index.beta_prime);
      for (std::size_t q = 0; q < Q; ++q) {
        const Eigen::MatrixXd& fs = f[s * Q + q];
        const Eigen::MatrixXd& ft = f[t * Q + q];
        r.delta_f = std::max(r.delta_f, (ft - fs).norm() / sb);
        r.delta_prime = std::max(
            r.delta_prime, (fp[t * Q + q] - fp[s * Q + q]).norm() / sbp);
        r.delta_gradient = std::max(
            r.delta_gradient, (g[t * Q + q] - g[s * Q + q]).norm() / sbp);
        const Eigen::VectorXd step = fp[s * Q + q] * dB;
        double rem = 0.0;
        for (Eigen::Index i = 0; i < ft.rows(); ++i) {
          for (std::size_t b = 0; b < k; ++b) {
            const double v = ft(i, b) - fs(i, b) - step(i * k + b);
            rem += v * v;
          }
        }
        r.remainder = std::max(r.remainder, std::sqrt(rem) / sr);
      }
    }
    // |f_s|_γ + |f′_s|_{γ−1} on the probe set: sup norms of f, ∇f, f′ plus
    // Hölder quotients of ∇f (order γ−1) and of f′ (order γ−1).
    double sup_f = 0.0, sup_g = 0.0, sup_fp = 0.0, hol_g = 0.0, hol_fp = 0.0;
    for (std::size_t q = 0; q < Q; ++q) {
      sup_f = std::max(sup_f, f[s * Q + q].norm());
      sup_g = std::max(sup_g, g[s * Q + q].norm());
      sup_fp = std::max(sup_fp, fp[s * Q + q].norm());
      for (std::size_t q2 = q + 1; q2 < Q; ++q2) {
        const double dist = (probes[q] - probes[q2]).norm();
        if (dist <= 0.0) continue;
        const double scale = std::pow(dist, gamma - 1.0);
        hol_g = std::max(hol_g, (g[s * Q + q] - g[s * Q + q2]).norm() / scale);
        hol_fp =
            std::max(hol_fp, (fp[s * Q + q] - fp[s * Q + q2]).norm() / scale);
      }
    }
    r.sup_part = sup_f + sup_g + hol_g + sup_fp + hol_fp;
  });
  for (const CvfNorm& r : per_start) {
    out.delta_f = std::max(out.delta_f, r.delta_f);
    out.delta_prime = std::max(out.delta_prime, r.delta_prime);
    out.delta_gradient = std::max(out.delta_gradient, r.delta_gradient);
    out.remainder = std::max(out.remainder, r.remainder);
    out.sup_part = std::max(out.sup_part, r.sup_part);
  }
  out.total = out.delta_f + out.delta_prime + out.delta_gradient +
              out.remainder + out.sup_part;
  return out;
}

ControlledEnsemble compose(std::shared_ptr<const ControlledVectorField> cvf,
                           const ControlledEnsemble& ce) {
  if (!(cvf->grid() == ce.grid())) {
    throw InputError("vector field and ensemble live on different grids");
  }
  if (ce.value_dim() != cvf->state_dim() || ce.rough_dim() != cvf->rough_dim()) {
    throw InputError("ensemble shape does not match the vector field");
  }
  if (!cvf->has_gradient()) {
    throw ConfigurationError(
        "composition needs a gradient evaluator or a finite-difference step");
  }
  const std::size_t k = ce.rough_dim();
  const std::size_t V = cvf->rows() * k;
  const std::size_t P = ce.particles();
  ControlledEnsemble out(ce.grid(), P, V, k);
  parallel_for(ce.grid().nodes(), [&](std::size_t n) {
    for (std::size_t p = 0; p < P; ++p) {
      const Eigen::VectorXd x = ce.value_vector(n, p);
      const Eigen::VectorXd fx = flatten(cvf->value(n, x));
      const Eigen::MatrixXd der =
          cvf->gradient(n, x) * ce.derivative_matrix(n, p) + cvf->prime(n, x);
      auto v = out.value(n, p);
      auto dv = out.derivative(n, p);
      for (std::size_t i = 0; i < V; ++i) v[i] = fx(i);
      for (std::size_t i = 0; i < V; ++i) {
        for (std::size_t a = 0; a < k; ++a) dv[i * k + a] = der(i, a);
      }
    }
  });
  GenerationRecord rec = ce.record();
  for (auto& src : rec.sources) {
    src = std::make_shared<ComposedResampler>(src, cvf);
  }
  out.record() = std::move(rec);
  return out;
}

std::vector<Eigen::VectorXd> make_probes(const Eigen::VectorXd& lo,
                                         const Eigen::VectorXd& hi,
                                         std::size_t per_dim,
                                         const Eigen::MatrixXd& cloud,
                                         std::size_t max_cloud_points) {
  const std::size_t d = lo.size();
  std::vector<Eigen::VectorXd> probes;
  per_dim = std::max<std::size_t>(per_dim, 1);
  std::size_t total = 1;
  for (std::size_t j = 0; j < d; ++j) total *= per_dim;
  for (std::size_t idx = 0; idx < total; ++idx) {
    Eigen::VectorXd x(d);
    std::size_t rest = idx;
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t c = rest % per_dim;
      rest /= per_dim;
      x(j) = per_dim == 1 ? 0.5 * (lo(j) + hi(j))
                          : lo(j) + (hi(j) - lo(j)) * c / (per_dim - 1.0);
    }
    probes.push_back(x);
  }
  const std::size_t P = cloud.rows();
  const std::size_t take = std::min(P, max_cloud_points);
  for (std::size_t i = 0; i < take; ++i) {
    probes.push_back(cloud.row(i * P / take).transpose());
  }
  return probes;
}

SpotCheck spot_check(const CoefficientSet& coeffs,
                     const std::vector<Eigen::VectorXd>& probes,
                     const EmpiricalMeasure& mu,
                     const std::vector<Eigen::VectorXd>& actions, double t) {
  SpotCheck out;
  for (const Eigen::VectorXd& x : probes) {
    for (const Eigen::VectorXd& u : actions) {
      out.max_drift = std::max(out.max_drift, coeffs.drift(t, x, mu, u).norm());
    }
    out.max_diffusion =
        std::max(out.max_diffusion, coeffs.diffusion(t, x, mu).norm());
    out.max_common = std::max(out.max_common, coeffs.common(t, x, mu).norm());
  }
  out.within_bound = out.max_drift <= coeffs.bound &&
                     out.max_diffusion <= coeffs.bound &&
                     out.max_common <= coeffs.bound;
  return out;
}

}  // namespace rmfg
