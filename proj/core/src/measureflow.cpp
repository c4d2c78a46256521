#include "rmfg/measureflow.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

#include "rmfg/binary_io.hpp"
#include "rmfg/errors.hpp"
#include "rmfg/parallel.hpp"
#include "rmfg/rng.hpp"

namespace rmfg {
namespace {

constexpr std::uint32_t kFlowVersion = 1;

// A flow that never moves: every continuation repeats the frozen cloud.
class ConstantResampler final : public Resampler {
 public:
  ConstantResampler(Eigen::MatrixXd cloud, std::size_t rough_dim)
      : cloud_(std::move(cloud)), rough_dim_(rough_dim) {}

  std::size_t value_dim() const override { return cloud_.cols(); }
  std::size_t rough_dim() const override { return rough_dim_; }

  void continue_path(std::size_t index, std::size_t from, std::size_t to,
                     std::uint64_t, std::span<double> out) const override {
    const std::size_t d = value_dim();
    const std::size_t slot = d + d * rough_dim_;
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t n = 0; n + from <= to; ++n) {
      for (std::size_t i = 0; i < d; ++i) out[n * slot + i] = cloud_(index, i);
    }
  }

 private:
  Eigen::MatrixXd cloud_;
  std::size_t rough_dim_;
};

double w2_sorted_1d(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return s / static_cast<double>(a.size());
  }
  // Quantile coupling of two step functions: walk the merged breakpoints.
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double level = 0.0, s = 0.0;
  while (i < a.size() && j < b.size()) {
    const double next_a = static_cast<double>(i + 1) / na;
    const double next_b = static_cast<double>(j + 1) / nb;
    const double next = std::min(next_a, next_b);
    s += (next - level) * (a[i] - b[j]) * (a[i] - b[j]);
    level = next;
    if (next_a <= next) ++i;
    if (next_b <= next) ++j;
  }
  return s;
}

// Hungarian algorithm (shortest augmenting path, O(n³)) on a square cost
// matrix; returns the minimal total cost.
double min_assignment(const Eigen::MatrixXd& cost) {
  const std::size_t n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j) total += cost(match[j] - 1, j - 1);
  return total;
}

}  // namespace

EmpiricalMeasure::EmpiricalMeasure(Eigen::MatrixXd points)
    : points_(std::move(points)) {
  if (points_.rows() == 0 || points_.cols() == 0) {
    throw InputError("empirical measure needs at least one point");
  }
  mean_ = points_.colwise().mean().transpose();
}

MeasureFlow::MeasureFlow(ControlledEnsemble representation,
                         bool has_derivative)
    : rep_(std::move(representation)), has_derivative_(has_derivative) {
  rep_.check_finite();
}

MeasureFlow MeasureFlow::constant(const TimeGrid& grid,
                                  const Eigen::MatrixXd& cloud,
                                  std::size_t rough_dim) {
  const std::size_t P = cloud.rows();
  const std::size_t d = cloud.cols();
  ControlledEnsemble ce(grid, P, d, rough_dim);
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      auto v = ce.value(n, p);
      for (std::size_t i = 0; i < d; ++i) v[i] = cloud(p, i);
    }
  }
  ce.record() = GenerationRecord::single(
      std::make_shared<ConstantResampler>(cloud, rough_dim), P);
  return MeasureFlow(std::move(ce), true);
}

Eigen::MatrixXd MeasureFlow::derivative_mean(std::size_t node) const {
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(dim(), rough_dim());
  for (std::size_t p = 0; p < particles(); ++p) {
    acc += rep_.derivative_matrix(node, p);
  }
  return acc / static_cast<double>(particles());
}

double wasserstein2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                    const W2Options& options) {
  if (a.rows() == 0 || b.rows() == 0) {
    throw InputError("Wasserstein distance of an empty cloud");
  }
  if (a.cols() != b.cols()) {
    throw InputError("Wasserstein distance between clouds of different dimension");
  }
  const std::size_t d = a.cols();
  if (d == 1) {
    std::vector<double> va(a.data(), a.data() + a.rows());
    std::vector<double> vb(b.data(), b.data() + b.rows());
    return std::sqrt(std::max(0.0, w2_sorted_1d(std::move(va), std::move(vb))));
  }
  if (a.rows() == b.rows() &&
      static_cast<std::size_t>(a.rows()) <= options.exact_limit) {
    const std::size_t n = a.rows();
    Eigen::MatrixXd cost(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        cost(i, j) = (a.row(i) - b.row(j)).squaredNorm();
      }
    }
    return std::sqrt(std::max(0.0, min_assignment(cost) / n));
  }
  // Sliced estimate, rescaled by d so that pure translations are exact.
  const std::size_t S = std::max<std::size_t>(options.projections, 1);
  std::vector<double> per(S, 0.0);
  parallel_for(S, [&](std::size_t s) {
    RandomStream rng(options.seed, StreamModule::kProjection, s);
    Eigen::VectorXd theta(d);
    for (std::size_t i = 0; i < d; ++i) theta(i) = rng.normal();
    theta.normalize();
    const Eigen::VectorXd pa = a * theta;
    const Eigen::VectorXd pb = b * theta;
    per[s] = w2_sorted_1d(std::vector<double>(pa.data(), pa.data() + pa.size()),
                          std::vector<double>(pb.data(), pb.data() + pb.size()));
  });
  double mean = 0.0;
  for (double v : per) mean += v;
  mean /= static_cast<double>(S);
  return std::sqrt(std::max(0.0, mean * static_cast<double>(d)));
}

double sup_wasserstein2(const MeasureFlow& a, const MeasureFlow& b,
                        const W2Options& options) {
  if (!(a.grid() == b.grid())) {
    throw InputError("flows live on different grids");
  }
  double sup = 0.0;
  for (std::size_t n = 0; n < a.grid().nodes(); ++n) {
    sup = std::max(sup, wasserstein2(a.cloud(n), b.cloud(n), options));
  }
  return sup;
}

DomainCertificate check_domain(const MeasureFlow& flow, const RoughPath& path,
                               const DomainSettings& settings) {
  NormSettings ns = settings.norm;
  ns.max_width = settings.epsilon;
  const PairTable table = estimate_pair_table(flow.representation(), path, ns);

  DomainCertificate cert;
  cert.M_bound = settings.M_bound;
  cert.epsilon = settings.epsilon;
  cert.m = ns.m;
  cert.lower_bound_mode = table.lower_bound_mode;
  double best = -1.0;
  for (const PairComponent& c : table.pairs) {
    cert.delta_part = std::max(cert.delta_part, c.delta);
    cert.derivative_part = std::max(cert.derivative_part, c.derivative);
    cert.remainder_part = std::max(cert.remainder_part, c.remainder);
    const double top = std::max({c.delta, c.derivative, c.remainder});
    if (top > best) {
      best = top;
      cert.window = {c.s, c.t};
    }
  }
  double sup = 0.0;
  for (double v : table.derivative_sup) sup = std::max(sup, v);
  cert.derivative_part += sup;
  cert.local_max = combine_parts(cert.delta_part, cert.derivative_part,
                                 cert.remainder_part, ns.m, ns.power_mean);
  cert.member = cert.local_max <= settings.M_bound;
  return cert;
}

MeasureFlow mix(const MeasureFlow& a, const MeasureFlow& b, double lambda,
                std::uint64_t seed) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw InputError("mixing weight must lie in [0, 1]");
  }
  if (!(a.grid() == b.grid()) || a.dim() != b.dim() ||
      a.rough_dim() != b.rough_dim()) {
    throw InputError("mixed flows must share grid and dimensions");
  }
  const std::size_t P = a.particles();
  const std::size_t Pb = b.particles();
  const std::size_t d = a.dim();
  const std::size_t k = a.rough_dim();
  ControlledEnsemble ce(a.grid(), P, d, k);
  const GenerationRecord& ra = a.representation().record();
  const GenerationRecord& rb = b.representation().record();
  GenerationRecord rec;
  const bool resamplable = ra.resamplable() && rb.resamplable();
  if (resamplable) {
    rec.sources = ra.sources;
    rec.sources.insert(rec.sources.end(), rb.sources.begin(), rb.sources.end());
    rec.source_of.resize(P);
    rec.index_in_source.resize(P);
  }
  rec.stream_id.resize(P);
  std::vector<std::size_t> origin(P);
  std::vector<char> from_a(P);
  for (std::size_t i = 0; i < P; ++i) {
    RandomStream rng(seed, StreamModule::kMix, i);
    from_a[i] = rng.uniform() < lambda;
    origin[i] = from_a[i] ? i : (i % Pb);
    const GenerationRecord& r = from_a[i] ? ra : rb;
    rec.stream_id[i] = r.stream_id[origin[i]];
    if (resamplable) {
      rec.source_of[i] = r.source_of[origin[i]] +
                         (from_a[i] ? 0 : static_cast<std::uint32_t>(ra.sources.size()));
      rec.index_in_source[i] = r.index_in_source[origin[i]];
    }
  }
  for (std::size_t n = 0; n < a.grid().nodes(); ++n) {
    for (std::size_t i = 0; i < P; ++i) {
      const ControlledEnsemble& src =
          from_a[i] ? a.representation() : b.representation();
      auto v = src.value(n, origin[i]);
      auto dv = src.derivative(n, origin[i]);
      std::copy(v.begin(), v.end(), ce.value(n, i).begin());
      std::copy(dv.begin(), dv.end(), ce.derivative(n, i).begin());
    }
  }
  ce.record() = std::move(rec);
  return MeasureFlow(std::move(ce), a.has_derivative() && b.has_derivative());
}

void write_flow_csv(const MeasureFlow& flow, std::ostream& out) {
  const std::size_t d = flow.dim();
  const std::size_t k = flow.rough_dim();
  out << "node,t,particle";
  for (std::size_t i = 0; i < d; ++i) out << ",y_" << i;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t a = 0; a < k; ++a) out << ",yp_" << i << '_' << a;
  }
  out << '\n' << std::setprecision(17);
  const ControlledEnsemble& rep = flow.representation();
  for (std::size_t n = 0; n < flow.grid().nodes(); ++n) {
    for (std::size_t p = 0; p < flow.particles(); ++p) {
      out << n << ',' << flow.grid().time(n) << ',' << p;
      for (double v : rep.value(n, p)) out << ',' << v;
      for (double v : rep.derivative(n, p)) out << ',' << v;
      out << '\n';
    }
  }
}

void save_binary(const MeasureFlow& flow, std::ostream& out) {
  using binary::write_le;
  binary::write_magic(out, "MFLW");
  write_le<std::uint32_t>(out, kFlowVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(flow.dim()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(flow.rough_dim()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(flow.grid().steps()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(flow.particles()));
  write_le<double>(out, flow.grid().horizon());
  write_le<std::uint8_t>(out, flow.has_derivative() ? 1 : 0);
  for (double v : flow.representation().values()) write_le<double>(out, v);
  for (double v : flow.representation().derivatives()) write_le<double>(out, v);
  if (!out) throw InputError("failed writing measure flow");
}

MeasureFlow load_flow_binary(std::istream& in) {
  using binary::read_le;
  binary::expect_magic(in, "MFLW");
  if (read_le<std::uint32_t>(in) != kFlowVersion) {
    throw InputError("unsupported measure flow version");
  }
  const auto d = read_le<std::uint32_t>(in);
  const auto k = read_le<std::uint32_t>(in);
  const auto steps = read_le<std::uint32_t>(in);
  const auto P = read_le<std::uint32_t>(in);
  const auto horizon = read_le<double>(in);
  const bool has_derivative = read_le<std::uint8_t>(in) != 0;
  ControlledEnsemble ce(TimeGrid(horizon, steps), P, d, k);
  for (std::size_t n = 0; n < ce.grid().nodes(); ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      for (double& v : ce.value(n, p)) v = read_le<double>(in);
    }
  }
  for (std::size_t n = 0; n < ce.grid().nodes(); ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      for (double& v : ce.derivative(n, p)) v = read_le<double>(in);
    }
  }
  return MeasureFlow(std::move(ce), has_derivative);
}

}  // namespace rmfg
