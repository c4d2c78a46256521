#include "rmfg/controlled.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "rmfg/errors.hpp"
#include "rmfg/parallel.hpp"
#include "rmfg/rng.hpp"

namespace rmfg {
namespace {

void require_same_grid(const ControlledEnsemble& ce, const RoughPath& path) {
  if (!(ce.grid() == path.grid())) {
    throw InputError("ensemble and rough path live on different grids");
  }
  if (ce.rough_dim() != path.dim()) {
    throw InputError("ensemble derivative dimension does not match the path");
  }
}

double lm_norm(const double* v, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

// Nodes at which pairs are enumerated.
std::vector<std::size_t> pair_nodes(const TimeGrid& grid,
                                    const NormSettings& settings,
                                    bool* subsampled) {
  std::size_t first = 0;
  std::size_t last = grid.steps();
  if (settings.range) {
    first = settings.range->first;
    last = settings.range->second;
    if (first > last || last > grid.steps()) {
      throw InputError("norm window lies outside the grid");
    }
  }
  std::size_t stride = settings.pair_stride;
  if (stride == 0) {
    stride = grid.steps() <= 256 ? 1 : (grid.steps() + 255) / 256;
  }
  *subsampled = stride > 1;
  std::vector<std::size_t> nodes;
  for (std::size_t i = first; i < last; i += stride) nodes.push_back(i);
  nodes.push_back(last);
  return nodes;
}

std::size_t window_end(const std::vector<std::size_t>& nodes, std::size_t si,
                       const TimeGrid& grid, double max_width) {
  std::size_t ti = si;
  while (ti + 1 < nodes.size()) {
    const double width =
        grid.time(nodes[ti + 1]) - grid.time(nodes[si]);
    if (!(width < max_width)) break;
    ++ti;
  }
  return ti;
}

struct PairAccumulator {
  double delta = 0.0;
  double derivative = 0.0;
  double remainder = 0.0;
};

}  // namespace

GenerationRecord GenerationRecord::single(
    std::shared_ptr<const Resampler> source, std::size_t particles) {
  GenerationRecord r;
  r.sources.push_back(std::move(source));
  r.source_of.assign(particles, 0);
  r.index_in_source.resize(particles);
  r.stream_id.resize(particles);
  for (std::size_t p = 0; p < particles; ++p) {
    r.index_in_source[p] = static_cast<std::uint32_t>(p);
    r.stream_id[p] = p;
  }
  return r;
}

GenerationRecord GenerationRecord::streams_only(std::size_t particles) {
  GenerationRecord r;
  r.stream_id.resize(particles);
  for (std::size_t p = 0; p < particles; ++p) r.stream_id[p] = p;
  return r;
}

ControlledEnsemble::ControlledEnsemble(TimeGrid grid, std::size_t particles,
                                       std::size_t value_dim,
                                       std::size_t rough_dim)
    : grid_(grid),
      particles_(particles),
      value_dim_(value_dim),
      rough_dim_(rough_dim),
      values_(grid.nodes() * particles * value_dim, 0.0),
      derivatives_(grid.nodes() * particles * value_dim * rough_dim, 0.0),
      record_(GenerationRecord::streams_only(particles)) {
  if (particles == 0 || value_dim == 0 || rough_dim == 0) {
    throw InputError("ensemble dimensions must be positive");
  }
}

Eigen::MatrixXd ControlledEnsemble::cloud(std::size_t node) const {
  Eigen::MatrixXd out(particles_, value_dim_);
  for (std::size_t p = 0; p < particles_; ++p) {
    auto v = value(node, p);
    for (std::size_t i = 0; i < value_dim_; ++i) out(p, i) = v[i];
  }
  return out;
}

void ControlledEnsemble::check_finite() const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw InputError("ensemble value is not finite at node " +
                       std::to_string(i / (particles_ * value_dim_)));
    }
  }
  const std::size_t w = value_dim_ * rough_dim_;
  for (std::size_t i = 0; i < derivatives_.size(); ++i) {
    if (!std::isfinite(derivatives_[i])) {
      throw InputError("ensemble derivative is not finite at node " +
                       std::to_string(i / (particles_ * w)));
    }
  }
}

Eigen::MatrixXd rough_integral(const ControlledEnsemble& ce,
                               const RoughPath& path, std::size_t from,
                               std::size_t to, std::size_t stride) {
  require_same_grid(ce, path);
  const std::size_t k = path.dim();
  if (ce.value_dim() % k != 0) {
    throw InputError("integrand value dimension must be a multiple of k");
  }
  if (from > to || to > ce.grid().steps()) {
    throw InputError("integration window lies outside the grid");
  }
  if (stride == 0 || (to - from) % stride != 0) {
    throw InputError("integration stride must divide the window");
  }
  const std::size_t e = ce.value_dim() / k;
  const std::size_t P = ce.particles();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(P, e);
  for (std::size_t u = from; u < to; u += stride) {
    const std::size_t v = u + stride;
    const Eigen::VectorXd dB = path.increment(u, v);
    const auto BB = path.second(u, v);
    for (std::size_t p = 0; p < P; ++p) {
      auto z = ce.value(u, p);
      auto zp = ce.derivative(u, p);
      for (std::size_t i = 0; i < e; ++i) {
        double acc = 0.0;
        for (std::size_t b = 0; b < k; ++b) acc += z[i * k + b] * dB(b);
        for (std::size_t b = 0; b < k; ++b) {
          const double* row = &zp[(i * k + b) * k];
          for (std::size_t a = 0; a < k; ++a) acc += row[a] * BB(a, b);
        }
        out(p, i) += acc;
      }
    }
  }
  return out;
}

Eigen::MatrixXd remainder(const ControlledEnsemble& ce, const RoughPath& path,
                          std::size_t s, std::size_t t) {
  require_same_grid(ce, path);
  if (s > t || t > ce.grid().steps()) {
    throw InputError("remainder pair lies outside the grid");
  }
  const Eigen::VectorXd dB = path.increment(s, t);
  Eigen::MatrixXd out(ce.particles(), ce.value_dim());
  for (std::size_t p = 0; p < ce.particles(); ++p) {
    out.row(p) = (ce.value_vector(t, p) - ce.value_vector(s, p) -
                  ce.derivative_matrix(s, p) * dB)
                     .transpose();
  }
  return out;
}

std::optional<std::string> IndexPair::violation(double alpha,
                                                double gamma) const {
  if (!(beta_prime > 1.0 / (1.0 + gamma))) {
    return "beta' must exceed 1/(1+gamma) for the index set Pi";
  }
  if (!(beta_prime <= beta)) return "beta' must not exceed beta (index set Pi)";
  if (!(beta <= alpha)) return "beta must not exceed alpha (index set Pi)";
  if (!(beta_prime <= (gamma - 1.0) * beta)) {
    return "beta' must not exceed (gamma-1)*beta (index set Pi)";
  }
  return std::nullopt;
}

double combine_parts(double delta, double derivative, double remainder, int m,
                     bool power_mean) {
  if (!power_mean) return delta + derivative + remainder;
  const double md = static_cast<double>(m);
  const double s = (std::pow(delta, md) + std::pow(derivative, md) +
                    std::pow(remainder, md)) /
                   3.0;
  return std::pow(s, 1.0 / md);
}

PairTable estimate_pair_table(const ControlledEnsemble& ce,
                              const RoughPath& path,
                              const NormSettings& settings) {
  require_same_grid(ce, path);
  if (settings.m < 2) throw InputError("moment order m must be at least 2");
  const TimeGrid& grid = ce.grid();
  const std::size_t P = ce.particles();
  const std::size_t V = ce.value_dim();
  const std::size_t k = ce.rough_dim();
  const std::size_t W = V * k;
  const double m = static_cast<double>(settings.m);
  const bool infinity = settings.n_mode == IntegrabilityMode::kInfinity;

  PairTable table;
  table.nodes = pair_nodes(grid, settings, &table.subsampled);
  const auto& nodes = table.nodes;
  const std::size_t L = nodes.size();
  table.lower_bound_mode = !ce.record().resamplable();

  // Pair layout: for each start index si, targets si+1..end(si).
  std::vector<std::size_t> pair_offset(L + 1, 0);
  std::vector<std::size_t> end_of(L, 0);
  for (std::size_t si = 0; si < L; ++si) {
    end_of[si] = window_end(nodes, si, grid, settings.max_width);
    pair_offset[si + 1] = pair_offset[si] + (end_of[si] - si);
  }
  const std::size_t n_pairs = pair_offset[L];

  // sup_t ‖Z′_t‖: needs no conditioning.
  table.derivative_sup.assign(L, 0.0);
  for (std::size_t li = 0; li < L; ++li) {
    double acc = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      const double nz = lm_norm(ce.derivative(nodes[li], p).data(), W);
      if (infinity && !table.lower_bound_mode) {
        acc = std::max(acc, nz);
      } else {
        acc += std::pow(nz, m);
      }
    }
    table.derivative_sup[li] = (infinity && !table.lower_bound_mode)
                                   ? acc
                                   : std::pow(acc / P, 1.0 / m);
  }

  std::vector<PairAccumulator> acc(n_pairs);

  if (table.lower_bound_mode) {
    parallel_for(L, [&](std::size_t si) {
      const std::size_t s = nodes[si];
      for (std::size_t ti = si + 1; ti <= end_of[si]; ++ti) {
        const std::size_t t = nodes[ti];
        const Eigen::VectorXd dB = path.increment(s, t);
        double sd = 0.0, sp = 0.0;
        Eigen::VectorXd rmean = Eigen::VectorXd::Zero(V);
        for (std::size_t p = 0; p < P; ++p) {
          const Eigen::VectorXd dz =
              ce.value_vector(t, p) - ce.value_vector(s, p);
          sd += std::pow(dz.norm(), m);
          sp += std::pow(
              (ce.derivative_matrix(t, p) - ce.derivative_matrix(s, p)).norm(),
              m);
          rmean += dz - ce.derivative_matrix(s, p) * dB;
        }
        PairAccumulator& a = acc[pair_offset[si] + (ti - si - 1)];
        a.delta = std::pow(sd / P, 1.0 / m);
        a.derivative = std::pow(sp / P, 1.0 / m);
        a.remainder = (rmean / static_cast<double>(P)).norm();
      }
    });
  } else {
    const GenerationRecord& rec = ce.record();
    const std::size_t outer =
        std::min<std::size_t>(std::max<std::size_t>(settings.outer_particles, 1), P);
    const std::size_t J = std::max<std::size_t>(settings.inner_samples, 1);
    std::vector<std::size_t> chosen(outer);
    for (std::size_t o = 0; o < outer; ++o) chosen[o] = o * P / outer;

    // Per outer particle, per pair: conditional L^m moments and E_s R.
    std::vector<PairAccumulator> per(outer * n_pairs);
    parallel_for(outer, [&](std::size_t o) {
      const std::size_t p = chosen[o];
      const Resampler& src = *rec.sources[rec.source_of[p]];
      const std::size_t src_index = rec.index_in_source[p];
      const std::size_t slot = V + W;
      std::vector<double> buf;
      std::vector<double> rsum(V);
      for (std::size_t si = 0; si + 1 < L; ++si) {
        const std::size_t s = nodes[si];
        const std::size_t e_node = nodes[end_of[si]];
        if (end_of[si] == si) continue;
        const std::size_t span_nodes = e_node - s + 1;
        buf.assign(J * span_nodes * slot, 0.0);
        // Sample 0 is the realized path.
        for (std::size_t n = s; n <= e_node; ++n) {
          double* dst = &buf[(n - s) * slot];
          auto z = ce.value(n, p);
          auto zp = ce.derivative(n, p);
          std::copy(z.begin(), z.end(), dst);
          std::copy(zp.begin(), zp.end(), dst + V);
        }
        for (std::size_t j = 1; j < J; ++j) {
          const std::uint64_t branch =
              mix_seed(settings.seed, mix_seed(s + 1, j));
          src.continue_path(
              src_index, s, e_node, branch,
              std::span<double>(&buf[j * span_nodes * slot],
                                span_nodes * slot));
        }
        const auto zs = ce.value(s, p);
        const auto zps = ce.derivative_matrix(s, p);
        for (std::size_t ti = si + 1; ti <= end_of[si]; ++ti) {
          const std::size_t t = nodes[ti];
          const Eigen::VectorXd dB = path.increment(s, t);
          const Eigen::VectorXd zpdb = zps * dB;
          double md = 0.0, mp = 0.0;
          std::fill(rsum.begin(), rsum.end(), 0.0);
          for (std::size_t j = 0; j < J; ++j) {
            const double* row = &buf[(j * span_nodes + (t - s)) * slot];
            const double* row_s = &buf[(j * span_nodes) * slot];
            double nd = 0.0, np = 0.0;
            for (std::size_t i = 0; i < V; ++i) {
              const double d = row[i] - zs[i];
              nd += d * d;
              rsum[i] += d - zpdb(i);
            }
            for (std::size_t i = 0; i < W; ++i) {
              const double d = row[V + i] - row_s[V + i];
              np += d * d;
            }
            md += std::pow(std::sqrt(nd), m);
            mp += std::pow(std::sqrt(np), m);
          }
          double rn = 0.0;
          for (std::size_t i = 0; i < V; ++i) {
            const double r = rsum[i] / static_cast<double>(J);
            rn += r * r;
          }
          PairAccumulator& a = per[o * n_pairs + pair_offset[si] + (ti - si - 1)];
          a.delta = md / static_cast<double>(J);       // E_s |δZ|^m
          a.derivative = mp / static_cast<double>(J);  // E_s |δZ′|^m
          a.remainder = std::sqrt(rn);                 // |E_s R|
        }
      }
    });
    for (std::size_t q = 0; q < n_pairs; ++q) {
      PairAccumulator r;
      for (std::size_t o = 0; o < outer; ++o) {
        const PairAccumulator& a = per[o * n_pairs + q];
        if (infinity) {
          r.delta = std::max(r.delta, std::pow(a.delta, 1.0 / m));
          r.derivative = std::max(r.derivative, std::pow(a.derivative, 1.0 / m));
        } else {
          r.delta += a.delta;
          r.derivative += a.derivative;
        }
        r.remainder = std::max(r.remainder, a.remainder);
      }
      if (!infinity) {
        r.delta = std::pow(r.delta / outer, 1.0 / m);
        r.derivative = std::pow(r.derivative / outer, 1.0 / m);
      }
      acc[q] = r;
    }
  }

  const double beta = settings.index.beta;
  const double beta_p = settings.index.beta_prime;
  table.pairs.reserve(n_pairs);
  for (std::size_t si = 0; si < L; ++si) {
    for (std::size_t ti = si + 1; ti <= end_of[si]; ++ti) {
      const PairAccumulator& a = acc[pair_offset[si] + (ti - si - 1)];
      const double h = grid.time(nodes[ti]) - grid.time(nodes[si]);
      PairComponent c;
      c.s = nodes[si];
      c.t = nodes[ti];
      c.delta = a.delta / std::pow(h, beta);
      c.derivative = a.derivative / std::pow(h, beta_p);
      c.remainder = a.remainder / std::pow(h, beta + beta_p);
      table.pairs.push_back(c);
    }
  }
  return table;
}

NormEstimate reduce_pair_table(const PairTable& table,
                               const NormSettings& settings) {
  NormEstimate e;
  e.beta = settings.index.beta;
  e.beta_prime = settings.index.beta_prime;
  e.m = settings.m;
  e.n_mode = settings.n_mode;
  e.power_mean = settings.power_mean;
  e.inner_samples = table.lower_bound_mode ? 1 : settings.inner_samples;
  e.lower_bound_mode = table.lower_bound_mode;
  e.pairs_subsampled = table.subsampled;
  e.pairs_evaluated = table.pairs.size();
  double dz = 0.0, dzp = 0.0, rem = 0.0;
  for (const PairComponent& c : table.pairs) {
    dz = std::max(dz, c.delta);
    dzp = std::max(dzp, c.derivative);
    rem = std::max(rem, c.remainder);
  }
  double sup = 0.0;
  for (double v : table.derivative_sup) sup = std::max(sup, v);
  e.delta_z_norm = dz;
  e.zp_norm = sup + dzp;
  e.remainder_norm = rem;
  e.combined = combine_parts(e.delta_z_norm, e.zp_norm, e.remainder_norm,
                             settings.m, settings.power_mean);
  return e;
}

NormEstimate estimate_norm(const ControlledEnsemble& ce, const RoughPath& path,
                           const NormSettings& settings) {
  return reduce_pair_table(estimate_pair_table(ce, path, settings), settings);
}

void write_norm_csv_header(std::ostream& out) {
  out << "label,beta,beta_prime,m,n_mode,delta_z,zp,remainder,combined,"
         "power_mean,inner_samples,pairs,lower_bound_mode\n";
}

void write_norm_csv_row(std::ostream& out, const std::string& label,
                        const NormEstimate& e) {
  out << label << ',' << std::setprecision(17) << e.beta << ','
      << e.beta_prime << ',' << e.m << ','
      << (e.n_mode == IntegrabilityMode::kInfinity ? "inf" : "m") << ','
      << e.delta_z_norm << ',' << e.zp_norm << ',' << e.remainder_norm << ','
      << e.combined << ',' << (e.power_mean ? 1 : 0) << ',' << e.inner_samples
      << ',' << e.pairs_evaluated << ',' << (e.lower_bound_mode ? 1 : 0)
      << '\n';
}

}  // namespace rmfg
