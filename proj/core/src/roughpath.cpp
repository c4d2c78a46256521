#include "rmfg/roughpath.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "rmfg/binary_io.hpp"
#include "rmfg/errors.hpp"

namespace rmfg {
namespace {

constexpr std::uint32_t kRoughPathVersion = 1;

void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) {
    throw InputError(std::string(what) + " contains non-finite values");
  }
}

}  // namespace

TimeGrid::TimeGrid(double horizon, std::size_t steps)
    : horizon_(horizon), steps_(steps) {
  if (steps == 0) throw InputError("time grid needs at least one step");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw InputError("time grid horizon must be positive and finite");
  }
}

TimeGrid TimeGrid::coarsened(std::size_t stride) const {
  if (stride == 0 || steps_ % stride != 0) {
    throw InputError("coarsening stride must divide the step count");
  }
  return TimeGrid(horizon_, steps_ / stride);
}

RoughPath::RoughPath(TimeGrid grid, Eigen::MatrixXd first_level,
                     const std::vector<double>& one_step, BracketMode mode)
    : grid_(grid), first_(std::move(first_level)), mode_(mode) {
  const std::size_t n = grid_.nodes();
  const std::size_t k = static_cast<std::size_t>(first_.cols());
  if (static_cast<std::size_t>(first_.rows()) != n || k == 0) {
    throw InputError("first level must have one row per grid node");
  }
  if (one_step.size() != grid_.steps() * k * k) {
    throw InputError("one-step second level has wrong length");
  }
  require_finite(first_, "first level");
  second_.assign(n * n * k * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j + 1 < n; ++j) {
      const double* prev = &second_[offset(i, j)];
      double* next = &second_[offset(i, j + 1)];
      const double* step = &one_step[j * k * k];
      for (std::size_t a = 0; a < k; ++a) {
        const double left = first_(j, a) - first_(i, a);
        for (std::size_t b = 0; b < k; ++b) {
          const double right = first_(j + 1, b) - first_(j, b);
          next[a * k + b] = prev[a * k + b] + step[a * k + b] + left * right;
        }
      }
    }
  }
}

RoughPath::RoughPath(TimeGrid grid, Eigen::MatrixXd first_level,
                     std::vector<double> second_level, BracketMode mode,
                     std::nullptr_t)
    : grid_(grid),
      first_(std::move(first_level)),
      second_(std::move(second_level)),
      mode_(mode) {
  const std::size_t n = grid_.nodes();
  const std::size_t k = static_cast<std::size_t>(first_.cols());
  if (static_cast<std::size_t>(first_.rows()) != n || k == 0 ||
      second_.size() != n * n * k * k) {
    throw InputError("rough path arrays do not match the grid");
  }
}

Eigen::VectorXd RoughPath::increment(std::size_t s, std::size_t t) const {
  return (first_.row(t) - first_.row(s)).transpose();
}

Eigen::Map<const RowMatrix> RoughPath::second(std::size_t s,
                                              std::size_t t) const {
  const auto k = static_cast<Eigen::Index>(dim());
  return Eigen::Map<const RowMatrix>(&second_[offset(s, t)], k, k);
}

double& RoughPath::second_entry(std::size_t s, std::size_t t, std::size_t a,
                                std::size_t b) {
  return second_[offset(s, t) + a * dim() + b];
}

Eigen::MatrixXd RoughPath::bracket(std::size_t s, std::size_t t) const {
  const Eigen::VectorXd d = increment(s, t);
  const Eigen::MatrixXd bb = second(s, t);
  return d * d.transpose() - (bb + bb.transpose());
}

RoughPath RoughPath::coarsened(std::size_t stride) const {
  const TimeGrid coarse = grid_.coarsened(stride);
  const std::size_t n = coarse.nodes();
  const std::size_t k = dim();
  Eigen::MatrixXd first(n, k);
  std::vector<double> second(n * n * k * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    first.row(i) = first_.row(i * stride);
    for (std::size_t j = i; j < n; ++j) {
      const double* src = &second_[offset(i * stride, j * stride)];
      std::copy(src, src + k * k, &second[(i * n + j) * k * k]);
    }
  }
  return RoughPath(coarse, std::move(first), std::move(second), mode_, nullptr);
}

RoughPath ito_lift(const Eigen::MatrixXd& increments, const TimeGrid& grid) {
  if (static_cast<std::size_t>(increments.rows()) != grid.steps()) {
    throw InputError("ito_lift: expected " + std::to_string(grid.steps()) +
                     " increments, got " + std::to_string(increments.rows()));
  }
  require_finite(increments, "increments");
  const std::size_t k = static_cast<std::size_t>(increments.cols());
  Eigen::MatrixXd first = Eigen::MatrixXd::Zero(grid.nodes(), k);
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    first.row(i + 1) = first.row(i) + increments.row(i);
  }
  // Left-point sums: the one-step term δB_{r,r} ⊗ ΔW_r vanishes.
  std::vector<double> one_step(grid.steps() * k * k, 0.0);
  return RoughPath(grid, std::move(first), one_step, BracketMode::kItoIdentity);
}

RoughPath smooth_lift(const Eigen::MatrixXd& node_values,
                      const TimeGrid& grid) {
  if (static_cast<std::size_t>(node_values.rows()) != grid.nodes()) {
    throw InputError("smooth_lift: expected " + std::to_string(grid.nodes()) +
                     " node values, got " + std::to_string(node_values.rows()));
  }
  require_finite(node_values, "node values");
  const std::size_t k = static_cast<std::size_t>(node_values.cols());
  std::vector<double> one_step(grid.steps() * k * k);
  for (std::size_t r = 0; r < grid.steps(); ++r) {
    for (std::size_t a = 0; a < k; ++a) {
      const double da = node_values(r + 1, a) - node_values(r, a);
      for (std::size_t b = 0; b < k; ++b) {
        const double db = node_values(r + 1, b) - node_values(r, b);
        one_step[(r * k + a) * k + b] = 0.5 * da * db;
      }
    }
  }
  return RoughPath(grid, node_values, one_step, BracketMode::kGeometric);
}

double chen_defect(const RoughPath& p) {
  const std::size_t n = p.grid().nodes();
  const std::size_t k = p.dim();
  const Eigen::MatrixXd& b = p.first_level();
  double worst = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t u = s + 1; u < n; ++u) {
      const auto bsu = p.second(s, u);
      for (std::size_t t = u + 1; t < n; ++t) {
        const auto bst = p.second(s, t);
        const auto but = p.second(u, t);
        for (std::size_t i = 0; i < k; ++i) {
          const double left = b(u, i) - b(s, i);
          for (std::size_t j = 0; j < k; ++j) {
            const double right = b(t, j) - b(u, j);
            const double r = bst(i, j) - bsu(i, j) - but(i, j) - left * right;
            worst = std::max(worst, std::abs(r));
          }
        }
      }
    }
  }
  return worst;
}

double symmetry_defect(const RoughPath& p) {
  const std::size_t n = p.grid().nodes();
  double worst = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = s; t < n; ++t) {
      const Eigen::VectorXd d = p.increment(s, t);
      const Eigen::MatrixXd bb = p.second(s, t);
      const Eigen::MatrixXd r =
          0.5 * (bb + bb.transpose()) - 0.5 * d * d.transpose();
      worst = std::max(worst, r.cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

double lift_scale(const RoughPath& p) {
  const std::size_t n = p.grid().nodes();
  double worst = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = s + 1; t < n; ++t) {
      worst = std::max(worst, p.increment(s, t).squaredNorm());
    }
  }
  return 1.0 + worst;
}

namespace {

// Grid-restricted Hölder seminorms of the difference p − q (q may be null).
HolderReport holder_of_difference(const RoughPath& p, const RoughPath* q,
                                  double alpha) {
  if (!(alpha > 0.0 && alpha <= 0.5)) {
    throw InputError("Hölder exponent must lie in (0, 1/2]");
  }
  if (q != nullptr && (!(q->grid() == p.grid()) || q->dim() != p.dim())) {
    throw InputError("rough paths live on different grids or dimensions");
  }
  HolderReport report;
  report.alpha = alpha;
  const std::size_t n = p.grid().nodes();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = s + 1; t < n; ++t) {
      const double h = p.grid().time(t) - p.grid().time(s);
      Eigen::VectorXd d = p.increment(s, t);
      Eigen::MatrixXd bb = p.second(s, t);
      if (q != nullptr) {
        d -= q->increment(s, t);
        bb -= q->second(s, t);
      }
      report.first_seminorm =
          std::max(report.first_seminorm, d.norm() / std::pow(h, alpha));
      report.second_seminorm =
          std::max(report.second_seminorm, bb.norm() / std::pow(h, 2 * alpha));
    }
  }
  return report;
}

}  // namespace

HolderReport holder_report(const RoughPath& p, double alpha) {
  return holder_of_difference(p, nullptr, alpha);
}

double rho_alpha(const RoughPath& p, const RoughPath& q, double alpha) {
  const HolderReport r = holder_of_difference(p, &q, alpha);
  return r.first_seminorm + r.second_seminorm;
}

void save_binary(const RoughPath& p, std::ostream& out) {
  using binary::write_le;
  binary::write_magic(out, "RPTH");
  write_le<std::uint32_t>(out, kRoughPathVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.dim()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.grid().steps()));
  write_le<double>(out, p.grid().horizon());
  write_le<std::uint8_t>(out, static_cast<std::uint8_t>(p.bracket_mode()));
  const Eigen::MatrixXd& first = p.first_level();
  for (Eigen::Index i = 0; i < first.rows(); ++i) {
    for (Eigen::Index a = 0; a < first.cols(); ++a) {
      write_le<double>(out, first(i, a));
    }
  }
  for (double v : p.second_level_data()) write_le<double>(out, v);
  if (!out) throw InputError("failed writing rough path");
}

RoughPath load_binary(std::istream& in) {
  using binary::read_le;
  binary::expect_magic(in, "RPTH");
  const auto version = read_le<std::uint32_t>(in);
  if (version != kRoughPathVersion) {
    throw InputError("unsupported rough path version " +
                     std::to_string(version));
  }
  const auto k = read_le<std::uint32_t>(in);
  const auto steps = read_le<std::uint32_t>(in);
  const auto horizon = read_le<double>(in);
  const auto mode = read_le<std::uint8_t>(in);
  if (k == 0 || mode > 1) throw InputError("corrupt rough path header");
  TimeGrid grid(horizon, steps);
  Eigen::MatrixXd first(grid.nodes(), k);
  for (Eigen::Index i = 0; i < first.rows(); ++i) {
    for (Eigen::Index a = 0; a < first.cols(); ++a) {
      first(i, a) = read_le<double>(in);
    }
  }
  std::vector<double> second(grid.nodes() * grid.nodes() * k * k);
  for (double& v : second) v = read_le<double>(in);
  return RoughPath(grid, std::move(first), std::move(second),
                   static_cast<BracketMode>(mode), nullptr);
}

void save_binary(const RoughPath& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path + " for writing");
  save_binary(p, out);
}

RoughPath load_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  return load_binary(in);
}

void write_first_level_csv(const RoughPath& p, std::ostream& out) {
  out << "node,t";
  for (std::size_t a = 0; a < p.dim(); ++a) out << ",B_" << a;
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < p.grid().nodes(); ++i) {
    out << i << ',' << p.grid().time(i);
    for (std::size_t a = 0; a < p.dim(); ++a) out << ',' << p.first_level()(i, a);
    out << '\n';
  }
}

}  // namespace rmfg
