#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace rmfg {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Uniform grid t_i = i T / N on [0, T].
class TimeGrid {
 public:
  TimeGrid(double horizon, std::size_t steps);

  double horizon() const { return horizon_; }
  std::size_t steps() const { return steps_; }
  std::size_t nodes() const { return steps_ + 1; }
  double dt() const { return horizon_ / static_cast<double>(steps_); }
  double time(std::size_t i) const {
    return horizon_ * static_cast<double>(i) / static_cast<double>(steps_);
  }

  // Grid with every `stride`-th node; requires stride | steps.
  TimeGrid coarsened(std::size_t stride) const;

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) {
    return a.horizon_ == b.horizon_ && a.steps_ == b.steps_;
  }

 private:
  double horizon_;
  std::size_t steps_;
};

enum class BracketMode : std::uint8_t { kItoIdentity = 0, kGeometric = 1 };

// A level-2 rough path sampled on a grid: B at every node and the second
// level 𝔹_{t_i,t_j} = ∫ δB_{t_i,r} ⊗ dB_r for every ordered node pair.
// Immutable once built; entry (a, b) of the second level is ∫ δB^a dB^b.
class RoughPath {
 public:
  // Builds the lift from node values and one-step second levels by Chen
  // composition: 𝔹_{i,j+1} = 𝔹_{i,j} + 𝔹_{j,j+1} + δB_{i,j} ⊗ δB_{j,j+1}.
  // `one_step` holds N blocks of k×k (row-major), one per step.
  RoughPath(TimeGrid grid, Eigen::MatrixXd first_level,
            const std::vector<double>& one_step, BracketMode mode);

  // Raw constructor used by file loading and tests; no consistency checks
  // beyond shapes.
  RoughPath(TimeGrid grid, Eigen::MatrixXd first_level,
            std::vector<double> second_level, BracketMode mode,
            std::nullptr_t raw);

  const TimeGrid& grid() const { return grid_; }
  std::size_t dim() const { return static_cast<std::size_t>(first_.cols()); }
  BracketMode bracket_mode() const { return mode_; }

  // B at node i (row vector of length k).
  Eigen::VectorXd value(std::size_t i) const { return first_.row(i).transpose(); }
  const Eigen::MatrixXd& first_level() const { return first_; }
  Eigen::VectorXd increment(std::size_t s, std::size_t t) const;

  // 𝔹_{s,t} as a k×k map; s ≤ t.
  Eigen::Map<const RowMatrix> second(std::size_t s, std::size_t t) const;
  const std::vector<double>& second_level_data() const { return second_; }

  // [𝐁]_{s,t} = δB ⊗ δB − (𝔹 + 𝔹ᵀ).
  Eigen::MatrixXd bracket(std::size_t s, std::size_t t) const;

  // Restriction to every `stride`-th node (exact: values are copied, not
  // recomputed).
  RoughPath coarsened(std::size_t stride) const;

  // Mutable access for fault-injection tests.
  double& second_entry(std::size_t s, std::size_t t, std::size_t a,
                       std::size_t b);

 private:
  std::size_t offset(std::size_t s, std::size_t t) const {
    const std::size_t n = grid_.nodes();
    const std::size_t k = dim();
    return (s * n + t) * k * k;
  }

  TimeGrid grid_;
  Eigen::MatrixXd first_;        // (N+1) × k
  std::vector<double> second_;   // (N+1)² blocks of k×k, row-major
  BracketMode mode_;
};

// Itô (left-point) lift of Brownian-type increments: B_0 = 0, B cumulative,
// 𝔹_{t_i,t_j} = Σ_{i≤r<j} δB_{t_i,t_r} ⊗ ΔW_r. `increments` is N × k.
RoughPath ito_lift(const Eigen::MatrixXd& increments, const TimeGrid& grid);

// Canonical lift of the piecewise-linear interpolant of node values
// ((N+1) × k): per segment ½ δB ⊗ δB, composed by Chen.
RoughPath smooth_lift(const Eigen::MatrixXd& node_values, const TimeGrid& grid);

// max over s<u<t of |𝔹_{s,t} − 𝔹_{s,u} − 𝔹_{u,t} − δB_{s,u} ⊗ δB_{u,t}|.
double chen_defect(const RoughPath& p);

// max over pairs of |Sym(𝔹_{s,t}) − ½ δB ⊗ δB|; zero for geometric lifts.
double symmetry_defect(const RoughPath& p);

// 1 + max |δB_{s,t}|²: the scale for round-off tolerances on 𝔹.
double lift_scale(const RoughPath& p);

struct HolderReport {
  double alpha = 0.0;
  double first_seminorm = 0.0;   // max |δB_{s,t}| / (t−s)^α
  double second_seminorm = 0.0;  // max |𝔹_{s,t}| / (t−s)^{2α}
};

HolderReport holder_report(const RoughPath& p, double alpha);

// ρ_α(p, q) = |δB^p − δB^q|_α + |𝔹^p − 𝔹^q|_{2α}, restricted to the grid.
double rho_alpha(const RoughPath& p, const RoughPath& q, double alpha);

inline constexpr double kDefaultAlpha = 0.45;

// Binary container: "RPTH", u32 version, u32 k, u32 N, f64 T, u8 bracket,
// then (N+1)·k first-level and (N+1)²·k² second-level f64 values, all
// little-endian.
void save_binary(const RoughPath& p, std::ostream& out);
RoughPath load_binary(std::istream& in);
void save_binary(const RoughPath& p, const std::string& path);
RoughPath load_binary(const std::string& path);

// node,t,B_0,...,B_{k-1}
void write_first_level_csv(const RoughPath& p, std::ostream& out);

}  // namespace rmfg
