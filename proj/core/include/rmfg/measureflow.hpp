#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>

#include "rmfg/controlled.hpp"
#include "rmfg/roughpath.hpp"

namespace rmfg {

// Uniformly weighted particle cloud standing in for a probability measure.
// Rows are particles.
class EmpiricalMeasure {
 public:
  explicit EmpiricalMeasure(Eigen::MatrixXd points);

  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(points_.cols()); }
  const Eigen::MatrixXd& points() const { return points_; }
  auto particle(std::size_t i) const { return points_.row(i).transpose(); }
  const Eigen::VectorXd& mean() const { return mean_; }

 private:
  Eigen::MatrixXd points_;
  Eigen::VectorXd mean_;
};

// t ↦ μ_t through a representation (Y, Y′): μ_t is the empirical law of the
// particles Y_t, and Y′ is their Gubinelli derivative (d × k per particle).
class MeasureFlow {
 public:
  MeasureFlow(ControlledEnsemble representation, bool has_derivative);

  // Y_t ≡ Y_0 = cloud for every t and Y′ ≡ 0.
  static MeasureFlow constant(const TimeGrid& grid,
                              const Eigen::MatrixXd& cloud,
                              std::size_t rough_dim);

  const ControlledEnsemble& representation() const { return rep_; }
  const TimeGrid& grid() const { return rep_.grid(); }
  std::size_t particles() const { return rep_.particles(); }
  std::size_t dim() const { return rep_.value_dim(); }
  std::size_t rough_dim() const { return rep_.rough_dim(); }
  bool has_derivative() const { return has_derivative_; }

  Eigen::MatrixXd cloud(std::size_t node) const { return rep_.cloud(node); }
  EmpiricalMeasure marginal(std::size_t node) const {
    return EmpiricalMeasure(rep_.cloud(node));
  }
  // Particle average of Y′ at a node (d × k).
  Eigen::MatrixXd derivative_mean(std::size_t node) const;

 private:
  ControlledEnsemble rep_;
  bool has_derivative_;
};

struct RsdeSolution;

// Y := X, Y′ := σ̃⁰(X); marginals are the solution's marginals exactly.
MeasureFlow from_solution(const RsdeSolution& solution);

struct W2Options {
  std::size_t projections = 64;   // slices for d ≥ 2
  std::size_t exact_limit = 64;   // exact assignment up to this many points
  std::uint64_t seed = 0;
};

// 2-Wasserstein distance between clouds (rows are points). Exact in d = 1
// and, for equal sizes up to exact_limit, by optimal assignment; otherwise
// sliced.
double wasserstein2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                    const W2Options& options = {});

// sup over nodes of W₂(μ_t, ν_t).
double sup_wasserstein2(const MeasureFlow& a, const MeasureFlow& b,
                        const W2Options& options = {});

struct DomainSettings {
  NormSettings norm;  // max_width is overwritten by epsilon
  double M_bound = 5.0;
  double epsilon = 0.25;
};

struct DomainCertificate {
  double M_bound = 0.0;
  double epsilon = 0.0;
  int m = 0;
  // Conservative local norm: the three parts maximized separately over all
  // pairs with t − s < ε, then combined.
  double local_max = 0.0;
  double delta_part = 0.0;
  double derivative_part = 0.0;
  double remainder_part = 0.0;
  // Pair attaining the largest scaled component.
  std::pair<std::size_t, std::size_t> window{0, 0};
  bool member = false;
  bool lower_bound_mode = false;
};

DomainCertificate check_domain(const MeasureFlow& flow, const RoughPath& path,
                               const DomainSettings& settings);

// Trajectory-coupled mixture: particle i follows a with probability λ and b
// otherwise, along its whole path. Particle counts are matched by cyclic
// resampling of b.
MeasureFlow mix(const MeasureFlow& a, const MeasureFlow& b, double lambda,
                std::uint64_t seed);

// node,t,particle,y_0..,yp_0..
void write_flow_csv(const MeasureFlow& flow, std::ostream& out);

// "MFLW", u32 version, u32 d, u32 k, u32 N, u32 P, f64 T, u8 has_derivative,
// then node-major Y and Y′ as little-endian f64.
void save_binary(const MeasureFlow& flow, std::ostream& out);
MeasureFlow load_flow_binary(std::istream& in);

}  // namespace rmfg
