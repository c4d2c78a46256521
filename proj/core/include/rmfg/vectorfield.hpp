#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "rmfg/controlled.hpp"
#include "rmfg/measureflow.hpp"
#include "rmfg/roughpath.hpp"

namespace rmfg {

struct ModelDims {
  std::size_t state = 1;    // d
  std::size_t noise = 1;    // l, idiosyncratic Brownian dimension
  std::size_t rough = 1;    // k
  std::size_t control = 1;  // dim_u
};

// ∂_μσ⁰(t, x, μ)(y) as a (d·k) × d matrix (row i·k+b, column j).
struct LionsDerivative {
  std::function<Eigen::MatrixXd(double t, const Eigen::VectorXd& x,
                                const EmpiricalMeasure& mu,
                                const Eigen::VectorXd& y)>
      eval;
  // True when the derivative does not depend on y, as for functionals of
  // the mean; the particle average then collapses to one evaluation.
  bool independent_of_y = false;

  explicit operator bool() const { return static_cast<bool>(eval); }
};

// Model coefficients. μ is always a finite particle cloud.
struct CoefficientSet {
  std::string name;
  ModelDims dims;

  // b(t, x, μ, u) ∈ ℝ^d
  std::function<Eigen::VectorXd(double, const Eigen::VectorXd&,
                                const EmpiricalMeasure&,
                                const Eigen::VectorXd&)>
      drift;
  // σ(t, x, μ): d × l
  std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&,
                                const EmpiricalMeasure&)>
      diffusion;
  // σ⁰(t, x, μ): d × k
  std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&,
                                const EmpiricalMeasure&)>
      common;
  // ∇_x σ⁰ as (d·k) × d; finite differences with fd_step when empty.
  std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&,
                                const EmpiricalMeasure&)>
      common_gradient;
  LionsDerivative lions;

  std::function<double(double, const Eigen::VectorXd&, const EmpiricalMeasure&,
                       const Eigen::VectorXd&)>
      running_cost;
  std::function<double(const Eigen::VectorXd&, const EmpiricalMeasure&)>
      terminal_cost;

  // Whether any coefficient reads μ, and whether σ⁰ in particular does.
  bool measure_dependent = true;
  bool common_measure_dependent = true;

  double bound = std::numeric_limits<double>::infinity();
  double lipschitz = std::numeric_limits<double>::infinity();
  double fd_step = 1e-5;

  // Throws ConfigurationError if a required evaluator is missing.
  void validate() const;

  Eigen::MatrixXd common_gradient_at(double t, const Eigen::VectorXd& x,
                                     const EmpiricalMeasure& mu) const;
};

// A time-indexed field pair (f, f′) on the grid nodes: f(t_n, x) is
// rows × k, f′(t_n, x) is (rows·k) × k with row i·k+b, column a.
class ControlledVectorField {
 public:
  using Field =
      std::function<Eigen::MatrixXd(std::size_t node, const Eigen::VectorXd& x)>;

  ControlledVectorField(TimeGrid grid, std::size_t rows, std::size_t state_dim,
                        std::size_t rough_dim, Field value, Field prime,
                        Field gradient = {}, double fd_step = 0.0,
                        double gamma = 2.0);

  const TimeGrid& grid() const { return grid_; }
  std::size_t rows() const { return rows_; }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t rough_dim() const { return rough_dim_; }
  double gamma() const { return gamma_; }
  bool has_gradient() const { return static_cast<bool>(gradient_) || fd_step_ > 0.0; }

  Eigen::MatrixXd value(std::size_t node, const Eigen::VectorXd& x) const;
  Eigen::MatrixXd prime(std::size_t node, const Eigen::VectorXd& x) const;
  // ∇f as (rows·k) × d; central differences when no analytic gradient.
  Eigen::MatrixXd gradient(std::size_t node, const Eigen::VectorXd& x) const;

  // ∇f·f + f′ for square fields (rows = d): the Gubinelli derivative of
  // f(X) along a solution with X′ = f(X).
  Eigen::MatrixXd corrected_prime(std::size_t node,
                                  const Eigen::VectorXd& x) const;

 private:
  TimeGrid grid_;
  std::size_t rows_;
  std::size_t state_dim_;
  std::size_t rough_dim_;
  Field value_;
  Field prime_;
  Field gradient_;
  double fd_step_;
  double gamma_;
};

// The measure flow frozen into per-node empirical laws together with the
// induced common-noise field (σ̃⁰, σ̃′).
struct FlowField {
  std::shared_ptr<const std::vector<EmpiricalMeasure>> measures;
  std::shared_ptr<const ControlledVectorField> common;
  // How σ̃′ was obtained: "zero", "analytic", "analytic-mean" or
  // "finite-difference".
  std::string lions_method;
};

FlowField build_flow_field(std::shared_ptr<const CoefficientSet> coeffs,
                           const MeasureFlow& flow);

// σ̃⁰_t(x) = σ⁰(t, x, μ̂_t), σ̃′_t(x) = mean_i ∂_μσ⁰(t, x, μ̂_t)(Y_t^i)·Y′_t^i.
ControlledVectorField build_cvf_from_flow(
    std::shared_ptr<const CoefficientSet> coeffs, const MeasureFlow& flow);

struct CvfNorm {
  double delta_f = 0.0;       // ⟦δf⟧_β
  double delta_prime = 0.0;   // ⟦δf′⟧_β′
  double delta_gradient = 0.0;// ⟦δ∇f⟧_β′
  double remainder = 0.0;     // ⟦R^f⟧_{β+β′}
  double sup_part = 0.0;      // sup_t |f_t|_γ + |f′_t|_{γ−1} on probes
  double total = 0.0;
  std::size_t probes = 0;
};

// Probe-sup estimate of ⟦(f, f′)⟧ over grid pairs × spatial probes.
CvfNorm cvf_norm(const ControlledVectorField& cvf, const RoughPath& path,
                 const IndexPair& index,
                 const std::vector<Eigen::VectorXd>& probes);

// (f, f′)∘(X, X′) = (f(X), ∇f(X)X′ + f′(X)). The result's value_dim is
// rows·k. Resamplable inputs stay resamplable.
ControlledEnsemble compose(std::shared_ptr<const ControlledVectorField> cvf,
                           const ControlledEnsemble& ce);

// Default probe set: a uniform lattice over [lo, hi]^d plus the given cloud.
std::vector<Eigen::VectorXd> make_probes(const Eigen::VectorXd& lo,
                                         const Eigen::VectorXd& hi,
                                         std::size_t per_dim,
                                         const Eigen::MatrixXd& cloud,
                                         std::size_t max_cloud_points = 64);

struct SpotCheck {
  double max_drift = 0.0;
  double max_diffusion = 0.0;
  double max_common = 0.0;
  bool within_bound = true;
};

// Sampled boundedness check of b, σ, σ⁰ against coeffs.bound.
SpotCheck spot_check(const CoefficientSet& coeffs,
                     const std::vector<Eigen::VectorXd>& probes,
                     const EmpiricalMeasure& mu,
                     const std::vector<Eigen::VectorXd>& actions, double t);

}  // namespace rmfg
