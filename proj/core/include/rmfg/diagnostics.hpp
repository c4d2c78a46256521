#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "rmfg/controlled.hpp"
#include "rmfg/rsde.hpp"

namespace rmfg {

// A smooth function of one block of variables (x or w) with derivatives.
struct Factor {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> hessian;
  bool constant = false;

  static Factor one(std::size_t dim);
  // exp(−|v − c|² / (2 width²))
  static Factor bump(Eigen::VectorXd centre, double width);
  // bump(v) · v_i^power, power ∈ {1, 2}
  static Factor bump_times(Eigen::VectorXd centre, double width, std::size_t i,
                           int power);
  // v_i (unbounded; used only as a cross-variation partner in w)
  static Factor coordinate(std::size_t dim, std::size_t i);
};

// φ(x, w) = F(x) · G(w).
struct TestFunction {
  std::string name;
  Factor x;
  Factor w;

  bool trivial() const { return x.constant && w.constant; }
  bool depends_on_x() const { return !x.constant; }
};

// Constant, coordinate bumps, bump·x, bump·x², a bump in w and a mixed
// x–w bump. No completeness is claimed for any finite battery.
std::vector<TestFunction> default_battery(std::size_t state_dim,
                                          std::size_t noise_dim,
                                          double width = 1.5);

struct DiagnosticsSettings {
  double level = 0.01;
  std::size_t windows = 4;
  std::size_t low_power_particles = 100;
  double feature_bump_width = 1.0;
  // Gauss–Hermite nodes per noise coordinate for the conditional step
  // moments; 0 picks 5, 3 or 2 by noise dimension.
  std::size_t quadrature_nodes = 0;
};

// Gaps are realized minus compensator, where the compensator is the exact
// one-step conditional moment of the scheme. It splits into the continuous
// bracket (∫|∇φσ|²ds or ∫∇φσ·∇ψ ds, evaluated left-point) plus an O(Δt)
// discretization correction, both reported as particle means.
struct CrossCheck {
  std::string partner;
  double lemma_term = 0.0;
  double discretization = 0.0;
  double mean_gap = 0.0;
  double std_error = 0.0;
  double t_stat = 0.0;
  bool pass = true;
};

struct PhiDiagnostics {
  std::string name;
  bool trivial = false;
  // (a) regression of window increments of M on 𝓕_s features.
  std::vector<double> residual_t;  // window-major, kept features only
  double residual_max_abs_t = 0.0;
  double residual_critical = 0.0;
  bool residual_pass = true;
  // (b) realized quadratic variation against its compensator.
  double qv_lemma_term = 0.0;
  double qv_discretization = 0.0;
  double qv_mean_gap = 0.0;
  double qv_std_error = 0.0;
  double qv_t = 0.0;
  double qv_critical = 0.0;
  bool qv_pass = true;
  // (c) cross variation with M^W of each partner.
  std::vector<CrossCheck> cross;
  double cross_critical = 0.0;
  bool cross_pass = true;

  bool pass() const { return residual_pass && qv_pass && cross_pass; }
};

struct MartingaleDiagnostics {
  std::size_t particles = 0;
  std::size_t steps = 0;
  double level = 0.01;
  bool low_power = false;
  std::vector<PhiDiagnostics> phis;

  bool all_pass() const;
};

// Per-step increments δM_r(φ) of the martingale of the extended generator,
// for every particle: entry [p·N + r].
std::vector<double> martingale_increments(const RsdeSolution& sol,
                                          const TestFunction& phi);

MartingaleDiagnostics martingale_diagnostics(
    const RsdeSolution& sol, const std::vector<TestFunction>& battery,
    const DiagnosticsSettings& settings = {});

void write_diagnostics_json(const MartingaleDiagnostics& diag, std::ostream& out);

struct MonitorSettings {
  NormSettings norm;
  double C = 10.0;
  double gamma_exp = 2.0;
  std::size_t probes_per_dim = 9;
};

struct AprioriSnapshot {
  NormEstimate state;   // ‖(X, σ̃⁰(X))‖
  NormEstimate field;   // ‖(σ̃⁰(X), σ̂′(X))‖
  CvfNorm cvf;          // ⟦(σ̃⁰, σ̃′)⟧
  double envelope = 0.0;
  bool flagged = false;
};

AprioriSnapshot apriori_monitor(const RsdeSolution& sol,
                                const MonitorSettings& settings);

}  // namespace rmfg
