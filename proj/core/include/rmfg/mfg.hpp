#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rmfg/measureflow.hpp"
#include "rmfg/policy.hpp"
#include "rmfg/rsde.hpp"

namespace rmfg {

struct CostEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> per_particle;  // running + terminal
};

// Pathwise cost of a policy against the frozen flow and rough path.
CostEstimate cost(const Environment& env,
                  std::shared_ptr<const RelaxedPolicy> policy,
                  const SolveOptions& options);
CostEstimate cost_of(const RsdeSolution& sol);

struct DpSettings {
  // Lattice for the value function; auto-sized by fixed_point when unset.
  std::optional<StateLattice> lattice;
  std::size_t quadrature = 5;  // Gauss–Hermite nodes per noise coordinate
  bool strict = false;
  double escape_tolerance = 0.05;
  double tie_tolerance = 1e-12;
};

struct DpResult {
  std::shared_ptr<const RelaxedPolicy> policy;  // pure feedback argmin
  StateLattice lattice;
  std::vector<double> value;     // (N+1) × lattice, V(t_n, node)
  std::vector<double> q_values;  // N × lattice × K
  std::vector<std::uint32_t> argmin;  // N × lattice
  // Share of quadrature mass under the chosen action that left the box,
  // averaged over slices and nodes.
  double escape_fraction = 0.0;
  std::vector<std::string> warnings;

  double v(std::size_t n, std::size_t node) const {
    return value[n * lattice.size() + node];
  }
};

// Backward induction on the lattice with the rough increments as frozen
// per-step forcing. Throws ConfigurationError in strict mode when the
// escape fraction exceeds the tolerance.
DpResult best_response(const Environment& env,
                       const std::vector<Eigen::VectorXd>& actions,
                       const DpSettings& settings);

// Feedback policy from a per-(step, node) action choice.
std::shared_ptr<const RelaxedPolicy> pure_policy(
    const TimeGrid& grid, const std::vector<Eigen::VectorXd>& actions,
    const StateLattice& lattice, const std::vector<std::uint32_t>& choice);

struct Exploitability {
  double raw = 0.0;        // J(policy) − J(best response), paired draws
  double std_error = 0.0;
  double cost_policy = 0.0;
  double cost_best = 0.0;
  double reported() const { return raw > 0.0 ? raw : 0.0; }
};

Exploitability exploitability(const Environment& env,
                              std::shared_ptr<const RelaxedPolicy> policy,
                              const std::vector<Eigen::VectorXd>& actions,
                              const DpSettings& dp, const SolveOptions& options);

struct FixedPointSettings {
  std::vector<Eigen::VectorXd> actions;
  InitialLaw init;
  DpSettings dp;
  std::size_t lattice_nodes_per_dim = 41;
  std::size_t pilot_particles = 500;
  std::size_t particles = 2000;
  // Weight of the new flow in μ^{k+1} = mix(Φ(μ^k), μ^k, λ); 1 is Picard.
  double damping = 1.0;
  std::size_t max_iters = 20;
  double tol_w2 = 1e-2;
  double tol_exp = 1e-2;
  DomainSettings domain;
  W2Options w2;
  std::uint64_t seed = 0;
};

struct IterationRecord {
  std::size_t iteration = 0;
  double w2_update = 0.0;  // sup_t W₂(μ^{k+1}_t, μ^k_t)
  Exploitability exploit;
  double cost = 0.0;
  double cost_error = 0.0;
  double escape_fraction = 0.0;
  DomainCertificate domain;
  std::vector<std::string> warnings;
};

struct EquilibriumReport {
  std::size_t iterations = 0;
  bool converged = false;
  double final_exploitability = 0.0;      // clipped
  double final_exploitability_raw = 0.0;
  double final_exploitability_error = 0.0;
  std::vector<IterationRecord> records;
  StateLattice lattice{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), {1}};
};

struct FixedPointResult {
  EquilibriumReport report;
  std::shared_ptr<const MeasureFlow> flow;
  std::shared_ptr<const RelaxedPolicy> policy;
  std::shared_ptr<const RsdeSolution> solution;  // last Φ evaluation
};

// μ⁰ is the constant flow of the initial law. An undamped initial step sets
// μ¹ = Φ(μ⁰); iteration k ≥ 1 then sets μ^{k+1} = mix(Φ(μ^k), μ^k, λ), where
// Φ builds σ̃⁰ from μ^k, computes the best response and simulates it with
// shared seeds. Stops once the W₂ update and the exploitability are both
// below tolerance; never throws on non-convergence.
FixedPointResult fixed_point(std::shared_ptr<const CoefficientSet> coeffs,
                             std::shared_ptr<const RoughPath> path,
                             const FixedPointSettings& settings);

// Box covering mean ± 6 sd of a pilot run at every node.
StateLattice auto_lattice(const RsdeSolution& pilot, std::size_t nodes_per_dim);

void write_report_json(const EquilibriumReport& report, std::ostream& out);
// iteration,w2_update,exploitability,exploitability_raw,...
void write_iterations_csv(const EquilibriumReport& report, std::ostream& out);

}  // namespace rmfg
