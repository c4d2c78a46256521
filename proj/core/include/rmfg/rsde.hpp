#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <vector>

#include "rmfg/controlled.hpp"
#include "rmfg/measureflow.hpp"
#include "rmfg/policy.hpp"
#include "rmfg/roughpath.hpp"
#include "rmfg/vectorfield.hpp"

namespace rmfg {

// Law of X₀, sampled independently of controls and W.
struct InitialLaw {
  enum class Kind { kPoint, kGaussian, kCloud };
  Kind kind = Kind::kPoint;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(1);
  Eigen::VectorXd stddev = Eigen::VectorXd::Zero(1);
  Eigen::MatrixXd cloud;  // kCloud: particle p starts at row p mod rows

  static InitialLaw point(Eigen::VectorXd x);
  static InitialLaw gaussian(Eigen::VectorXd mean, Eigen::VectorXd stddev);
  static InitialLaw from_cloud(Eigen::MatrixXd cloud);

  std::size_t dim() const;
  Eigen::VectorXd sample(std::uint64_t seed, std::uint64_t stream) const;
  Eigen::MatrixXd sample_cloud(std::size_t particles, std::uint64_t seed) const;
};

// Everything frozen while a representative agent optimizes: the model, the
// measure flow with its induced (σ̃⁰, σ̃′), and the rough path.
struct Environment {
  std::shared_ptr<const CoefficientSet> coeffs;
  std::shared_ptr<const MeasureFlow> flow;
  std::shared_ptr<const RoughPath> path;
  FlowField field;

  const TimeGrid& grid() const { return path->grid(); }
  const EmpiricalMeasure& measure(std::size_t node) const {
    return (*field.measures)[node];
  }
  const ControlledVectorField& common() const { return *field.common; }
};

Environment make_environment(std::shared_ptr<const CoefficientSet> coeffs,
                             std::shared_ptr<const MeasureFlow> flow,
                             std::shared_ptr<const RoughPath> path);

struct SolveOptions {
  std::size_t particles = 1000;
  std::uint64_t seed = 0;
  InitialLaw init;
  // Sample one action per step instead of averaging b over the mixture.
  bool sample_actions = false;
  // Optional idiosyncratic increments, particle-major: (p·N + n)·l + c.
  std::shared_ptr<const std::vector<double>> increments;
  // Optional per-particle RNG stream ids (default: particle index).
  std::vector<std::uint64_t> streams;
  double blowup = 1e6;
};

struct RsdeSolution {
  Environment env;
  std::shared_ptr<const RelaxedPolicy> policy;
  SolveOptions options;
  // X with Gubinelli derivative X′ = σ̃⁰(X).
  ControlledEnsemble state;
  // ΔW, particle-major (p·N + n)·l + c.
  std::shared_ptr<const std::vector<double>> increments;
  std::vector<double> mean_action;           // (n·P + p)·dim_u
  std::vector<std::int32_t> sampled_action;  // n·P + p; −1 for mixtures
  // Causal mode: largest W index each draw consumed (−1 for none).
  std::vector<long long> audit;
  std::vector<double> running_cost;   // per particle, Σ_n Σ_u f π Δt
  std::vector<double> terminal_cost;  // per particle, g(X_N, μ_T)

  std::size_t particles() const { return state.particles(); }
  Eigen::VectorXd w(std::size_t node, std::size_t particle) const;
  double dw(std::size_t step, std::size_t particle, std::size_t coord) const {
    const std::size_t N = state.grid().steps();
    const std::size_t l = env.coeffs->dims.noise;
    return (*increments)[(particle * N + step) * l + coord];
  }
  // True when every causal draw read only strictly earlier increments.
  bool audit_passed() const;
};

// Euler–Davie scheme
//   X_{n+1} = X_n + b̄Δt + σΔW_n + σ̃⁰δB_n + (∇σ̃⁰σ̃⁰ + σ̃′)𝔹_n,
// with b̄ the policy mixture of b. Throws DivergedError past the blow-up
// threshold.
RsdeSolution solve(const Environment& env,
                   std::shared_ptr<const RelaxedPolicy> policy,
                   const SolveOptions& options);

// Solve under an open-loop causal policy; draws see only the W prefix and
// the audit log records what each consumed.
RsdeSolution realize_from_measure(const Environment& env,
                                  std::shared_ptr<const RelaxedPolicy> policy,
                                  const SolveOptions& options);

// node,t,mean_0..,var_0..,min_0..,max_0..
void write_summary_csv(const RsdeSolution& sol, std::ostream& out);

}  // namespace rmfg
