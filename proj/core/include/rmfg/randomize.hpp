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
#include "rmfg/roughpath.hpp"
#include "rmfg/rsde.hpp"
#include "rmfg/stats.hpp"

namespace rmfg {

// N(0, Δt) increments on `grid`, Itô-lifted. With refine > 1 the lift is
// built on the refined grid and coarsened back, so the second level carries
// the finer Itô sums.
Eigen::MatrixXd sample_increments(const TimeGrid& grid, std::size_t k,
                                  std::uint64_t seed, std::size_t refine = 1);
RoughPath sample_lift(const TimeGrid& grid, std::size_t k, std::uint64_t seed,
                      std::size_t refine = 1);

// Per-sample conditional moments of X_T, population normalisation (1/P).
struct ConditionalMoments {
  Eigen::MatrixXd mean;    // S × d
  Eigen::MatrixXd second;  // S × d, E[X_i² | sample]
  Eigen::MatrixXd var;     // S × d

  std::size_t samples() const { return static_cast<std::size_t>(mean.rows()); }
  // Within-sample standard error of the conditional mean (S × d).
  Eigen::MatrixXd mean_error(std::size_t particles) const;
};

// Pooled moments as S-averages of the conditional ones; the errors treat
// common samples as the independent units.
struct PooledMoments {
  Eigen::VectorXd mean, mean_error;
  Eigen::VectorXd second, second_error;
  Eigen::VectorXd var;  // E[var | s] + var(E[X | s])
};
PooledMoments pool(const ConditionalMoments& m);

ConditionalMoments moments_of(const std::vector<Eigen::MatrixXd>& terminal);

struct JointSettings {
  std::size_t samples = 200;
  std::size_t particles = 2000;
  std::uint64_t seed = 0;
  InitialLaw init;
  // μ̄ as an external flow shared by every sample; when null each sample's
  // own particle cloud is used (conditional particle system).
  std::shared_ptr<const MeasureFlow> flow;
  // Optional B⁰ increments per sample (N × k); drawn internally otherwise.
  std::vector<Eigen::MatrixXd> common_increments;
  bool keep_terminal = false;
  double blowup = 1e6;
};

struct JointResult {
  ConditionalMoments moments;
  std::vector<Eigen::MatrixXd> terminal;  // per sample P × d, if kept
};

// Euler–Maruyama with two independent Brownian drivers: W per particle and
// B⁰ per common sample. Feedback and constant policies only.
JointResult joint_simulate(std::shared_ptr<const CoefficientSet> coeffs,
                           std::shared_ptr<const RelaxedPolicy> policy,
                           const TimeGrid& grid, const JointSettings& settings);

enum class CompareMode { kFrozenFlow, kPerSampleFixedPoint };
std::string to_string(CompareMode mode);
CompareMode parse_compare_mode(const std::string& text);

struct CompareSettings {
  std::size_t samples = 200;
  std::size_t particles = 2000;
  std::uint64_t seed = 0;
  // Seed of the idiosyncratic W draws on the pathwise side; defaults to seed.
  std::optional<std::uint64_t> w_seed;
  CompareMode mode = CompareMode::kFrozenFlow;
  InitialLaw init;
  // Frozen-flow mode: the flow both sides use; the constant initial cloud
  // when null.
  std::shared_ptr<const MeasureFlow> flow;
  // Per-sample fixed point: Picard sweeps of the flow under the given policy.
  std::size_t inner_iterations = 5;
  std::size_t inner_particles = 0;  // 0: same as particles
  std::size_t refine = 1;
  std::size_t permutations = 500;
  double level = 0.01;
  double moment_sigmas = 3.0;
  bool per_sample_tests = true;
  std::size_t per_sample_max_points = 500;
};

struct SampleVerdict {
  std::uint64_t lift_seed = 0;
  double terminal_b = 0.0;  // |B⁰_T|
  double chen_defect = 0.0;
  double p_value = 1.0;     // pathwise vs joint given this B⁰
};

struct CompareReport {
  CompareMode mode = CompareMode::kFrozenFlow;
  std::size_t samples = 0;
  std::size_t particles = 0;
  ConditionalMoments pathwise, joint;
  PooledMoments pathwise_pooled, joint_pooled;
  Eigen::VectorXd z_mean, z_second;
  double max_abs_z = 0.0;
  bool moments_pass = false;
  // Energy test between the S conditional (mean, var) vectors of each side.
  PermutationTest conditional_test;
  bool distribution_pass = false;
  std::vector<SampleVerdict> per_sample;
  double per_sample_reject_fraction = 0.0;
  double max_chen_defect = 0.0;

  bool pass() const { return moments_pass && distribution_pass; }
};

// Pathwise side: for each common sample, solve with the Itô lift of that
// sample (and the per-sample flow per `mode`); joint side: joint_simulate
// with independent B⁰. Conditional laws are compared sample by sample when
// per_sample_tests is set (joint rerun on the same B⁰).
CompareReport compare_pathwise_vs_randomized(
    std::shared_ptr<const CoefficientSet> coeffs,
    std::shared_ptr<const RelaxedPolicy> policy, const TimeGrid& grid,
    const CompareSettings& settings);

// Pathwise conditional moments only (S × d); used by the W-shuffle audit.
ConditionalMoments pathwise_moments(std::shared_ptr<const CoefficientSet> coeffs,
                                    std::shared_ptr<const RelaxedPolicy> policy,
                                    const TimeGrid& grid,
                                    const CompareSettings& settings);

struct ShuffleAudit {
  Eigen::MatrixXd z;  // S × d
  double max_abs_z = 0.0;
  double critical = 0.0;  // Bonferroni over S·d at `level`
  bool pass = false;
};

// Reruns the pathwise side with W seeds `other_w_seed` on the same common
// samples and z-tests every conditional mean against the first run.
ShuffleAudit w_shuffle_audit(std::shared_ptr<const CoefficientSet> coeffs,
                             std::shared_ptr<const RelaxedPolicy> policy,
                             const TimeGrid& grid, const CompareSettings& settings,
                             std::uint64_t other_w_seed);

void write_compare_json(const CompareReport& report, std::ostream& out);
// sample,side,mean_0..,var_0..
void write_conditional_csv(const CompareReport& report, std::ostream& out);

}  // namespace rmfg
