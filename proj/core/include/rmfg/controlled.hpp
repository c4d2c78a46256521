#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rmfg/roughpath.hpp"

namespace rmfg {

// Regenerates the future of one particle given its state at a node: the
// conditional law that the (β,β′;m,n) norms average over. Implementations
// must be deterministic in (index, from, branch) and must not depend on `to`
// beyond truncation, so longer requests extend shorter ones.
class Resampler {
 public:
  virtual ~Resampler() = default;

  virtual std::size_t value_dim() const = 0;
  virtual std::size_t rough_dim() const = 0;

  // Writes nodes from..to (inclusive), each as value_dim values followed by
  // value_dim·rough_dim derivative entries (row-major).
  virtual void continue_path(std::size_t index, std::size_t from,
                             std::size_t to, std::uint64_t branch,
                             std::span<double> out) const = 0;
};

// Where each particle came from, so conditional continuations can be drawn.
struct GenerationRecord {
  std::vector<std::shared_ptr<const Resampler>> sources;
  std::vector<std::uint32_t> source_of;        // per particle
  std::vector<std::uint32_t> index_in_source;  // per particle
  std::vector<std::uint64_t> stream_id;        // per particle

  bool resamplable() const { return !sources.empty(); }

  static GenerationRecord single(std::shared_ptr<const Resampler> source,
                                 std::size_t particles);
  static GenerationRecord streams_only(std::size_t particles);
};

// Particle ensemble of a stochastic controlled rough path (Z, Z′): Z in
// ℝ^V, Z′ in L(ℝ^k, ℝ^V) stored as V×k row-major. Storage is node-major so
// that the cloud at one node is contiguous.
class ControlledEnsemble {
 public:
  ControlledEnsemble(TimeGrid grid, std::size_t particles,
                     std::size_t value_dim, std::size_t rough_dim);

  const TimeGrid& grid() const { return grid_; }
  std::size_t particles() const { return particles_; }
  std::size_t value_dim() const { return value_dim_; }
  std::size_t rough_dim() const { return rough_dim_; }

  std::span<double> value(std::size_t node, std::size_t particle) {
    return {&values_[(node * particles_ + particle) * value_dim_], value_dim_};
  }
  std::span<const double> value(std::size_t node, std::size_t particle) const {
    return {&values_[(node * particles_ + particle) * value_dim_], value_dim_};
  }
  std::span<double> derivative(std::size_t node, std::size_t particle) {
    const std::size_t w = value_dim_ * rough_dim_;
    return {&derivatives_[(node * particles_ + particle) * w], w};
  }
  std::span<const double> derivative(std::size_t node,
                                     std::size_t particle) const {
    const std::size_t w = value_dim_ * rough_dim_;
    return {&derivatives_[(node * particles_ + particle) * w], w};
  }

  Eigen::Map<const Eigen::VectorXd> value_vector(std::size_t node,
                                                 std::size_t particle) const {
    return {value(node, particle).data(),
            static_cast<Eigen::Index>(value_dim_)};
  }
  Eigen::Map<const RowMatrix> derivative_matrix(std::size_t node,
                                                std::size_t particle) const {
    return {derivative(node, particle).data(),
            static_cast<Eigen::Index>(value_dim_),
            static_cast<Eigen::Index>(rough_dim_)};
  }

  // All particles at one node as a P × V matrix.
  Eigen::MatrixXd cloud(std::size_t node) const;

  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& derivatives() const { return derivatives_; }

  GenerationRecord& record() { return record_; }
  const GenerationRecord& record() const { return record_; }

  // Throws InputError on the first non-finite entry.
  void check_finite() const;

 private:
  TimeGrid grid_;
  std::size_t particles_;
  std::size_t value_dim_;
  std::size_t rough_dim_;
  std::vector<double> values_;
  std::vector<double> derivatives_;
  GenerationRecord record_;
};

// Σ over partition steps u→v in [from, to] of Z_u δB_{u,v} + Z′_u 𝔹_{u,v},
// per particle. Z is read as an e×k matrix (V = e·k, row-major) and Z′ as
// (e·k)×k, so row i·k+b, column a of Z′ multiplies 𝔹^{a,b}. The partition
// uses every `stride`-th node. Result: P × e.
Eigen::MatrixXd rough_integral(const ControlledEnsemble& ce,
                               const RoughPath& path, std::size_t from,
                               std::size_t to, std::size_t stride = 1);

// R^Z_{s,t} = δZ_{s,t} − Z′_s δB_{s,t}, per particle (P × V).
Eigen::MatrixXd remainder(const ControlledEnsemble& ce, const RoughPath& path,
                          std::size_t s, std::size_t t);

// (β, β′) with 1/(1+γ) < β′ ≤ β ≤ α and β′ ≤ (γ−1)β.
struct IndexPair {
  double beta = 0.42;
  double beta_prime = 0.36;

  // Empty when the pair is admissible; otherwise the violated constraint.
  std::optional<std::string> violation(double alpha, double gamma) const;
};

enum class IntegrabilityMode { kEqualM, kInfinity };

struct NormSettings {
  IndexPair index;
  int m = 4;
  IntegrabilityMode n_mode = IntegrabilityMode::kInfinity;
  // Combine the three parts as (⅓ Σ part^m)^{1/m} instead of their sum.
  bool power_mean = false;
  std::size_t inner_samples = 16;    // conditional continuations, incl. the realized one
  std::size_t outer_particles = 32;  // particles whose conditional moments are estimated
  // Node stride for pair enumeration; 0 picks 1 up to 256 steps and
  // subsamples beyond.
  std::size_t pair_stride = 0;
  // Only pairs with t − s < max_width contribute.
  double max_width = std::numeric_limits<double>::infinity();
  // Optional node range [first, last] restricting the pairs.
  std::optional<std::pair<std::size_t, std::size_t>> range;
  std::uint64_t seed = 0;
};

// Per-pair scaled components, the raw material of windowed norms.
struct PairComponent {
  std::size_t s = 0;
  std::size_t t = 0;
  double delta = 0.0;       // ‖δZ_{s,t}‖ / (t−s)^β
  double derivative = 0.0;  // ‖δZ′_{s,t}‖ / (t−s)^{β′}
  double remainder = 0.0;   // ‖E_s R^Z_{s,t}‖_∞ / (t−s)^{β+β′}
};

struct PairTable {
  std::vector<PairComponent> pairs;
  std::vector<double> derivative_sup;  // per node: ‖Z′_t‖_{m,n}
  std::vector<std::size_t> nodes;      // nodes that were enumerated
  bool lower_bound_mode = false;
  bool subsampled = false;
};

struct NormEstimate {
  double beta = 0.0;
  double beta_prime = 0.0;
  int m = 0;
  IntegrabilityMode n_mode = IntegrabilityMode::kInfinity;
  double delta_z_norm = 0.0;
  double zp_norm = 0.0;  // sup_t ‖Z′_t‖ + ‖δZ′‖_{β′}
  double remainder_norm = 0.0;
  double combined = 0.0;
  bool power_mean = false;
  std::size_t inner_samples = 0;
  std::size_t pairs_evaluated = 0;
  // Set when conditional moments could not be resampled and unconditional
  // moments were used instead; the estimate is then a lower bound.
  bool lower_bound_mode = false;
  bool pairs_subsampled = false;
};

double combine_parts(double delta, double derivative, double remainder,
                     int m, bool power_mean);

PairTable estimate_pair_table(const ControlledEnsemble& ce,
                              const RoughPath& path,
                              const NormSettings& settings);

NormEstimate reduce_pair_table(const PairTable& table,
                               const NormSettings& settings);

// ‖(Z, Z′)‖_{𝐁;β,β′;m,n} estimated by two-level Monte Carlo when the
// ensemble carries a resampler, unconditional moments otherwise.
NormEstimate estimate_norm(const ControlledEnsemble& ce, const RoughPath& path,
                           const NormSettings& settings);

// beta,beta_prime,m,n_mode,delta_z,zp,remainder,combined,...
void write_norm_csv_header(std::ostream& out);
void write_norm_csv_row(std::ostream& out, const std::string& label,
                        const NormEstimate& e);

}  // namespace rmfg
