#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "rmfg/rng.hpp"
#include "rmfg/roughpath.hpp"

namespace rmfg {

// Tensor-product grid on a box, used for DP value tables and feedback
// policies. Node index is mixed-radix with dimension 0 fastest.
class StateLattice {
 public:
  StateLattice(Eigen::VectorXd lower, Eigen::VectorXd upper,
               std::vector<std::size_t> nodes_per_dim);

  std::size_t dim() const { return static_cast<std::size_t>(lower_.size()); }
  std::size_t size() const { return size_; }
  const Eigen::VectorXd& lower() const { return lower_; }
  const Eigen::VectorXd& upper() const { return upper_; }
  const std::vector<std::size_t>& nodes_per_dim() const { return counts_; }

  Eigen::VectorXd point(std::size_t index) const;
  std::size_t nearest(const Eigen::VectorXd& x) const;

  // Multilinear interpolation stencil (node, weight) for x clamped to the
  // box. Returns false when x lay outside the box.
  bool stencil(const Eigen::VectorXd& x,
               std::vector<std::pair<std::size_t, double>>& out) const;

 private:
  Eigen::VectorXd lower_;
  Eigen::VectorXd upper_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> strides_;
  std::size_t size_;
};

// Read-only view of one particle's idiosyncratic increments strictly before
// the current step. Any other access throws CausalityViolation.
class NoisePrefix {
 public:
  NoisePrefix(const double* increments, std::size_t steps, std::size_t dim,
              std::size_t step);

  std::size_t step() const { return step_; }
  std::size_t dim() const { return dim_; }
  double increment(std::size_t j, std::size_t coord) const;
  // W_{t_step}.
  Eigen::VectorXd value() const;
  // Largest increment index read so far, or −1.
  long long max_accessed() const { return max_accessed_; }

 private:
  const double* data_;
  std::size_t steps_;
  std::size_t dim_;
  std::size_t step_;
  mutable long long max_accessed_ = -1;
};

// Chooses an action index from the W prefix and an exogenous stream only.
using CausalSampler = std::function<std::size_t(
    std::size_t step, const NoisePrefix& prefix, RandomStream& exogenous)>;

enum class PolicyMode { kFeedback, kOpenLoopCausal };

// Relaxed control on a finite action set. Feedback mode stores a
// probability vector per (step, lattice node) and reads the node nearest to
// the state; open-loop causal mode delegates to a prefix-only sampler.
class RelaxedPolicy {
 public:
  static RelaxedPolicy feedback(TimeGrid grid,
                                std::vector<Eigen::VectorXd> actions,
                                StateLattice lattice,
                                std::vector<double> table);
  // The same mixture everywhere (a one-node lattice at the origin).
  static RelaxedPolicy constant(TimeGrid grid,
                                std::vector<Eigen::VectorXd> actions,
                                std::vector<double> probabilities,
                                std::size_t state_dim);
  static RelaxedPolicy causal(TimeGrid grid,
                              std::vector<Eigen::VectorXd> actions,
                              CausalSampler sampler);

  PolicyMode mode() const { return mode_; }
  const TimeGrid& grid() const { return grid_; }
  const std::vector<Eigen::VectorXd>& actions() const { return actions_; }
  std::size_t action_count() const { return actions_.size(); }
  const StateLattice& lattice() const { return lattice_; }
  const std::vector<double>& table() const { return table_; }
  const CausalSampler& sampler() const { return sampler_; }

  std::span<const double> probabilities(std::size_t step,
                                        const Eigen::VectorXd& x) const;
  std::span<const double> probabilities_at_node(std::size_t step,
                                                std::size_t node) const {
    return {&table_[(step * lattice_.size() + node) * actions_.size()],
            actions_.size()};
  }

  // step,node,x_0..,p_0..
  void write_table_csv(std::ostream& out) const;

 private:
  RelaxedPolicy(TimeGrid grid, std::vector<Eigen::VectorXd> actions,
                StateLattice lattice, PolicyMode mode);

  TimeGrid grid_;
  std::vector<Eigen::VectorXd> actions_;
  StateLattice lattice_;
  PolicyMode mode_;
  std::vector<double> table_;
  CausalSampler sampler_;
};

// Index drawn from a probability vector with one uniform.
std::size_t sample_index(std::span<const double> probabilities, double u);

}  // namespace rmfg
