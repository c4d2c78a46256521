#include "rmfg/policy.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "rmfg/errors.hpp"

namespace rmfg {

StateLattice::StateLattice(Eigen::VectorXd lower, Eigen::VectorXd upper,
                           std::vector<std::size_t> nodes_per_dim)
    : lower_(std::move(lower)),
      upper_(std::move(upper)),
      counts_(std::move(nodes_per_dim)) {
  if (lower_.size() == 0 || lower_.size() != upper_.size() ||
      counts_.size() != static_cast<std::size_t>(lower_.size())) {
    throw InputError("lattice bounds and node counts disagree in dimension");
  }
  size_ = 1;
  strides_.resize(counts_.size());
  for (std::size_t j = 0; j < counts_.size(); ++j) {
    if (counts_[j] == 0) throw InputError("lattice needs nodes in every dimension");
    if (counts_[j] > 1 && !(upper_(j) > lower_(j))) {
      throw InputError("lattice upper bound must exceed lower bound");
    }
    strides_[j] = size_;
    size_ *= counts_[j];
  }
}

Eigen::VectorXd StateLattice::point(std::size_t index) const {
  Eigen::VectorXd x(dim());
  for (std::size_t j = 0; j < dim(); ++j) {
    const std::size_t c = (index / strides_[j]) % counts_[j];
    x(j) = counts_[j] == 1
               ? lower_(j)
               : lower_(j) + (upper_(j) - lower_(j)) * static_cast<double>(c) /
                                 static_cast<double>(counts_[j] - 1);
  }
  return x;
}

std::size_t StateLattice::nearest(const Eigen::VectorXd& x) const {
  std::size_t index = 0;
  for (std::size_t j = 0; j < dim(); ++j) {
    if (counts_[j] == 1) continue;
    const double h = (upper_(j) - lower_(j)) / static_cast<double>(counts_[j] - 1);
    double c = std::round((x(j) - lower_(j)) / h);
    c = std::clamp(c, 0.0, static_cast<double>(counts_[j] - 1));
    index += static_cast<std::size_t>(c) * strides_[j];
  }
  return index;
}

bool StateLattice::stencil(
    const Eigen::VectorXd& x,
    std::vector<std::pair<std::size_t, double>>& out) const {
  out.clear();
  out.emplace_back(0, 1.0);
  bool inside = true;
  for (std::size_t j = 0; j < dim(); ++j) {
    if (counts_[j] == 1) continue;
    const double h = (upper_(j) - lower_(j)) / static_cast<double>(counts_[j] - 1);
    double pos = (x(j) - lower_(j)) / h;
    const double top = static_cast<double>(counts_[j] - 1);
    if (pos < 0.0 || pos > top) inside = false;
    pos = std::clamp(pos, 0.0, top);
    std::size_t c = static_cast<std::size_t>(std::floor(pos));
    if (c == counts_[j] - 1) c = counts_[j] - 2;
    const double w = pos - static_cast<double>(c);
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto [node, weight] = out[i];
      out[i] = {node + c * strides_[j], weight * (1.0 - w)};
      out.emplace_back(node + (c + 1) * strides_[j], weight * w);
    }
  }
  return inside;
}

NoisePrefix::NoisePrefix(const double* increments, std::size_t steps,
                         std::size_t dim, std::size_t step)
    : data_(increments), steps_(steps), dim_(dim), step_(step) {}

double NoisePrefix::increment(std::size_t j, std::size_t coord) const {
  if (j >= step_) throw CausalityViolation(step_, j);
  if (coord >= dim_) throw InputError("noise coordinate out of range");
  max_accessed_ = std::max(max_accessed_, static_cast<long long>(j));
  return data_[j * dim_ + coord];
}

Eigen::VectorXd NoisePrefix::value() const {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(dim_);
  for (std::size_t j = 0; j < step_; ++j) {
    for (std::size_t c = 0; c < dim_; ++c) w(c) += increment(j, c);
  }
  return w;
}

RelaxedPolicy::RelaxedPolicy(TimeGrid grid, std::vector<Eigen::VectorXd> actions,
                             StateLattice lattice, PolicyMode mode)
    : grid_(grid),
      actions_(std::move(actions)),
      lattice_(std::move(lattice)),
      mode_(mode) {
  if (actions_.empty()) throw InputError("policy needs at least one action");
  for (const auto& a : actions_) {
    if (a.size() != actions_.front().size()) {
      throw InputError("actions must share one dimension");
    }
  }
}

RelaxedPolicy RelaxedPolicy::feedback(TimeGrid grid,
                                      std::vector<Eigen::VectorXd> actions,
                                      StateLattice lattice,
                                      std::vector<double> table) {
  RelaxedPolicy p(grid, std::move(actions), std::move(lattice),
                  PolicyMode::kFeedback);
  const std::size_t K = p.actions_.size();
  if (table.size() != grid.steps() * p.lattice_.size() * K) {
    throw InputError("policy table has wrong size");
  }
  for (std::size_t r = 0; r < table.size() / K; ++r) {
    double sum = 0.0;
    for (std::size_t a = 0; a < K; ++a) {
      const double v = table[r * K + a];
      if (!(v >= 0.0)) throw InputError("policy probabilities must be nonnegative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw InputError("policy probabilities must sum to one");
    }
  }
  p.table_ = std::move(table);
  return p;
}

RelaxedPolicy RelaxedPolicy::constant(TimeGrid grid,
                                      std::vector<Eigen::VectorXd> actions,
                                      std::vector<double> probabilities,
                                      std::size_t state_dim) {
  StateLattice lattice(Eigen::VectorXd::Zero(state_dim),
                       Eigen::VectorXd::Zero(state_dim),
                       std::vector<std::size_t>(state_dim, 1));
  std::vector<double> table;
  table.reserve(grid.steps() * probabilities.size());
  for (std::size_t n = 0; n < grid.steps(); ++n) {
    table.insert(table.end(), probabilities.begin(), probabilities.end());
  }
  return feedback(grid, std::move(actions), std::move(lattice),
                  std::move(table));
}

RelaxedPolicy RelaxedPolicy::causal(TimeGrid grid,
                                    std::vector<Eigen::VectorXd> actions,
                                    CausalSampler sampler) {
  if (!sampler) throw InputError("causal policy needs a sampler");
  const std::size_t d = 1;
  RelaxedPolicy p(grid, std::move(actions),
                  StateLattice(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d),
                               {1}),
                  PolicyMode::kOpenLoopCausal);
  p.sampler_ = std::move(sampler);
  return p;
}

std::span<const double> RelaxedPolicy::probabilities(
    std::size_t step, const Eigen::VectorXd& x) const {
  if (mode_ != PolicyMode::kFeedback) {
    throw InputError("open-loop causal policies have no probability table");
  }
  const std::size_t node = lattice_.size() == 1 ? 0 : lattice_.nearest(x);
  return probabilities_at_node(step, node);
}

void RelaxedPolicy::write_table_csv(std::ostream& out) const {
  out << "step,node";
  for (std::size_t j = 0; j < lattice_.dim(); ++j) out << ",x_" << j;
  for (std::size_t a = 0; a < actions_.size(); ++a) out << ",p_" << a;
  out << '\n' << std::setprecision(17);
  if (mode_ != PolicyMode::kFeedback) return;
  for (std::size_t n = 0; n < grid_.steps(); ++n) {
    for (std::size_t i = 0; i < lattice_.size(); ++i) {
      out << n << ',' << i;
      const Eigen::VectorXd x = lattice_.point(i);
      for (Eigen::Index j = 0; j < x.size(); ++j) out << ',' << x(j);
      for (double p : probabilities_at_node(n, i)) out << ',' << p;
      out << '\n';
    }
  }
}

std::size_t sample_index(std::span<const double> probabilities, double u) {
  double acc = 0.0;
  for (std::size_t a = 0; a < probabilities.size(); ++a) {
    acc += probabilities[a];
    if (u < acc) return a;
  }
  // Round-off left u above the cumulative sum: take the last supported action.
  for (std::size_t a = probabilities.size(); a-- > 0;) {
    if (probabilities[a] > 0.0) return a;
  }
  return 0;
}

}  // namespace rmfg
