#include "rmfg/stats.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rmfg/errors.hpp"
#include "rmfg/rng.hpp"

namespace rmfg {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InputError("normal quantile needs p in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double bonferroni_critical(double level, std::size_t tests) {
  if (tests == 0) tests = 1;
  return normal_quantile(1.0 - level / (2.0 * static_cast<double>(tests)));
}

QuadratureRule gauss_hermite(std::size_t q) {
  if (q == 0) throw InputError("quadrature needs at least one node");
  // Golub–Welsch on the Jacobi matrix of the probabilists' Hermite
  // polynomials.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(q, q);
  for (std::size_t i = 1; i < q; ++i) {
    J(i, i - 1) = J(i - 1, i) = std::sqrt(static_cast<double>(i));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
  QuadratureRule rule;
  for (std::size_t i = 0; i < q; ++i) {
    rule.nodes.push_back(eig.eigenvalues()(i));
    const double v = eig.eigenvectors()(0, i);
    rule.weights.push_back(v * v);
  }
  return rule;
}

Regression ols_hc1(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const Eigen::Index n = X.rows();
  if (n != y.size() || n == 0) throw InputError("regression shapes disagree");
  Regression out;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double mean = X.col(j).mean();
    const double var = (X.col(j).array() - mean).square().mean();
    const double scale = std::max(1.0, X.col(j).cwiseAbs().maxCoeff());
    if (j == 0 || var > 1e-20 * scale * scale) out.kept_columns.push_back(j);
  }
  const Eigen::Index p = static_cast<Eigen::Index>(out.kept_columns.size());
  Eigen::MatrixXd A(n, p);
  for (Eigen::Index j = 0; j < p; ++j) A.col(j) = X.col(out.kept_columns[j]);
  out.coefficients = A.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd resid = y - A * out.coefficients;
  const Eigen::MatrixXd bread =
      (A.transpose() * A).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd meat =
      A.transpose() * resid.array().square().matrix().asDiagonal() * A;
  const double dof = n > p ? static_cast<double>(n) / static_cast<double>(n - p) : 1.0;
  const Eigen::MatrixXd cov = dof * bread * meat * bread;
  out.std_errors.resize(p);
  out.t_stats.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    out.std_errors(j) = std::sqrt(std::max(0.0, cov(j, j)));
    const double c = out.coefficients(j);
    if (out.std_errors(j) > 0.0) {
      out.t_stats(j) = c / out.std_errors(j);
    } else {
      out.t_stats(j) = c == 0.0 ? 0.0 : std::copysign(INFINITY, c);
    }
  }
  return out;
}

double mean_t_stat(const std::vector<double>& sample, double* mean_out,
                   double* se_out) {
  const double n = static_cast<double>(sample.size());
  double mean = 0.0;
  for (double v : sample) mean += v;
  mean /= std::max(1.0, n);
  double ss = 0.0;
  for (double v : sample) ss += (v - mean) * (v - mean);
  const double se = n > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  if (mean_out) *mean_out = mean;
  if (se_out) *se_out = se;
  if (se > 0.0) return mean / se;
  return mean == 0.0 ? 0.0 : std::copysign(INFINITY, mean);
}

namespace {

// Σ_{i<j} |z_i − z_j| over the members of a sorted sample selected by mask.
double pair_sum_sorted(const std::vector<double>& sorted,
                       const std::vector<char>& label, char which,
                       std::size_t count) {
  double s = 0.0;
  std::size_t j = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (label[i] != which) continue;
    s += sorted[i] * (2.0 * static_cast<double>(j) - static_cast<double>(count) + 1.0);
    ++j;
  }
  return s;
}

double energy_from_sums(double sa, double sb, double sz, double n, double m) {
  const double cross = sz - sa - sb;
  return 2.0 * cross / (n * m) - 2.0 * sa / (n * n) - 2.0 * sb / (m * m);
}

}  // namespace

double energy_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols() || a.rows() == 0 || b.rows() == 0) {
    throw InputError("energy distance needs non-empty clouds of equal dimension");
  }
  const double n = static_cast<double>(a.rows()), m = static_cast<double>(b.rows());
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) ab += (a.row(i) - b.row(j)).norm();
    for (Eigen::Index j = 0; j < a.rows(); ++j) aa += (a.row(i) - a.row(j)).norm();
  }
  for (Eigen::Index i = 0; i < b.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) bb += (b.row(i) - b.row(j)).norm();
  }
  return 2.0 * ab / (n * m) - aa / (n * n) - bb / (m * m);
}

PermutationTest energy_test(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                            std::size_t permutations, std::uint64_t seed) {
  if (a.cols() != b.cols() || a.rows() == 0 || b.rows() == 0) {
    throw InputError("energy test needs non-empty clouds of equal dimension");
  }
  const std::size_t n = a.rows(), m = b.rows(), total = n + m;
  Eigen::MatrixXd pooled(total, a.cols());
  pooled << a, b;
  PermutationTest out;
  out.permutations = permutations;
  RandomStream rng(seed, StreamModule::kPermutation, 0);
  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), 0);

  if (a.cols() == 1) {
    // Sort once; each relabeling costs one linear pass.
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
      return pooled(i, 0) < pooled(j, 0);
    });
    std::vector<double> sorted(total);
    for (std::size_t i = 0; i < total; ++i) sorted[i] = pooled(order[i], 0);
    std::vector<char> all(total, 0);
    const double sz = pair_sum_sorted(sorted, all, 0, total);
    std::vector<char> is_a(total), label(total);
    auto stat = [&](const std::vector<char>& member) {
      for (std::size_t i = 0; i < total; ++i) label[i] = member[order[i]];
      return energy_from_sums(pair_sum_sorted(sorted, label, 1, n),
                              pair_sum_sorted(sorted, label, 0, m), sz,
                              static_cast<double>(n), static_cast<double>(m));
    };
    for (std::size_t i = 0; i < total; ++i) is_a[i] = i < n ? 1 : 0;
    out.statistic = stat(is_a);
    std::size_t exceed = 0;
    for (std::size_t r = 0; r < permutations; ++r) {
      for (std::size_t i = total - 1; i > 0; --i) {
        const std::size_t j = rng.next_u32() % (i + 1);
        std::swap(perm[i], perm[j]);
      }
      for (std::size_t i = 0; i < total; ++i) is_a[perm[i]] = i < n ? 1 : 0;
      if (stat(is_a) >= out.statistic - 1e-14 * std::abs(out.statistic)) ++exceed;
    }
    out.p_value = (1.0 + exceed) / (1.0 + permutations);
    return out;
  }

  Eigen::MatrixXd dist(total, total);
  for (std::size_t i = 0; i < total; ++i) {
    dist(i, i) = 0.0;
    for (std::size_t j = i + 1; j < total; ++j) {
      dist(i, j) = dist(j, i) = (pooled.row(i) - pooled.row(j)).norm();
    }
  }
  const double all_sum = dist.sum() / 2.0;
  auto stat = [&](const std::vector<std::size_t>& idx) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) sa += dist(idx[i], idx[j]);
    }
    for (std::size_t i = n; i < total; ++i) {
      for (std::size_t j = i + 1; j < total; ++j) sb += dist(idx[i], idx[j]);
    }
    return energy_from_sums(sa, sb, all_sum, static_cast<double>(n),
                            static_cast<double>(m));
  };
  out.statistic = stat(perm);
  std::size_t exceed = 0;
  for (std::size_t r = 0; r < permutations; ++r) {
    for (std::size_t i = total - 1; i > 0; --i) {
      const std::size_t j = rng.next_u32() % (i + 1);
      std::swap(perm[i], perm[j]);
    }
    if (stat(perm) >= out.statistic - 1e-14 * std::abs(out.statistic)) ++exceed;
  }
  out.p_value = (1.0 + exceed) / (1.0 + permutations);
  return out;
}

}  // namespace rmfg
