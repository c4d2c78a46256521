#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace rmfg {

// Φ⁻¹(p) for p ∈ (0, 1).
double normal_quantile(double p);

// Two-sided critical value for `tests` simultaneous z-tests at `level`.
double bonferroni_critical(double level, std::size_t tests);

struct Regression {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd std_errors;  // HC1 heteroskedasticity-robust
  Eigen::VectorXd t_stats;     // 0 where coefficient and error are both 0
  std::vector<std::size_t> kept_columns;
};

// Gauss–Hermite rule for the standard normal law: E f(Z) ≈ Σ w_i f(z_i),
// exact for polynomials of degree < 2q.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
QuadratureRule gauss_hermite(std::size_t q);

// Ordinary least squares of y on the columns of X. Columns with (numerically)
// zero variance are dropped unless they are the first column.
Regression ols_hc1(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

// t-statistic of the sample mean against zero; 0 when the sample is
// identically zero.
double mean_t_stat(const std::vector<double>& sample, double* mean = nullptr,
                   double* std_error = nullptr);

// Energy distance 2E|X−Y| − E|X−X′| − E|Y−Y′| between two clouds (rows are
// points), V-statistic form.
double energy_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct PermutationTest {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t permutations = 0;
};

// Two-sample permutation test on the energy distance.
PermutationTest energy_test(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                            std::size_t permutations, std::uint64_t seed);

}  // namespace rmfg
