#include "rmfg/controlled.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "rmfg/errors.hpp"
#include "rmfg/rng.hpp"

namespace rmfg {
namespace {

RoughPath brownian_lift(std::size_t N, std::size_t k, std::uint64_t seed,
                        double T = 1.0) {
  TimeGrid grid(T, N);
  RandomStream rng(seed, StreamModule::kTest, 0);
  Eigen::MatrixXd inc(N, k);
  for (Eigen::Index i = 0; i < inc.size(); ++i) {
    inc.data()[i] = std::sqrt(grid.dt()) * rng.normal();
  }
  return ito_lift(inc, grid);
}

// Z_t = B_t (all particles), Z′ ≡ identity-like matrix `zp`.
ControlledEnsemble path_ensemble(const RoughPath& p, std::size_t P,
                                 double zp) {
  const std::size_t k = p.dim();
  ControlledEnsemble ce(p.grid(), P, k, k);
  for (std::size_t n = 0; n < p.grid().nodes(); ++n) {
    for (std::size_t q = 0; q < P; ++q) {
      for (std::size_t a = 0; a < k; ++a) {
        ce.value(n, q)[a] = p.value(n)(a);
        ce.derivative(n, q)[a * k + a] = zp;
      }
    }
  }
  return ce;
}

TEST(RoughIntegralTest, ConstantIntegrandTelescopes) {
  const RoughPath p = brownian_lift(20, 2, 1);
  ControlledEnsemble ce(p.grid(), 3, 2, 2);
  for (std::size_t n = 0; n <= 20; ++n) {
    for (std::size_t q = 0; q < 3; ++q) {
      ce.value(n, q)[0] = 1.5 + q;
      ce.value(n, q)[1] = -0.5;
    }
  }
  const Eigen::MatrixXd I = rough_integral(ce, p, 3, 17);
  const Eigen::VectorXd dB = p.increment(3, 17);
  for (std::size_t q = 0; q < 3; ++q) {
    EXPECT_NEAR(I(q, 0), (1.5 + q) * dB(0) - 0.5 * dB(1), 1e-13);
  }
}

TEST(RoughIntegralTest, PathAgainstItselfGivesSecondLevel) {
  const RoughPath p = brownian_lift(32, 1, 2);
  const ControlledEnsemble ce = path_ensemble(p, 1, 1.0);
  const Eigen::MatrixXd I = rough_integral(ce, p, 0, 32);
  EXPECT_NEAR(I(0, 0), p.second(0, 32)(0, 0), 1e-13);
}

TEST(RoughIntegralTest, GeometricLiftGivesHalfSquareOnAnyPartition) {
  const std::size_t N = 64;
  TimeGrid grid(1.0, N);
  Eigen::MatrixXd nodes(N + 1, 1);
  for (std::size_t i = 0; i <= N; ++i) {
    nodes(i, 0) = 0.3 + std::sin(6.0 * grid.time(i));
  }
  const RoughPath p = smooth_lift(nodes, grid);
  const ControlledEnsemble ce = path_ensemble(p, 1, 1.0);
  const double exact = 0.5 * (nodes(N, 0) * nodes(N, 0) - nodes(0, 0) * nodes(0, 0));
  for (std::size_t stride : {1, 2, 8, 32}) {
    EXPECT_NEAR(rough_integral(ce, p, 0, N, stride)(0, 0), exact, 1e-12)
        << "stride " << stride;
  }
  // Without the second-level term the left-point sum misses ½Σ(δB)².
  ControlledEnsemble plain = path_ensemble(p, 1, 0.0);
  EXPECT_GT(std::abs(rough_integral(plain, p, 0, N, 8)(0, 0) - exact), 1e-3);
}

TEST(RoughIntegralTest, ReproducesLeftPointItoSumInTwoDimensions) {
  const RoughPath p = brownian_lift(40, 2, 3);
  const ControlledEnsemble ce = path_ensemble(p, 1, 1.0);
  // Z read as a 1×2 row: ∫ B·dB = Σ_r B_r·ΔB_r = trace of 𝔹_{0,T}.
  double ito = 0.0;
  for (std::size_t r = 0; r < 40; ++r) {
    ito += p.value(r).dot(p.increment(r, r + 1));
  }
  const Eigen::MatrixXd I = rough_integral(ce, p, 0, 40);
  EXPECT_NEAR(I(0, 0), ito, 1e-13);
  EXPECT_NEAR(I(0, 0), p.second(0, 40).trace(), 1e-13);
}

TEST(RoughIntegralTest, AdditiveAndLinear) {
  const RoughPath p = brownian_lift(30, 2, 4);
  ControlledEnsemble a(p.grid(), 4, 2, 2), b(p.grid(), 4, 2, 2),
      sum(p.grid(), 4, 2, 2);
  RandomStream rng(5, StreamModule::kTest, 0);
  for (std::size_t n = 0; n <= 30; ++n) {
    for (std::size_t q = 0; q < 4; ++q) {
      for (std::size_t i = 0; i < 2; ++i) {
        a.value(n, q)[i] = rng.normal();
        b.value(n, q)[i] = rng.normal();
        sum.value(n, q)[i] = a.value(n, q)[i] - 2.0 * b.value(n, q)[i];
      }
      for (std::size_t i = 0; i < 4; ++i) {
        a.derivative(n, q)[i] = rng.normal();
        b.derivative(n, q)[i] = rng.normal();
        sum.derivative(n, q)[i] = a.derivative(n, q)[i] - 2.0 * b.derivative(n, q)[i];
      }
    }
  }
  const Eigen::MatrixXd whole = rough_integral(a, p, 2, 27);
  const Eigen::MatrixXd split = rough_integral(a, p, 2, 11) + rough_integral(a, p, 11, 27);
  EXPECT_LT((whole - split).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::MatrixXd lin = rough_integral(a, p, 0, 30) - 2.0 * rough_integral(b, p, 0, 30);
  EXPECT_LT((rough_integral(sum, p, 0, 30) - lin).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RoughIntegralTest, RejectsForeignGrid) {
  const RoughPath p = brownian_lift(10, 1, 6);
  ControlledEnsemble ce(TimeGrid(1.0, 12), 1, 1, 1);
  EXPECT_THROW(rough_integral(ce, p, 0, 10), InputError);
}

TEST(RemainderTest, VanishesForLinearFunctionsOfThePath) {
  const RoughPath p = brownian_lift(16, 2, 7);
  Eigen::Matrix2d A;
  A << 1.0, -2.0, 0.5, 3.0;
  ControlledEnsemble ce(p.grid(), 2, 2, 2);
  for (std::size_t n = 0; n <= 16; ++n) {
    for (std::size_t q = 0; q < 2; ++q) {
      const Eigen::Vector2d z = A * p.value(n);
      ce.value(n, q)[0] = z(0);
      ce.value(n, q)[1] = z(1);
      for (int i = 0; i < 4; ++i) ce.derivative(n, q)[i] = A(i / 2, i % 2);
    }
  }
  EXPECT_LT(remainder(ce, p, 3, 12).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(RemainderTest, TimeIntegrandGivesElapsedTime) {
  const RoughPath p = brownian_lift(10, 1, 8);
  ControlledEnsemble ce(p.grid(), 1, 1, 1);
  for (std::size_t n = 0; n <= 10; ++n) ce.value(n, 0)[0] = p.grid().time(n);
  EXPECT_NEAR(remainder(ce, p, 2, 9)(0, 0), 0.7, 1e-15);
  ControlledEnsemble constant(p.grid(), 1, 1, 1);
  EXPECT_EQ(remainder(constant, p, 0, 10)(0, 0), 0.0);
}

TEST(IndexPairTest, AdmissibilityConstraints) {
  EXPECT_FALSE((IndexPair{0.42, 0.36}.violation(0.45, 2.0).has_value()));
  EXPECT_TRUE((IndexPair{0.36, 0.42}.violation(0.45, 2.0).has_value()));   // β′ > β
  EXPECT_TRUE((IndexPair{0.5, 0.4}.violation(0.45, 2.0).has_value()));     // β > α
  EXPECT_TRUE((IndexPair{0.42, 0.30}.violation(0.45, 2.0).has_value()));   // β′ ≤ 1/3
  EXPECT_TRUE((IndexPair{0.42, 0.40}.violation(0.45, 1.9).has_value()));   // β′ > (γ−1)β
}

TEST(NormTest, DeterministicTimeIntegrand) {
  const double T = 2.0, beta = 0.42, beta_p = 0.36;
  const RoughPath p = brownian_lift(16, 1, 9, T);
  ControlledEnsemble ce(p.grid(), 5, 1, 1);
  for (std::size_t n = 0; n <= 16; ++n) {
    for (std::size_t q = 0; q < 5; ++q) ce.value(n, q)[0] = p.grid().time(n);
  }
  NormSettings s;
  s.index = {beta, beta_p};
  const NormEstimate e = estimate_norm(ce, p, s);
  EXPECT_TRUE(e.lower_bound_mode);
  EXPECT_NEAR(e.delta_z_norm, std::pow(T, 1.0 - beta), 1e-12);
  EXPECT_EQ(e.zp_norm, 0.0);
  EXPECT_NEAR(e.remainder_norm, std::pow(T, 1.0 - beta - beta_p), 1e-12);
  EXPECT_NEAR(e.combined, e.delta_z_norm + e.remainder_norm, 1e-12);
}

TEST(NormTest, ConstantEnsembleHasZeroNorm) {
  const RoughPath p = brownian_lift(12, 2, 10);
  ControlledEnsemble ce(p.grid(), 3, 2, 2);
  for (std::size_t n = 0; n <= 12; ++n) {
    for (std::size_t q = 0; q < 3; ++q) ce.value(n, q)[1] = 4.0;
  }
  const NormEstimate e = estimate_norm(ce, p, NormSettings{});
  EXPECT_EQ(e.delta_z_norm, 0.0);
  EXPECT_EQ(e.zp_norm, 0.0);
  EXPECT_EQ(e.remainder_norm, 0.0);
}

// Z = W + c·B with Z′ = c: Brownian W is regenerated from any node.
class BrownianResampler final : public Resampler {
 public:
  BrownianResampler(std::shared_ptr<const RoughPath> path, double c,
                    std::shared_ptr<const std::vector<double>> w)
      : path_(std::move(path)), c_(c), w_(std::move(w)) {}
  std::size_t value_dim() const override { return 1; }
  std::size_t rough_dim() const override { return 1; }
  void continue_path(std::size_t index, std::size_t from, std::size_t to,
                     std::uint64_t branch, std::span<double> out) const override {
    const std::size_t nodes = path_->grid().nodes();
    RandomStream rng(branch, StreamModule::kResample, index, from);
    double w = (*w_)[index * nodes + from];
    for (std::size_t n = from; n <= to; ++n) {
      if (n > from) w += std::sqrt(path_->grid().dt()) * rng.normal();
      out[2 * (n - from)] = w + c_ * path_->value(n)(0);
      out[2 * (n - from) + 1] = c_;
    }
  }

 private:
  std::shared_ptr<const RoughPath> path_;
  double c_;
  std::shared_ptr<const std::vector<double>> w_;
};

ControlledEnsemble brownian_ensemble(std::shared_ptr<const RoughPath> p,
                                     std::size_t P, double c, bool resample) {
  const std::size_t nodes = p->grid().nodes();
  auto w = std::make_shared<std::vector<double>>(P * nodes, 0.0);
  ControlledEnsemble ce(p->grid(), P, 1, 1);
  for (std::size_t q = 0; q < P; ++q) {
    RandomStream rng(77, StreamModule::kTest, q);
    for (std::size_t n = 1; n < nodes; ++n) {
      (*w)[q * nodes + n] =
          (*w)[q * nodes + n - 1] + std::sqrt(p->grid().dt()) * rng.normal();
    }
    for (std::size_t n = 0; n < nodes; ++n) {
      ce.value(n, q)[0] = (*w)[q * nodes + n] + c * p->value(n)(0);
      ce.derivative(n, q)[0] = c;
    }
  }
  if (resample) {
    ce.record() = GenerationRecord::single(
        std::make_shared<BrownianResampler>(p, c, w), P);
  }
  return ce;
}

TEST(NormTest, LowerBoundModeDoesNotExceedTwoLevelEstimate) {
  auto p = std::make_shared<const RoughPath>(brownian_lift(16, 1, 11));
  NormSettings s;
  s.inner_samples = 64;
  s.outer_particles = 200;
  const NormEstimate two = estimate_norm(brownian_ensemble(p, 200, 0.5, true), *p, s);
  const NormEstimate lower = estimate_norm(brownian_ensemble(p, 200, 0.5, false), *p, s);
  EXPECT_FALSE(two.lower_bound_mode);
  EXPECT_TRUE(lower.lower_bound_mode);
  EXPECT_LE(lower.delta_z_norm, two.delta_z_norm);
  EXPECT_LE(lower.zp_norm, two.zp_norm);
  EXPECT_LE(lower.combined, two.combined);
}

TEST(NormTest, BrownianConditionalMomentMatchesGaussianValue) {
  // E_s|δW|⁴ = 3(t−s)², so the β-part is 3^{1/4} max (t−s)^{1/2−β}.
  auto p = std::make_shared<const RoughPath>(brownian_lift(8, 1, 12));
  NormSettings s;
  s.inner_samples = 4000;
  s.outer_particles = 4;
  s.n_mode = IntegrabilityMode::kEqualM;
  const NormEstimate e = estimate_norm(brownian_ensemble(p, 4, 0.0, true), *p, s);
  EXPECT_NEAR(e.delta_z_norm, std::pow(3.0, 0.25), 0.08);
  // E_s R = E_s δW = 0.
  EXPECT_LT(e.remainder_norm, 0.15);
}

TEST(NormTest, ScaleEquivariance) {
  auto p = std::make_shared<const RoughPath>(brownian_lift(16, 1, 13));
  ControlledEnsemble a = brownian_ensemble(p, 50, 0.8, false);
  ControlledEnsemble b = a;
  const double c = -2.5;
  for (std::size_t n = 0; n <= 16; ++n) {
    for (std::size_t q = 0; q < 50; ++q) {
      b.value(n, q)[0] *= c;
      b.derivative(n, q)[0] *= c;
    }
  }
  for (auto mode : {IntegrabilityMode::kEqualM, IntegrabilityMode::kInfinity}) {
    NormSettings s;
    s.n_mode = mode;
    const NormEstimate ea = estimate_norm(a, *p, s);
    const NormEstimate eb = estimate_norm(b, *p, s);
    EXPECT_NEAR(eb.delta_z_norm, std::abs(c) * ea.delta_z_norm, 1e-12);
    EXPECT_NEAR(eb.zp_norm, std::abs(c) * ea.zp_norm, 1e-12);
    EXPECT_NEAR(eb.remainder_norm, std::abs(c) * ea.remainder_norm, 1e-12);
  }
}

TEST(NormTest, WindowAndStrideReduceThePairSet) {
  auto p = std::make_shared<const RoughPath>(brownian_lift(32, 1, 14));
  const ControlledEnsemble ce = brownian_ensemble(p, 20, 0.3, false);
  NormSettings full;
  NormSettings window = full;
  window.max_width = 0.25;
  NormSettings strided = full;
  strided.pair_stride = 4;
  const NormEstimate ef = estimate_norm(ce, *p, full);
  const NormEstimate ew = estimate_norm(ce, *p, window);
  const NormEstimate es = estimate_norm(ce, *p, strided);
  EXPECT_EQ(ef.pairs_evaluated, 32u * 33u / 2u);
  EXPECT_LT(ew.pairs_evaluated, ef.pairs_evaluated);
  EXPECT_EQ(es.pairs_evaluated, 8u * 9u / 2u);
  EXPECT_TRUE(es.pairs_subsampled);
  EXPECT_LE(ew.delta_z_norm, ef.delta_z_norm);
  EXPECT_LE(es.delta_z_norm, ef.delta_z_norm);
}

TEST(NormTest, PowerMeanCombination) {
  EXPECT_DOUBLE_EQ(combine_parts(1.0, 2.0, 3.0, 4, false), 6.0);
  EXPECT_NEAR(combine_parts(1.0, 2.0, 3.0, 2, true), std::sqrt(14.0 / 3.0), 1e-15);
}

TEST(NormTest, CsvRow) {
  NormEstimate e;
  e.beta = 0.4;
  e.combined = 1.0;
  std::ostringstream out;
  write_norm_csv_header(out);
  write_norm_csv_row(out, "x", e);
  EXPECT_NE(out.str().find("x,0.4"), std::string::npos);
}

}  // namespace
}  // namespace rmfg
