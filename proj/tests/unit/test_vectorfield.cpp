#include "rmfg/vectorfield.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "rmfg/errors.hpp"
#include "rmfg/models.hpp"
#include "rmfg/rng.hpp"

namespace rmfg {
namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

Mat scalar(double v) { return Mat::Constant(1, 1, v); }

// A one-dimensional flow whose particles and derivatives are random but
// known, so σ̃′ can be recomputed by hand.
MeasureFlow random_flow(const TimeGrid& grid, std::size_t P, std::uint64_t seed) {
  RandomStream rng(seed, StreamModule::kTest, 0);
  ControlledEnsemble ce(grid, P, 1, 1);
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      ce.value(n, p)[0] = 0.5 * rng.normal() + 0.1 * static_cast<double>(n);
      ce.derivative(n, p)[0] = 0.3 + 0.2 * rng.normal();
    }
  }
  return MeasureFlow(std::move(ce), true);
}

std::shared_ptr<CoefficientSet> sin_mean_model(bool with_lions) {
  // σ⁰(x, μ) = x + ∫ sin(y) μ(dy); ∂_μσ⁰(y) = cos(y).
  auto c = std::make_shared<CoefficientSet>(*make_model("no-interaction"));
  c->name = "sin-mean";
  c->common = [](double, const Vec& x, const EmpiricalMeasure& mu) {
    return scalar(x(0) + mu.points().col(0).array().sin().mean());
  };
  c->common_gradient = [](double, const Vec&, const EmpiricalMeasure&) {
    return scalar(1.0);
  };
  c->common_measure_dependent = true;
  c->measure_dependent = true;
  if (with_lions) {
    c->lions.eval = [](double, const Vec&, const EmpiricalMeasure&, const Vec& y) {
      return scalar(std::cos(y(0)));
    };
  }
  return c;
}

TEST(FlowFieldTest, MeasureIndependentCommonNoiseHasNoPrime) {
  TimeGrid grid(1.0, 5);
  const MeasureFlow flow = random_flow(grid, 20, 1);
  const auto cvf = build_cvf_from_flow(make_model("no-interaction"), flow);
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    EXPECT_EQ(cvf.prime(n, Vec::Constant(1, 0.7))(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(cvf.value(n, Vec::Constant(1, 0.7))(0, 0),
                     0.4 + 0.1 * std::tanh(0.7));
  }
}

TEST(FlowFieldTest, TanhModelMatchesClosedForm) {
  TimeGrid grid(1.0, 6);
  const MeasureFlow flow = random_flow(grid, 40, 2);
  const auto model = make_model("tanh-interaction");
  const auto field = build_flow_field(model, flow);
  EXPECT_EQ(field.lions_method, "analytic-mean");
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    double mean_y = 0.0, mean_yp = 0.0;
    for (std::size_t p = 0; p < 40; ++p) {
      mean_y += flow.representation().value(n, p)[0] / 40.0;
      mean_yp += flow.representation().derivative(n, p)[0] / 40.0;
    }
    for (double x : {-1.3, 0.0, 0.4, 2.0}) {
      const double sech2 = 1.0 / (std::cosh(mean_y) * std::cosh(mean_y));
      const double expected = 0.2 * std::tanh(x) * sech2 * mean_yp;
      EXPECT_NEAR(field.common->prime(n, Vec::Constant(1, x))(0, 0), expected, 1e-10);
      EXPECT_NEAR(field.common->value(n, Vec::Constant(1, x))(0, 0),
                  0.4 + 0.2 * std::tanh(x) * std::tanh(mean_y), 1e-12);
    }
  }
}

TEST(FlowFieldTest, GeneralLionsDerivativeAndFiniteDifferenceAgree) {
  TimeGrid grid(1.0, 4);
  const MeasureFlow flow = random_flow(grid, 30, 3);
  const auto exact = build_flow_field(sin_mean_model(true), flow);
  const auto fd = build_flow_field(sin_mean_model(false), flow);
  EXPECT_EQ(exact.lions_method, "analytic");
  EXPECT_EQ(fd.lions_method, "finite-difference");
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    double expected = 0.0;
    for (std::size_t p = 0; p < 30; ++p) {
      expected += std::cos(flow.representation().value(n, p)[0]) *
                  flow.representation().derivative(n, p)[0] / 30.0;
    }
    const Vec x = Vec::Constant(1, 0.25);
    EXPECT_NEAR(exact.common->prime(n, x)(0, 0), expected, 1e-12);
    EXPECT_NEAR(fd.common->prime(n, x)(0, 0), expected, 1e-7);
  }
}

TEST(FlowFieldTest, MissingDerivativeIsAConfigurationError) {
  TimeGrid grid(1.0, 4);
  ControlledEnsemble ce(grid, 3, 1, 1);
  const MeasureFlow no_derivative(std::move(ce), false);
  EXPECT_THROW(build_flow_field(make_model("tanh-interaction"), no_derivative),
               ConfigurationError);
  EXPECT_NO_THROW(build_flow_field(make_model("no-interaction"), no_derivative));
}

TEST(FlowFieldTest, InvariantUnderParticlePermutation) {
  TimeGrid grid(1.0, 3);
  const MeasureFlow flow = random_flow(grid, 12, 4);
  ControlledEnsemble rev(grid, 12, 1, 1);
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    for (std::size_t p = 0; p < 12; ++p) {
      rev.value(n, p)[0] = flow.representation().value(n, 11 - p)[0];
      rev.derivative(n, p)[0] = flow.representation().derivative(n, 11 - p)[0];
    }
  }
  const MeasureFlow reversed(std::move(rev), true);
  const auto model = sin_mean_model(true);
  const auto a = build_cvf_from_flow(model, flow);
  const auto b = build_cvf_from_flow(model, reversed);
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    const Vec x = Vec::Constant(1, -0.6);
    EXPECT_NEAR(a.value(n, x)(0, 0), b.value(n, x)(0, 0), 1e-14);
    EXPECT_NEAR(a.prime(n, x)(0, 0), b.prime(n, x)(0, 0), 1e-14);
  }
}

TEST(FlowFieldTest, LipschitzInTheFlow) {
  // Shifting the whole flow by δ moves it by δ in W₂; the field moves by O(δ).
  TimeGrid grid(1.0, 4);
  const MeasureFlow flow = random_flow(grid, 30, 5);
  const auto model = make_model("tanh-interaction");
  const auto base = build_cvf_from_flow(model, flow);
  for (double delta : {1e-3, 1e-2, 1e-1}) {
    ControlledEnsemble shifted = flow.representation();
    for (std::size_t n = 0; n < grid.nodes(); ++n) {
      for (std::size_t p = 0; p < 30; ++p) shifted.value(n, p)[0] += delta;
    }
    const auto moved = build_cvf_from_flow(model, MeasureFlow(std::move(shifted), true));
    for (double x : {-1.0, 0.5}) {
      const Vec xv = Vec::Constant(1, x);
      EXPECT_LE(std::abs(moved.value(2, xv)(0, 0) - base.value(2, xv)(0, 0)),
                model->lipschitz * delta);
    }
  }
}

ControlledVectorField time_linear_field(const TimeGrid& grid) {
  return ControlledVectorField(
      grid, 1, 1, 1,
      [grid](std::size_t n, const Vec&) { return scalar(grid.time(n)); },
      ControlledVectorField::Field{},
      [](std::size_t, const Vec&) { return scalar(0.0); });
}

TEST(CvfNormTest, TimeLinearFieldHasKnownIncrementParts) {
  TimeGrid grid(1.0, 8);
  Mat inc = Mat::Zero(8, 1);
  const RoughPath path = ito_lift(inc, grid);
  const IndexPair index{0.4, 0.3};
  const std::vector<Vec> probes = {Vec::Constant(1, 0.0), Vec::Constant(1, 1.0)};
  const CvfNorm norm = cvf_norm(time_linear_field(grid), path, index, probes);
  // f_t − f_s = t − s, so the β-quotient peaks at the full horizon.
  EXPECT_NEAR(norm.delta_f, 1.0, 1e-12);
  EXPECT_NEAR(norm.remainder, 1.0, 1e-12);
  EXPECT_EQ(norm.delta_prime, 0.0);
  EXPECT_EQ(norm.delta_gradient, 0.0);
  EXPECT_NEAR(norm.sup_part, 1.0, 1e-12);

  const ControlledVectorField still(
      grid, 1, 1, 1, [](std::size_t, const Vec& x) { return scalar(std::sin(x(0))); },
      ControlledVectorField::Field{}, {}, 1e-5);
  const CvfNorm zero = cvf_norm(still, path, index, probes);
  EXPECT_EQ(zero.delta_f, 0.0);
  EXPECT_EQ(zero.remainder, 0.0);
}

ControlledEnsemble random_ensemble(const TimeGrid& grid, std::size_t P,
                                   std::size_t d, std::size_t k) {
  RandomStream rng(9, StreamModule::kTest, 0);
  ControlledEnsemble ce(grid, P, d, k);
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      for (double& v : ce.value(n, p)) v = rng.normal();
      for (double& v : ce.derivative(n, p)) v = rng.normal();
    }
  }
  return ce;
}

TEST(ComposeTest, LinearAndConstantFields) {
  TimeGrid grid(1.0, 3);
  const std::size_t d = 2, k = 2;
  const ControlledEnsemble ce = random_ensemble(grid, 5, d, k);
  Mat A(2, 2);
  A << 1.0, -2.0, 0.5, 3.0;
  // f(x) = A x viewed as a 1 × k field requires rows·k = d; use rows = 1.
  auto linear = std::make_shared<ControlledVectorField>(
      grid, 1, d, k,
      [A](std::size_t, const Vec& x) { return Mat((A * x).transpose()); },
      ControlledVectorField::Field{},
      [A](std::size_t, const Vec&) { return Mat(A); });
  const ControlledEnsemble out = compose(linear, ce);
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    for (std::size_t p = 0; p < 5; ++p) {
      const Vec ax = A * ce.value_vector(n, p);
      const Mat axp = A * ce.derivative_matrix(n, p);
      for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_NEAR(out.value(n, p)[i], ax(i), 1e-14);
        for (std::size_t a = 0; a < k; ++a) {
          EXPECT_NEAR(out.derivative(n, p)[i * k + a], axp(i, a), 1e-14);
        }
      }
    }
  }

  Mat c(1, 2);
  c << 0.3, -0.7;
  auto constant = std::make_shared<ControlledVectorField>(
      grid, 1, d, k, [c](std::size_t, const Vec&) { return c; },
      [](std::size_t, const Vec& x) { return Mat(Mat::Constant(2, 2, x.sum())); },
      [](std::size_t, const Vec&) { return Mat(Mat::Zero(2, 2)); });
  const ControlledEnsemble oc = compose(constant, ce);
  EXPECT_EQ(oc.value(1, 2)[1], -0.7);
  EXPECT_DOUBLE_EQ(oc.derivative(1, 2)[3], ce.value_vector(1, 2).sum());
}

TEST(ComposeTest, SineMatchesFiniteDifferencesOfFirstSlot) {
  TimeGrid grid(1.0, 3);
  const ControlledEnsemble ce = random_ensemble(grid, 7, 1, 2);
  auto sine = std::make_shared<ControlledVectorField>(
      grid, 1, 1, 2,
      [](std::size_t, const Vec& x) {
        Mat v(1, 2);
        v << std::sin(x(0)), std::cos(x(0));
        return v;
      },
      ControlledVectorField::Field{},
      [](std::size_t, const Vec& x) {
        Mat g(2, 1);
        g << std::cos(x(0)), -std::sin(x(0));
        return g;
      });
  const ControlledEnsemble out = compose(sine, ce);
  const double h = 1e-5;
  for (std::size_t n = 0; n < grid.nodes(); ++n) {
    for (std::size_t p = 0; p < 7; ++p) {
      const double x = ce.value(n, p)[0];
      for (std::size_t a = 0; a < 2; ++a) {
        const double xp = ce.derivative(n, p)[a];
        const double fd = (std::sin(x + h * xp) - std::sin(x - h * xp)) / (2 * h);
        EXPECT_NEAR(out.derivative(n, p)[0 * 2 + a], fd, 1e-6);
      }
    }
  }
}

TEST(ComposeTest, LeftLinearMapsCommute) {
  TimeGrid grid(1.0, 2);
  const ControlledEnsemble ce = random_ensemble(grid, 4, 1, 1);
  auto f = std::make_shared<ControlledVectorField>(
      grid, 1, 1, 1, [](std::size_t, const Vec& x) { return scalar(std::exp(0.3 * x(0))); },
      [](std::size_t, const Vec& x) { return scalar(x(0)); },
      [](std::size_t, const Vec& x) { return scalar(0.3 * std::exp(0.3 * x(0))); });
  auto lf = std::make_shared<ControlledVectorField>(
      grid, 1, 1, 1,
      [](std::size_t, const Vec& x) { return scalar(-2.0 * std::exp(0.3 * x(0))); },
      [](std::size_t, const Vec& x) { return scalar(-2.0 * x(0)); },
      [](std::size_t, const Vec& x) { return scalar(-0.6 * std::exp(0.3 * x(0))); });
  const ControlledEnsemble a = compose(f, ce);
  const ControlledEnsemble b = compose(lf, ce);
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t p = 0; p < 4; ++p) {
      EXPECT_NEAR(-2.0 * a.value(n, p)[0], b.value(n, p)[0], 1e-14);
      EXPECT_NEAR(-2.0 * a.derivative(n, p)[0], b.derivative(n, p)[0], 1e-14);
    }
  }
}

TEST(ComposeTest, MissingGradientIsAConfigurationError) {
  TimeGrid grid(1.0, 2);
  auto f = std::make_shared<ControlledVectorField>(
      grid, 1, 1, 1, [](std::size_t, const Vec& x) { return scalar(x(0)); },
      ControlledVectorField::Field{});
  EXPECT_THROW(compose(f, random_ensemble(grid, 2, 1, 1)), ConfigurationError);
}

TEST(ModelsTest, RegistryAndSuggestions) {
  const auto models = list_models();
  ASSERT_EQ(models.size(), 5u);
  for (const ModelInfo& m : models) EXPECT_NO_THROW(make_model(m.name)->validate());
  EXPECT_EQ(suggest_model("tanh-interation").value_or(""), "tanh-interaction");
  EXPECT_THROW(make_model("nope-nothing-like-it"), InputError);
  EXPECT_THROW(make_model("lq", {{"kapa", 1.0}}), InputError);
  EXPECT_EQ(edit_distance("kitten", "sitting"), 3u);
  EXPECT_EQ(make_model("gaussian", {{"dim", 3}})->dims.rough, 3u);
  EXPECT_THROW(make_model("gaussian", {{"dim", 2.5}}), InputError);
}

}  // namespace
}  // namespace rmfg
