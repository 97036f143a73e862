#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "rwfm/datasets.hpp"
#include "rwfm/fields.hpp"
#include "rwfm/flowcore.hpp"
#include "support.hpp"

using namespace rwfm;

TEST(SamplePath, EndpointsAndVelocity) {
  const std::vector<double> x0 = {0.3, -1.0}, x1 = {2.0, 4.5};
  const auto a = sample_path(x0, x1, 0.0);
  EXPECT_EQ(a.xt, x0);
  const auto b = sample_path(x0, x1, 1.0);
  EXPECT_EQ(b.xt, x1);
  for (const auto& s : {a, b}) {
    EXPECT_EQ(s.ut[0], x1[0] - x0[0]);
    EXPECT_EQ(s.ut[1], x1[1] - x0[1]);
  }
}

TEST(SamplePath, QuarterWayOneDimensional) {
  const double x0 = 0.0, x1 = 2.0;
  const auto s = sample_path(std::span<const double>(&x0, 1), std::span<const double>(&x1, 1), 0.25);
  EXPECT_EQ(s.xt[0], 0.5);
  EXPECT_EQ(s.ut[0], 2.0);
}

TEST(SamplePath, IdentitiesHoldOnRandomDraws) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> x0 = {rng.normal(), rng.normal(), rng.normal()}, x1 = {rng.normal(), rng.normal(), rng.normal()};
    const double t = rng.uniform();
    const auto s = sample_path(x0, x1, t);
    for (int k = 0; k < 3; ++k) {
      EXPECT_EQ(s.xt[k], (1.0 - t) * x0[k] + t * x1[k]);
      EXPECT_EQ(s.ut[k], x1[k] - x0[k]);
    }
  }
}

TEST(SamplePath, RejectsTimeOutsideUnitInterval) {
  const double a = 0.0;
  EXPECT_THROW(sample_path(std::span<const double>(&a, 1), std::span<const double>(&a, 1), -0.1), std::invalid_argument);
  EXPECT_THROW(sample_path(std::span<const double>(&a, 1), std::span<const double>(&a, 1), 1.5), std::invalid_argument);
}

namespace {

// Velocity equal to the conditional target of one fixed path: constant x1 - x0.
ConstantField perfect_for(const PathSample& p) { return ConstantField(p.ut); }

}  // namespace

TEST(CfmLoss, PerfectFitGivesZero) {
  Rng rng(3);
  PointBatch x1(2, std::vector<double>{1.0, 2.0});
  const auto paths = draw_paths(x1, rng);
  const auto batch = cfm_loss_batch(paths);
  EXPECT_EQ(batch.value(perfect_for(paths[0])), 0.0);
}

TEST(CfmLoss, ZeroFieldMatchesExpectedSquaredDisplacement) {
  // E|x1 - x0|^2 = |x1|^2 + d for x0 ~ N(0, I).
  PointBatch x1(2);
  const double p[2] = {3.0, -1.0};
  for (int i = 0; i < 20000; ++i) x1.push_back(p);
  Rng rng(7);
  const auto batch = cfm_loss_batch(x1, rng);
  const double loss = batch.value(ConstantField::zero(2));
  EXPECT_NEAR(loss, 12.0, 0.15);
  Rng again(7);
  EXPECT_EQ(cfm_loss_batch(x1, again).value(ConstantField::zero(2)), loss);
}

TEST(CfmLoss, SingleElementBatchEqualsItsResidual) {
  Rng rng(5);
  PointBatch x1(1, std::vector<double>{0.7});
  const auto batch = cfm_loss_batch(x1, rng);
  VectorField f(1, {4}, Activation::tanh, 0);
  const auto v = f(batch.terms[0].t, batch.terms[0].x);
  const double r = v[0] - batch.terms[0].target[0];
  EXPECT_DOUBLE_EQ(batch.value(f), r * r);
}

TEST(CfmLoss, RejectsEmptyBatch) {
  Rng rng(0);
  EXPECT_THROW(cfm_loss_batch(PointBatch(2), rng), std::invalid_argument);
}

TEST(Pretrain, ZeroEpochsLeaveFieldUnchanged) {
  VectorField f(2, {8}, Activation::tanh, 1);
  const VectorField copy = f;
  OptimizerState opt(OptimizerKind::adam, 1e-3, f.parameter_count());
  Rng rng(1);
  const auto data = ring_mixture().sample(64, rng);
  const auto res = pretrain(f, data, {0, 16, 0}, opt);
  EXPECT_TRUE(f == copy);
  EXPECT_TRUE(res.epoch_loss.empty());
  EXPECT_EQ(res.steps, 0u);
}

TEST(Pretrain, RecordsFiniteLossPerEpochAndIsDeterministic) {
  Rng rng(1);
  const auto data = ring_mixture().sample(256, rng);
  auto run = [&] {
    VectorField f(2, {16}, Activation::tanh, 1);
    OptimizerState opt(OptimizerKind::adam, 1e-3, f.parameter_count());
    auto res = pretrain(f, data, {5, 64, 3}, opt);
    return std::make_pair(f, res);
  };
  const auto [fa, ra] = run();
  const auto [fb, rb] = run();
  ASSERT_EQ(ra.epoch_loss.size(), 5u);
  EXPECT_EQ(ra.steps, 20u);
  for (double l : ra.epoch_loss) EXPECT_TRUE(std::isfinite(l));
  EXPECT_TRUE(fa == fb);
  EXPECT_EQ(ra.epoch_loss, rb.epoch_loss);
}

TEST(Pretrain, PointMassDatasetConcentratesSamples) {
  // Dataset {0}: 4000 steps, then 256 samples should sit near the origin.
  PointBatch data(1, std::vector<double>(64, 0.0));
  VectorField f(1, {32, 32}, Activation::tanh, 0);
  OptimizerState opt(OptimizerKind::adam, 1e-3, f.parameter_count());
  const auto res = pretrain(f, data, {4000, 64, 0}, opt);
  EXPECT_EQ(res.steps, 4000u);
  Rng rng(11);
  const auto s = generate(f, 256, 100, Integrator::euler, rng).samples;
  double mean = 0.0, mean_abs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    mean += s[i][0];
    mean_abs += std::abs(s[i][0]);
  }
  mean /= 256.0;
  mean_abs /= 256.0;
  EXPECT_LT(std::abs(mean), 0.2);
  EXPECT_LT(mean_abs, 0.2);
}

TEST(Generate, ZeroFieldReturnsInitialNoise) {
  Rng a(4), b(4);
  const auto run = generate(ConstantField::zero(3), 10, 7, Integrator::rk4, a);
  EXPECT_EQ(run.samples.data(), b.normal_batch(3, 10).data());
}

TEST(Generate, EulerIsExactForConstantFields) {
  const ConstantField c({0.5, -2.0});
  for (std::size_t steps : {1u, 3u, 64u}) {
    Rng a(9), b(9);
    const auto run = generate(c, 5, steps, Integrator::euler, a);
    const auto x0 = b.normal_batch(2, 5);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_NEAR(run.samples[i][0], x0[i][0] + 0.5, 1e-12);
      EXPECT_NEAR(run.samples[i][1], x0[i][1] - 2.0, 1e-12);
    }
  }
  Rng one(1), ref(1);
  const auto single = generate(c, 3, 1, Integrator::euler, one);
  const auto x0 = ref.normal_batch(2, 3);
  EXPECT_EQ(single.samples[0][0], x0[0][0] + 0.5);
}

TEST(Generate, LinearFieldMatchesExponentialSolution) {
  const auto lin = LinearField::identity(2);
  PointBatch x0(2, std::vector<double>{1.0, -0.5, 2.0, 0.25});
  const auto rk = integrate(lin, x0, 100, Integrator::rk4).samples;
  const auto eu = integrate(lin, x0, 100, Integrator::euler).samples;
  for (std::size_t i = 0; i < x0.size(); ++i)
    for (std::size_t k = 0; k < 2; ++k) {
      const double exact = std::exp(1.0) * x0[i][k];
      EXPECT_NEAR(rk[i][k], exact, 1e-4);
      EXPECT_NEAR(eu[i][k], exact, 2e-2 * std::max(1.0, std::abs(x0[i][k])));
    }
}

TEST(Generate, Rk4ConvergesAtFourthOrder) {
  const auto lin = LinearField::identity(1);
  PointBatch x0(1, std::vector<double>{1.0});
  auto err = [&](std::size_t steps) {
    return std::abs(integrate(lin, x0, steps, Integrator::rk4).samples[0][0] - std::exp(1.0));
  };
  for (std::size_t n : {5u, 10u, 20u}) {
    const double ratio = err(n) / err(2 * n);
    EXPECT_GT(ratio, 14.0);
    EXPECT_LT(ratio, 18.0);
  }
}

TEST(Generate, TrajectoryHasOneStatePerStep) {
  Rng rng(0);
  const auto run = generate(ConstantField({1.0}), 4, 10, Integrator::euler, rng, true);
  ASSERT_EQ(run.trajectory.size(), 11u);
  EXPECT_EQ(run.trajectory.back().data(), run.samples.data());
  EXPECT_EQ(run.steps, 10u);
}

TEST(Generate, RejectsBadArgumentsAndNonFiniteStates) {
  Rng rng(0);
  EXPECT_THROW(generate(ConstantField({1.0}), 0, 10, Integrator::euler, rng), std::invalid_argument);
  EXPECT_THROW(generate(ConstantField({1.0}), 1, 0, Integrator::euler, rng), std::invalid_argument);
  const LinearField blowup(1, {1e200});
  EXPECT_THROW(generate(blowup, 2, 50, Integrator::euler, rng), NonFiniteError);
}

TEST(LogLikelihood, ZeroFieldIsStandardNormal) {
  for (double x : {-3.0, -0.5, 0.0, 1.2, 4.0}) {
    const double v = log_likelihood(ConstantField::zero(1), std::span<const double>(&x, 1));
    EXPECT_NEAR(v, -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi), 1e-12);
  }
}

TEST(LogLikelihood, LinearFieldIsAScaledGaussian) {
  // v = x pushes N(0, 1) to N(0, e^2).
  const auto lin = LinearField::identity(1);
  for (double x : {-2.0, 0.0, 3.0}) {
    const double expected = -0.5 * x * x / std::exp(2.0) - 0.5 * std::log(2.0 * std::numbers::pi) - 1.0;
    EXPECT_NEAR(log_likelihood(lin, std::span<const double>(&x, 1)), expected, 1e-8);
  }
}

TEST(LogLikelihood, TrainedDensityIntegratesToOneAndIsStepStable) {
  const auto mix = line_mixture(2);
  Rng rng(5);
  const auto data = mix.sample(1024, rng);
  VectorField f(1, {16, 16}, Activation::tanh, 0);
  OptimizerState opt(OptimizerKind::adam, 2e-3, f.parameter_count());
  pretrain(f, data, {40, 128, 9}, opt);
  const double lo = -6.0, h = 12.0 / 240.0;
  double mass = 0.0;
  for (int i = 0; i <= 240; ++i) {
    const double x = lo + h * i;
    mass += (i == 0 || i == 240 ? 0.5 : 1.0) * h * std::exp(log_likelihood(f, std::span<const double>(&x, 1)));
  }
  EXPECT_NEAR(mass, 1.0, 0.05);
  for (double x : {-2.0, 0.3, 2.1}) {
    const double a = log_likelihood(f, std::span<const double>(&x, 1), 200);
    const double b = log_likelihood(f, std::span<const double>(&x, 1), 400);
    EXPECT_NEAR(a, b, 1e-6);
  }
}

TEST(LogLikelihood, RejectsHighDimensions) {
  const std::vector<double> x(4, 0.0);
  EXPECT_THROW(log_likelihood(ConstantField::zero(4), x), std::invalid_argument);
}

TEST(PointFiles, RoundTripExactly) {
  Rng rng(2);
  const auto pts = rng.normal_batch(3, 20);
  std::stringstream ss;
  write_points(ss, pts);
  const auto back = read_points(ss);
  EXPECT_TRUE(back == pts);
}

TEST(PointFiles, RejectRaggedRows) {
  std::istringstream ss("1 2\n3 4 5\n");
  EXPECT_THROW(read_points(ss), std::runtime_error);
}

TEST(Datasets, RingAndLineMixtures) {
  const auto ring = ring_mixture();
  ASSERT_EQ(ring.modes(), 8u);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(std::sqrt(squared_norm(ring.centers[k])), 4.0, 1e-12);
  const auto line = line_mixture(2);
  EXPECT_EQ(line.centers[0][0], -2.0);
  EXPECT_EQ(line.centers[1][0], 2.0);
  Rng rng(3);
  std::vector<std::size_t> labels;
  const auto s = line.sample(1000, rng, &labels);
  std::size_t left = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_NEAR(s[i][0], line.centers[labels[i]][0], 6 * 0.3);
    left += labels[i] == 0;
  }
  EXPECT_NEAR(static_cast<double>(left) / 1000.0, 0.5, 0.06);
}
