#include <gtest/gtest.h>

#include <sstream>

#include "rwfm/checkpoint.hpp"
#include "rwfm/flowcore.hpp"
#include "rwfm/nnfield.hpp"
#include "support.hpp"

using namespace rwfm;

namespace {

ResidualBatch random_batch(std::size_t dim, std::size_t n, Rng& rng) {
  ResidualBatch b;
  b.normalizer = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    ResidualTerm term;
    term.t = rng.uniform();
    for (std::size_t k = 0; k < dim; ++k) {
      term.x.push_back(2.0 * rng.normal());
      term.target.push_back(rng.normal());
    }
    term.weight = rng.uniform(0.1, 2.0);
    b.terms.push_back(term);
  }
  return b;
}

}  // namespace

TEST(VectorField, ParameterCountFollowsLayout) {
  VectorField f(2, {64, 64}, Activation::tanh, 0);
  // (3*64 + 64) + (64*64 + 64) + (64*2 + 2)
  EXPECT_EQ(f.parameter_count(), 256u + 4160u + 130u);
  ASSERT_EQ(f.layer_shapes().size(), 3u);
  EXPECT_EQ(f.layer_shapes()[0].in, 3u);
  EXPECT_EQ(f.layer_shapes()[2].out, 2u);
}

TEST(VectorField, InitializationIsDeterministicAndBounded) {
  VectorField a(3, {8, 5}, Activation::gelu, 42), b(3, {8, 5}, Activation::gelu, 42), c(3, {8, 5}, Activation::gelu, 43);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  const auto p = a.parameters();
  // first layer fan_in = 4 -> |w| <= 0.5
  for (std::size_t k = 0; k < 4 * 8 + 8; ++k) EXPECT_LE(std::abs(p[k]), 0.5);
}

TEST(VectorField, RejectsBadShapes) {
  EXPECT_THROW(VectorField(0, {4}, Activation::tanh, 0), std::invalid_argument);
  EXPECT_THROW(VectorField(2, {}, Activation::tanh, 0), std::invalid_argument);
  EXPECT_THROW(VectorField(2, {4, 0}, Activation::tanh, 0), std::invalid_argument);
}

TEST(VectorField, ZeroParametersGiveZeroVelocity) {
  VectorField f(2, {6}, Activation::tanh, 1);
  f.set_parameters(std::vector<double>(f.parameter_count(), 0.0));
  const double x[2] = {1.5, -0.3};
  const auto v = f(0.4, x);
  EXPECT_EQ(v[0], 0.0);
  EXPECT_EQ(v[1], 0.0);
}

TEST(VectorField, EvalRejectsWrongDimension) {
  VectorField f(2, {4}, Activation::tanh, 0);
  const double x[3] = {0, 0, 0};
  double out[2];
  EXPECT_THROW(f.eval(0.5, std::span<const double>(x, 3), out), std::invalid_argument);
}

TEST(VectorField, JacobianAndDivergenceMatchFiniteDifferences) {
  for (Activation act : {Activation::tanh, Activation::gelu}) {
    VectorField f(3, {10, 7}, act, 9);
    const std::vector<double> x = {0.3, -1.2, 0.8};
    const double t = 0.37;
    const auto J = f.jacobian(t, x);
    const double h = 1e-6;
    double trace = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      auto xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      const auto vp = f(t, xp), vm = f(t, xm);
      for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(J[i * 3 + j], (vp[i] - vm[i]) / (2 * h), 1e-7);
      trace += J[j * 3 + j];
    }
    EXPECT_NEAR(f.divergence(t, x), trace, 1e-12);
  }
}

TEST(LossGradient, MatchesFiniteDifferences) {
  Rng rng(5);
  for (Activation act : {Activation::tanh, Activation::gelu}) {
    for (int trial = 0; trial < 5; ++trial) {
      VectorField f(2, {7, 5}, act, 100 + trial);
      const auto batch = random_batch(2, 6, rng);
      const auto lg = loss_gradient(f, batch);
      EXPECT_NEAR(lg.loss, batch.value(f), 1e-12 * std::max(1.0, lg.loss));
      const auto fd = check::numeric_gradient(f, [&](const VectorField& g) { return batch.value(g); });
      EXPECT_LT(check::max_relative_error(lg.gradient, fd, 1e-6), 1e-4);
    }
  }
}

TEST(LossGradient, IsLinearInTermWeights) {
  Rng rng(11);
  VectorField f(2, {6}, Activation::tanh, 3);
  auto batch = random_batch(2, 5, rng);
  const auto base = loss_gradient(f, batch);
  for (auto& t : batch.terms) t.weight *= 3.0;
  const auto tripled = loss_gradient(f, batch);
  EXPECT_NEAR(tripled.loss, 3.0 * base.loss, 1e-12 * tripled.loss);
  for (std::size_t k = 0; k < base.gradient.size(); ++k)
    EXPECT_NEAR(tripled.gradient[k], 3.0 * base.gradient[k], 1e-12 + 1e-12 * std::abs(tripled.gradient[k]));
}

TEST(LossGradient, NonFiniteInputsRaise) {
  VectorField f(1, {4}, Activation::tanh, 0);
  ResidualBatch b;
  b.terms.push_back({0.5, {std::numeric_limits<double>::infinity()}, {0.0}, 1.0});
  EXPECT_THROW(loss_gradient(f, b), NonFiniteError);
}

TEST(Optimizer, SgdStepIsPlainGradientDescent) {
  VectorField f(1, {3}, Activation::tanh, 2);
  const std::vector<double> before(f.parameters().begin(), f.parameters().end());
  std::vector<double> g(f.parameter_count());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = 0.01 * static_cast<double>(k);
  OptimizerState opt(OptimizerKind::sgd, 0.5, f.parameter_count());
  apply_update(f, g, opt);
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_DOUBLE_EQ(f.parameters()[k], before[k] - 0.5 * g[k]);
}

TEST(Optimizer, FirstAdamStepMovesEachParameterByStepSize) {
  VectorField f(1, {3}, Activation::tanh, 2);
  const std::vector<double> before(f.parameters().begin(), f.parameters().end());
  std::vector<double> g(f.parameter_count());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = (k % 2 ? -1.0 : 1.0) * (1.0 + static_cast<double>(k));
  OptimizerState opt(OptimizerKind::adam, 1e-3, f.parameter_count());
  apply_update(f, g, opt);
  // bias-corrected first step is eta * g / (|g| + eps)
  for (std::size_t k = 0; k < g.size(); ++k)
    EXPECT_NEAR(before[k] - f.parameters()[k], 1e-3 * (g[k] > 0 ? 1.0 : -1.0), 1e-10);
  EXPECT_EQ(opt.step_count, 1u);
}

TEST(Optimizer, AdamReducesAQuadraticLoss) {
  Rng rng(3);
  VectorField f(2, {16}, Activation::tanh, 1);
  auto batch = random_batch(2, 32, rng);
  OptimizerState opt(OptimizerKind::adam, 1e-2, f.parameter_count());
  const double start = batch.value(f);
  for (int i = 0; i < 200; ++i) apply_update(f, loss_gradient(f, batch).gradient, opt);
  EXPECT_LT(batch.value(f), 0.5 * start);
}

TEST(Optimizer, RejectsNonFiniteGradient) {
  VectorField f(1, {2}, Activation::tanh, 0);
  std::vector<double> g(f.parameter_count(), 0.0);
  g[0] = std::nan("");
  OptimizerState opt(OptimizerKind::adam, 1e-3, f.parameter_count());
  EXPECT_THROW(apply_update(f, g, opt), NonFiniteError);
}

TEST(FrozenField, CloneIsUnaffectedByLaterUpdates) {
  VectorField f(2, {5}, Activation::tanh, 4);
  const auto frozen = clone_frozen(f);
  std::vector<double> g(f.parameter_count(), 1.0);
  OptimizerState opt(OptimizerKind::sgd, 0.1, f.parameter_count());
  apply_update(f, g, opt);
  const double x[2] = {0.2, 0.1};
  double a[2], b[2];
  frozen.eval(0.5, x, a);
  f.eval(0.5, x, b);
  EXPECT_NE(a[0], b[0]);
  EXPECT_FALSE(frozen.field() == f);
}

TEST(Checkpoint, RoundTripIsExact) {
  VectorField f(3, {9, 4}, Activation::gelu, 77);
  std::stringstream ss;
  write_checkpoint(ss, f);
  const auto g = read_checkpoint(ss);
  EXPECT_TRUE(f == g);
  EXPECT_EQ(g.activation(), Activation::gelu);
}

TEST(Checkpoint, RejectsOtherVersionsAndTruncation) {
  VectorField f(1, {2}, Activation::tanh, 0);
  std::stringstream ss;
  write_checkpoint(ss, f);
  std::string text = ss.str();
  std::string v2 = text;
  v2.replace(v2.find("rwfm-checkpoint 1"), 17, "rwfm-checkpoint 2");
  std::istringstream bad(v2);
  EXPECT_THROW(read_checkpoint(bad), std::runtime_error);
  std::istringstream cut(text.substr(0, text.size() / 2));
  EXPECT_THROW(read_checkpoint(cut), std::runtime_error);
}

TEST(VectorField, OneDimensionalFieldReturnsOneVector) {
  VectorField f(1, {8}, Activation::tanh, 7);
  const double x = 0.25;
  EXPECT_EQ(f(0.3, std::span<const double>(&x, 1)).size(), 1u);
}

TEST(VectorField, BatchEvaluationMatchesPointwiseAndIsPure) {
  VectorField f(2, {6, 6}, Activation::gelu, 8);
  const VectorField copy = f;
  PointBatch xs(2, std::vector<double>{0.1, 0.2, -1.0, 3.0, 0.0, 0.0});
  const auto batch = eval_field(f, 0.6, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto v = f(0.6, xs[i]);
    EXPECT_EQ(batch[i][0], v[0]);
    EXPECT_EQ(batch[i][1], v[1]);
  }
  const auto again = eval_field(f, 0.6, xs);
  EXPECT_EQ(batch.data(), again.data());
  EXPECT_TRUE(f == copy);
  const auto single = eval_field(f, 0.6, xs.slice(1, 1));
  EXPECT_EQ(single[0][0], batch[1][0]);
}

TEST(LossGradient, ZeroWeightsGiveZeroLossAndGradient) {
  Rng rng(2);
  VectorField f(2, {5}, Activation::tanh, 1);
  auto batch = random_batch(2, 4, rng);
  for (auto& t : batch.terms) t.weight = 0.0;
  const auto lg = loss_gradient(f, batch);
  EXPECT_EQ(lg.loss, 0.0);
  for (double g : lg.gradient) EXPECT_EQ(g, 0.0);
}

TEST(LossGradient, DoublingWeightsDoublesExactly) {
  Rng rng(4);
  VectorField f(2, {5}, Activation::gelu, 1);
  auto batch = random_batch(2, 4, rng);
  const auto a = loss_gradient(f, batch);
  for (auto& t : batch.terms) t.weight *= 2.0;
  const auto b = loss_gradient(f, batch);
  EXPECT_EQ(b.loss, 2.0 * a.loss);
  for (std::size_t k = 0; k < a.gradient.size(); ++k) EXPECT_EQ(b.gradient[k], 2.0 * a.gradient[k]);
}

TEST(LossGradient, TwentyParameterOneDimensionalField) {
  VectorField f(1, {3, 2}, Activation::tanh, 12);
  ASSERT_EQ(f.parameter_count(), 20u);
  Rng rng(13);
  const auto batch = random_batch(1, 8, rng);
  const auto lg = loss_gradient(f, batch);
  const auto fd = check::numeric_gradient(f, [&](const VectorField& g) { return batch.value(g); }, 1e-5);
  EXPECT_LT(check::max_relative_error(lg.gradient, fd, 1e-6), 1e-4);
}

TEST(LossGradient, DoesNotMutateTheField) {
  Rng rng(6);
  VectorField f(2, {4}, Activation::tanh, 5);
  const VectorField copy = f;
  loss_gradient(f, random_batch(2, 3, rng));
  EXPECT_TRUE(f == copy);
}

TEST(Optimizer, ZeroGradientLeavesParametersUnchanged) {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    VectorField f(2, {4}, Activation::tanh, 3);
    const VectorField copy = f;
    OptimizerState opt(kind, 0.1, f.parameter_count());
    apply_update(f, std::vector<double>(f.parameter_count(), 0.0), opt);
    EXPECT_TRUE(f == copy);
    EXPECT_EQ(opt.step_count, 1u);
  }
}

TEST(Optimizer, SgdUnitStepOnBasisVector) {
  VectorField f(1, {2}, Activation::tanh, 0);
  const std::vector<double> before(f.parameters().begin(), f.parameters().end());
  std::vector<double> e(f.parameter_count(), 0.0);
  e[3] = 1.0;
  OptimizerState opt(OptimizerKind::sgd, 1.0, f.parameter_count());
  apply_update(f, e, opt);
  for (std::size_t k = 0; k < e.size(); ++k) EXPECT_EQ(f.parameters()[k], k == 3 ? before[k] - 1.0 : before[k]);
}

TEST(Optimizer, StateStartsAtZero) {
  OptimizerState opt(OptimizerKind::adam, 1e-3, 5);
  EXPECT_EQ(opt.step_count, 0u);
  for (double m : opt.first_moment) EXPECT_EQ(m, 0.0);
  for (double v : opt.second_moment) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(OptimizerState(OptimizerKind::sgd, 0.0, 5), std::invalid_argument);
}

TEST(FrozenField, CloneSurvivesAHundredTrainingSteps) {
  Rng rng(21);
  VectorField f(2, {8}, Activation::tanh, 4);
  const auto frozen = clone_frozen(f);
  const std::vector<double> snapshot(frozen.field().parameters().begin(), frozen.field().parameters().end());
  const double x[2] = {0.5, -0.5};
  double before[2], after[2];
  frozen.eval(0.2, x, before);
  const auto fv = f(0.2, x);
  EXPECT_EQ(before[0], fv[0]);
  EXPECT_EQ(before[1], fv[1]);
  OptimizerState opt(OptimizerKind::adam, 1e-2, f.parameter_count());
  for (int i = 0; i < 100; ++i) apply_update(f, loss_gradient(f, random_batch(2, 8, rng)).gradient, opt);
  frozen.eval(0.2, x, after);
  EXPECT_EQ(before[0], after[0]);
  EXPECT_EQ(before[1], after[1]);
  EXPECT_TRUE(std::equal(snapshot.begin(), snapshot.end(), frozen.field().parameters().begin()));
}

TEST(Determinism, IdenticalSeedsGiveBitIdenticalTraining) {
  auto train = [] {
    Rng rng(99);
    VectorField f(2, {8, 8}, Activation::gelu, 17);
    OptimizerState opt(OptimizerKind::adam, 1e-2, f.parameter_count());
    for (int i = 0; i < 30; ++i) apply_update(f, loss_gradient(f, random_batch(2, 16, rng)).gradient, opt);
    return f;
  };
  EXPECT_TRUE(train() == train());
}
