#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rwfm/assignment.hpp"
#include "rwfm/fields.hpp"
#include "rwfm/metrics.hpp"

using namespace rwfm;

namespace {

PointBatch line(std::vector<double> xs) { return PointBatch(1, std::move(xs)); }

PointBatch shifted(const PointBatch& p, std::span<const double> by) {
  PointBatch out(p.dim());
  std::vector<double> row(p.dim());
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t k = 0; k < p.dim(); ++k) row[k] = p[i][k] + by[k];
    out.push_back(row);
  }
  return out;
}

}  // namespace

TEST(Assignment, MatchesBruteForceOnSmallMatrices) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(6);
    std::vector<double> cost(n * n);
    for (double& c : cost) c = trial % 3 == 0 ? std::floor(4 * rng.uniform()) : 10 * rng.uniform();
    const auto match = solve_assignment(cost, n);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += cost[i * n + perm[i]];
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    double got = 0.0;
    std::vector<bool> used(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_LT(match[i], n);
      EXPECT_FALSE(used[match[i]]);
      used[match[i]] = true;
      got += cost[i * n + match[i]];
    }
    EXPECT_NEAR(got, best, 1e-9);
  }
}

TEST(EmpiricalW2, Examples) {
  Rng rng(2);
  const auto a = rng.normal_batch(2, 40);
  EXPECT_EQ(empirical_w2(a, a), 0.0);
  EXPECT_DOUBLE_EQ(empirical_w2(line({0, 0}), line({3, 3})), 3.0);
  EXPECT_DOUBLE_EQ(empirical_w2(line({0, 1}), line({1, 2})), 1.0);
}

TEST(EmpiricalW2, PureTranslationCostsTheShift) {
  Rng rng(3);
  const auto a = rng.normal_batch(2, 64);
  const std::vector<double> by = {0.3, -0.4};
  EXPECT_NEAR(empirical_w2(a, shifted(a, by)), 0.5, 1e-12);
}

TEST(EmpiricalW2, OneDimensionalAcceptsUnequalSizes) {
  EXPECT_NEAR(empirical_w2(line({0.0}), line({1.0, 3.0})), std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(empirical_w2(line({0.0, 0.0, 0.0}), line({1.0, 1.0})), 1.0, 1e-12);
}

TEST(EmpiricalW2, OneDimensionalMatchesAssignment) {
  // Lift to 2D with a zero coordinate to force the assignment path.
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    PointBatch a1(1), b1(1), a2(2), b2(2);
    for (int i = 0; i < 30; ++i) {
      const double x = rng.normal(), y = 2 * rng.normal() + 1;
      a1.push_back(std::vector<double>{x});
      b1.push_back(std::vector<double>{y});
      a2.push_back(std::vector<double>{x, 0.0});
      b2.push_back(std::vector<double>{y, 0.0});
    }
    EXPECT_NEAR(empirical_w2(a1, b1), empirical_w2(a2, b2), 1e-12);
  }
}

TEST(EmpiricalW2, IsAMetric) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto a = rng.normal_batch(2, 25), b = rng.normal_batch(2, 25), c = rng.normal_batch(2, 25);
    const double ab = empirical_w2(a, b), ba = empirical_w2(b, a);
    EXPECT_EQ(ab, ba);
    EXPECT_LE(empirical_w2(a, c), ab + empirical_w2(b, c) + 1e-9);
  }
}

TEST(EmpiricalW2, RejectsBadInput) {
  Rng rng(6);
  EXPECT_THROW(empirical_w2(rng.normal_batch(2, 3), rng.normal_batch(2, 4)), std::invalid_argument);
  EXPECT_THROW(empirical_w2(rng.normal_batch(2, 513), rng.normal_batch(2, 513)), std::invalid_argument);
  EXPECT_THROW(empirical_w2(rng.normal_batch(2, 3), rng.normal_batch(3, 3)), std::invalid_argument);
  EXPECT_THROW(empirical_w2(PointBatch(2), PointBatch(2)), std::invalid_argument);
}

TEST(GaussianW2, ClosedForms) {
  const std::vector<double> m0 = {0.0}, m1 = {2.5}, one = {1.0};
  EXPECT_EQ(gaussian_w2(m0, one, m0, one), 0.0);
  EXPECT_DOUBLE_EQ(gaussian_w2(m0, one, m1, one), 2.5);
  const std::vector<double> four = {4.0};
  EXPECT_DOUBLE_EQ(gaussian_w2(m0, one, m0, four), 1.0);
  const std::vector<double> full = {1.0, 0.5, 0.5, 1.0}, eye = {1.0, 0.0, 0.0, 1.0}, mz = {0.0, 0.0};
  EXPECT_THROW(gaussian_w2(mz, full, mz, eye), std::invalid_argument);
}

TEST(GaussianW2, EmpiricalEstimateAgreesOnShiftedGaussians) {
  const std::vector<double> ma = {0.0, 0.0}, mb = {3.0, 0.0}, eye = {1.0, 0.0, 0.0, 1.0};
  const double truth = gaussian_w2(ma, eye, mb, eye);
  EXPECT_DOUBLE_EQ(truth, 3.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto a = rng.normal_batch(2, 512);
    const auto b = shifted(rng.normal_batch(2, 512), mb);
    EXPECT_LT(std::abs(empirical_w2(a, b) - truth) / truth, 0.10) << "seed " << seed;
  }
}

TEST(Lipschitz, ZeroFieldHasZeroConstant) {
  EXPECT_EQ(estimate_lipschitz(ConstantField::zero(2), Box{{-1, -1}, {1, 1}}, 200, 0), 0.0);
}

TEST(Lipschitz, LinearFieldRecoversOperatorNorm) {
  // [[2, 1], [0, 1]] has largest singular value sqrt(3 + sqrt(5)).
  const LinearField f(2, {2.0, 1.0, 0.0, 1.0});
  const double L = estimate_lipschitz(f, Box{{-3, -3}, {3, 3}}, 1000, 7);
  const double truth = std::sqrt(3.0 + std::sqrt(5.0));
  EXPECT_LE(L, truth * (1.0 + 1e-6));
  EXPECT_GT(L, 0.95 * truth);
}

TEST(Lipschitz, NonDecreasingInProbeCount) {
  const VectorField f(2, {16, 16}, Activation::tanh, 3);
  const Box box{{-5, -5}, {5, 5}};
  double prev = 0.0;
  for (std::size_t probes : {100u, 200u, 400u, 800u}) {
    const double L = estimate_lipschitz(f, box, probes, 11);
    EXPECT_GE(L, prev);
    prev = L;
  }
}

TEST(Lipschitz, RejectsBadRegionsAndTooFewProbes) {
  const auto f = ConstantField::zero(2);
  EXPECT_THROW(estimate_lipschitz(f, Box{{0, 0}, {0, 1}}, 200, 0), std::invalid_argument);
  EXPECT_THROW(estimate_lipschitz(f, Box{{0}, {1}}, 200, 0), std::invalid_argument);
  EXPECT_THROW(estimate_lipschitz(f, Box{{0, 0}, {1, 1}}, 99, 0), std::invalid_argument);
}

TEST(W2Bound, IdenticalFieldsGiveZero) {
  const VectorField f(2, {8}, Activation::tanh, 1);
  for (double L : {0.0, 1.0, 5.0}) EXPECT_EQ(w2_upper_bound(f, f, L, 256, 3), 0.0);
}

TEST(W2Bound, ConstantFieldsAreExact) {
  const ConstantField a({1.0, 0.5}), b({-1.0, 0.5});
  for (double L : {0.0, 0.3, 2.0}) EXPECT_NEAR(w2_upper_bound(a, b, L, 256, 4), std::exp(2 * L) * 4.0, 1e-12 * std::exp(2 * L));
}

TEST(W2Bound, MonotoneInL) {
  const VectorField a(2, {8}, Activation::tanh, 1), b(2, {8}, Activation::tanh, 2);
  double prev = 0.0;
  for (double L : {0.0, 0.1, 0.5, 1.0, 3.0}) {
    const double v = w2_upper_bound(a, b, L, 256, 5);
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_THROW(w2_upper_bound(a, b, -1.0, 256, 5), std::invalid_argument);
  EXPECT_THROW(w2_upper_bound(a, b, 1.0, 255, 5), std::invalid_argument);
}

TEST(W2Bound, BoundsTheTrueDistanceForConstantShifts) {
  // Flows of constant fields translate the noise, so W2 equals |c_a - c_b|.
  const ConstantField a({0.7, 0.0}), b({0.0, -0.2});
  const double bound = w2_upper_bound(a, b, 0.0, 512, 9);
  Rng ra(1), rb(1);
  const auto xa = generate(a, 256, 10, Integrator::euler, ra).samples;
  const auto xb = generate(b, 256, 10, Integrator::euler, rb).samples;
  const double w2 = empirical_w2(xa, xb);
  EXPECT_LE(w2 * w2, bound + 1e-12);
}

TEST(Diversity, IdenticalSamples) {
  PointBatch s(2, std::vector<double>{1.0, 1.0, 1.0, 1.0, 1.0, 1.0});
  PointBatch centers(2, std::vector<double>{1.0, 1.0, -1.0, -1.0});
  const auto r = diversity_report(s, centers);
  EXPECT_EQ(r.mean_pairwise_distance, 0.0);
  EXPECT_EQ(r.mode_entropy, 0.0);
  EXPECT_EQ(r.top_mode_share, 1.0);
  EXPECT_EQ(r.mode_histogram, (std::vector<std::size_t>{3, 0}));
}

TEST(Diversity, EvenSplitAcrossTwoModes) {
  const std::size_t n = 400;
  PointBatch s(1);
  for (std::size_t i = 0; i < n; ++i) s.push_back(std::vector<double>{i % 2 ? 4.0 : 0.0});
  const auto r = diversity_report(s, line({0.0, 4.0}));
  EXPECT_DOUBLE_EQ(r.mode_entropy, 1.0);
  const double exact = 4.0 * (n * n / 4.0) / (n * (n - 1) / 2.0);
  EXPECT_NEAR(r.mean_pairwise_distance, exact, 1e-12);
  EXPECT_NEAR(r.mean_pairwise_distance, 2.0, 0.01);
}

TEST(Diversity, SingleSampleAndEntropyRange) {
  const auto r = diversity_report(line({0.3}), line({0.0, 1.0}));
  EXPECT_EQ(r.mean_pairwise_distance, 0.0);
  Rng rng(8);
  PointBatch centers(2, std::vector<double>{0, 0, 4, 0, 0, 4, -4, 0});
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = rng.normal_batch(2, 1 + rng.index(60));
    const auto d = diversity_report(shifted(s, std::vector<double>{2.0 * rng.normal(), 2.0 * rng.normal()}), centers);
    EXPECT_GE(d.mode_entropy, 0.0);
    EXPECT_LE(d.mode_entropy, 2.0 + 1e-12);
  }
  EXPECT_THROW(diversity_report(PointBatch(1), line({0.0})), std::invalid_argument);
  EXPECT_THROW(diversity_report(line({0.0}), PointBatch(1)), std::invalid_argument);
}
