#pragma once

// Distribution distances, diversity scores and the Monte-Carlo estimate of
// the flow-matching Wasserstein-2 upper bound.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rwfm/assignment.hpp"
#include "rwfm/core.hpp"
#include "rwfm/flowcore.hpp"
#include "rwfm/nnfield.hpp"

namespace rwfm {

inline constexpr std::size_t kMaxAssignmentSize = 512;

namespace detail {

// Exact W2^2 between two 1D empirical measures of any sizes, by integrating
// the squared difference of the quantile functions.
inline double w2_squared_1d(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / na;
  }
  std::size_t i = 0, j = 0;
  double u = 0.0, s = 0.0;
  while (i < a.size() && j < b.size()) {
    const double next_a = static_cast<double>(i + 1) / na;
    const double next_b = static_cast<double>(j + 1) / nb;
    const double next = std::min(next_a, next_b);
    s += (next - u) * (a[i] - b[j]) * (a[i] - b[j]);
    u = next;
    if (next_a <= next) ++i;
    if (next_b <= next) ++j;
  }
  return s;
}

}  // namespace detail

// Exact W2 between the empirical measures of two sample sets. 1D inputs use
// the sorted (quantile) coupling and accept any sizes; higher dimensions solve
// the assignment problem and need equal sizes of at most 512.
inline double empirical_w2(const PointBatch& a, const PointBatch& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("empirical_w2: empty sample set");
  if (a.dim() != b.dim()) throw std::invalid_argument("empirical_w2: dimension mismatch");
  if (a.dim() == 1) return std::sqrt(detail::w2_squared_1d(a.data(), b.data()));
  if (a.size() != b.size()) throw std::invalid_argument("empirical_w2: sample counts differ");
  if (a.size() > kMaxAssignmentSize) throw std::invalid_argument("empirical_w2: more than 512 samples");
  const std::size_t n = a.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = squared_distance(a[i], b[j]);
  const auto match = solve_assignment(cost, n);
  // Summed in sorted order so that swapping a and b gives the same bits.
  std::vector<double> matched(n);
  for (std::size_t i = 0; i < n; ++i) matched[i] = cost[i * n + match[i]];
  std::sort(matched.begin(), matched.end());
  double total = 0.0;
  for (double c : matched) total += c;
  return std::sqrt(total / static_cast<double>(n));
}

// Closed-form W2 between Gaussians with diagonal covariances given as full
// dim x dim row-major matrices.
inline double gaussian_w2(std::span<const double> mean_a, std::span<const double> cov_a,
                          std::span<const double> mean_b, std::span<const double> cov_b) {
  const std::size_t d = mean_a.size();
  if (mean_b.size() != d || cov_a.size() != d * d || cov_b.size() != d * d)
    throw std::invalid_argument("gaussian_w2: shape mismatch");
  double s = squared_distance(mean_a, mean_b);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      if (i == j) continue;
      if (cov_a[i * d + j] != 0.0 || cov_b[i * d + j] != 0.0)
        throw std::invalid_argument("gaussian_w2: only diagonal covariances are supported");
    }
  for (std::size_t i = 0; i < d; ++i) {
    const double va = cov_a[i * d + i], vb = cov_b[i * d + i];
    if (va < 0.0 || vb < 0.0) throw std::invalid_argument("gaussian_w2: negative variance");
    const double diff = std::sqrt(va) - std::sqrt(vb);
    s += diff * diff;
  }
  return std::sqrt(s);
}

struct Box {
  std::vector<double> lower;
  std::vector<double> upper;
};

// Empirical lower estimate of the Lipschitz constant of v(t, .) over `region`.
// Probe k draws t, a pair (x, y) in the box and a random unit direction; the
// estimate is the largest of |v(t,x) - v(t,y)| / |x - y| and the
// finite-difference directional slope at x. Probes come from one seeded
// stream, so more probes never lower the estimate.
template <VelocityField F>
double estimate_lipschitz(const F& field, const Box& region, std::size_t probes, std::uint64_t seed) {
  const std::size_t d = field.dim();
  if (region.lower.size() != d || region.upper.size() != d)
    throw std::invalid_argument("estimate_lipschitz: region dimension mismatch");
  for (std::size_t i = 0; i < d; ++i)
    if (!(region.upper[i] > region.lower[i])) throw std::invalid_argument("estimate_lipschitz: degenerate region");
  if (probes < 100) throw std::invalid_argument("estimate_lipschitz: need at least 100 probes");

  constexpr double fd_step = 1e-6;
  Rng rng(seed);
  std::vector<double> x(d), y(d), dir(d), xp(d), xm(d), vx(d), vy(d), vp(d), vm(d);
  double best = 0.0;
  for (std::size_t k = 0; k < probes; ++k) {
    const double t = rng.uniform();
    for (std::size_t i = 0; i < d; ++i) {
      x[i] = rng.uniform(region.lower[i], region.upper[i]);
      y[i] = rng.uniform(region.lower[i], region.upper[i]);
    }
    double norm = 0.0;
    do {
      for (double& v : dir) v = rng.normal();
      norm = std::sqrt(squared_norm(dir));
    } while (norm == 0.0);
    for (double& v : dir) v /= norm;

    const double dist = std::sqrt(squared_distance(x, y));
    if (dist > 0.0) {
      field.eval(t, x, vx);
      field.eval(t, y, vy);
      best = std::max(best, std::sqrt(squared_distance(vx, vy)) / dist);
    }
    for (std::size_t i = 0; i < d; ++i) {
      xp[i] = x[i] + fd_step * dir[i];
      xm[i] = x[i] - fd_step * dir[i];
    }
    field.eval(t, xp, vp);
    field.eval(t, xm, vm);
    best = std::max(best, std::sqrt(squared_distance(vp, vm)) / (2.0 * fd_step));
  }
  return best;
}

// Monte-Carlo estimate of int_0^1 E_{x ~ p_t^a} |v_a(t,x) - v_b(t,x)|^2 dt:
// t ~ U[0,1], x1 taken from `x1_from_a` (samples of model a), x0 ~ N(0, I),
// x = (1 - t) x0 + t x1.
template <VelocityField FA, VelocityField FB>
double mc_w2_integrand(const FA& field_a, const FB& field_b, const PointBatch& x1_from_a, Rng& rng) {
  if (field_a.dim() != field_b.dim() || x1_from_a.dim() != field_a.dim())
    throw std::invalid_argument("mc_w2_integrand: dimension mismatch");
  if (x1_from_a.empty()) throw std::invalid_argument("mc_w2_integrand: no samples");
  const auto paths = draw_paths(x1_from_a, rng);
  std::vector<double> va(field_a.dim()), vb(field_a.dim());
  double total = 0.0;
  for (const auto& p : paths) {
    field_a.eval(p.t, p.xt, va);
    field_b.eval(p.t, p.xt, vb);
    total += squared_distance(va, vb);
  }
  return total / static_cast<double>(paths.size());
}

struct W2BoundOptions {
  std::size_t sample_steps = 100;
  Integrator integrator = Integrator::euler;
};

// e^{2L} times the Monte-Carlo integrand, with x1 generated from field_a.
template <VelocityField FA, VelocityField FB>
double w2_upper_bound(const FA& field_a, const FB& field_b, double L, std::size_t mc_points, std::uint64_t seed,
                      const W2BoundOptions& options = {}) {
  if (!(L >= 0.0)) throw std::invalid_argument("w2_upper_bound: L must be >= 0");
  if (mc_points < 256) throw std::invalid_argument("w2_upper_bound: need at least 256 Monte-Carlo points");
  Rng rng(seed);
  const auto x1 = generate(field_a, mc_points, options.sample_steps, options.integrator, rng).samples;
  return std::exp(2.0 * L) * mc_w2_integrand(field_a, field_b, x1, rng);
}

struct DiversityReport {
  double mean_pairwise_distance = 0.0;
  std::vector<std::size_t> mode_histogram;
  double mode_entropy = 0.0;  // bits
  double top_mode_share = 0.0;

  std::vector<double> mode_distribution() const {
    std::vector<double> p(mode_histogram.size(), 0.0);
    std::size_t total = 0;
    for (auto c : mode_histogram) total += c;
    if (total == 0) return p;
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = static_cast<double>(mode_histogram[k]) / static_cast<double>(total);
    return p;
  }
};

inline double mean_pairwise_distance(const PointBatch& samples) {
  const std::size_t n = samples.size();
  if (n < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) total += std::sqrt(squared_distance(samples[i], samples[j]));
  return total / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

inline std::vector<std::size_t> mode_histogram(const PointBatch& samples, const PointBatch& mode_centers) {
  if (mode_centers.empty()) throw std::invalid_argument("mode_histogram: no mode centers");
  if (mode_centers.dim() != samples.dim()) throw std::invalid_argument("mode_histogram: dimension mismatch");
  std::vector<std::size_t> hist(mode_centers.size(), 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < mode_centers.size(); ++k) {
      const double dd = squared_distance(samples[i], mode_centers[k]);
      if (dd < best_d) {
        best_d = dd;
        best = k;
      }
    }
    ++hist[best];
  }
  return hist;
}

inline double entropy_bits(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log2(v);
  return std::max(h, 0.0);
}

inline DiversityReport diversity_report(const PointBatch& samples, const PointBatch& mode_centers) {
  if (samples.empty()) throw std::invalid_argument("diversity_report: no samples");
  DiversityReport r;
  r.mean_pairwise_distance = mean_pairwise_distance(samples);
  r.mode_histogram = mode_histogram(samples, mode_centers);
  const auto p = r.mode_distribution();
  r.mode_entropy = entropy_bits(p);
  r.top_mode_share = *std::max_element(p.begin(), p.end());
  return r;
}

}  // namespace rwfm
