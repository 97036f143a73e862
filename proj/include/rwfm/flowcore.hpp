#pragma once

// Straight-line conditional paths, the CFM objective, fixed-step ODE sampling
// and the exact-divergence log-likelihood.

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwfm/core.hpp"
#include "rwfm/nnfield.hpp"

namespace rwfm {

// x_t = (1 - t) x0 + t x1, u_t = x1 - x0.
struct PathSample {
  double t = 0.0;
  std::vector<double> x0;
  std::vector<double> x1;
  std::vector<double> xt;
  std::vector<double> ut;
};

inline PathSample sample_path(std::span<const double> x0, std::span<const double> x1, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("sample_path: t must lie in [0, 1]");
  if (x0.size() != x1.size()) throw std::invalid_argument("sample_path: dimension mismatch");
  PathSample s;
  s.t = t;
  s.x0.assign(x0.begin(), x0.end());
  s.x1.assign(x1.begin(), x1.end());
  s.xt.resize(x0.size());
  s.ut.resize(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    s.xt[i] = (1.0 - t) * x0[i] + t * x1[i];
    s.ut[i] = x1[i] - x0[i];
  }
  return s;
}

// Draws one (x0, t) per data point: x0 ~ N(0, I) then t ~ U[0, 1).
inline std::vector<PathSample> draw_paths(const PointBatch& x1, Rng& rng) {
  std::vector<PathSample> out;
  out.reserve(x1.size());
  std::vector<double> x0(x1.dim());
  for (std::size_t i = 0; i < x1.size(); ++i) {
    for (double& v : x0) v = rng.normal();
    const double t = rng.uniform();
    out.push_back(sample_path(x0, x1[i], t));
  }
  return out;
}

// Weighted regression of v(t, x_t) onto u_t; loss = mean_i w_i |v - u_t|^2.
inline ResidualBatch weighted_path_residuals(const std::vector<PathSample>& paths, std::span<const double> weights) {
  if (weights.size() != paths.size()) throw std::invalid_argument("weighted_path_residuals: weight count mismatch");
  ResidualBatch batch;
  batch.normalizer = static_cast<double>(paths.size());
  batch.terms.reserve(paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i)
    batch.terms.push_back({paths[i].t, paths[i].xt, paths[i].ut, weights[i]});
  return batch;
}

inline ResidualBatch cfm_loss_batch(const std::vector<PathSample>& paths) {
  if (paths.empty()) throw std::invalid_argument("cfm_loss_batch: empty batch");
  const std::vector<double> ones(paths.size(), 1.0);
  return weighted_path_residuals(paths, ones);
}

inline ResidualBatch cfm_loss_batch(const PointBatch& x1, Rng& rng) {
  if (x1.empty()) throw std::invalid_argument("cfm_loss_batch: empty batch");
  return cfm_loss_batch(draw_paths(x1, rng));
}

struct PretrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
  std::size_t steps = 0;
};

// Minimizes the CFM loss on `dataset`. One epoch is one pass over a fresh
// permutation of the dataset in minibatches of `batch_size`.
inline PretrainResult pretrain(VectorField& field, const PointBatch& dataset, const PretrainConfig& cfg,
                               OptimizerState& opt) {
  if (dataset.empty()) throw std::invalid_argument("pretrain: empty dataset");
  if (dataset.dim() != field.dim()) throw std::invalid_argument("pretrain: dataset dimension mismatch");
  if (cfg.batch_size == 0) throw std::invalid_argument("pretrain: batch_size must be >= 1");
  PretrainResult result;
  Rng rng(derive_seed(cfg.seed, 0x9e7a1));
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - first);
      PointBatch x1(dataset.dim());
      for (std::size_t k = 0; k < count; ++k) x1.push_back(dataset[order[first + k]]);
      const auto lg = loss_gradient(field, cfm_loss_batch(x1, rng));
      apply_update(field, lg.gradient, opt);
      total += lg.loss;
      ++batches;
      ++result.steps;
    }
    const double mean = total / static_cast<double>(batches);
    if (!std::isfinite(mean)) throw NonFiniteError("pretrain: non-finite loss in epoch " + std::to_string(e));
    result.epoch_loss.push_back(mean);
  }
  return result;
}

enum class Integrator { euler, rk4 };

inline std::string to_string(Integrator i) { return i == Integrator::euler ? "euler" : "rk4"; }

inline Integrator parse_integrator(const std::string& s) {
  if (s == "euler") return Integrator::euler;
  if (s == "rk4") return Integrator::rk4;
  throw std::invalid_argument("unknown integrator '" + s + "'");
}

struct SampleRun {
  Integrator integrator = Integrator::euler;
  std::size_t steps = 1;
  PointBatch samples;
  std::vector<PointBatch> trajectory;  // states at t = k / steps, k = 0..steps (when requested)
};

namespace detail {

// One fixed step of size h from time t; `h` may be negative.
template <VelocityField F>
void ode_step(const F& field, Integrator integrator, double t, double h, std::span<double> x, std::vector<double>& k1,
              std::vector<double>& k2, std::vector<double>& k3, std::vector<double>& k4, std::vector<double>& tmp) {
  const std::size_t d = x.size();
  field.eval(t, x, k1);
  if (integrator == Integrator::euler) {
    for (std::size_t i = 0; i < d; ++i) x[i] += h * k1[i];
    return;
  }
  for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
  field.eval(t + 0.5 * h, tmp, k2);
  for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
  field.eval(t + 0.5 * h, tmp, k3);
  for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + h * k3[i];
  field.eval(t + h, tmp, k4);
  for (std::size_t i = 0; i < d; ++i) x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

}  // namespace detail

// Pushes the given initial states from t = 0 to t = 1 with step 1 / steps.
template <VelocityField F>
SampleRun integrate(const F& field, PointBatch x0, std::size_t steps, Integrator integrator,
                    bool keep_trajectory = false) {
  if (steps == 0) throw std::invalid_argument("generate: steps must be >= 1");
  if (x0.dim() != field.dim()) throw std::invalid_argument("generate: dimension mismatch");
  SampleRun run;
  run.integrator = integrator;
  run.steps = steps;
  const std::size_t d = field.dim();
  const double h = 1.0 / static_cast<double>(steps);
  std::vector<double> k1(d), k2(d), k3(d), k4(d), tmp(d);
  if (keep_trajectory) run.trajectory.push_back(x0);
  for (std::size_t s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(steps);
    for (std::size_t i = 0; i < x0.size(); ++i) {
      auto x = x0[i];
      detail::ode_step(field, integrator, t, h, x, k1, k2, k3, k4, tmp);
      if (!all_finite(x))
        throw NonFiniteError("generate: non-finite state at step " + std::to_string(s) + ", sample " +
                             std::to_string(i));
    }
    if (keep_trajectory) run.trajectory.push_back(x0);
  }
  run.samples = std::move(x0);
  return run;
}

// Draws n standard-normal initial states from `rng` and integrates them.
template <VelocityField F>
SampleRun generate(const F& field, std::size_t n, std::size_t steps, Integrator integrator, Rng& rng,
                   bool keep_trajectory = false) {
  if (n == 0) throw std::invalid_argument("generate: n must be >= 1");
  return integrate(field, rng.normal_batch(field.dim(), n), steps, integrator, keep_trajectory);
}

inline double standard_normal_log_density(std::span<const double> x) {
  const double d = static_cast<double>(x.size());
  return -0.5 * squared_norm(x) - 0.5 * d * std::log(2.0 * std::numbers::pi);
}

// log p_1(x1) = log p_0(x0) - int_0^1 div v(t, x_t) dt, with the trajectory
// integrated backward from x1 by RK4 on the augmented state (x, accumulated
// divergence). The divergence is exact, so dimensions above 3 are refused.
template <DivergenceField F>
double log_likelihood(const F& field, std::span<const double> x1, std::size_t steps = 200) {
  const std::size_t d = field.dim();
  if (d > 3) throw std::invalid_argument("log_likelihood: exact divergence is limited to dimension <= 3");
  if (x1.size() != d) throw std::invalid_argument("log_likelihood: dimension mismatch");
  if (steps == 0) throw std::invalid_argument("log_likelihood: steps must be >= 1");

  std::vector<double> x(x1.begin(), x1.end()), tmp(d), k1(d), k2(d), k3(d), k4(d);
  const double h = -1.0 / static_cast<double>(steps);
  double div_integral = 0.0;  // int_0^1 div dt, accumulated backward
  for (std::size_t s = 0; s < steps; ++s) {
    const double t = 1.0 - static_cast<double>(s) / static_cast<double>(steps);
    field.eval(t, x, k1);
    const double d1 = field.divergence(t, x);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
    field.eval(t + 0.5 * h, tmp, k2);
    const double d2 = field.divergence(t + 0.5 * h, tmp);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
    field.eval(t + 0.5 * h, tmp, k3);
    const double d3 = field.divergence(t + 0.5 * h, tmp);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + h * k3[i];
    field.eval(t + h, tmp, k4);
    const double d4 = field.divergence(t + h, tmp);
    for (std::size_t i = 0; i < d; ++i) x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    div_integral += (-h) / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
    if (!all_finite(x) || !std::isfinite(div_integral))
      throw NonFiniteError("log_likelihood: non-finite state at step " + std::to_string(s));
  }
  return standard_normal_log_density(x) - div_integral;
}

}  // namespace rwfm
