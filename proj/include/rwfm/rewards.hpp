#pragma once

// Reward functions r(x1) on generated samples and the weighting functions
// w = F(tau * r) that turn rewards into non-negative training weights.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rwfm/core.hpp"

namespace rwfm {

enum class RewardKind { mode_parity, target_point, norm_compress, custom_table };

inline std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::mode_parity: return "mode_parity";
    case RewardKind::target_point: return "target_point";
    case RewardKind::norm_compress: return "norm_compress";
    case RewardKind::custom_table: return "custom_table";
  }
  return "?";
}

inline RewardKind parse_reward_kind(const std::string& s) {
  if (s == "mode_parity") return RewardKind::mode_parity;
  if (s == "target_point") return RewardKind::target_point;
  if (s == "norm_compress") return RewardKind::norm_compress;
  if (s == "custom_table") return RewardKind::custom_table;
  throw std::invalid_argument("unknown reward kind '" + s + "'");
}

struct RewardSpec {
  RewardKind kind = RewardKind::norm_compress;

  // mode_parity: labels are +1 (even) or -1 (odd), one per center.
  PointBatch centers;
  std::vector<int> parity;

  // target_point: r = -|x - target|^2 / scale
  std::vector<double> target;
  double scale = 1.0;

  // custom_table: exact-match lookup
  std::vector<std::pair<std::vector<double>, double>> table;
  double table_tolerance = 1e-9;

  // Flips the sign of the reward (e.g. "odd instead of even").
  bool negate = false;

  static RewardSpec mode_parity(PointBatch centers, std::vector<int> parity) {
    if (centers.empty() || centers.size() != parity.size())
      throw std::invalid_argument("mode_parity: need one parity label per center");
    for (int p : parity)
      if (p != 1 && p != -1) throw std::invalid_argument("mode_parity: parity labels must be +1 or -1");
    RewardSpec s;
    s.kind = RewardKind::mode_parity;
    s.centers = std::move(centers);
    s.parity = std::move(parity);
    return s;
  }

  static RewardSpec target_point(std::vector<double> c, double scale) {
    if (c.empty()) throw std::invalid_argument("target_point: empty center");
    if (!(scale > 0.0)) throw std::invalid_argument("target_point: scale must be positive");
    RewardSpec s;
    s.kind = RewardKind::target_point;
    s.target = std::move(c);
    s.scale = scale;
    return s;
  }

  static RewardSpec norm_compress() { return RewardSpec{}; }

  static RewardSpec custom_table(std::vector<std::pair<std::vector<double>, double>> table) {
    if (table.empty()) throw std::invalid_argument("custom_table: empty table");
    RewardSpec s;
    s.kind = RewardKind::custom_table;
    s.table = std::move(table);
    return s;
  }

  // Dimension this reward expects, or 0 when any dimension is accepted.
  std::size_t dim() const {
    switch (kind) {
      case RewardKind::mode_parity: return centers.dim();
      case RewardKind::target_point: return target.size();
      case RewardKind::custom_table: return table.front().first.size();
      case RewardKind::norm_compress: return 0;
    }
    return 0;
  }

  double operator()(std::span<const double> x) const {
    const double r = raw(x);
    return negate ? -r : r;
  }

 private:
  double raw(std::span<const double> x) const {
    switch (kind) {
      case RewardKind::norm_compress: return -squared_norm(x);
      case RewardKind::target_point: return -squared_distance(x, target) / scale;
      case RewardKind::mode_parity: {
        // Responsibilities under unit-variance Gaussian kernels.
        double best = -std::numeric_limits<double>::infinity();
        std::vector<double> logk(centers.size());
        for (std::size_t k = 0; k < centers.size(); ++k) {
          logk[k] = -0.5 * squared_distance(x, centers[k]);
          best = std::max(best, logk[k]);
        }
        double even = 0.0, total = 0.0;
        for (std::size_t k = 0; k < centers.size(); ++k) {
          const double e = std::exp(logk[k] - best);
          total += e;
          even += parity[k] * e;
        }
        return even / total;
      }
      case RewardKind::custom_table: {
        for (const auto& [point, value] : table)
          if (point.size() == x.size() && squared_distance(point, x) <= table_tolerance * table_tolerance)
            return value;
        throw std::out_of_range("custom_table: point is not in the reward table");
      }
    }
    return 0.0;
  }
};

inline std::vector<double> reward_eval(const RewardSpec& spec, const PointBatch& x) {
  if (spec.dim() != 0 && spec.dim() != x.dim()) throw std::invalid_argument("reward_eval: dimension mismatch");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = spec(x[i]);
  return out;
}

enum class WeightingKind { exponential, boltzmann, proportional };

inline std::string to_string(WeightingKind k) {
  switch (k) {
    case WeightingKind::exponential: return "exponential";
    case WeightingKind::boltzmann: return "boltzmann";
    case WeightingKind::proportional: return "proportional";
  }
  return "?";
}

inline WeightingKind parse_weighting(const std::string& s) {
  if (s == "exponential") return WeightingKind::exponential;
  if (s == "boltzmann") return WeightingKind::boltzmann;
  if (s == "proportional") return WeightingKind::proportional;
  throw std::invalid_argument("unknown weighting '" + s + "'");
}

struct WeightingSpec {
  WeightingKind kind = WeightingKind::exponential;
  double tau = 1.0;
};

// Largest tau * r accepted by exponential weighting (exp overflows near 709).
inline constexpr double kMaxExponent = 700.0;

// exponential: exp(tau r); boltzmann: softmax(tau r) over the batch;
// proportional: max(r, 0).
inline std::vector<double> weight_batch(const WeightingSpec& spec, std::span<const double> rewards) {
  if (!(spec.tau >= 0.0)) throw std::invalid_argument("weight_batch: tau must be >= 0");
  if (!all_finite(rewards)) throw NonFiniteError("weight_batch: non-finite reward");
  std::vector<double> w(rewards.size());
  switch (spec.kind) {
    case WeightingKind::exponential:
      for (std::size_t i = 0; i < rewards.size(); ++i) {
        const double a = spec.tau * rewards[i];
        if (a > kMaxExponent)
          throw std::overflow_error("weight_batch: tau * r = " + std::to_string(a) + " exceeds " +
                                    std::to_string(kMaxExponent));
        w[i] = std::exp(a);
      }
      break;
    case WeightingKind::boltzmann: {
      if (rewards.empty()) break;
      double best = -std::numeric_limits<double>::infinity();
      for (double r : rewards) best = std::max(best, spec.tau * r);
      double total = 0.0;
      for (std::size_t i = 0; i < rewards.size(); ++i) {
        w[i] = std::exp(spec.tau * rewards[i] - best);
        total += w[i];
      }
      for (double& v : w) v /= total;
      break;
    }
    case WeightingKind::proportional:
      for (std::size_t i = 0; i < rewards.size(); ++i) w[i] = std::max(rewards[i], 0.0);
      break;
  }
  return w;
}

}  // namespace rwfm
