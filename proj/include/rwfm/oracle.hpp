#pragma once

// Exact evolution of categorical data distributions under reward-weighted
// flow matching (offline, online, W2-regularized, exponential and Boltzmann
// weights, and the KL-regularized policy update). All products are evaluated
// in log space with max-subtraction before normalizing.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwfm/core.hpp"
#include "rwfm/datasets.hpp"

namespace rwfm::oracle {

inline constexpr double kSimplexTolerance = 1e-12;

// Categorical distribution over labeled support points.
struct GridDistribution {
  PointBatch support;  // may be empty when only labels matter
  std::vector<double> probabilities;

  std::size_t size() const { return probabilities.size(); }

  static GridDistribution uniform(std::size_t n) {
    if (n == 0) throw std::invalid_argument("GridDistribution: empty support");
    std::vector<double> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<double>(i);
    return {PointBatch(1, std::move(labels)), std::vector<double>(n, 1.0 / static_cast<double>(n))};
  }

  void validate() const {
    if (probabilities.empty()) throw std::invalid_argument("GridDistribution: empty support");
    if (!support.empty() && support.size() != probabilities.size())
      throw std::invalid_argument("GridDistribution: support and probabilities differ in length");
    double s = 0.0;
    for (double p : probabilities) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("GridDistribution: invalid probability");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("GridDistribution: probabilities do not sum to 1");
  }
};

// D^{n-1}(x1) for n = 1..N: epochs x support points, all >= 0.
struct DivergenceProfile {
  std::vector<std::vector<double>> per_epoch;

  std::size_t epochs() const { return per_epoch.size(); }

  static DivergenceProfile zeros(std::size_t epochs, std::size_t points) {
    return {std::vector<std::vector<double>>(epochs, std::vector<double>(points, 0.0))};
  }

  void validate(std::size_t points, std::size_t needed_epochs) const {
    if (per_epoch.size() < needed_epochs)
      throw std::invalid_argument("DivergenceProfile: fewer epochs than requested");
    for (std::size_t n = 0; n < needed_epochs; ++n) {
      if (per_epoch[n].size() != points) throw std::invalid_argument("DivergenceProfile: wrong number of points");
      for (double d : per_epoch[n])
        if (!(d >= 0.0) || !std::isfinite(d)) throw std::invalid_argument("DivergenceProfile: entries must be finite and >= 0");
    }
  }
};

namespace detail {

inline double safe_log(double v) { return v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity(); }

inline std::vector<double> log_of(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = safe_log(v[i]);
  return out;
}

// Normalizes unnormalized log-masses into a distribution over `like`'s support.
inline GridDistribution normalize_log(const GridDistribution& like, const std::vector<double>& logm,
                                      const char* who) {
  double best = -std::numeric_limits<double>::infinity();
  for (double v : logm) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw std::domain_error(std::string(who) + ": invalid log-mass");
    best = std::max(best, v);
  }
  if (best == -std::numeric_limits<double>::infinity())
    throw std::domain_error(std::string(who) + ": all effective mass is zero");
  GridDistribution out{like.support, std::vector<double>(logm.size())};
  double total = 0.0;
  for (std::size_t i = 0; i < logm.size(); ++i) {
    out.probabilities[i] = std::exp(logm[i] - best);
    total += out.probabilities[i];
  }
  for (double& p : out.probabilities) p /= total;
  return out;
}

inline void check_weights(const GridDistribution& q, std::span<const double> w) {
  q.validate();
  if (w.size() != q.size()) throw std::invalid_argument("oracle: weight vector length mismatch");
  for (double v : w)
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("oracle: weights must be finite and >= 0");
}

inline void check_rewards(const GridDistribution& q, std::span<const double> r) {
  q.validate();
  if (r.size() != q.size()) throw std::invalid_argument("oracle: reward vector length mismatch");
  if (!all_finite(r)) throw std::invalid_argument("oracle: rewards must be finite");
}

inline std::vector<double> summed_profile(const DivergenceProfile& d, std::size_t points, std::size_t epochs) {
  d.validate(points, epochs);
  std::vector<double> sum(points, 0.0);
  for (std::size_t n = 0; n < epochs; ++n)
    for (std::size_t i = 0; i < points; ++i) sum[i] += d.per_epoch[n][i];
  return sum;
}

}  // namespace detail

// q'_i = w_i q_i / sum_j w_j q_j
inline GridDistribution evolve_offline(const GridDistribution& q, std::span<const double> w) {
  detail::check_weights(q, w);
  std::vector<double> logm(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) logm[i] = detail::safe_log(w[i]) + detail::safe_log(q.probabilities[i]);
  return detail::normalize_log(q, logm, "evolve_offline");
}

// q^N_i = w_i^N q_i / Z_N
inline GridDistribution evolve_online(const GridDistribution& q, std::span<const double> w, std::size_t N) {
  detail::check_weights(q, w);
  std::vector<double> logm(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double lw = N == 0 ? 0.0 : static_cast<double>(N) * detail::safe_log(w[i]);
    logm[i] = lw + detail::safe_log(q.probabilities[i]);
  }
  return detail::normalize_log(q, logm, "evolve_online");
}

// log Z_N = log sum_i w_i^N q_i
inline double log_normalizer(const GridDistribution& q, std::span<const double> w, std::size_t N) {
  detail::check_weights(q, w);
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> logm(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    logm[i] = static_cast<double>(N) * detail::safe_log(w[i]) + detail::safe_log(q.probabilities[i]);
    best = std::max(best, logm[i]);
  }
  if (best == -std::numeric_limits<double>::infinity()) throw std::domain_error("log_normalizer: zero mass");
  double s = 0.0;
  for (double v : logm) s += std::exp(v - best);
  return best + std::log(s);
}

// 1 - q^N(x*) for the unique maximizer x* of w, computed as the mass on all
// other points so it stays accurate when tiny.
inline double delta_gap(const GridDistribution& q, std::span<const double> w, std::size_t N) {
  detail::check_weights(q, w);
  const auto it = std::max_element(w.begin(), w.end());
  const auto star = static_cast<std::size_t>(it - w.begin());
  if (std::count(w.begin(), w.end(), *it) > 1)
    throw std::invalid_argument("delta_gap: weight maximizer is not unique");
  const auto qn = evolve_online(q, w, N);
  double gap = 0.0;
  for (std::size_t i = 0; i < qn.size(); ++i)
    if (i != star) gap += qn.probabilities[i];
  return gap;
}

// Recursion q^n ∝ w q^{n-1} exp(-beta D^{n-1}), n = 1..N.
inline GridDistribution evolve_regularized(const GridDistribution& q, std::span<const double> w,
                                           const DivergenceProfile& D, double beta, std::size_t N) {
  detail::check_weights(q, w);
  if (!(beta >= 0.0)) throw std::invalid_argument("evolve_regularized: beta must be >= 0");
  D.validate(q.size(), N);
  GridDistribution cur = q;
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<double> logm(q.size());
    for (std::size_t i = 0; i < q.size(); ++i)
      logm[i] = detail::safe_log(w[i]) + detail::safe_log(cur.probabilities[i]) - beta * D.per_epoch[n][i];
    cur = detail::normalize_log(q, logm, "evolve_regularized");
  }
  return cur;
}

// Closed form q^N ∝ w^N q exp(-beta sum_n D^{n-1}).
inline GridDistribution evolve_regularized_closed_form(const GridDistribution& q, std::span<const double> w,
                                                       const DivergenceProfile& D, double beta, std::size_t N) {
  detail::check_weights(q, w);
  if (!(beta >= 0.0)) throw std::invalid_argument("evolve_regularized: beta must be >= 0");
  const auto dsum = detail::summed_profile(D, q.size(), N);
  std::vector<double> logm(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double lw = N == 0 ? 0.0 : static_cast<double>(N) * detail::safe_log(w[i]);
    logm[i] = lw + detail::safe_log(q.probabilities[i]) - beta * dsum[i];
  }
  return detail::normalize_log(q, logm, "evolve_regularized_closed_form");
}

// Exponential weights w = exp(tau r): q^N ∝ exp(tau N r - beta sum D) q.
inline GridDistribution evolve_exp(const GridDistribution& q, std::span<const double> r, double tau, double beta,
                                   const DivergenceProfile& D, std::size_t N) {
  detail::check_rewards(q, r);
  if (!(beta >= 0.0)) throw std::invalid_argument("evolve_exp: beta must be >= 0");
  const auto dsum = detail::summed_profile(D, q.size(), N);
  std::vector<double> logm(q.size());
  for (std::size_t i = 0; i < q.size(); ++i)
    logm[i] = tau * static_cast<double>(N) * r[i] - beta * dsum[i] + detail::safe_log(q.probabilities[i]);
  return detail::normalize_log(q, logm, "evolve_exp");
}

// Boltzmann weights w = exp(tau r) / Z with Z summed over the support:
// q^N ∝ (exp(tau r) / Z)^N q exp(-beta sum D).
inline GridDistribution evolve_boltzmann(const GridDistribution& q, std::span<const double> r, double tau,
                                         double beta, const DivergenceProfile& D, std::size_t N) {
  detail::check_rewards(q, r);
  if (!(beta >= 0.0)) throw std::invalid_argument("evolve_boltzmann: beta must be >= 0");
  const auto dsum = detail::summed_profile(D, q.size(), N);
  double best = -std::numeric_limits<double>::infinity();
  for (double v : r) best = std::max(best, tau * v);
  double z = 0.0;
  for (double v : r) z += std::exp(tau * v - best);
  const double log_z = best + std::log(z);
  std::vector<double> logm(q.size());
  for (std::size_t i = 0; i < q.size(); ++i)
    logm[i] = static_cast<double>(N) * (tau * r[i] - log_z) + detail::safe_log(q.probabilities[i]) - beta * dsum[i];
  return detail::normalize_log(q, logm, "evolve_boltzmann");
}

// argmax_q E_q[r - beta D] - (1/lambda) KL(q || q_prev):
// q ∝ q_prev exp(lambda r - lambda beta D).
inline GridDistribution kl_policy_update(const GridDistribution& q_prev, std::span<const double> r, double lambda,
                                         double beta, std::span<const double> D) {
  detail::check_rewards(q_prev, r);
  if (!(lambda > 0.0)) throw std::invalid_argument("kl_policy_update: lambda must be > 0");
  if (D.size() != q_prev.size()) throw std::invalid_argument("kl_policy_update: divergence length mismatch");
  std::vector<double> logm(q_prev.size());
  for (std::size_t i = 0; i < q_prev.size(); ++i)
    logm[i] = detail::safe_log(q_prev.probabilities[i]) + lambda * r[i] - lambda * beta * D[i];
  return detail::normalize_log(q_prev, logm, "kl_policy_update");
}

inline double kl_divergence(const GridDistribution& p, const GridDistribution& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p.probabilities[i];
    if (pi == 0.0) continue;
    if (q.probabilities[i] == 0.0)
      throw std::domain_error("kl_divergence: candidate puts mass outside the reference support");
    kl += pi * (std::log(pi) - std::log(q.probabilities[i]));
  }
  return kl;
}

// E_q[r - beta D] - (1/lambda) KL(q || q_prev)
inline double kl_objective_value(const GridDistribution& q, const GridDistribution& q_prev, std::span<const double> r,
                                 double lambda, double beta, std::span<const double> D) {
  if (!(lambda > 0.0)) throw std::invalid_argument("kl_objective_value: lambda must be > 0");
  if (q.size() != q_prev.size() || r.size() != q.size() || D.size() != q.size())
    throw std::invalid_argument("kl_objective_value: size mismatch");
  const double kl = kl_divergence(q, q_prev);
  double expected = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) expected += q.probabilities[i] * (r[i] - beta * D[i]);
  return expected - kl / lambda;
}

inline double max_abs_difference(const GridDistribution& a, const GridDistribution& b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_difference: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.probabilities[i] - b.probabilities[i]));
  return m;
}

inline double total_variation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

// Finds beta minimizing the total-variation distance between the regularized
// prediction and an observed distribution, by golden-section search on
// log10(beta) over [log_lo, log_hi]. Returns {beta, tv}.
inline std::pair<double, double> fit_beta(const GridDistribution& q, std::span<const double> w,
                                          const DivergenceProfile& D, std::size_t N,
                                          std::span<const double> observed, double log_lo = -4.0,
                                          double log_hi = 4.0) {
  auto tv_at = [&](double lb) {
    return total_variation(evolve_regularized_closed_form(q, w, D, std::pow(10.0, lb), N).probabilities, observed);
  };
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = log_lo, b = log_hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = tv_at(c), fd = tv_at(d);
  for (int it = 0; it < 80; ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = tv_at(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = tv_at(d);
    }
  }
  const double lb = 0.5 * (a + b);
  const double beta0_tv = total_variation(evolve_regularized_closed_form(q, w, D, 0.0, N).probabilities, observed);
  const double best_tv = tv_at(lb);
  if (beta0_tv <= best_tv) return {0.0, beta0_tv};
  return {std::pow(10.0, lb), best_tv};
}

// Distribution files use the point-file format with the probability as an
// extra last column: "x_1 ... x_d p".
inline void write_distribution(std::ostream& os, const GridDistribution& q) {
  q.validate();
  os << "# rwfm distribution v1: support coordinates then probability\n";
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!q.support.empty())
      for (double c : q.support[i]) os << format_fixed(c) << ' ';
    os << format_fixed(q.probabilities[i]) << '\n';
  }
}

inline GridDistribution read_distribution(std::istream& is) {
  const auto rows = read_points(is);
  GridDistribution q;
  const std::size_t d = rows.dim() - 1;
  if (d > 0) q.support = PointBatch(d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (d > 0) q.support.push_back(rows[i].first(d));
    q.probabilities.push_back(rows[i][d]);
  }
  q.validate();
  return q;
}

inline void save_distribution(const std::filesystem::path& path, const GridDistribution& q) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_distribution(os, q);
}

inline GridDistribution load_distribution(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return read_distribution(is);
}

}  // namespace rwfm::oracle
