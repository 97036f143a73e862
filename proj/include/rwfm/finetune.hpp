#pragma once

// Reward-weighted fine-tuning of a pretrained flow: offline (RW-CFM), online
// (ORW-CFM), and online with the W2 penalty to a frozen reference
// (ORW-CFM-W2). alpha = 0 drops the penalty; offline mode draws x1 from a
// fixed dataset instead of the model's own samples.

#include <chrono>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwfm/checkpoint.hpp"
#include "rwfm/core.hpp"
#include "rwfm/flowcore.hpp"
#include "rwfm/metrics.hpp"
#include "rwfm/nnfield.hpp"
#include "rwfm/rewards.hpp"

namespace rwfm {

enum class FineTuneMode { offline, online };

inline std::string to_string(FineTuneMode m) { return m == FineTuneMode::offline ? "offline" : "online"; }

inline FineTuneMode parse_mode(const std::string& s) {
  if (s == "offline") return FineTuneMode::offline;
  if (s == "online") return FineTuneMode::online;
  throw std::invalid_argument("unknown fine-tune mode '" + s + "'");
}

struct FineTuneConfig {
  FineTuneMode mode = FineTuneMode::online;
  WeightingSpec weighting{WeightingKind::exponential, 1.0};
  double alpha = 0.0;
  std::size_t epochs = 10;
  std::size_t batches_per_epoch = 4;
  std::size_t batch_size = 256;
  std::size_t sample_steps = 100;
  Integrator integrator = Integrator::euler;
  OptimizerKind optimizer = OptimizerKind::adam;
  double step_size = 1e-3;
  std::uint64_t seed = 0;

  std::size_t eval_samples = 256;
  std::size_t lipschitz_probes = 1000;
  PointBatch mode_centers;  // for the mode histogram; empty -> pairwise distance is the diversity score

  std::size_t checkpoint_every = 0;  // 0 disables
  std::filesystem::path checkpoint_dir;
  std::string run_tag = "run";

  void validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("finetune: alpha must be >= 0");
    if (!(weighting.tau >= 0.0)) throw std::invalid_argument("finetune: tau must be >= 0");
    if (batches_per_epoch == 0 || batch_size == 0) throw std::invalid_argument("finetune: empty batches");
    if (sample_steps == 0) throw std::invalid_argument("finetune: sample_steps must be >= 1");
    if (eval_samples == 0) throw std::invalid_argument("finetune: eval_samples must be >= 1");
    if (!(step_size > 0.0)) throw std::invalid_argument("finetune: step_size must be > 0");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based; 0 is the pre-fine-tuning baseline
  double mean_reward = 0.0;
  double mean_weight = 0.0;
  double w2_penalty = 0.0;       // mean |v_ft - v_ref|^2 over the training draws
  double mc_w2_integrand = 0.0;  // Monte-Carlo integrand to the reference on fresh samples
  double w2_bound = 0.0;         // e^{2 L} * mc_w2_integrand with L estimated on the reference
  double diversity = 0.0;
  double mode_entropy = 0.0;
  double top_mode_share = 0.0;
  double mean_pairwise_distance = 0.0;
  double loss = 0.0;
  std::size_t skipped_batches = 0;
  double wall_time_s = 0.0;
  std::vector<std::size_t> mode_histogram;
};

struct RunRecord {
  double lipschitz_estimate = 0.0;
  EpochRecord baseline;
  std::vector<EpochRecord> epochs;
};

class RunAborted : public std::runtime_error {
 public:
  RunAborted(const std::string& what, RunRecord partial) : std::runtime_error(what), partial_(std::move(partial)) {}
  const RunRecord& partial() const { return partial_; }

 private:
  RunRecord partial_;
};

// Data term: mean_i w_i |v(t_i, x_t,i) - u_t,i|^2.
inline ResidualBatch rw_cfm_loss(const std::vector<PathSample>& paths, std::span<const double> weights) {
  for (double w : weights)
    if (!(w >= 0.0)) throw std::invalid_argument("rw_cfm_loss: weights must be non-negative");
  return weighted_path_residuals(paths, weights);
}

// Penalty term on the same (t, x_t) draws: mean_i |v(t_i, x_i) - v_ref(t_i, x_i)|^2.
// The reference outputs become fixed regression targets.
template <VelocityField Ref>
ResidualBatch w2_penalty(const Ref& ref, std::span<const double> t, const PointBatch& x) {
  if (t.size() != x.size()) throw std::invalid_argument("w2_penalty: t and x batch sizes differ");
  if (x.dim() != ref.dim()) throw std::invalid_argument("w2_penalty: dimension mismatch");
  ResidualBatch batch;
  batch.normalizer = static_cast<double>(x.size());
  std::vector<double> target(ref.dim());
  for (std::size_t i = 0; i < x.size(); ++i) {
    ref.eval(t[i], x[i], target);
    batch.terms.push_back({t[i], std::vector<double>(x[i].begin(), x[i].end()), target, 1.0});
  }
  return batch;
}

template <VelocityField Ref>
ResidualBatch w2_penalty(const Ref& ref, const std::vector<PathSample>& paths) {
  std::vector<double> t;
  PointBatch x(ref.dim());
  for (const auto& p : paths) {
    t.push_back(p.t);
    x.push_back(p.xt);
  }
  return w2_penalty(ref, t, x);
}

// Per-element |v_ft - v_ref|^2.
template <VelocityField F, VelocityField Ref>
std::vector<double> w2_penalty_values(const F& field, const Ref& ref, std::span<const double> t, const PointBatch& x) {
  return w2_penalty(ref, t, x).squared_residuals(field);
}

namespace detail {

enum Stream : std::uint64_t { kTrainStream = 1, kEvalStream = 2, kMetricStream = 3, kLipschitzStream = 4 };

inline std::uint64_t epoch_seed(const FineTuneConfig& cfg, std::size_t epoch, Stream stream) {
  return derive_seed(cfg.seed, epoch, stream);
}

}  // namespace detail

// Metrics of `field` on fresh samples; `epoch` selects the evaluation stream,
// so two runs with the same seed evaluate on the same noise.
inline EpochRecord evaluate_epoch(const VectorField& field, const FrozenField& ref, const RewardSpec& reward,
                                  const FineTuneConfig& cfg, std::size_t epoch, double lipschitz) {
  EpochRecord rec;
  rec.epoch = epoch;
  Rng eval_rng(detail::epoch_seed(cfg, epoch, detail::kEvalStream));
  const auto samples = generate(field, cfg.eval_samples, cfg.sample_steps, cfg.integrator, eval_rng).samples;
  const auto rewards = reward_eval(reward, samples);
  double rs = 0.0;
  for (double r : rewards) rs += r;
  rec.mean_reward = rs / static_cast<double>(rewards.size());
  rec.mean_pairwise_distance = mean_pairwise_distance(samples);
  if (!cfg.mode_centers.empty()) {
    const auto div = diversity_report(samples, cfg.mode_centers);
    rec.mode_histogram = div.mode_histogram;
    rec.mode_entropy = div.mode_entropy;
    rec.top_mode_share = div.top_mode_share;
    rec.diversity = div.mode_entropy;
  } else {
    rec.diversity = rec.mean_pairwise_distance;
  }
  Rng metric_rng(detail::epoch_seed(cfg, epoch, detail::kMetricStream));
  rec.mc_w2_integrand = mc_w2_integrand(field, ref, samples, metric_rng);
  rec.w2_bound = std::exp(2.0 * lipschitz) * rec.mc_w2_integrand;
  return rec;
}

// One epoch: draw batch_size * batches_per_epoch samples x1 (from the model
// snapshot at epoch start when online, from `dataset` when offline), then per
// batch: rewards -> weights -> loss mean[w |v - u|^2] + alpha mean[|v - v_ref|^2]
// on shared (t, x_t) draws -> one optimizer step. `epoch` is 1-based.
inline EpochRecord finetune_epoch(VectorField& field, OptimizerState& opt, const FrozenField& ref,
                                  const RewardSpec& reward, const FineTuneConfig& cfg, std::size_t epoch,
                                  const PointBatch* dataset, double lipschitz) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const std::uint64_t train_seed = detail::epoch_seed(cfg, epoch, detail::kTrainStream);
  Rng rng(train_seed);
  const std::size_t total = cfg.batch_size * cfg.batches_per_epoch;

  PointBatch x1_all;
  if (cfg.mode == FineTuneMode::online) {
    const VectorField snapshot = field;
    x1_all = generate(snapshot, total, cfg.sample_steps, cfg.integrator, rng).samples;
  } else {
    if (dataset == nullptr || dataset->empty()) throw std::invalid_argument("finetune: offline mode needs a dataset");
    if (dataset->dim() != field.dim()) throw std::invalid_argument("finetune: dataset dimension mismatch");
    x1_all = PointBatch(field.dim());
    for (std::size_t i = 0; i < total; ++i) x1_all.push_back((*dataset)[rng.index(dataset->size())]);
  }

  double loss_sum = 0.0, weight_sum = 0.0, penalty_sum = 0.0;
  std::size_t used = 0, skipped = 0;
  for (std::size_t b = 0; b < cfg.batches_per_epoch; ++b) {
    const auto x1 = x1_all.slice(b * cfg.batch_size, cfg.batch_size);
    const auto rewards = reward_eval(reward, x1);
    const auto weights = weight_batch(cfg.weighting, rewards);
    const auto paths = draw_paths(x1, rng);

    double wsum = 0.0;
    for (double w : weights) wsum += w;
    weight_sum += wsum / static_cast<double>(weights.size());
    if (cfg.weighting.kind == WeightingKind::proportional && !(wsum > 0.0)) {
      ++skipped;
      continue;
    }

    auto batch = rw_cfm_loss(paths, weights);
    batch.append(w2_penalty(ref, paths), cfg.alpha);
    LossGradient lg;
    try {
      lg = loss_gradient(field, batch);
      apply_update(field, lg.gradient, opt);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError(std::string(e.what()) + " [epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + ", epoch seed " + std::to_string(train_seed) + "]");
    }
    double pen = 0.0;
    for (std::size_t i = 0; i < paths.size(); ++i) pen += lg.squared_residuals[paths.size() + i];
    penalty_sum += pen / static_cast<double>(paths.size());
    loss_sum += lg.loss;
    ++used;
  }

  EpochRecord rec = evaluate_epoch(field, ref, reward, cfg, epoch, lipschitz);
  rec.mean_weight = weight_sum / static_cast<double>(cfg.batches_per_epoch);
  rec.w2_penalty = used ? penalty_sum / static_cast<double>(used) : 0.0;
  rec.loss = used ? loss_sum / static_cast<double>(used) : 0.0;
  rec.skipped_batches = skipped;
  rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!std::isfinite(rec.loss) || !std::isfinite(rec.mean_reward))
    throw NonFiniteError("finetune: non-finite epoch metrics at epoch " + std::to_string(epoch) + " (epoch seed " +
                         std::to_string(train_seed) + ")");
  return rec;
}

// Lipschitz estimate of the reference over the box spanned by noise and its
// own samples.
inline double reference_lipschitz(const FrozenField& ref, const FineTuneConfig& cfg) {
  Rng rng(detail::epoch_seed(cfg, 0, detail::kLipschitzStream));
  const auto samples = generate(ref, 256, cfg.sample_steps, cfg.integrator, rng).samples;
  Box box{std::vector<double>(ref.dim(), -3.0), std::vector<double>(ref.dim(), 3.0)};
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t k = 0; k < ref.dim(); ++k) {
      box.lower[k] = std::min(box.lower[k], samples[i][k]);
      box.upper[k] = std::max(box.upper[k], samples[i][k]);
    }
  return estimate_lipschitz(ref, box, std::max<std::size_t>(cfg.lipschitz_probes, 100), rng.next_u64());
}

// Stateful driver around finetune_epoch. The reference is a frozen clone of
// the pretrained field.
class FineTuner {
 public:
  FineTuner(const VectorField& pretrained, RewardSpec reward, FineTuneConfig cfg, PointBatch dataset = {})
      : field_(pretrained),
        ref_(clone_frozen(pretrained)),
        reward_(std::move(reward)),
        cfg_(std::move(cfg)),
        dataset_(std::move(dataset)),
        opt_(cfg_.optimizer, cfg_.step_size, pretrained.parameter_count()) {
    cfg_.validate();
    record_.lipschitz_estimate = reference_lipschitz(ref_, cfg_);
    record_.baseline = evaluate_epoch(field_, ref_, reward_, cfg_, 0, record_.lipschitz_estimate);
  }

  const EpochRecord& run_epoch() {
    const std::size_t epoch = record_.epochs.size() + 1;
    record_.epochs.push_back(finetune_epoch(field_, opt_, ref_, reward_, cfg_, epoch,
                                            dataset_.empty() ? nullptr : &dataset_, record_.lipschitz_estimate));
    if (cfg_.checkpoint_every > 0 && !cfg_.checkpoint_dir.empty() && epoch % cfg_.checkpoint_every == 0)
      save_checkpoint(checkpoint_path(epoch), field_);
    return record_.epochs.back();
  }

  std::filesystem::path checkpoint_path(std::size_t epoch) const {
    char name[64];
    std::snprintf(name, sizeof(name), "checkpoint_epoch%04zu_", epoch);
    return cfg_.checkpoint_dir / (std::string(name) + cfg_.run_tag + ".txt");
  }

  const VectorField& field() const { return field_; }
  const FrozenField& reference() const { return ref_; }
  const RunRecord& record() const { return record_; }
  const FineTuneConfig& config() const { return cfg_; }
  const OptimizerState& optimizer() const { return opt_; }

 private:
  VectorField field_;
  FrozenField ref_;
  RewardSpec reward_;
  FineTuneConfig cfg_;
  PointBatch dataset_;
  OptimizerState opt_;
  RunRecord record_;
};

struct FineTuneResult {
  VectorField field;
  RunRecord record;
};

// Runs cfg.epochs epochs from `pretrained`. On failure throws RunAborted
// carrying the epochs completed so far.
inline FineTuneResult finetune_run(const VectorField& pretrained, const RewardSpec& reward, const FineTuneConfig& cfg,
                                   const PointBatch& dataset = {}) {
  if (cfg.epochs == 0) return {pretrained, RunRecord{}};
  FineTuner tuner(pretrained, reward, cfg, dataset);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    try {
      tuner.run_epoch();
    } catch (const std::exception& ex) {
      throw RunAborted(ex.what(), tuner.record());
    }
  }
  return {tuner.field(), tuner.record()};
}

}  // namespace rwfm
