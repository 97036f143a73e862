#pragma once

// JSON experiment configs and the run / sweep drivers behind the rwfm tool.
//
// A config is one JSON object; every section is optional except where a task
// needs it:
//
//   {
//     "task": "finetune", "seed": 0, "output_dir": "runs/ft",
//     "data":     {"kind": "ring", "modes": 8, "radius": 4, "spread": 0.3, "count": 4096},
//     "model":    {"hidden": [64, 64], "activation": "tanh", "checkpoint": "pre.txt"},
//     "pretrain": {"epochs": 250, "batch_size": 256, "optimizer": "adam", "step_size": 0.001},
//     "finetune": {"mode": "online", "weighting": "exponential", "tau": 10, "alpha": 0, ...},
//     "reward":   {"kind": "mode_parity"},
//     "sweep":    {"parameter": "alpha", "values": [0, 0.3, 0.8]},
//     "oracle":   {"kind": "online", "q": [0.5, 0.5], "w": [1, 2], "N": 3},
//     "eval":     {"checkpoint": "final.txt", "samples": 512}
//   }
//
// Unknown keys are errors, so typos surface instead of silently falling back
// to defaults. Relative paths are resolved against the config file directory.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rwfm/checkpoint.hpp"
#include "rwfm/datasets.hpp"
#include "rwfm/finetune.hpp"
#include "rwfm/flowcore.hpp"
#include "rwfm/metrics.hpp"
#include "rwfm/nnfield.hpp"
#include "rwfm/oracle.hpp"
#include "rwfm/records.hpp"
#include "rwfm/rewards.hpp"

namespace rwfm::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> issues)
      : std::runtime_error(render(issues)), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  static std::string render(const std::vector<std::string>& issues) {
    std::string s = "invalid config (" + std::to_string(issues.size()) + " problem" +
                    (issues.size() == 1 ? "" : "s") + "):";
    for (const auto& i : issues) s += "\n  " + i;
    return s;
  }
  std::vector<std::string> issues_;
};

enum class Task { pretrain, finetune, sweep, oracle, eval };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::pretrain: return "pretrain";
    case Task::finetune: return "finetune";
    case Task::sweep: return "sweep";
    case Task::oracle: return "oracle";
    case Task::eval: return "eval";
  }
  return "?";
}

inline std::optional<Task> parse_task(const std::string& s) {
  for (Task t : {Task::pretrain, Task::finetune, Task::sweep, Task::oracle, Task::eval})
    if (to_string(t) == s) return t;
  return std::nullopt;
}

struct DataSpec {
  std::string kind = "ring";  // ring | line | file
  std::size_t modes = 8;
  double radius = 4.0;
  double spacing = 4.0;
  double spread = 0.3;
  std::vector<double> weights;
  std::size_t count = 4096;
  fs::path path;

  bool synthetic() const { return kind != "file"; }

  GaussianMixture mixture() const {
    GaussianMixture m = kind == "ring" ? ring_mixture(modes, radius, spread) : line_mixture(modes, spacing, spread);
    if (!weights.empty()) m.weights = weights;
    return m;
  }

  std::size_t dim() const { return kind == "ring" ? 2 : kind == "line" ? 1 : 0; }
};

struct ModelSpec {
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::tanh;
  fs::path checkpoint;  // pretrained field; when empty, fine-tuning pretrains first
};

struct PretrainSpec {
  std::size_t epochs = 250;
  std::size_t batch_size = 256;
  OptimizerKind optimizer = OptimizerKind::adam;
  double step_size = 1e-3;
  std::size_t sample_steps = 100;
  Integrator integrator = Integrator::euler;
  std::size_t eval_samples = 512;
};

struct RewardConfig {
  std::string kind = "mode_parity";
  std::vector<std::vector<double>> centers;  // mode_parity; defaults to the data mixture centers
  std::vector<int> parity;                   // defaults to +1 for even mode index, -1 for odd
  std::vector<double> target;
  double scale = 1.0;
  std::vector<std::vector<double>> table;  // rows of x..., r
  bool negate = false;
};

struct SweepSpec {
  std::string parameter;
  std::vector<double> values;
};

struct OracleSpec {
  std::string kind = "online";  // offline | online | regularized | exp | boltzmann | kl
  std::vector<double> q;
  fs::path q_file;
  std::vector<double> support;
  std::vector<double> w;
  std::vector<double> rewards;
  std::vector<std::vector<double>> divergence;  // epochs x points
  double tau = 1.0;
  double beta = 0.0;
  double lambda = 1.0;
  std::size_t N = 1;
};

struct EvalSpec {
  fs::path checkpoint;
  std::size_t samples = 512;
  std::size_t sample_steps = 100;
  Integrator integrator = Integrator::euler;
  bool log_likelihood = false;
};

struct ExperimentConfig {
  Task task = Task::pretrain;
  std::uint64_t seed = 0;
  fs::path output_dir;
  DataSpec data;
  ModelSpec model;
  PretrainSpec pretrain;
  FineTuneConfig finetune;
  RewardConfig reward;
  SweepSpec sweep;
  OracleSpec oracle;
  EvalSpec eval;
};

namespace detail {

// Typed access to one JSON object that records every problem instead of
// stopping at the first, and flags keys nobody asked for.
class Reader {
 public:
  Reader(const json* obj, std::string prefix, std::vector<std::string>* issues)
      : obj_(obj), prefix_(std::move(prefix)), issues_(issues) {
    if (obj_ && !obj_->is_object()) {
      issue(prefix_.empty() ? "<root>" : prefix_.substr(0, prefix_.size() - 1), "expected an object");
      obj_ = nullptr;
    }
  }

  bool has(const std::string& key) const { return obj_ && obj_->contains(key); }

  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(has(key) ? &obj_->at(key) : nullptr, prefix_ + key + ".", issues_);
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    T out = fallback;
    std::string why;
    if (!convert(obj_->at(key), out, why)) {
      issue(prefix_ + key, why);
      return fallback;
    }
    return out;
  }

  template <class T>
  T require(const std::string& key, T fallback) {
    if (!has(key)) {
      seen_.insert(key);
      issue(prefix_ + key, "required key is missing");
      return fallback;
    }
    return get<T>(key, fallback);
  }

  void issue(const std::string& key, const std::string& why) { issues_->push_back(key + ": " + why); }
  const std::string& prefix() const { return prefix_; }

  void finish() {
    if (!obj_) return;
    for (auto it = obj_->begin(); it != obj_->end(); ++it)
      if (!seen_.count(it.key())) issue(prefix_ + it.key(), "unknown key");
  }

 private:
  static bool convert(const json& v, double& out, std::string& why) {
    if (!v.is_number()) return why = "expected a number", false;
    out = v.get<double>();
    return true;
  }
  static bool convert(const json& v, std::size_t& out, std::string& why) {
    if (v.is_number_unsigned()) return out = v.get<std::size_t>(), true;
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return out = v.get<std::size_t>(), true;
    return why = "expected a non-negative integer", false;
  }
  static bool convert(const json& v, int& out, std::string& why) {
    if (!v.is_number_integer()) return why = "expected an integer", false;
    out = v.get<int>();
    return true;
  }
  static bool convert(const json& v, bool& out, std::string& why) {
    if (!v.is_boolean()) return why = "expected true or false", false;
    out = v.get<bool>();
    return true;
  }
  static bool convert(const json& v, std::string& out, std::string& why) {
    if (!v.is_string()) return why = "expected a string", false;
    out = v.get<std::string>();
    return true;
  }
  static bool convert(const json& v, fs::path& out, std::string& why) {
    std::string s;
    if (!convert(v, s, why)) return false;
    out = s;
    return true;
  }
  template <class T>
  static bool convert(const json& v, std::vector<T>& out, std::string& why) {
    if (!v.is_array()) return why = "expected an array", false;
    std::vector<T> tmp;
    for (const auto& e : v) {
      T x{};
      if (!convert(e, x, why)) return why = "array element: " + why, false;
      tmp.push_back(std::move(x));
    }
    out = std::move(tmp);
    return true;
  }

  const json* obj_;
  std::string prefix_;
  std::vector<std::string>* issues_;
  std::set<std::string> seen_;
};

inline fs::path resolve_path(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return fs::absolute(base / p).lexically_normal();
}

template <class E, class Parse>
E parse_enum(Reader& r, const std::string& key, E fallback, Parse parse, const std::string& current) {
  const auto s = r.get<std::string>(key, current);
  try {
    return parse(s);
  } catch (const std::exception&) {
    r.issue(r.prefix() + key, "unknown value '" + s + "'");
    return fallback;
  }
}

}  // namespace detail

// Parses and validates a config. `forced` is the task named on the command
// line; it must agree with the config's own "task" when both are given.
// Throws ConfigError listing every problem.
inline ExperimentConfig parse_config(const json& root, std::optional<Task> forced, const fs::path& base_dir = {}) {
  std::vector<std::string> issues;
  detail::Reader top(&root, "", &issues);
  ExperimentConfig cfg;

  const auto task_name = top.get<std::string>("task", forced ? to_string(*forced) : std::string());
  if (task_name.empty()) {
    issues.push_back("task: required key is missing");
  } else if (auto t = parse_task(task_name)) {
    cfg.task = *t;
    if (forced && *forced != *t)
      issues.push_back("task: config says '" + task_name + "' but the command is '" + to_string(*forced) + "'");
  } else {
    issues.push_back("task: unknown value '" + task_name + "'");
  }
  if (forced) cfg.task = *forced;
  cfg.seed = top.get<std::size_t>("seed", 0);
  cfg.output_dir = detail::resolve_path(top.get<fs::path>("output_dir", {}), base_dir);

  const bool trains = cfg.task == Task::pretrain || cfg.task == Task::finetune || cfg.task == Task::sweep;
  const bool tunes = cfg.task == Task::finetune || cfg.task == Task::sweep;

  {
    auto r = top.child("data");
    auto& d = cfg.data;
    d.kind = r.get<std::string>("kind", d.kind);
    if (d.kind != "ring" && d.kind != "line" && d.kind != "file") {
      r.issue("data.kind", "unknown value '" + d.kind + "' (ring, line or file)");
      d.kind = "ring";
    }
    d.modes = r.get<std::size_t>("modes", d.kind == "line" ? 2 : 8);
    d.radius = r.get<double>("radius", d.radius);
    d.spacing = r.get<double>("spacing", d.spacing);
    d.spread = r.get<double>("spread", d.spread);
    d.weights = r.get<std::vector<double>>("weights", d.weights);
    d.count = r.get<std::size_t>("count", d.count);
    d.path = detail::resolve_path(r.get<fs::path>("path", {}), base_dir);
    if (d.kind == "file" && d.path.empty() && trains) r.issue("data.path", "required when data.kind is 'file'");
    if (d.synthetic() && d.modes == 0) r.issue("data.modes", "must be >= 1");
    if (!(d.spread > 0.0)) r.issue("data.spread", "must be > 0");
    if (d.count == 0) r.issue("data.count", "must be >= 1");
    if (!d.weights.empty() && d.weights.size() != d.modes) r.issue("data.weights", "need one weight per mode");
    r.finish();
  }
  {
    auto r = top.child("model");
    auto& m = cfg.model;
    m.hidden = r.get<std::vector<std::size_t>>("hidden", m.hidden);
    m.activation = detail::parse_enum(r, "activation", m.activation, parse_activation, to_string(m.activation));
    m.checkpoint = detail::resolve_path(r.get<fs::path>("checkpoint", {}), base_dir);
    for (auto h : m.hidden)
      if (h == 0) r.issue("model.hidden", "layer widths must be >= 1");
    r.finish();
  }
  {
    auto r = top.child("pretrain");
    auto& p = cfg.pretrain;
    p.epochs = r.get<std::size_t>("epochs", p.epochs);
    p.batch_size = r.get<std::size_t>("batch_size", p.batch_size);
    p.optimizer = detail::parse_enum(r, "optimizer", p.optimizer, parse_optimizer, to_string(p.optimizer));
    p.step_size = r.get<double>("step_size", p.step_size);
    p.sample_steps = r.get<std::size_t>("sample_steps", p.sample_steps);
    p.integrator = detail::parse_enum(r, "integrator", p.integrator, parse_integrator, to_string(p.integrator));
    p.eval_samples = r.get<std::size_t>("eval_samples", p.eval_samples);
    if (p.batch_size == 0) r.issue("pretrain.batch_size", "must be >= 1");
    if (!(p.step_size > 0.0)) r.issue("pretrain.step_size", "must be > 0");
    if (p.sample_steps == 0) r.issue("pretrain.sample_steps", "must be >= 1");
    if (p.eval_samples == 0) r.issue("pretrain.eval_samples", "must be >= 1");
    r.finish();
  }
  {
    auto r = top.child("sweep");
    cfg.sweep.parameter = r.get<std::string>("parameter", "");
    cfg.sweep.values = r.get<std::vector<double>>("values", {});
    if (cfg.task == Task::sweep) {
      if (!r.has("parameter")) r.issue("sweep.parameter", "required key is missing");
      else if (cfg.sweep.parameter != "tau" && cfg.sweep.parameter != "alpha")
        r.issue("sweep.parameter", "must be 'tau' or 'alpha'");
      if (!r.has("values")) r.issue("sweep.values", "required key is missing");
      else if (cfg.sweep.values.empty()) r.issue("sweep.values", "value list is empty");
      for (double v : cfg.sweep.values)
        if (!(v >= 0.0)) r.issue("sweep.values", "values must be >= 0");
    }
    r.finish();
  }
  {
    auto r = top.child("finetune");
    auto& f = cfg.finetune;
    const bool swept_tau = cfg.task == Task::sweep && cfg.sweep.parameter == "tau";
    const bool swept_alpha = cfg.task == Task::sweep && cfg.sweep.parameter == "alpha";
    f.mode = detail::parse_enum(r, "mode", f.mode, parse_mode, to_string(f.mode));
    f.weighting.kind =
        detail::parse_enum(r, "weighting", f.weighting.kind, parse_weighting, to_string(f.weighting.kind));
    f.weighting.tau = tunes && !swept_tau ? r.require<double>("tau", f.weighting.tau)
                                          : r.get<double>("tau", f.weighting.tau);
    f.alpha = tunes && !swept_alpha ? r.require<double>("alpha", f.alpha) : r.get<double>("alpha", f.alpha);
    f.epochs = r.get<std::size_t>("epochs", f.epochs);
    f.batches_per_epoch = r.get<std::size_t>("batches_per_epoch", f.batches_per_epoch);
    f.batch_size = r.get<std::size_t>("batch_size", f.batch_size);
    f.sample_steps = r.get<std::size_t>("sample_steps", f.sample_steps);
    f.integrator = detail::parse_enum(r, "integrator", f.integrator, parse_integrator, to_string(f.integrator));
    f.optimizer = detail::parse_enum(r, "optimizer", f.optimizer, parse_optimizer, to_string(f.optimizer));
    f.step_size = r.get<double>("step_size", f.step_size);
    f.eval_samples = r.get<std::size_t>("eval_samples", f.eval_samples);
    f.lipschitz_probes = r.get<std::size_t>("lipschitz_probes", f.lipschitz_probes);
    f.checkpoint_every = r.get<std::size_t>("checkpoint_every", f.checkpoint_every);
    if (!(f.weighting.tau >= 0.0)) r.issue("finetune.tau", "must be >= 0");
    if (!(f.alpha >= 0.0)) r.issue("finetune.alpha", "must be >= 0");
    if (f.batches_per_epoch == 0) r.issue("finetune.batches_per_epoch", "must be >= 1");
    if (f.batch_size == 0) r.issue("finetune.batch_size", "must be >= 1");
    if (f.sample_steps == 0) r.issue("finetune.sample_steps", "must be >= 1");
    if (f.eval_samples == 0) r.issue("finetune.eval_samples", "must be >= 1");
    if (f.lipschitz_probes < 100) r.issue("finetune.lipschitz_probes", "must be >= 100");
    if (!(f.step_size > 0.0)) r.issue("finetune.step_size", "must be > 0");
    r.finish();
  }
  {
    auto r = top.child("reward");
    auto& w = cfg.reward;
    w.kind = r.get<std::string>("kind", w.kind);
    try {
      parse_reward_kind(w.kind);
    } catch (const std::exception&) {
      r.issue("reward.kind", "unknown value '" + w.kind + "'");
    }
    w.centers = r.get<std::vector<std::vector<double>>>("centers", {});
    w.parity = r.get<std::vector<int>>("parity", {});
    w.target = r.get<std::vector<double>>("target", {});
    w.scale = r.get<double>("scale", w.scale);
    w.table = r.get<std::vector<std::vector<double>>>("table", {});
    w.negate = r.get<bool>("negate", w.negate);
    if (tunes || cfg.task == Task::eval) {
      if (w.kind == "target_point" && w.target.empty()) r.issue("reward.target", "required for target_point");
      if (w.kind == "custom_table" && w.table.empty()) r.issue("reward.table", "required for custom_table");
      if (w.kind == "mode_parity" && w.centers.empty() && !cfg.data.synthetic())
        r.issue("reward.centers", "required for mode_parity on file data");
    }
    if (!(w.scale > 0.0)) r.issue("reward.scale", "must be > 0");
    for (int p : w.parity)
      if (p != 1 && p != -1) r.issue("reward.parity", "labels must be +1 or -1");
    r.finish();
  }
  {
    auto r = top.child("oracle");
    auto& o = cfg.oracle;
    o.kind = r.get<std::string>("kind", o.kind);
    o.q = r.get<std::vector<double>>("q", {});
    o.q_file = detail::resolve_path(r.get<fs::path>("q_file", {}), base_dir);
    o.support = r.get<std::vector<double>>("support", {});
    o.w = r.get<std::vector<double>>("w", {});
    o.rewards = r.get<std::vector<double>>("rewards", {});
    o.divergence = r.get<std::vector<std::vector<double>>>("divergence", {});
    o.tau = r.get<double>("tau", o.tau);
    o.beta = r.get<double>("beta", o.beta);
    o.lambda = r.get<double>("lambda", o.lambda);
    o.N = r.get<std::size_t>("N", o.N);
    if (cfg.task == Task::oracle) {
      static const std::set<std::string> kinds = {"offline", "online", "regularized", "exp", "boltzmann", "kl"};
      if (!kinds.count(o.kind)) r.issue("oracle.kind", "unknown value '" + o.kind + "'");
      if (o.q.empty() && o.q_file.empty()) r.issue("oracle.q", "give q or q_file");
      if (!o.q.empty() && !o.q_file.empty()) r.issue("oracle.q_file", "give q or q_file, not both");
      const bool uses_w = o.kind == "offline" || o.kind == "online" || o.kind == "regularized";
      if (uses_w && o.w.empty()) r.issue("oracle.w", "required for oracle kind '" + o.kind + "'");
      if (!uses_w && o.rewards.empty()) r.issue("oracle.rewards", "required for oracle kind '" + o.kind + "'");
      if (!(o.beta >= 0.0)) r.issue("oracle.beta", "must be >= 0");
      if (!(o.lambda > 0.0)) r.issue("oracle.lambda", "must be > 0");
    }
    r.finish();
  }
  {
    auto r = top.child("eval");
    auto& e = cfg.eval;
    e.checkpoint = detail::resolve_path(r.get<fs::path>("checkpoint", {}), base_dir);
    e.samples = r.get<std::size_t>("samples", e.samples);
    e.sample_steps = r.get<std::size_t>("sample_steps", e.sample_steps);
    e.integrator = detail::parse_enum(r, "integrator", e.integrator, parse_integrator, to_string(e.integrator));
    e.log_likelihood = r.get<bool>("log_likelihood", e.log_likelihood);
    if (cfg.task == Task::eval && e.checkpoint.empty() && cfg.model.checkpoint.empty())
      r.issue("eval.checkpoint", "required key is missing (or set model.checkpoint)");
    if (e.samples == 0) r.issue("eval.samples", "must be >= 1");
    if (e.sample_steps == 0) r.issue("eval.sample_steps", "must be >= 1");
    r.finish();
  }
  top.finish();

  cfg.finetune.seed = cfg.seed;
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return cfg;
}

inline ExperimentConfig load_config(const fs::path& path, std::optional<Task> forced) {
  std::ifstream is(path);
  if (!is) throw ConfigError({"--config: cannot open '" + path.string() + "'"});
  json root;
  try {
    root = json::parse(is, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  return parse_config(root, forced, fs::absolute(path).parent_path());
}

// Fully resolved form: every default spelled out, paths absolute. Parsing it
// back yields the same config.
inline json to_json(const ExperimentConfig& c) {
  json j;
  j["task"] = to_string(c.task);
  j["seed"] = c.seed;
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir.string();
  j["data"] = {{"kind", c.data.kind},       {"modes", c.data.modes},   {"radius", c.data.radius},
               {"spacing", c.data.spacing}, {"spread", c.data.spread}, {"weights", c.data.weights},
               {"count", c.data.count}};
  if (!c.data.path.empty()) j["data"]["path"] = c.data.path.string();
  j["model"] = {{"hidden", c.model.hidden}, {"activation", to_string(c.model.activation)}};
  if (!c.model.checkpoint.empty()) j["model"]["checkpoint"] = c.model.checkpoint.string();
  const auto& p = c.pretrain;
  j["pretrain"] = {{"epochs", p.epochs},
                   {"batch_size", p.batch_size},
                   {"optimizer", to_string(p.optimizer)},
                   {"step_size", p.step_size},
                   {"sample_steps", p.sample_steps},
                   {"integrator", to_string(p.integrator)},
                   {"eval_samples", p.eval_samples}};
  const auto& f = c.finetune;
  j["finetune"] = {{"mode", to_string(f.mode)},
                   {"weighting", to_string(f.weighting.kind)},
                   {"tau", f.weighting.tau},
                   {"alpha", f.alpha},
                   {"epochs", f.epochs},
                   {"batches_per_epoch", f.batches_per_epoch},
                   {"batch_size", f.batch_size},
                   {"sample_steps", f.sample_steps},
                   {"integrator", to_string(f.integrator)},
                   {"optimizer", to_string(f.optimizer)},
                   {"step_size", f.step_size},
                   {"eval_samples", f.eval_samples},
                   {"lipschitz_probes", f.lipschitz_probes},
                   {"checkpoint_every", f.checkpoint_every}};
  const auto& r = c.reward;
  j["reward"] = {{"kind", r.kind},     {"centers", r.centers}, {"parity", r.parity}, {"target", r.target},
                 {"scale", r.scale},   {"table", r.table},     {"negate", r.negate}};
  j["sweep"] = {{"parameter", c.sweep.parameter}, {"values", c.sweep.values}};
  const auto& o = c.oracle;
  j["oracle"] = {{"kind", o.kind},   {"q", o.q},          {"support", o.support},       {"w", o.w},
                 {"rewards", o.rewards}, {"divergence", o.divergence}, {"tau", o.tau}, {"beta", o.beta},
                 {"lambda", o.lambda}, {"N", o.N}};
  if (!o.q_file.empty()) j["oracle"]["q_file"] = o.q_file.string();
  const auto& e = c.eval;
  j["eval"] = {{"samples", e.samples},
               {"sample_steps", e.sample_steps},
               {"integrator", to_string(e.integrator)},
               {"log_likelihood", e.log_likelihood}};
  if (!e.checkpoint.empty()) j["eval"]["checkpoint"] = e.checkpoint.string();
  return j;
}

// FNV-1a over the key-sorted dump, ignoring output_dir. Stable under key
// reordering because JSON objects are stored sorted.
inline std::string config_hash(const json& j) {
  json copy = j;
  if (copy.is_object()) copy.erase("output_dir");
  const std::string s = copy.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const ExperimentConfig& c) { return config_hash(to_json(c)); }

// --out, then the config's output_dir, then $RWFM_OUTPUT_ROOT/<task>-<hash>,
// then ./runs/<task>-<hash>.
inline fs::path choose_output_dir(const ExperimentConfig& c, const std::optional<fs::path>& cli_out) {
  if (cli_out && !cli_out->empty()) return *cli_out;
  if (!c.output_dir.empty()) return c.output_dir;
  const char* root = std::getenv("RWFM_OUTPUT_ROOT");
  const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
  return base / (to_string(c.task) + "-" + config_hash(c));
}

// Creates `dir`; refuses one that already has contents.
inline void claim_directory(const fs::path& dir) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw std::runtime_error("output path '" + dir.string() + "' is not a directory");
    if (!fs::is_empty(dir))
      throw std::runtime_error("output directory '" + dir.string() + "' already exists and is not empty");
  }
  fs::create_directories(dir);
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return json::parse(is);
}

inline const char* kAbortMarker = "ABORTED";

namespace detail {

enum : std::uint64_t { kDataStream = 101, kHeldOutStream = 102, kSampleStream = 103, kPretrainStream = 104 };

inline PointBatch training_data(const ExperimentConfig& c) {
  if (!c.data.synthetic()) return load_points(c.data.path);
  Rng rng(derive_seed(c.seed, kDataStream));
  return c.data.mixture().sample(c.data.count, rng);
}

inline PointBatch held_out_data(const ExperimentConfig& c, std::size_t n, const PointBatch& train) {
  if (!c.data.synthetic()) {
    Rng rng(derive_seed(c.seed, kHeldOutStream));
    PointBatch out(train.dim());
    for (std::size_t i = 0; i < n; ++i) out.push_back(train[rng.index(train.size())]);
    return out;
  }
  Rng rng(derive_seed(c.seed, kHeldOutStream));
  return c.data.mixture().sample(n, rng);
}

inline PointBatch mode_centers(const ExperimentConfig& c) {
  if (!c.reward.centers.empty()) {
    PointBatch centers(c.reward.centers.front().size());
    for (const auto& p : c.reward.centers) {
      if (p.size() != centers.dim()) throw ConfigError({"reward.centers: points differ in dimension"});
      centers.push_back(p);
    }
    return centers;
  }
  if (c.data.synthetic()) return c.data.mixture().centers;
  return {};
}

inline RewardSpec build_reward(const ExperimentConfig& c) {
  const auto& r = c.reward;
  RewardSpec spec;
  const auto kind = parse_reward_kind(r.kind);
  switch (kind) {
    case RewardKind::mode_parity: {
      auto centers = mode_centers(c);
      std::vector<int> parity = r.parity;
      if (parity.empty())
        for (std::size_t k = 0; k < centers.size(); ++k) parity.push_back(k % 2 == 0 ? 1 : -1);
      if (parity.size() != centers.size()) throw ConfigError({"reward.parity: need one label per center"});
      spec = RewardSpec::mode_parity(std::move(centers), std::move(parity));
      break;
    }
    case RewardKind::target_point: spec = RewardSpec::target_point(r.target, r.scale); break;
    case RewardKind::norm_compress: spec = RewardSpec::norm_compress(); break;
    case RewardKind::custom_table: {
      std::vector<std::pair<std::vector<double>, double>> table;
      for (const auto& row : r.table) {
        if (row.size() < 2) throw ConfigError({"reward.table: rows are x..., r"});
        table.emplace_back(std::vector<double>(row.begin(), row.end() - 1), row.back());
      }
      spec = RewardSpec::custom_table(std::move(table));
      break;
    }
  }
  spec.negate = r.negate;
  return spec;
}

inline VectorField fresh_field(const ExperimentConfig& c, std::size_t dim) {
  return VectorField(dim, c.model.hidden, c.model.activation, c.seed);
}

inline json epoch_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"mean_reward", r.mean_reward},
          {"mean_weight", r.mean_weight},
          {"loss", r.loss},
          {"w2_penalty", r.w2_penalty},
          {"mc_w2_integrand", r.mc_w2_integrand},
          {"w2_bound", r.w2_bound},
          {"diversity", r.diversity},
          {"mode_entropy", r.mode_entropy},
          {"top_mode_share", r.top_mode_share},
          {"mean_pairwise_distance", r.mean_pairwise_distance},
          {"skipped_batches", r.skipped_batches},
          {"mode_histogram", r.mode_histogram}};
}

inline double sample_w2(const PointBatch& model, const PointBatch& data) {
  const std::size_t n = std::min({model.size(), data.size(), kMaxAssignmentSize});
  if (model.dim() == 1) return empirical_w2(model, data);
  return empirical_w2(model.slice(0, n), data.slice(0, n));
}

inline void mark_aborted(const fs::path& dir, const std::string& why) {
  std::ofstream os(dir / kAbortMarker);
  os << why << '\n';
}

struct PretrainOutput {
  VectorField field;
  json summary;
};

// Pretrains into `dir`: loss.csv, checkpoint_final.txt, samples.txt.
inline PretrainOutput pretrain_into(const ExperimentConfig& c, const fs::path& dir) {
  const auto data = training_data(c);
  VectorField field = fresh_field(c, data.dim());
  OptimizerState opt(c.pretrain.optimizer, c.pretrain.step_size, field.parameter_count());
  PretrainConfig pc{c.pretrain.epochs, c.pretrain.batch_size, derive_seed(c.seed, kPretrainStream)};
  const auto result = pretrain(field, data, pc, opt);
  {
    std::ofstream os(dir / "loss.csv");
    os << kPretrainLossTag << "\nepoch,loss\n";
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
      os << (e + 1) << ',' << format_double(result.epoch_loss[e]) << '\n';
  }
  save_checkpoint(dir / "checkpoint_final.txt", field);
  Rng rng(derive_seed(c.seed, kSampleStream));
  const auto samples =
      generate(field, c.pretrain.eval_samples, c.pretrain.sample_steps, c.pretrain.integrator, rng).samples;
  save_points(dir / "samples.txt", samples);
  json s;
  s["steps"] = result.steps;
  s["final_loss"] = result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back();
  s["w2_to_data"] = sample_w2(samples, held_out_data(c, samples.size(), data));
  if (c.data.synthetic()) {
    const auto div = diversity_report(samples, c.data.mixture().centers);
    s["mode_entropy"] = div.mode_entropy;
    s["mode_histogram"] = div.mode_histogram;
  }
  return {std::move(field), std::move(s)};
}

// The pretrained field a fine-tuning task starts from: the configured
// checkpoint, or a fresh pretraining run stored under dir/pretrained.
inline VectorField obtain_pretrained(const ExperimentConfig& c, const fs::path& dir, json& summary) {
  if (!c.model.checkpoint.empty()) {
    summary["pretrained_checkpoint"] = c.model.checkpoint.string();
    return load_checkpoint(c.model.checkpoint);
  }
  const fs::path sub = dir / "pretrained";
  fs::create_directories(sub);
  auto out = pretrain_into(c, sub);
  summary["pretrained"] = out.summary;
  return std::move(out.field);
}

inline FineTuneConfig finetune_settings(const ExperimentConfig& c, const fs::path& dir) {
  FineTuneConfig f = c.finetune;
  f.seed = c.seed;
  f.mode_centers = mode_centers(c);
  f.checkpoint_dir = dir / "checkpoints";
  f.run_tag = "run";
  return f;
}

// Fine-tunes `pretrained` into `dir`. The run record is rewritten after every
// epoch so an abort leaves the completed epochs behind.
inline json finetune_into(const ExperimentConfig& c, const VectorField& pretrained, const fs::path& dir) {
  const auto reward = build_reward(c);
  const auto f = finetune_settings(c, dir);
  fs::create_directories(f.checkpoint_dir);
  const PointBatch dataset = f.mode == FineTuneMode::offline ? training_data(c) : PointBatch{};
  FineTuner tuner(pretrained, reward, f, dataset);
  write_run_record(dir / "run_record.csv", tuner.record());
  for (std::size_t e = 0; e < f.epochs; ++e) {
    try {
      tuner.run_epoch();
    } catch (const std::exception& ex) {
      write_run_record(dir / "run_record.csv", tuner.record());
      throw RunAborted(ex.what(), tuner.record());
    }
    write_run_record(dir / "run_record.csv", tuner.record());
  }
  save_checkpoint(dir / "checkpoint_final.txt", tuner.field());
  Rng rng(derive_seed(c.seed, kSampleStream));
  save_points(dir / "samples.txt", generate(tuner.field(), f.eval_samples, f.sample_steps, f.integrator, rng).samples);

  const auto& rec = tuner.record();
  json s;
  s["epochs"] = rec.epochs.size();
  s["lipschitz_estimate"] = rec.lipschitz_estimate;
  s["baseline"] = epoch_json(rec.baseline);
  s["final"] = epoch_json(rec.epochs.empty() ? rec.baseline : rec.epochs.back());
  return s;
}

inline json run_oracle_into(const ExperimentConfig& c, const fs::path& dir) {
  const auto& o = c.oracle;
  oracle::GridDistribution q;
  if (!o.q_file.empty()) {
    q = oracle::load_distribution(o.q_file);
  } else {
    q.probabilities = o.q;
    if (!o.support.empty()) {
      if (o.support.size() != o.q.size()) throw ConfigError({"oracle.support: need one point per probability"});
      q.support = PointBatch(1, o.support);
    }
  }
  q.validate();
  if (q.support.empty()) {
    std::vector<double> idx(q.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<double>(i);
    q.support = PointBatch(1, idx);
  }
  oracle::DivergenceProfile D;
  D.per_epoch = o.divergence;
  const std::size_t epochs_needed = o.kind == "kl" ? 1 : o.N;
  if (D.per_epoch.empty()) D = oracle::DivergenceProfile::zeros(epochs_needed, q.size());

  oracle::GridDistribution out;
  if (o.kind == "offline") out = oracle::evolve_offline(q, o.w);
  else if (o.kind == "online") out = oracle::evolve_online(q, o.w, o.N);
  else if (o.kind == "regularized") out = oracle::evolve_regularized(q, o.w, D, o.beta, o.N);
  else if (o.kind == "exp") out = oracle::evolve_exp(q, o.rewards, o.tau, o.beta, D, o.N);
  else if (o.kind == "boltzmann") out = oracle::evolve_boltzmann(q, o.rewards, o.tau, o.beta, D, o.N);
  else out = oracle::kl_policy_update(q, o.rewards, o.lambda, o.beta, D.per_epoch.at(0));

  oracle::save_distribution(dir / "distribution.txt", out);
  json s;
  s["kind"] = o.kind;
  s["probabilities"] = out.probabilities;
  if (o.kind == "online" && std::count(o.w.begin(), o.w.end(), *std::max_element(o.w.begin(), o.w.end())) == 1)
    s["delta_gap"] = oracle::delta_gap(q, o.w, o.N);
  return s;
}

inline json eval_into(const ExperimentConfig& c, const fs::path& dir) {
  const auto path = c.eval.checkpoint.empty() ? c.model.checkpoint : c.eval.checkpoint;
  const auto field = load_checkpoint(path);
  Rng rng(derive_seed(c.seed, kSampleStream));
  const auto samples = generate(field, c.eval.samples, c.eval.sample_steps, c.eval.integrator, rng).samples;
  save_points(dir / "samples.txt", samples);
  json s;
  s["checkpoint"] = path.string();
  s["samples"] = samples.size();
  s["mean_pairwise_distance"] = mean_pairwise_distance(samples);
  const bool have_data = c.data.synthetic() ? c.data.dim() == field.dim() : !c.data.path.empty();
  if (have_data) {
    const auto train = c.data.synthetic() ? PointBatch{} : load_points(c.data.path);
    s["w2_to_data"] = sample_w2(samples, held_out_data(c, samples.size(), train));
  }
  const auto centers = mode_centers(c);
  if (!centers.empty() && centers.dim() == field.dim()) {
    const auto div = diversity_report(samples, centers);
    s["mode_entropy"] = div.mode_entropy;
    s["top_mode_share"] = div.top_mode_share;
    s["mode_histogram"] = div.mode_histogram;
  }
  try {
    const auto reward = build_reward(c);
    if (reward.dim() == 0 || reward.dim() == field.dim()) {
      const auto r = reward_eval(reward, samples);
      double sum = 0.0;
      for (double v : r) sum += v;
      s["mean_reward"] = sum / static_cast<double>(r.size());
    }
  } catch (const std::out_of_range&) {
    // custom tables do not cover generated samples
  }
  if (c.eval.log_likelihood && field.dim() <= 3) {
    double ll = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) ll += log_likelihood(field, samples[i]);
    s["mean_log_likelihood"] = ll / static_cast<double>(samples.size());
  }
  return s;
}

inline std::string value_label(double v) {
  std::string s = format_double(v);
  for (char& ch : s)
    if (ch == '-') ch = 'm';
  return s;
}

}  // namespace detail

struct RunOutcome {
  fs::path dir;
  json summary;
};

// Sweep over finetune.tau or finetune.alpha: one pretrained model, one
// sub-run per value with the shared base seed, then aggregate.csv.
inline json run_sweep_into(const ExperimentConfig& c, const fs::path& dir) {
  json summary;
  const VectorField pretrained = detail::obtain_pretrained(c, dir, summary);
  std::vector<std::string> rows;
  json runs = json::array();
  for (std::size_t i = 0; i < c.sweep.values.size(); ++i) {
    const double v = c.sweep.values[i];
    ExperimentConfig sub = c;
    sub.task = Task::finetune;
    if (c.sweep.parameter == "tau") sub.finetune.weighting.tau = v;
    else sub.finetune.alpha = v;
    char name[32];
    std::snprintf(name, sizeof(name), "%03zu_", i);
    const fs::path sub_dir = dir / (std::string(name) + c.sweep.parameter + "_" + detail::value_label(v));
    claim_directory(sub_dir);
    write_json(sub_dir / "config.resolved.json", to_json(sub));
    json s;
    try {
      s = detail::finetune_into(sub, pretrained, sub_dir);
    } catch (const std::exception& ex) {
      detail::mark_aborted(sub_dir, ex.what());
      throw;
    }
    s["config_hash"] = config_hash(sub);
    write_json(sub_dir / "summary.json", s);
    const auto& fin = s["final"];
    rows.push_back(join({format_double(v), format_double(fin["mean_reward"].get<double>()),
                         format_double(fin["diversity"].get<double>()),
                         format_double(fin["mode_entropy"].get<double>()),
                         format_double(fin["top_mode_share"].get<double>()),
                         format_double(fin["mc_w2_integrand"].get<double>()),
                         format_double(fin["w2_bound"].get<double>()), sub_dir.filename().string()},
                        ','));
    runs.push_back({{"value", v}, {"dir", sub_dir.filename().string()}, {"final", fin}});
  }
  std::ofstream os(dir / "aggregate.csv");
  os << kAggregateTag << '\n'
     << "value,final_reward,final_diversity,final_mode_entropy,final_top_mode_share,final_mc_w2_integrand,"
        "final_w2_bound,run_dir\n";
  for (const auto& r : rows) os << r << '\n';
  summary["parameter"] = c.sweep.parameter;
  summary["runs"] = runs;
  return summary;
}

// Runs the configured task in `dir`, which must be new or empty. Writes
// config.resolved.json first and summary.json last; on failure leaves an
// ABORTED marker next to whatever was produced and rethrows.
inline RunOutcome run_experiment(const ExperimentConfig& c, const fs::path& dir) {
  claim_directory(dir);
  write_json(dir / "config.resolved.json", to_json(c));
  json summary;
  try {
    switch (c.task) {
      case Task::pretrain: summary = detail::pretrain_into(c, dir).summary; break;
      case Task::finetune: {
        json pre;
        const auto pretrained = detail::obtain_pretrained(c, dir, pre);
        summary = detail::finetune_into(c, pretrained, dir);
        summary.update(pre);
        break;
      }
      case Task::sweep: summary = run_sweep_into(c, dir); break;
      case Task::oracle: summary = detail::run_oracle_into(c, dir); break;
      case Task::eval: summary = detail::eval_into(c, dir); break;
    }
  } catch (const std::exception& ex) {
    detail::mark_aborted(dir, ex.what());
    throw;
  }
  summary["task"] = to_string(c.task);
  summary["config_hash"] = config_hash(c);
  write_json(dir / "summary.json", summary);
  return {dir, summary};
}

}  // namespace rwfm::cli
