// rwfm: command-line front end for pretraining, fine-tuning, sweeps, the
// closed-form oracle, evaluation and report rendering.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rwfm/experiment.hpp"
#include "rwfm/report.hpp"

namespace {

struct TaskArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

CLI::App* add_task(CLI::App& app, const std::string& name, const std::string& help, TaskArgs& args) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("--config", args.config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", args.out, "output directory (default: $RWFM_OUTPUT_ROOT/<task>-<hash>)");
  sub->add_option("--seed", args.seed, "overrides the config seed");
  return sub;
}

int run_task(rwfm::cli::Task task, const TaskArgs& args) {
  namespace cli = rwfm::cli;
  cli::ExperimentConfig cfg;
  try {
    cfg = cli::load_config(args.config, task);
  } catch (const cli::ConfigError& e) {
    std::cerr << args.config << ": " << e.what() << '\n';
    return 2;
  }
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.finetune.seed = *args.seed;
  }
  const auto dir = cli::choose_output_dir(cfg, args.out.empty() ? std::nullopt : std::optional<cli::fs::path>(args.out));
  try {
    const auto outcome = cli::run_experiment(cfg, dir);
    std::cout << outcome.dir.string() << '\n';
  } catch (const cli::ConfigError& e) {
    std::cerr << args.config << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "rwfm " << cli::to_string(task) << " failed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward-weighted flow matching experiments"};
  app.require_subcommand(1);

  TaskArgs pre, ft, sw, orc, ev;
  auto* pre_cmd = add_task(app, "pretrain", "train a flow-matching model on the configured data", pre);
  auto* ft_cmd = add_task(app, "finetune", "reward-weighted fine-tuning of a pretrained model", ft);
  auto* sw_cmd = add_task(app, "sweep", "one fine-tuning run per value of tau or alpha", sw);
  auto* orc_cmd = add_task(app, "oracle", "closed-form distribution evolution on a discrete grid", orc);
  auto* ev_cmd = add_task(app, "eval", "sample a checkpoint and score it", ev);

  std::string report_dir;
  auto* rep_cmd = app.add_subcommand("report", "render SVG charts and report.txt for a run or sweep directory");
  rep_cmd->add_option("dir", report_dir, "run or sweep directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  using rwfm::cli::Task;
  if (*pre_cmd) return run_task(Task::pretrain, pre);
  if (*ft_cmd) return run_task(Task::finetune, ft);
  if (*sw_cmd) return run_task(Task::sweep, sw);
  if (*orc_cmd) return run_task(Task::oracle, orc);
  if (*ev_cmd) return run_task(Task::eval, ev);
  if (*rep_cmd) {
    try {
      for (const auto& p : rwfm::report::emit_report(report_dir)) std::cout << p.string() << '\n';
    } catch (const std::exception& e) {
      std::cerr << "rwfm report failed: " << e.what() << '\n';
      return 1;
    }
  }
  return 0;
}
