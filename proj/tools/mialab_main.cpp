// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mialab/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string mode;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--config", args->config_path, "experiment config file");
  cmd->add_option("--out", args->out_dir, "output directory override");
  cmd->add_option("--mode", args->mode,
                  "shadow training mode override (plain, kl, mse)")
      ->check(CLI::IsMember({"plain", "kl", "mse"}));
  cmd->add_option("--seed", args->seed,
                  "master seed override (rederives every stage seed)")
      ->each([args](const std::string&) { args->seed_set = true; });
}

mialab::ExperimentConfig resolve_config(const CommonArgs& args) {
  mialab::ExperimentConfig config = args.config_path.empty()
                                        ? mialab::default_toy_config()
                                        : mialab::load_config(args.config_path);
  if (!args.out_dir.empty()) config.output_dir = args.out_dir;
  if (!args.mode.empty()) mialab::apply_mode_override(config, args.mode);
  if (args.seed_set) mialab::apply_seed_override(config, args.seed);
  config.validate();
  return config;
}

void print_metrics(const mialab::MetricsReport& report) {
  std::printf("auc %s\n", mialab::format_double(report.auc).c_str());
  for (const mialab::TprCell& cell : report.tpr_at) {
    std::printf("tpr@fpr=%s %s%s\n",
                mialab::format_double(cell.fpr_target).c_str(),
                mialab::format_double(cell.tpr).c_str(),
                cell.insufficient_n ? " (insufficient n)" : "");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mialab: desk-scale membership-inference attack laboratory"};
  app.require_subcommand(1);

  CommonArgs target_args, shadows_args, attack_args, sweep_args, report_args;

  CLI::App* cmd_target =
      app.add_subcommand("run-target", "train and persist the target model");
  add_common(cmd_target, &target_args);

  CLI::App* cmd_shadows =
      app.add_subcommand("run-shadows", "train and persist the shadow ensemble");
  add_common(cmd_shadows, &shadows_args);

  CLI::App* cmd_attack = app.add_subcommand(
      "attack", "score the eval split and write metrics");
  add_common(cmd_attack, &attack_args);

  std::string sweep_parameter;
  std::vector<double> sweep_values;
  CLI::App* cmd_sweep = app.add_subcommand(
      "sweep", "rerun the pipeline over a parameter grid");
  add_common(cmd_sweep, &sweep_args);
  cmd_sweep->add_option("--parameter", sweep_parameter,
                        "one of: alpha, tau, shadow_size, N")
      ->required();
  cmd_sweep->add_option("--values", sweep_values, "values to sweep over")
      ->required()
      ->delimiter(',');

  CLI::App* cmd_report = app.add_subcommand(
      "report", "comparative plain/kl/mse table in both architecture settings");
  add_common(cmd_report, &report_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_target->parsed()) {
      mialab::run_target(resolve_config(target_args));
    } else if (cmd_shadows->parsed()) {
      mialab::run_shadows(resolve_config(shadows_args));
    } else if (cmd_attack->parsed()) {
      print_metrics(mialab::run_attack(resolve_config(attack_args)));
    } else if (cmd_sweep->parsed()) {
      mialab::sweep(resolve_config(sweep_args), sweep_parameter, sweep_values);
    } else if (cmd_report->parsed()) {
      mialab::comparative_report(resolve_config(report_args));
    }
  } catch (const mialab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const mialab::ShapeError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const mialab::TrainingDiverged& e) {
    std::fprintf(stderr, "training diverged at step %zu: %s\n", e.step(),
                 e.what());
    return 3;
  } catch (const mialab::MissingArtifact& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
