// SPDX-License-Identifier: Apache-2.0
//
// parsim: deterministic simulator and desk-scale training harness for
// distributed-training parallelism strategies.

#include <CLI11.hpp>

#include "parsim/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"parsim - parallel training simulator and trainer"};
  app.require_subcommand(1);

  parsim::CliOptions opts;
  std::vector<std::string> report_dirs;
  std::string report_out = "combined_report.md";

  auto add_common = [&](CLI::App* cmd, bool with_costs) {
    cmd->add_option("--config", opts.config_path, "experiment config file")->required();
    cmd->add_option("--seed", opts.seed, "base RNG seed (default 42)");
    cmd->add_option("--out", opts.out_dir, "output directory override");
    cmd->add_option("--format", opts.format, "report formats: csv, md, or csv,md");
    if (with_costs) {
      cmd->add_option("--costs", opts.costs_path, "costs file overriding the [costs] section");
    }
  };

  CLI::App* simulate = app.add_subcommand("simulate", "run the time model over all strategies");
  add_common(simulate, true);

  CLI::App* train = app.add_subcommand("train", "train and evaluate each strategy");
  add_common(train, false);
  train->add_flag("--eval-only", opts.eval_only, "evaluate saved models, skip training");
  train->add_option("--model-dir", opts.model_dir, "directory with model_<scheme>.bin snapshots");

  CLI::App* calibrate = app.add_subcommand("calibrate", "fit cost parameters to anchors");
  add_common(calibrate, true);

  CLI::App* report = app.add_subcommand("report", "combine run directories into one markdown report");
  report->add_option("dirs", report_dirs, "run directories containing report.csv")->required();
  report->add_option("--out", report_out, "output markdown path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;  // usage problems are config errors
  }

  if (simulate->parsed()) return parsim::run_simulate(opts);
  if (train->parsed()) return parsim::run_train(opts);
  if (calibrate->parsed()) return parsim::run_calibrate(opts);
  if (report->parsed()) return parsim::run_report(report_dirs, report_out);
  return 1;
}
