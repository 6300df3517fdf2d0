#include "spam/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"spam: sparse Bayesian message passing experiments"};
  app.require_subcommand(1);

  std::string config_path;

  CLI::App* run = app.add_subcommand("run", "train and evaluate over seeds");
  run->add_option("-c,--config", config_path, "experiment config (JSON)")->required();

  CLI::App* grid = app.add_subcommand("grid", "lambda_sp x lambda_st sensitivity grid");
  grid->add_option("-c,--config", config_path, "experiment config (JSON)")->required();

  CLI::App* mc = app.add_subcommand("mc-study", "accuracy as a function of the sample count K");
  mc->add_option("-c,--config", config_path, "experiment config (JSON)")->required();

  CLI::App* rob = app.add_subcommand("robustness", "perturbation robustness curves");
  rob->add_option("-c,--config", config_path, "experiment config (JSON)")->required();

  spam::cli::CsbmVerifyOptions vopt;
  CLI::App* verify = app.add_subcommand("csbm-verify", "statistical checks on synthetic graphs");
  verify->add_option("--margin-trials", vopt.margin_trials, "margin growth trials");
  verify->add_option("--support-trials", vopt.support_trials, "support recovery trials");
  verify->add_option("--trend-seeds", vopt.trend_seeds, "seeds per labeled fraction");
  verify->add_flag("--skip-trend", [&vopt](int64_t) { vopt.run_trend = false; },
                   "skip the (slow) posterior consistency trend");

  CLI::App* check = app.add_subcommand("check", "gradient and solver self-checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(check)) return spam::cli::cmd_check(std::cout);
    if (app.got_subcommand(verify)) return spam::cli::cmd_csbm_verify(vopt, std::cout);

    spam::cli::ExperimentConfig cfg = spam::cli::load_config_file(config_path);
    if (app.got_subcommand(run)) return spam::cli::cmd_run(cfg, std::cout);
    if (app.got_subcommand(grid)) return spam::cli::cmd_grid(cfg, std::cout);
    if (app.got_subcommand(mc)) return spam::cli::cmd_mc_study(cfg, std::cout);
    if (app.got_subcommand(rob)) return spam::cli::cmd_robustness(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
