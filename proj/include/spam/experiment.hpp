#pragma once

#include "spam/csbm.hpp"
#include "spam/robustness.hpp"
#include "spam/training.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace spam::cli {

struct DatasetSpec {
  enum class Kind { kFiles, kCsbm } kind = Kind::kCsbm;
  std::string edges, features, labels;  // files
  csbm::CsbmConfig csbm;                // synthetic

  graph::GraphDataset materialize() const;
};

struct ExperimentConfig {
  std::string tag = "run";
  std::string output_dir = "runs/out";
  std::vector<uint64_t> seeds{1};
  DatasetSpec dataset;
  double train_frac = 0.6, val_frac = 0.2, test_frac = 0.2;
  train::TrainConfig tcfg;
  std::string model = "spam";  // "spam" or "gcn"
  std::optional<perturb::PerturbationSpec> perturbation;

  std::vector<double> grid_lambda_sp, grid_lambda_st;  // grid verb
  std::vector<int> mc_k;                               // mc-study verb
  perturb::Kind rob_kind = perturb::Kind::kDeleteEdges;
  std::vector<double> rob_magnitudes;
  std::vector<std::string> rob_models{"spam", "gcn"};

  nlohmann::json echo;  // the validated input, re-emitted with every output
};

// Fail-closed: unknown keys anywhere are an error naming the field.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);

// SPAM_THREADS worker count; 1 (the default) keeps runs fully serial.
int thread_count();

struct SeedOutcome {
  uint64_t seed = 0;
  double test_acc = 0.0;
};

struct Aggregate {
  std::vector<SeedOutcome> per_seed;
  double mean = 0.0;
  double stddev = 0.0;
};

Aggregate aggregate(const std::vector<SeedOutcome>& rows);

int cmd_run(const ExperimentConfig& cfg, std::ostream& log);
int cmd_grid(const ExperimentConfig& cfg, std::ostream& log);
int cmd_mc_study(const ExperimentConfig& cfg, std::ostream& log);
int cmd_robustness(const ExperimentConfig& cfg, std::ostream& log);

struct CsbmVerifyOptions {
  int margin_trials = 20;
  int support_trials = 20;
  int trend_seeds = 5;
  bool run_trend = true;
};

int cmd_csbm_verify(const CsbmVerifyOptions& opt, std::ostream& log);
int cmd_check(std::ostream& log);

}  // namespace spam::cli
