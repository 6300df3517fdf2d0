#pragma once

#include "spam/graphcore.hpp"
#include "spam/params.hpp"
#include "spam/posterior.hpp"
#include "spam/s2net.hpp"

#include <array>
#include <memory>
#include <string>

namespace spam::train {

struct TrainConfig {
  // architecture
  int layers = 2;
  int d_val = 64;
  int d_out = 64;
  int encoder_hidden = 64;
  int decoder_hidden = 64;
  int coder_steps = 3;
  bool self_term = true;
  // objective
  double lambda = 0.1;
  double lambda_sp = 0.01;
  double lambda_st = 0.1;
  double gamma = 1.0;
  double epsilon = 0.05;
  std::array<double, 3> prior{1.0 / 3, 1.0 / 3, 1.0 / 3};
  // structure sampling
  int mc_train = 5;
  int mc_eval = 8;
  double tau_start = 1.0;
  double tau_end = 0.1;
  double tau_decay = 0.99;
  // optimization
  double lr = 0.01;
  double lr_decay = 0.5;
  int lr_decay_every = 200;
  double weight_decay = 5e-4;
  double clip_norm = 5.0;
  int max_epochs = 300;
  int patience = 100;
  double dropout = 0.5;
  uint64_t seed = 1;

  void validate() const;
  net::NetConfig net_config() const;
  posterior::PosteriorConfig posterior_config() const;
};

struct LossParts {
  double cls = 0.0;
  double sparse = 0.0;
  double structural = 0.0;
  double total = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  LossParts loss;
  double val_acc = 0.0;
  double tau = 0.0;
  double lr = 0.0;
};

struct Model {
  ParamStore params;
  TrainConfig cfg;
  std::vector<int> conditioning_nodes;
  posterior::EdgePosterior ep;  // posterior state at the stored parameters
};

// The full objective on a tape: MC-averaged classification term, coder
// sparsity term, and the structural (negative ELBO) term. frozen, when
// given, pins the k-th sampled structure (gradient checking rebuilds the
// graph under perturbed parameters); captured, when given, records the
// structures actually sampled.
diff::Var build_loss(diff::Tape& tape, const TapeBinding& bind, const graph::GraphDataset& g,
                     const graph::Incidence& inc, const std::shared_ptr<const CsrMatrix>& adj,
                     const Matrix& cond_features, const std::vector<int>& train_nodes,
                     const TrainConfig& cfg, double tau, uint64_t seed, posterior::GateMode mode,
                     bool training, LossParts* parts,
                     const std::vector<graph::SignedAdjacency>* frozen = nullptr,
                     std::vector<graph::SignedAdjacency>* captured = nullptr);

LossParts loss_total(const graph::GraphDataset& g, const graph::LabelSplit& split,
                     const ParamStore& params, const TrainConfig& cfg, double tau, uint64_t seed);

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_acc = 0.0;
};

TrainResult train(const graph::GraphDataset& g, const graph::LabelSplit& split,
                  const TrainConfig& cfg);

posterior::EdgePosterior compute_posterior(const graph::GraphDataset& g, const ParamStore& params,
                                           const TrainConfig& cfg,
                                           const std::vector<int>& conditioning_nodes);

Matrix predict(const graph::GraphDataset& g, const Model& model, int K, uint64_t seed);

// Accuracy of the MC-averaged argmax prediction over the labeled subset of
// nodes; ties break toward the lowest class index.
double evaluate(const graph::GraphDataset& g, const std::vector<int>& nodes, const Model& model,
                int K, uint64_t seed);

// ---- plain GCN reference ---------------------------------------------

struct GcnModel {
  ParamStore params;
  int layers = 2;
  int hidden = 64;
};

struct GcnResult {
  GcnModel model;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_acc = 0.0;
};

GcnResult gcn_train(const graph::GraphDataset& g, const graph::LabelSplit& split,
                    const TrainConfig& cfg);

double gcn_evaluate(const graph::GraphDataset& g, const std::vector<int>& nodes,
                    const GcnModel& model);

// ---- checkpoints --------------------------------------------------------

// Writes <prefix>.json (manifest) and <prefix>.bin (row-major float64
// little-endian payload in manifest order).
void save_checkpoint(const std::string& prefix, const ParamStore& params,
                     const std::string& config_echo, int epoch, double metric);

struct Checkpoint {
  ParamStore params;
  std::string config_echo;
  int epoch = 0;
  double metric = 0.0;
};

Checkpoint load_checkpoint(const std::string& prefix);

// Adam with decoupled-from-schedule decay factor applied to the learning
// rate by the caller; weight decay enters through the gradient.
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Matrix> m, v;
  long t = 0;

  void step(ParamStore& params, const std::vector<Matrix>& grads, double lr);
};

double clip_global_norm(std::vector<Matrix>& grads, double max_norm);

}  // namespace spam::train
