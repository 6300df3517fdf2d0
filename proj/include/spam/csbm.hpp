#pragma once

#include "spam/graphcore.hpp"
#include "spam/training.hpp"

#include <vector>

namespace spam::csbm {

// Community labels generate signed edges (+1 within class w.p. p_in, -1
// across classes w.p. p_out, absent otherwise) and Gaussian-perturbed
// class-mean features. The observed graph is the unsigned support.
struct CsbmConfig {
  int n = 200;
  int classes = 2;
  double p_in = 0.05;
  double p_out = 0.2;
  Matrix means;        // classes x d
  double noise = 0.5;  // s
  uint64_t seed = 1;

  void validate() const;
};

// Axis-aligned class means scaled to the requested norm.
Matrix orthogonal_means(int classes, int dim, double scale);

struct CsbmSample {
  graph::GraphDataset g;
  graph::SignedAdjacency truth;
};

CsbmSample generate(const CsbmConfig& cfg);

// One linearized signed update H' = H Wself + Z+ H W+ - Z- H W- per trial;
// a trial passes when every inter-class mean distance grows.
struct MarginGrowth {
  int trials = 0;
  int passed = 0;
  double pass_fraction = 0.0;
};

MarginGrowth margin_growth_check(const CsbmConfig& cfg, const Matrix& w_self, const Matrix& w_pos,
                                 const Matrix& w_neg, int trials);

// Per node: exact lasso of its own features against neighbor features;
// precision/recall of the recovered support against same-class neighbors.
struct SupportRecovery {
  double precision = 0.0;
  double recall = 0.0;
};

SupportRecovery support_recovery_rate(const CsbmConfig& cfg, double lambda, int trials);

// True conditional edge-state distribution given the endpoint labels, in
// (-, 0, +) order.
std::array<double, 3> true_sign_distribution(const CsbmConfig& cfg, bool same_class);

// Mean over observed edges of KL(truth || learned posterior); the truth has
// exact zeros so this is the finite direction.
double mean_edge_kl(const CsbmConfig& cfg, const graph::GraphDataset& g,
                    const posterior::EdgePosterior& ep);

struct ConsistencyPoint {
  double fraction = 0.0;
  double mean_kl = 0.0;
};

// Trains the structural posterior at each labeled fraction and reports the
// averaged edge-wise KL to the generating distribution.
std::vector<ConsistencyPoint> posterior_consistency_trend(const CsbmConfig& cfg,
                                                          const std::vector<double>& fractions,
                                                          const train::TrainConfig& tcfg,
                                                          int num_seeds);

}  // namespace spam::csbm
