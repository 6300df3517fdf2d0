#pragma once

#include "spam/diffmath.hpp"
#include "spam/graphcore.hpp"
#include "spam/params.hpp"
#include "spam/posterior.hpp"
#include "spam/sparsecode.hpp"

namespace spam::net {

struct NetConfig {
  int layers = 2;  // L
  int d_val = 64;
  int d_out = 64;
  double gamma = 1.0;   // strength of negative messages
  double lambda = 0.1;  // l1 weight of the local coding problem
  int coder_steps = 3;  // unrolled steps T
  bool self_term = true;  // residual W_self h_i; disable for the strict
                          // aggregation-only update
  double dropout = 0.5;
  enum class Coder { kUnrolled, kExact } coder = Coder::kUnrolled;

  void validate() const;
};

// Registers net.l<i>.{wv,wt,wo,b,wself,eta} and net.cls.{w,b}.
void init_params(ParamStore& store, int in_dim, int num_classes, const NetConfig& cfg, Rng& rng);

// Sets each layer's coder step to 1 / (2 max-node eig(Vi^T Vi)) measured on
// one calibration forward with the given structure sample.
void calibrate_eta(ParamStore& store, const graph::GraphDataset& g, const graph::Incidence& inc,
                   const graph::SignedAdjacency& z, const NetConfig& cfg);

struct LayerResult {
  diff::Var h;        // n x d_out
  diff::Var code_l1;  // 1x1, sum over nodes of ||alpha_i||_1
};

// One sparse signed message passing layer. edge_gate is an m x 1 multiplier
// on dictionary rows: all-ones under straight-through sampling, the soft
// sample under relaxed mode, constant ones at evaluation.
LayerResult s2_layer(diff::Tape& tape, const TapeBinding& params, int layer_idx, diff::Var h,
                     const graph::GraphDataset& g, const graph::Incidence& inc,
                     const graph::SignedAdjacency& z, diff::Var edge_gate, const NetConfig& cfg);

struct ForwardResult {
  diff::Var probs;    // n x C rows on the simplex
  diff::Var logits;   // n x C
  diff::Var code_l1;  // summed over layers
};

ForwardResult forward(diff::Tape& tape, const TapeBinding& params, const graph::GraphDataset& g,
                      const graph::Incidence& inc, const graph::SignedAdjacency& z,
                      diff::Var edge_gate, const NetConfig& cfg, bool training,
                      uint64_t dropout_seed);

// Average of K forward passes on independently sampled hard structures.
Matrix predict_mc(const graph::GraphDataset& g, const posterior::EdgePosterior& ep,
                  const ParamStore& params, const NetConfig& cfg, int K, uint64_t seed);

// sum_{+} alpha_j v_j - gamma sum_{-} |alpha_j| v_j over dictionary rows.
Eigen::RowVectorXd signed_aggregate(const Matrix& values_rows, const Eigen::VectorXd& alpha,
                                    const std::vector<int>& signs, double gamma);

}  // namespace spam::net
