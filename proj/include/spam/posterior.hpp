#pragma once

#include "spam/diffmath.hpp"
#include "spam/graphcore.hpp"
#include "spam/params.hpp"

#include <array>
#include <memory>

namespace spam::posterior {

struct PosteriorConfig {
  int encoder_hidden = 64;
  int decoder_hidden = 64;
  std::array<double, 3> prior{1.0 / 3, 1.0 / 3, 1.0 / 3};  // (-, 0, +)
  double epsilon = 0.05;  // edge observation flip rate
};

// Per observed edge: (pi-, pi0, pi+), defined exactly on the edge list.
struct EdgePosterior {
  Matrix probs;  // m x 3

  int num_edges() const { return static_cast<int>(probs.rows()); }
  void validate() const;
};

// [X | one-hot y] with zero label rows outside the conditioning set, so
// validation and test labels never reach the encoder.
Matrix label_conditioned_features(const graph::GraphDataset& g,
                                  const std::vector<int>& train_nodes);

// Registers enc.w1, enc.w2, dec.w1, dec.b1, dec.w2, dec.b2.
void init_params(ParamStore& store, int cond_dim, const PosteriorConfig& cfg, Rng& rng);

// Two rounds of normalized neighbor averaging with self-loops, each
// followed by a linear map; ReLU after the first.
diff::Var encode(diff::Tape& tape, const TapeBinding& params,
                 const std::shared_ptr<const CsrMatrix>& norm_adj, const Matrix& cond_features);

// Pairwise decoder on the symmetrized pair input, one logit triple per
// unordered edge.
diff::Var edge_logit_vars(diff::Tape& tape, const TapeBinding& params, diff::Var embeddings,
                          const std::vector<graph::Edge>& edges);

EdgePosterior posterior_from_logits(const Matrix& logits);

enum class GateMode {
  kStraightThrough,  // hard forward, soft backward
  kSoft,             // soft forward and backward (gradient checking)
};

struct SampledStructure {
  graph::SignedAdjacency hard;
  diff::Var gate;  // m x 1 multiplier applied to dictionary rows
  Matrix soft;     // m x 3 relaxed sample
};

// Gumbel-softmax sample of every edge state at temperature tau. The hard
// states drive the neighbor sets; the gate carries the gradient. A forced
// structure pins the hard states (finite-difference checks rebuild the
// computation under perturbed parameters, and the sampled structure must
// not flip at a near-tie).
SampledStructure sample_signed_tape(diff::Tape& tape, diff::Var logits, double tau, uint64_t seed,
                                    GateMode mode,
                                    const graph::SignedAdjacency* forced = nullptr);

// Sampling without a tape, for prediction/analysis.
graph::SignedAdjacency sample_signed(const EdgePosterior& ep, double tau, uint64_t seed);

diff::Var kl_to_prior_var(diff::Tape& tape, diff::Var probs, const std::array<double, 3>& prior);
diff::Var recon_loglik_var(diff::Tape& tape, diff::Var probs, double epsilon);

double kl_to_prior(const EdgePosterior& ep, const std::array<double, 3>& prior);
double recon_loglik(const Matrix& simplex_rows, double epsilon);

}  // namespace spam::posterior
