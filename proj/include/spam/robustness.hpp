#pragma once

#include "spam/graphcore.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace spam::perturb {

enum class Kind { kDeleteEdges, kFeatureNoise, kAdversarialFlip };

struct PerturbationSpec {
  Kind kind = Kind::kDeleteEdges;
  double magnitude = 0.0;  // rho, sigma, or budget fraction
  uint64_t seed = 0;

  void validate() const;
};

graph::GraphDataset apply(const graph::GraphDataset& g, const PerturbationSpec& spec);

// Removes exactly round(rho * m) uniformly chosen edges.
graph::GraphDataset delete_edges(const graph::GraphDataset& g, double rho, uint64_t seed);

// X <- X + sigma * standard Gaussian; structure untouched.
graph::GraphDataset add_feature_noise(const graph::GraphDataset& g, double sigma, uint64_t seed);

// Scores a candidate graph; the greedy attack maximizes the increase.
using Scorer = std::function<double(const graph::GraphDataset&)>;

// Fraction of fully-labeled edges joining different classes.
double cross_class_fraction(const graph::GraphDataset& g);

struct FlipReport {
  int requested = 0;
  int applied = 0;
};

// Gradient-free greedy attack: per step, either add a cross-class edge
// between high-degree labeled nodes or delete a same-class edge, whichever
// the scorer prefers. Exactly min(budget, legal moves) modifications.
graph::GraphDataset adversarial_flip(const graph::GraphDataset& g, double budget_frac,
                                     const Scorer& scorer, uint64_t seed,
                                     FlipReport* report = nullptr);

graph::GraphDataset adversarial_flip(const graph::GraphDataset& g, double budget_frac,
                                     uint64_t seed, FlipReport* report = nullptr);

// Trains and evaluates one perturbed cell; empty result marks an aborted
// run, recorded as a missing cell.
using TrainerFn =
    std::function<std::optional<double>(const graph::GraphDataset& g, uint64_t seed)>;

struct CurveCell {
  double magnitude = 0.0;
  double mean_acc = 0.0;
  double std_acc = 0.0;
  int completed = 0;
  int aborted = 0;
};

std::vector<CurveCell> robustness_curve(const graph::GraphDataset& g, const TrainerFn& trainer,
                                        Kind kind, const std::vector<double>& grid,
                                        const std::vector<uint64_t>& seeds);

}  // namespace spam::perturb
