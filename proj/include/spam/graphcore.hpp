#pragma once

#include "spam/common.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace spam::graph {

// Unordered node pair, stored with u < v.
struct Edge {
  int u = 0;
  int v = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

// Undirected graph with dense features, optional labels, and the observed
// edge list. Immutable after load; safe to share read-only across workers.
struct GraphDataset {
  int n = 0;
  Matrix X;                  // n x d
  std::vector<int> y;        // class id, or -1 when unlabeled
  std::vector<char> labeled; // the labeled set
  std::vector<Edge> edges;   // deduplicated, no self-loops, u < v
  int num_classes = 0;

  int feature_dim() const { return static_cast<int>(X.cols()); }
  int num_edges() const { return static_cast<int>(edges.size()); }
  bool is_labeled(int i) const { return labeled[static_cast<size_t>(i)] != 0; }

  // Throws if any structural invariant is violated.
  void validate() const;
};

struct LoadReport {
  int duplicate_edges_removed = 0;
  int self_loops_removed = 0;
};

// Edge file: one "u<TAB>v" per line, '#' comments; feature file: CSV with
// optional header; label file: "node_id,class_id" CSV, absent nodes are
// unlabeled. Edges naming a node without a feature row are a consistency
// error.
GraphDataset load_dataset(const std::string& edge_path, const std::string& feature_path,
                          const std::string& label_path, LoadReport* report = nullptr);

void save_dataset(const GraphDataset& g, const std::string& edge_path,
                  const std::string& feature_path, const std::string& label_path);

// Fraction of edges whose endpoints share a label. Edges with an unlabeled
// endpoint are skipped; their count is reported through skipped_edges.
double homophily_ratio(const GraphDataset& g, int* skipped_edges = nullptr);

// One state in {-1, 0, +1} per observed edge, aligned with g.edges.
// Pairs outside the observed edge set are implicitly 0.
struct SignedAdjacency {
  std::vector<int8_t> states;

  int8_t state(size_t edge_id) const { return states[edge_id]; }
};

struct NeighborSets {
  std::vector<int> positive;
  std::vector<int> negative;
};

NeighborSets neighbor_sets(const GraphDataset& g, const SignedAdjacency& z, int node);

// Per-node incident edges: node -> list of (neighbor, edge id). Built once
// and shared by the message passing layers.
struct Incidence {
  std::vector<std::vector<std::pair<int, int>>> at;

  static Incidence build(const GraphDataset& g);
};

struct LabelSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
  uint64_t seed = 0;
};

// Per-class stratified split of the labeled nodes; unlabeled nodes are
// appended to the test list so the three parts partition V. Deterministic
// for a fixed seed.
LabelSplit make_split(const GraphDataset& g, double train_frac, double val_frac,
                      double test_frac, uint64_t seed);

// Symmetric-normalized adjacency with self-loops, D^-1/2 (A+I) D^-1/2.
CsrMatrix normalized_adjacency(const GraphDataset& g);

}  // namespace spam::graph
