#include "spam/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace spam::perturb {

void PerturbationSpec::validate() const {
  switch (kind) {
    case Kind::kDeleteEdges:
      if (magnitude < 0.0 || magnitude > 1.0)
        throw ConfigError("edge deletion fraction must lie in [0, 1]");
      break;
    case Kind::kFeatureNoise:
      if (magnitude < 0.0) throw ConfigError("noise scale must be non-negative");
      break;
    case Kind::kAdversarialFlip:
      if (magnitude < 0.0) throw ConfigError("attack budget must be non-negative");
      break;
  }
}

graph::GraphDataset apply(const graph::GraphDataset& g, const PerturbationSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case Kind::kDeleteEdges:
      return delete_edges(g, spec.magnitude, spec.seed);
    case Kind::kFeatureNoise:
      return add_feature_noise(g, spec.magnitude, spec.seed);
    case Kind::kAdversarialFlip:
      return adversarial_flip(g, spec.magnitude, spec.seed);
  }
  throw ConfigError("unknown perturbation kind");
}

graph::GraphDataset delete_edges(const graph::GraphDataset& g, double rho, uint64_t seed) {
  if (rho < 0.0 || rho > 1.0) throw PreconditionError("rho must lie in [0, 1]");
  int m = g.num_edges();
  int remove = static_cast<int>(std::lround(rho * m));
  graph::GraphDataset out = g;
  if (remove == 0) return out;
  std::vector<int> order(static_cast<size_t>(m));
  for (int e = 0; e < m; ++e) order[static_cast<size_t>(e)] = e;
  Rng rng(derive_seed(seed, 0xde1));
  rng.shuffle(order);
  std::vector<char> keep(static_cast<size_t>(m), 1);
  for (int r = 0; r < remove; ++r) keep[static_cast<size_t>(order[static_cast<size_t>(r)])] = 0;
  out.edges.clear();
  for (int e = 0; e < m; ++e)
    if (keep[static_cast<size_t>(e)]) out.edges.push_back(g.edges[static_cast<size_t>(e)]);
  return out;
}

graph::GraphDataset add_feature_noise(const graph::GraphDataset& g, double sigma, uint64_t seed) {
  if (sigma < 0.0) throw PreconditionError("sigma must be non-negative");
  graph::GraphDataset out = g;
  if (sigma == 0.0) return out;
  Rng rng(derive_seed(seed, 0xfea));
  for (int i = 0; i < g.n; ++i)
    for (Eigen::Index d = 0; d < g.X.cols(); ++d) out.X(i, d) += sigma * rng.gaussian();
  return out;
}

double cross_class_fraction(const graph::GraphDataset& g) {
  int cross = 0, total = 0;
  for (const graph::Edge& e : g.edges) {
    if (!g.is_labeled(e.u) || !g.is_labeled(e.v)) continue;
    ++total;
    if (g.y[static_cast<size_t>(e.u)] != g.y[static_cast<size_t>(e.v)]) ++cross;
  }
  return total == 0 ? 0.0 : static_cast<double>(cross) / total;
}

namespace {

struct Move {
  bool add = false;
  graph::Edge edge;
};

// Candidate generation: additions pair high-degree labeled nodes across
// classes; deletions target same-class edges, highest degree sum first.
std::optional<Move> best_move(const graph::GraphDataset& g, const Scorer& scorer,
                              const std::set<std::pair<int, int>>& present) {
  std::vector<int> degree(static_cast<size_t>(g.n), 0);
  for (const graph::Edge& e : g.edges) {
    degree[static_cast<size_t>(e.u)]++;
    degree[static_cast<size_t>(e.v)]++;
  }
  std::vector<int> labeled;
  for (int i = 0; i < g.n; ++i)
    if (g.is_labeled(i)) labeled.push_back(i);
  std::stable_sort(labeled.begin(), labeled.end(), [&](int a, int b) {
    return degree[static_cast<size_t>(a)] > degree[static_cast<size_t>(b)];
  });
  const size_t cap = std::min<size_t>(labeled.size(), 64);

  double base = scorer(g);
  std::optional<Move> best;
  double best_gain = 0.0;

  auto consider = [&](const Move& mv) {
    graph::GraphDataset trial = g;
    if (mv.add) {
      trial.edges.push_back(mv.edge);
    } else {
      trial.edges.erase(std::remove(trial.edges.begin(), trial.edges.end(), mv.edge),
                        trial.edges.end());
    }
    double gain = scorer(trial) - base;
    if (!best || gain > best_gain + 1e-15) {
      best = mv;
      best_gain = gain;
    }
  };

  // best addition among top-degree cross-class pairs
  bool found_add = false;
  for (size_t a = 0; a < cap && !found_add; ++a) {
    for (size_t b = a + 1; b < cap && !found_add; ++b) {
      int u = labeled[a], v = labeled[b];
      if (g.y[static_cast<size_t>(u)] == g.y[static_cast<size_t>(v)]) continue;
      auto key = std::minmax(u, v);
      if (present.count({key.first, key.second})) continue;
      consider({true, {key.first, key.second}});
      found_add = true;  // degree-ordered scan: first legal pair is the heaviest
    }
  }

  // best deletion: same-class edge with the largest degree sum
  int best_deg = -1;
  std::optional<graph::Edge> del;
  for (const graph::Edge& e : g.edges) {
    if (!g.is_labeled(e.u) || !g.is_labeled(e.v)) continue;
    if (g.y[static_cast<size_t>(e.u)] != g.y[static_cast<size_t>(e.v)]) continue;
    int ds = degree[static_cast<size_t>(e.u)] + degree[static_cast<size_t>(e.v)];
    if (ds > best_deg) {
      best_deg = ds;
      del = e;
    }
  }
  if (del) consider({false, *del});

  if (best && best_gain <= 0.0) return std::nullopt;  // scorer cannot improve
  return best;
}

}  // namespace

graph::GraphDataset adversarial_flip(const graph::GraphDataset& g, double budget_frac,
                                     const Scorer& scorer, uint64_t seed, FlipReport* report) {
  if (budget_frac < 0.0) throw PreconditionError("budget must be non-negative");
  (void)seed;  // the heuristic is deterministic; the seed keys future scorers
  int budget = static_cast<int>(std::lround(budget_frac * g.num_edges()));
  graph::GraphDataset out = g;
  FlipReport rep;
  rep.requested = budget;

  std::set<std::pair<int, int>> present;
  for (const graph::Edge& e : out.edges) present.insert({e.u, e.v});

  for (int step = 0; step < budget; ++step) {
    std::optional<Move> mv = best_move(out, scorer, present);
    if (!mv) break;  // no legal improving move left
    if (mv->add) {
      out.edges.push_back(mv->edge);
      present.insert({mv->edge.u, mv->edge.v});
    } else {
      out.edges.erase(std::remove(out.edges.begin(), out.edges.end(), mv->edge),
                      out.edges.end());
      present.erase({mv->edge.u, mv->edge.v});
    }
    rep.applied++;
  }
  if (report) *report = rep;
  return out;
}

graph::GraphDataset adversarial_flip(const graph::GraphDataset& g, double budget_frac,
                                     uint64_t seed, FlipReport* report) {
  return adversarial_flip(g, budget_frac, cross_class_fraction, seed, report);
}

std::vector<CurveCell> robustness_curve(const graph::GraphDataset& g, const TrainerFn& trainer,
                                        Kind kind, const std::vector<double>& grid,
                                        const std::vector<uint64_t>& seeds) {
  for (size_t i = 1; i < grid.size(); ++i)
    if (grid[i] < grid[i - 1]) throw PreconditionError("magnitude grid must be ascending");
  if (seeds.empty()) throw PreconditionError("need at least one seed");

  std::vector<CurveCell> out;
  for (double mag : grid) {
    CurveCell cell;
    cell.magnitude = mag;
    std::vector<double> accs;
    for (uint64_t seed : seeds) {
      PerturbationSpec spec{kind, mag, seed};
      graph::GraphDataset perturbed = apply(g, spec);
      std::optional<double> acc = trainer(perturbed, seed);
      if (acc.has_value())
        accs.push_back(*acc);
      else
        cell.aborted++;
    }
    cell.completed = static_cast<int>(accs.size());
    if (!accs.empty()) {
      double mean = 0.0;
      for (double a : accs) mean += a;
      mean /= accs.size();
      double var = 0.0;
      for (double a : accs) var += (a - mean) * (a - mean);
      cell.mean_acc = mean;
      cell.std_acc = accs.size() > 1 ? std::sqrt(var / (accs.size() - 1)) : 0.0;
    }
    out.push_back(cell);
  }
  return out;
}

}  // namespace spam::perturb
