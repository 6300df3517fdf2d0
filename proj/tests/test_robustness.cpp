#include "spam/robustness.hpp"

#include "spam/csbm.hpp"

#include <doctest.h>

#include <cmath>

using namespace spam;
using namespace spam::perturb;

namespace {

graph::GraphDataset random_graph(int n, double p, int classes, uint64_t seed) {
  Rng rng(seed);
  graph::GraphDataset g;
  g.n = n;
  g.X = random_gaussian(n, 4, rng);
  g.num_classes = classes;
  g.y.resize(static_cast<size_t>(n));
  g.labeled.assign(static_cast<size_t>(n), 1);
  for (int i = 0; i < n; ++i) g.y[static_cast<size_t>(i)] = rng.uniform_int(classes);
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v)
      if (rng.uniform() < p) g.edges.push_back({u, v});
  return g;
}

}  // namespace

TEST_CASE("delete_edges: exact counts and subset property") {
  graph::GraphDataset g = random_graph(30, 0.25, 2, 3);
  while (g.num_edges() > 100) g.edges.pop_back();
  while (g.num_edges() < 100) {
    graph::GraphDataset extra = random_graph(30, 0.2, 2, g.num_edges() + 7u);
    for (const graph::Edge& e : extra.edges) {
      if (std::find(g.edges.begin(), g.edges.end(), e) == g.edges.end()) {
        g.edges.push_back(e);
        if (g.num_edges() == 100) break;
      }
    }
  }
  REQUIRE(g.num_edges() == 100);

  graph::GraphDataset same = delete_edges(g, 0.0, 5);
  CHECK(same.edges == g.edges);
  CHECK(same.X == g.X);

  graph::GraphDataset none = delete_edges(g, 1.0, 5);
  CHECK(none.num_edges() == 0);

  graph::GraphDataset half = delete_edges(g, 0.5, 5);
  CHECK(half.num_edges() == 50);
  for (const graph::Edge& e : half.edges)
    CHECK(std::find(g.edges.begin(), g.edges.end(), e) != g.edges.end());

  graph::GraphDataset again = delete_edges(g, 0.5, 5);
  CHECK(again.edges == half.edges);  // deterministic for a fixed seed
}

TEST_CASE("delete_edges commutes with node relabeling") {
  graph::GraphDataset g = random_graph(12, 0.4, 2, 7);
  std::vector<int> perm(12);
  for (int i = 0; i < 12; ++i) perm[i] = (i * 5 + 3) % 12;

  graph::GraphDataset relabeled = g;
  for (int i = 0; i < 12; ++i) {
    relabeled.X.row(perm[i]) = g.X.row(i);
    relabeled.y[static_cast<size_t>(perm[i])] = g.y[static_cast<size_t>(i)];
  }
  relabeled.edges.clear();
  for (const graph::Edge& e : g.edges) {
    int u = perm[e.u], v = perm[e.v];
    relabeled.edges.push_back({std::min(u, v), std::max(u, v)});
  }

  graph::GraphDataset da = delete_edges(g, 0.4, 11);
  graph::GraphDataset db = delete_edges(relabeled, 0.4, 11);
  REQUIRE(da.num_edges() == db.num_edges());
  for (size_t e = 0; e < da.edges.size(); ++e) {
    int u = perm[da.edges[e].u], v = perm[da.edges[e].v];
    graph::Edge mapped{std::min(u, v), std::max(u, v)};
    CHECK(db.edges[e] == mapped);
  }
}

TEST_CASE("feature noise: moments, and nothing else changes") {
  graph::GraphDataset g = random_graph(100, 0.05, 2, 13);
  g.X = Matrix::Zero(100, 100);  // n*d = 10^4 entries

  graph::GraphDataset same = add_feature_noise(g, 0.0, 17);
  CHECK(same.X == g.X);

  graph::GraphDataset noisy = add_feature_noise(g, 1.0, 17);
  Matrix delta = noisy.X - g.X;
  double mean = delta.mean();
  double var = (delta.array() - mean).square().sum() / (delta.size() - 1.0);
  CHECK(std::fabs(var - 1.0) < 0.05);
  CHECK(noisy.edges == g.edges);
  CHECK(noisy.y == g.y);
  CHECK(graph::homophily_ratio(noisy) == graph::homophily_ratio(g));
}

TEST_CASE("adversarial flip: identity at zero budget, monotone score, exact count") {
  csbm::CsbmConfig cfg;
  cfg.n = 40;
  cfg.classes = 2;
  cfg.p_in = 0.25;
  cfg.p_out = 0.05;
  cfg.means = csbm::orthogonal_means(2, 4, 1.0);
  cfg.noise = 0.3;
  cfg.seed = 19;
  graph::GraphDataset g = csbm::generate(cfg).g;

  FlipReport rep;
  graph::GraphDataset same = adversarial_flip(g, 0.0, 23, &rep);
  CHECK(rep.applied == 0);
  CHECK(same.edges == g.edges);

  // score is non-decreasing step by step
  double prev = cross_class_fraction(g);
  graph::GraphDataset cur = g;
  for (int step = 0; step < 5; ++step) {
    cur = adversarial_flip(cur, 1.0 / cur.num_edges(), 23, &rep);
    REQUIRE(rep.applied == 1);
    double score = cross_class_fraction(cur);
    CHECK(score >= prev);
    prev = score;
  }

  double budget_frac = 5.0 / g.num_edges();
  FlipReport rep5;
  graph::GraphDataset attacked = adversarial_flip(g, budget_frac, 23, &rep5);
  CHECK(rep5.requested == 5);
  CHECK(rep5.applied == 5);
  CHECK(graph::homophily_ratio(attacked) < graph::homophily_ratio(g));

  // budget beyond the legal moves is reported as partial
  graph::GraphDataset tiny;
  tiny.n = 2;
  tiny.X = Matrix::Ones(2, 1);
  tiny.y = {0, 1};
  tiny.labeled = {1, 1};
  tiny.edges = {{0, 1}};
  tiny.num_classes = 2;
  FlipReport partial;
  graph::GraphDataset t2 = adversarial_flip(tiny, 3.0, 29, &partial);
  CHECK(partial.applied < partial.requested);
}

TEST_CASE("robustness_curve: shapes, zero-magnitude identity, aborted cells") {
  graph::GraphDataset g = random_graph(24, 0.3, 2, 31);

  auto fake_trainer = [&](const graph::GraphDataset& pg,
                          uint64_t seed) -> std::optional<double> {
    if (pg.num_edges() == 0) return std::nullopt;  // simulated abort
    (void)seed;
    return static_cast<double>(pg.num_edges()) / g.num_edges();
  };

  std::vector<double> grid{0.0, 0.5, 1.0};
  std::vector<uint64_t> seeds{1, 2, 3};
  auto curve = robustness_curve(g, fake_trainer, Kind::kDeleteEdges, grid, seeds);
  REQUIRE(curve.size() == 3);
  CHECK(curve[0].magnitude == 0.0);
  CHECK(curve[0].mean_acc == doctest::Approx(1.0));
  CHECK(curve[0].std_acc == doctest::Approx(0.0));
  CHECK(curve[0].completed == 3);
  CHECK(curve[2].aborted == 3);  // every edge deleted -> abort per seed
  CHECK(curve[2].completed == 0);

  CHECK_THROWS_AS(robustness_curve(g, fake_trainer, Kind::kDeleteEdges, {0.5, 0.1}, seeds),
                  PreconditionError);
}

TEST_CASE("perturbation specs validate their magnitudes") {
  PerturbationSpec bad{Kind::kDeleteEdges, 1.5, 0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  PerturbationSpec neg{Kind::kFeatureNoise, -0.1, 0};
  CHECK_THROWS_AS(neg.validate(), ConfigError);
  PerturbationSpec ok{Kind::kAdversarialFlip, 0.2, 0};
  ok.validate();
}
