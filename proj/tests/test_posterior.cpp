#include "spam/posterior.hpp"

#include <doctest.h>

#include <cmath>

using namespace spam;
using namespace spam::posterior;

namespace {

graph::GraphDataset path3() {
  graph::GraphDataset g;
  g.n = 3;
  g.X = Matrix::Zero(3, 1);
  g.X << 1.0, 2.0, 3.0;
  g.y = {0, 1, 0};
  g.labeled = {1, 1, 1};
  g.edges = {{0, 1}, {1, 2}};
  g.num_classes = 2;
  return g;
}

ParamStore tiny_posterior_params(int cond_dim, const PosteriorConfig& cfg, uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  init_params(store, cond_dim, cfg, rng);
  return store;
}

}  // namespace

TEST_CASE("label conditioning appends one-hot train labels only") {
  graph::GraphDataset g = path3();
  Matrix cond = label_conditioned_features(g, {0});
  CHECK(cond.rows() == 3);
  CHECK(cond.cols() == 3);  // 1 feature + 2 classes
  CHECK(cond(0, 1) == 1.0);
  CHECK(cond(1, 1) == 0.0);  // node 1 not in the conditioning set
  CHECK(cond(1, 2) == 0.0);
  CHECK(cond(2, 1) == 0.0);
}

TEST_CASE("encode: zero weights give zero embeddings; isolated node sees itself") {
  graph::GraphDataset g = path3();
  PosteriorConfig cfg;
  cfg.encoder_hidden = 4;
  ParamStore store = tiny_posterior_params(3, cfg, 1);
  store.at("enc.w1").setZero();
  store.at("enc.w2").setZero();

  auto adj = std::make_shared<const CsrMatrix>(graph::normalized_adjacency(g));
  Matrix cond = label_conditioned_features(g, {});
  diff::Tape tape;
  TapeBinding bind(tape, store);
  CHECK(encode(tape, bind, adj, cond).value().isZero(0.0));

  // isolated node: embedding depends only on its own features
  graph::GraphDataset iso = g;
  iso.edges = {{0, 1}};  // node 2 isolated
  auto adj_iso = std::make_shared<const CsrMatrix>(graph::normalized_adjacency(iso));
  ParamStore st2 = tiny_posterior_params(3, cfg, 2);
  Matrix cond_a = label_conditioned_features(iso, {});
  Matrix cond_b = cond_a;
  cond_b(0, 0) = 99.0;  // perturb another node's features
  diff::Tape t2;
  TapeBinding b2(t2, st2);
  Matrix ha = encode(t2, b2, adj_iso, cond_a).value();
  diff::Tape t3;
  TapeBinding b3(t3, st2);
  Matrix hb = encode(t3, b3, adj_iso, cond_b).value();
  CHECK(ha.row(2) == hb.row(2));
  CHECK(ha.row(0) != hb.row(0));
}

TEST_CASE("encode matches hand arithmetic on a 3-node path with 1x1 weights") {
  graph::GraphDataset g = path3();
  g.num_classes = 2;
  PosteriorConfig cfg;
  cfg.encoder_hidden = 1;
  ParamStore store;
  store.add("enc.w1", Matrix::Constant(1, 1, 2.0));
  store.add("enc.w2", Matrix::Constant(1, 1, 0.5));
  store.add("dec.w1", Matrix::Zero(2, 1));
  store.add("dec.b1", Matrix::Zero(1, 1));
  store.add("dec.w2", Matrix::Zero(1, 3));
  store.add("dec.b2", Matrix::Zero(1, 3));

  // features only (no conditioning), d = 1
  Matrix cond = g.X;
  auto adj = std::make_shared<const CsrMatrix>(graph::normalized_adjacency(g));
  diff::Tape tape;
  TapeBinding bind(tape, store);
  Matrix h = encode(tape, bind, adj, cond).value();

  // degrees with self-loops: 2, 3, 2
  double s01 = 1.0 / std::sqrt(6.0), s12 = 1.0 / std::sqrt(6.0);
  Eigen::Vector3d a1(0.5 * 1.0 + s01 * 2.0, s01 * 1.0 + 2.0 / 3.0 + s12 * 3.0,
                     s12 * 2.0 + 0.5 * 3.0);
  Eigen::Vector3d r1 = (2.0 * a1).cwiseMax(0.0);
  Eigen::Vector3d a2(0.5 * r1(0) + s01 * r1(1), s01 * r1(0) + r1(1) / 3.0 + s12 * r1(2),
                     s12 * r1(1) + 0.5 * r1(2));
  Eigen::Vector3d expect = 0.5 * a2;
  for (int i = 0; i < 3; ++i) CHECK(h(i, 0) == doctest::Approx(expect(i)).epsilon(1e-12));
}

TEST_CASE("edge posterior: zero decoder is uniform, saturation, symmetry") {
  graph::GraphDataset g = path3();
  PosteriorConfig cfg;
  cfg.encoder_hidden = 4;
  cfg.decoder_hidden = 8;
  ParamStore store = tiny_posterior_params(3, cfg, 3);
  store.at("dec.w2").setZero();
  store.at("dec.b2").setZero();

  auto adj = std::make_shared<const CsrMatrix>(graph::normalized_adjacency(g));
  Matrix cond = label_conditioned_features(g, {});
  diff::Tape tape;
  TapeBinding bind(tape, store);
  diff::Var h = encode(tape, bind, adj, cond);
  Matrix logits = edge_logit_vars(tape, bind, h, g.edges).value();
  EdgePosterior ep = posterior_from_logits(logits);
  ep.validate();
  for (int e = 0; e < ep.num_edges(); ++e)
    for (int c = 0; c < 3; ++c) CHECK(ep.probs(e, c) == doctest::Approx(1.0 / 3.0));

  Matrix sat(1, 3);
  sat << 10.0, 0.0, 0.0;
  EdgePosterior sp = posterior_from_logits(sat);
  CHECK(sp.probs(0, 0) > 0.9999);

  // decoding (i, j) must equal decoding (j, i) bitwise: flip the edge
  ParamStore st2 = tiny_posterior_params(3, cfg, 4);
  diff::Tape t2;
  TapeBinding b2(t2, st2);
  diff::Var h2 = encode(t2, b2, adj, cond);
  Matrix fwd = edge_logit_vars(t2, b2, h2, {{0, 1}}).value();
  std::vector<graph::Edge> rev_edges = {{0, 1}};
  // same unordered pair presented in the other order through the gathers
  diff::Tape t3;
  TapeBinding b3(t3, st2);
  diff::Var h3 = encode(t3, b3, adj, cond);
  std::vector<int> us{1}, vs{0};
  diff::Var hu = diff::rows_gather(h3, us);
  diff::Var hv = diff::rows_gather(h3, vs);
  diff::Var pair =
      diff::scale(diff::add(diff::concat_cols(hu, hv), diff::concat_cols(hv, hu)), 0.5);
  diff::Var hid =
      diff::relu(diff::add_rowvec(diff::matmul(pair, b3["dec.w1"]), b3["dec.b1"]));
  Matrix rev = diff::add_rowvec(diff::matmul(hid, b3["dec.w2"]), b3["dec.b2"]).value();
  CHECK(fwd == rev);
}

TEST_CASE("sampling: saturation, marginals, and support stay on observed edges") {
  EdgePosterior ep;
  ep.probs.resize(1, 3);
  ep.probs << 0.999, 0.0005, 0.0005;
  int hits = 0;
  for (int s = 0; s < 1000; ++s) {
    graph::SignedAdjacency z = sample_signed(ep, 0.05, derive_seed(99, s));
    if (z.states[0] == -1) ++hits;
  }
  CHECK(hits > 990);

  EdgePosterior uni;
  uni.probs = Matrix::Constant(2, 3, 1.0 / 3.0);
  int counts[2][3] = {};
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) {
    graph::SignedAdjacency z = sample_signed(uni, 1.0, derive_seed(7, s));
    for (int e = 0; e < 2; ++e) counts[e][z.states[e] + 1]++;
  }
  for (int e = 0; e < 2; ++e)
    for (int c = 0; c < 3; ++c)
      CHECK(std::fabs(counts[e][c] / static_cast<double>(draws) - 1.0 / 3.0) < 0.02);

  // support: one state per observed edge, nothing else representable
  graph::GraphDataset g = path3();
  for (int s = 0; s < 1000; ++s) {
    graph::SignedAdjacency z = sample_signed(uni, 1.0, derive_seed(13, s));
    REQUIRE(z.states.size() == g.edges.size());
    for (int8_t st : z.states) CHECK((st == -1 || st == 0 || st == 1));
  }
}

TEST_CASE("sampled frequencies pass a chi-squared test against the posterior") {
  EdgePosterior ep;
  ep.probs.resize(3, 3);
  ep.probs << 0.2, 0.3, 0.5, 0.6, 0.1, 0.3, 0.25, 0.5, 0.25;
  const int draws = 10000;
  Matrix counts = Matrix::Zero(3, 3);
  for (int s = 0; s < draws; ++s) {
    graph::SignedAdjacency z = sample_signed(ep, 0.7, derive_seed(21, s));
    for (int e = 0; e < 3; ++e) counts(e, z.states[e] + 1) += 1.0;
  }
  for (int e = 0; e < 3; ++e) {
    double chi2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      double expect = draws * ep.probs(e, c);
      chi2 += (counts(e, c) - expect) * (counts(e, c) - expect) / expect;
    }
    CHECK(chi2 < 9.210);  // df = 2, significance 0.01
  }
}

TEST_CASE("kl to prior: zero at prior, ln 3 for one-hot vs uniform, matches direct sum") {
  std::array<double, 3> uniform{1.0 / 3, 1.0 / 3, 1.0 / 3};
  EdgePosterior ep;
  ep.probs = Matrix::Constant(4, 3, 1.0 / 3.0);
  CHECK(kl_to_prior(ep, uniform) == doctest::Approx(0.0));

  EdgePosterior onehot;
  onehot.probs.resize(1, 3);
  onehot.probs << 1.0, 0.0, 0.0;
  CHECK(kl_to_prior(onehot, uniform) == doctest::Approx(std::log(3.0)));

  Rng rng(5);
  EdgePosterior rnd;
  rnd.probs.resize(5, 3);
  for (int e = 0; e < 5; ++e) {
    double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
    double s = a + b + c;
    rnd.probs.row(e) << a / s, b / s, c / s;
  }
  std::array<double, 3> prior{0.2, 0.5, 0.3};
  double direct = 0.0;
  for (int e = 0; e < 5; ++e)
    for (int c = 0; c < 3; ++c)
      direct += rnd.probs(e, c) * (std::log(rnd.probs(e, c)) - std::log(prior[c]));
  CHECK(std::fabs(kl_to_prior(rnd, prior) - direct) < 1e-12);

  std::array<double, 3> bad{0.5, 0.5, 0.0};
  CHECK_THROWS_AS(kl_to_prior(rnd, bad), PreconditionError);

  // non-negativity on constructed cases
  CHECK(kl_to_prior(rnd, prior) >= 0.0);
}

TEST_CASE("reconstruction log-likelihood closed forms") {
  const double eps = 0.05;
  Matrix all_edge(4, 3);
  all_edge << 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.2, 0.0, 0.8, 0.0, 0.0, 1.0;
  CHECK(recon_loglik(all_edge, eps) == doctest::Approx(4.0 * std::log(0.95)));

  Matrix all_zero = Matrix::Zero(3, 3);
  all_zero.col(1).setOnes();
  CHECK(recon_loglik(all_zero, eps) == doctest::Approx(3.0 * std::log(0.05)));

  Rng rng(9);
  Matrix mixed(6, 3);
  for (int e = 0; e < 6; ++e) {
    double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
    double s = a + b + c;
    mixed.row(e) << a / s, b / s, c / s;
  }
  double direct = 0.0;
  for (int e = 0; e < 6; ++e)
    direct += (mixed(e, 0) + mixed(e, 2)) * std::log(1 - eps) + mixed(e, 1) * std::log(eps);
  CHECK(std::fabs(recon_loglik(mixed, eps) - direct) < 1e-12);

  CHECK_THROWS_AS(recon_loglik(mixed, 0.7), PreconditionError);
}

TEST_CASE("gradients flow from the soft relaxation to the logits") {
  Rng rng(11);
  Matrix logits0 = random_gaussian(4, 3, rng);
  const uint64_t noise_seed = 1234;
  double err = diff::grad_check(
      [&](diff::Tape& t, const std::vector<diff::Var>& p) {
        SampledStructure s =
            sample_signed_tape(t, p[0], 0.8, noise_seed, GateMode::kSoft);
        // a loss that uses the gate nonlinearly
        return diff::sum(diff::hadamard(s.gate, s.gate));
      },
      {logits0});
  CHECK(err < 1e-4);

  // and the gradient is actually nonzero for an interior posterior
  diff::Tape t;
  diff::Var lv = t.leaf(logits0);
  SampledStructure s = sample_signed_tape(t, lv, 0.8, noise_seed, GateMode::kSoft);
  t.backward(diff::sum(diff::hadamard(s.gate, s.gate)));
  CHECK(lv.grad().cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("straight-through mode: hard forward, soft backward") {
  Rng rng(13);
  Matrix logits0 = random_gaussian(5, 3, rng);
  diff::Tape t;
  diff::Var lv = t.leaf(logits0);
  SampledStructure s = sample_signed_tape(t, lv, 0.5, 777, GateMode::kStraightThrough);
  CHECK(s.gate.value().isApprox(Matrix::Ones(5, 1), 0.0));
  t.backward(diff::sum(s.gate));
  CHECK(lv.grad().cwiseAbs().maxCoeff() > 0.0);
  // hard states agree with the soft argmax
  for (int e = 0; e < 5; ++e) {
    Eigen::Index arg;
    s.soft.row(e).maxCoeff(&arg);
    CHECK(static_cast<int>(s.hard.states[e]) == static_cast<int>(arg) - 1);
  }
}
