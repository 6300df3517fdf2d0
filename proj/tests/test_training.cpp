#include "spam/training.hpp"

#include "spam/csbm.hpp"
#include "spam/verify.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace spam;
using namespace spam::train;

namespace {

csbm::CsbmSample easy_homophilic(int n, uint64_t seed) {
  csbm::CsbmConfig cfg;
  cfg.n = n;
  cfg.classes = 2;
  cfg.p_in = 0.15;
  cfg.p_out = 0.02;
  cfg.means = csbm::orthogonal_means(2, 4, 2.0);
  cfg.noise = 0.4;
  cfg.seed = seed;
  return csbm::generate(cfg);
}

csbm::CsbmSample heterophilic(int n, double noise, uint64_t seed) {
  csbm::CsbmConfig cfg;
  cfg.n = n;
  cfg.classes = 2;
  cfg.p_in = 0.05;
  cfg.p_out = 0.2;
  cfg.means = csbm::orthogonal_means(2, 4, 1.0);
  cfg.noise = noise;
  cfg.seed = seed;
  return csbm::generate(cfg);
}

TrainConfig small_train_config(uint64_t seed) {
  TrainConfig cfg;
  cfg.layers = 2;
  cfg.d_val = 16;
  cfg.d_out = 16;
  cfg.encoder_hidden = 16;
  cfg.decoder_hidden = 16;
  cfg.mc_train = 3;
  cfg.mc_eval = 4;
  cfg.max_epochs = 60;
  cfg.patience = 60;
  cfg.dropout = 0.2;
  cfg.seed = seed;
  return cfg;
}

graph::GraphDataset onehot_dataset() {
  graph::GraphDataset g;
  g.n = 4;
  g.X = Matrix::Zero(4, 2);
  g.y = {0, 1, 0, 1};
  for (int i = 0; i < 4; ++i) g.X(i, g.y[static_cast<size_t>(i)]) = 1.0;
  g.labeled.assign(4, 1);
  g.num_classes = 2;
  return g;
}

// A model whose prediction is exactly the feature one-hot.
Model copying_model(const graph::GraphDataset& g) {
  Model model;
  model.cfg = TrainConfig{};
  model.cfg.layers = 1;
  model.cfg.d_val = 2;
  model.cfg.d_out = 2;
  model.cfg.dropout = 0.0;
  model.params.add("net.l0.wv", Matrix::Identity(2, 2));
  model.params.add("net.l0.wt", Matrix::Identity(2, 2));
  model.params.add("net.l0.wo", Matrix::Zero(2, 2));
  model.params.add("net.l0.b", Matrix::Zero(1, 2));
  model.params.add("net.l0.wself", 5.0 * Matrix::Identity(2, 2));
  model.params.add("net.l0.eta", Matrix::Constant(1, 1, 0.5));
  model.params.add("net.cls.w", 5.0 * Matrix::Identity(2, 2));
  model.params.add("net.cls.b", Matrix::Zero(1, 2));
  model.ep.probs = Matrix::Zero(g.num_edges(), 3);
  model.ep.probs.col(1).setOnes();
  return model;
}

}  // namespace

TEST_CASE("evaluate: exact predictions give accuracy 1, tie-break goes low") {
  graph::GraphDataset g = onehot_dataset();
  Model model = copying_model(g);
  CHECK(evaluate(g, {0, 1, 2, 3}, model, 1, 5) == 1.0);

  // zero classifier: uniform rows, argmax ties resolve to class 0
  model.params.at("net.cls.w").setZero();
  double acc = evaluate(g, {0, 1, 2, 3}, model, 1, 5);
  CHECK(acc == 0.5);  // exactly the class-0 share on balanced labels
}

TEST_CASE("loss_total: clamped perfect predictions and weight switches") {
  graph::GraphDataset g = onehot_dataset();
  Model model = copying_model(g);
  model.params.at("net.cls.w") *= 20.0;  // saturate the softmax
  graph::LabelSplit split;
  split.train = {0, 1, 2, 3};

  TrainConfig cfg = model.cfg;
  // give the posterior parameters their shapes so loss_total can run
  ParamStore store;
  Rng rng(3);
  posterior::init_params(store, g.feature_dim() + g.num_classes, cfg.posterior_config(), rng);
  for (size_t p = 0; p < model.params.size(); ++p)
    store.add(model.params.names[p], model.params.values[p]);

  cfg.lambda_sp = 0.0;
  cfg.lambda_st = 0.0;
  LossParts parts = loss_total(g, split, store, cfg, 0.8, 17);
  CHECK(parts.cls < 1e-6);
  CHECK(parts.total == parts.cls);

  cfg.lambda_sp = 0.01;
  cfg.lambda_st = 0.1;
  LossParts full = loss_total(g, split, store, cfg, 0.8, 17);
  CHECK(full.total ==
        doctest::Approx(full.cls + 0.01 * full.sparse + 0.1 * full.structural).epsilon(1e-12));

  // monotone in lambda_sp for fixed parameters and fixed structures
  cfg.lambda_sp = 0.5;
  LossParts more = loss_total(g, split, store, cfg, 0.8, 17);
  CHECK(more.total >= full.total - 1e-12);
}

TEST_CASE("loss_total matches an independent recomputation of the objective") {
  Rng data_rng(31);
  graph::GraphDataset g;
  g.n = 4;
  g.X = random_gaussian(4, 2, data_rng);
  g.y = {0, 1, 1, 0};
  g.labeled = {1, 1, 1, 1};
  g.edges = {{0, 1}, {1, 2}, {0, 3}};
  g.num_classes = 2;

  TrainConfig cfg;
  cfg.layers = 1;
  cfg.d_val = 2;
  cfg.d_out = 2;
  cfg.encoder_hidden = 2;
  cfg.decoder_hidden = 2;
  cfg.mc_train = 2;
  cfg.coder_steps = 2;
  cfg.dropout = 0.0;
  cfg.seed = 9;

  ParamStore store;
  Rng rng(41);
  posterior::init_params(store, g.feature_dim() + g.num_classes, cfg.posterior_config(), rng);
  net::init_params(store, g.feature_dim(), g.num_classes, cfg.net_config(), rng);

  graph::LabelSplit split;
  split.train = {0, 2};
  const double tau = 0.8;
  const uint64_t seed = 555;
  LossParts got = loss_total(g, split, store, cfg, tau, seed);

  // ---- independent dense recomputation --------------------------------
  const int n = 4, m = 3, C = 2;
  Matrix cond = Matrix::Zero(n, 2 + C);
  cond.leftCols(2) = g.X;
  cond(0, 2 + 0) = 1.0;
  cond(2, 2 + 1) = 1.0;

  Eigen::Vector4d deg(1, 1, 1, 1);
  for (const graph::Edge& e : g.edges) {
    deg(e.u) += 1;
    deg(e.v) += 1;
  }
  Matrix ahat = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) ahat(i, i) = 1.0 / deg(i);
  for (const graph::Edge& e : g.edges) {
    double w = 1.0 / std::sqrt(deg(e.u) * deg(e.v));
    ahat(e.u, e.v) = w;
    ahat(e.v, e.u) = w;
  }

  Matrix h1 = (ahat * cond * store.at("enc.w1")).cwiseMax(0.0);
  Matrix hphi = ahat * h1 * store.at("enc.w2");

  Matrix logits(m, 3);
  for (int e = 0; e < m; ++e) {
    int u = g.edges[static_cast<size_t>(e)].u, v = g.edges[static_cast<size_t>(e)].v;
    Matrix pair(1, 2 * hphi.cols());
    pair << 0.5 * (hphi.row(u) + hphi.row(v)), 0.5 * (hphi.row(v) + hphi.row(u));
    Matrix hid = (pair * store.at("dec.w1") + store.at("dec.b1")).cwiseMax(0.0);
    logits.row(e) = hid * store.at("dec.w2") + store.at("dec.b2");
  }
  auto softmax_row = [](Eigen::RowVectorXd r) {
    double mx = r.maxCoeff();
    Eigen::ArrayXd e = (r.array() - mx).exp();
    return Eigen::RowVectorXd((e / e.sum()).matrix());
  };
  Matrix pi(m, 3);
  for (int e = 0; e < m; ++e) pi.row(e) = softmax_row(logits.row(e));

  double kl = 0.0, recon = 0.0;
  for (int e = 0; e < m; ++e) {
    for (int c = 0; c < 3; ++c) kl += pi(e, c) * (std::log(pi(e, c)) - std::log(1.0 / 3.0));
    recon += (pi(e, 0) + pi(e, 2)) * std::log(1 - cfg.epsilon) +
             pi(e, 1) * std::log(cfg.epsilon);
  }
  double structural = kl - recon;

  Matrix vall = g.X * store.at("net.l0.wv");
  Matrix tall = g.X * store.at("net.l0.wt").transpose();
  Matrix self = g.X * store.at("net.l0.wself").transpose();
  double eta = store.at("net.l0.eta")(0, 0);

  Matrix prob_sum = Matrix::Zero(n, C);
  double alpha_l1 = 0.0;
  for (int k = 0; k < cfg.mc_train; ++k) {
    Rng noise(derive_seed(seed, 1000 + static_cast<uint64_t>(k)));
    Matrix gum(m, 3);
    for (int e = 0; e < m; ++e)
      for (int c = 0; c < 3; ++c) gum(e, c) = noise.gumbel();
    std::vector<int> state(m);
    for (int e = 0; e < m; ++e) {
      Eigen::RowVectorXd soft = softmax_row((logits.row(e) + gum.row(e)) / tau);
      Eigen::Index arg;
      soft.maxCoeff(&arg);
      state[static_cast<size_t>(e)] = static_cast<int>(arg) - 1;
    }

    Matrix hout(n, 2);
    for (int i = 0; i < n; ++i) {
      std::vector<int> nbrs, signs;
      for (int e = 0; e < m; ++e) {
        if (state[static_cast<size_t>(e)] == 0) continue;
        int other = -1;
        if (g.edges[static_cast<size_t>(e)].u == i) other = g.edges[static_cast<size_t>(e)].v;
        if (g.edges[static_cast<size_t>(e)].v == i) other = g.edges[static_cast<size_t>(e)].u;
        if (other < 0) continue;
        nbrs.push_back(other);
        signs.push_back(state[static_cast<size_t>(e)]);
      }
      Eigen::RowVectorXd agg = Eigen::RowVectorXd::Zero(2);
      if (!nbrs.empty()) {
        size_t kk = nbrs.size();
        Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(kk));
        Matrix dict(kk, 2);
        for (size_t j = 0; j < kk; ++j) dict.row(static_cast<Eigen::Index>(j)) = vall.row(nbrs[j]);
        for (int step = 0; step < cfg.coder_steps; ++step) {
          Eigen::RowVectorXd resid = tall.row(i) - (a.transpose() * dict);
          Eigen::VectorXd z = a + 2.0 * eta * (dict * resid.transpose());
          for (Eigen::Index j = 0; j < z.size(); ++j) {
            double tau_thr = eta * cfg.lambda;
            a(j) = (std::fabs(z(j)) <= tau_thr) ? 0.0 : (z(j) > 0 ? z(j) - tau_thr : z(j) + tau_thr);
          }
        }
        alpha_l1 += a.cwiseAbs().sum();
        for (size_t j = 0; j < kk; ++j) {
          if (signs[j] > 0)
            agg += a(static_cast<Eigen::Index>(j)) * dict.row(static_cast<Eigen::Index>(j));
          else
            agg -= cfg.gamma * std::fabs(a(static_cast<Eigen::Index>(j))) *
                   dict.row(static_cast<Eigen::Index>(j));
        }
      }
      hout.row(i) = self.row(i) + agg * store.at("net.l0.wo").transpose() +
                    store.at("net.l0.b").row(0);
    }
    hout = hout.cwiseMax(0.0);
    Matrix cls_logits = hout * store.at("net.cls.w").transpose();
    cls_logits.rowwise() += store.at("net.cls.b").row(0);
    for (int i = 0; i < n; ++i) prob_sum.row(i) += softmax_row(cls_logits.row(i));
  }
  Matrix phat = prob_sum / cfg.mc_train;
  double cls = 0.0;
  for (int i : split.train)
    cls -= std::log(std::max(phat(i, g.y[static_cast<size_t>(i)]), 1e-12));
  cls /= static_cast<double>(split.train.size());
  double sparse = alpha_l1 / (static_cast<double>(n) * cfg.mc_train);
  double total = cls + cfg.lambda_sp * sparse + cfg.lambda_st * structural;

  CHECK(std::fabs(got.cls - cls) < 1e-9);
  CHECK(std::fabs(got.sparse - sparse) < 1e-9);
  CHECK(std::fabs(got.structural - structural) < 1e-9);
  CHECK(std::fabs(got.total - total) < 1e-9);
}

TEST_CASE("gradient of the full objective matches finite differences") {
  verify::GradCheckReport report = verify::full_loss_grad_check(7);
  CHECK(report.max_rel_err < 1e-4);
  CHECK(report.seconds < 10.0);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  csbm::CsbmSample sample = easy_homophilic(40, 3);
  graph::LabelSplit split = graph::make_split(sample.g, 0.6, 0.2, 0.2, 1);
  TrainConfig cfg = small_train_config(5);
  cfg.lr = 0.0;
  cfg.weight_decay = 0.0;
  cfg.max_epochs = 3;
  TrainResult r = spam::train::train(sample.g, split, cfg);

  // rebuild the untouched initial parameters (same seeded init, same
  // calibration pass)
  ParamStore init;
  Rng rng(derive_seed(cfg.seed, 0x1417));
  posterior::init_params(init, sample.g.feature_dim() + sample.g.num_classes,
                         cfg.posterior_config(), rng);
  net::init_params(init, sample.g.feature_dim(), sample.g.num_classes, cfg.net_config(), rng);
  for (size_t p = 0; p < init.size(); ++p) {
    if (init.names[p].ends_with(".eta")) continue;  // calibrated in train()
    CHECK(r.model.params.values[p] == init.values[p]);
  }
}

TEST_CASE("identical seeds give bitwise-identical histories") {
  csbm::CsbmSample sample = heterophilic(40, 0.5, 11);
  graph::LabelSplit split = graph::make_split(sample.g, 0.6, 0.2, 0.2, 2);
  TrainConfig cfg = small_train_config(21);
  cfg.max_epochs = 8;
  TrainResult a = spam::train::train(sample.g, split, cfg);
  TrainResult b = spam::train::train(sample.g, split, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].loss.total == b.history[e].loss.total);
    CHECK(a.history[e].val_acc == b.history[e].val_acc);
  }
  for (size_t p = 0; p < a.model.params.size(); ++p)
    CHECK(a.model.params.values[p] == b.model.params.values[p]);
}

TEST_CASE("training halves the loss on a small synthetic graph") {
  csbm::CsbmSample sample = heterophilic(80, 0.5, 13);
  graph::LabelSplit split = graph::make_split(sample.g, 0.6, 0.2, 0.2, 3);
  TrainConfig cfg = small_train_config(33);
  cfg.max_epochs = 120;
  cfg.patience = 120;
  TrainResult r = spam::train::train(sample.g, split, cfg);
  double first = r.history.front().loss.total;
  double best = first;
  for (const EpochRecord& rec : r.history) best = std::min(best, rec.loss.total);
  CHECK(best <= 0.5 * first);
}

TEST_CASE("easy homophilic graph trains to high accuracy") {
  csbm::CsbmSample sample = easy_homophilic(80, 17);
  graph::LabelSplit split = graph::make_split(sample.g, 0.6, 0.2, 0.2, 4);
  TrainConfig cfg = small_train_config(43);
  cfg.max_epochs = 120;
  TrainResult r = spam::train::train(sample.g, split, cfg);
  double acc = evaluate(sample.g, split.test, r.model, cfg.mc_eval, 99);
  CHECK(acc > 0.9);
}

TEST_CASE("early stopping returns the best recorded validation accuracy") {
  csbm::CsbmSample sample = heterophilic(50, 0.6, 19);
  graph::LabelSplit split = graph::make_split(sample.g, 0.5, 0.3, 0.2, 5);
  TrainConfig cfg = small_train_config(51);
  cfg.max_epochs = 40;
  cfg.patience = 10;
  TrainResult r = spam::train::train(sample.g, split, cfg);
  double best = 0.0;
  for (const EpochRecord& rec : r.history) best = std::max(best, rec.val_acc);
  // re-evaluate the returned parameters with the training-time protocol
  posterior::EdgePosterior ep =
      compute_posterior(sample.g, r.model.params, cfg, r.model.conditioning_nodes);
  Matrix probs = net::predict_mc(sample.g, ep, r.model.params, cfg.net_config(), cfg.mc_train,
                                 derive_seed(cfg.seed, 0xe7a1));
  int hit = 0;
  for (int i : split.val) {
    Eigen::Index arg = 0;
    double bv = probs(i, 0);
    for (Eigen::Index c = 1; c < probs.cols(); ++c)
      if (probs(i, c) > bv) {
        bv = probs(i, c);
        arg = c;
      }
    hit += (static_cast<int>(arg) == sample.g.y[static_cast<size_t>(i)]);
  }
  double returned = static_cast<double>(hit) / split.val.size();
  CHECK(returned >= best - 1e-12);
}

TEST_CASE("gcn baseline: homophily helps, heterophily hurts, seeds reproduce") {
  csbm::CsbmSample easy = easy_homophilic(80, 23);
  graph::LabelSplit split = graph::make_split(easy.g, 0.6, 0.2, 0.2, 6);
  TrainConfig cfg = small_train_config(61);
  cfg.max_epochs = 150;
  GcnResult easy_r = gcn_train(easy.g, split, cfg);
  CHECK(gcn_evaluate(easy.g, split.test, easy_r.model) > 0.85);

  // low-degree heterophily: neighbor composition variance swamps the
  // mean-field signal and the baseline lands near chance
  csbm::CsbmConfig hc;
  hc.n = 80;
  hc.classes = 2;
  hc.p_in = 0.02;
  hc.p_out = 0.1;
  hc.means = csbm::orthogonal_means(2, 4, 1.0);
  hc.noise = 3.5;
  hc.seed = 30;
  csbm::CsbmSample hard = csbm::generate(hc);
  graph::LabelSplit hsplit = graph::make_split(hard.g, 0.6, 0.2, 0.2, 7);
  GcnResult hard_r = gcn_train(hard.g, hsplit, cfg);
  CHECK(gcn_evaluate(hard.g, hsplit.test, hard_r.model) < 0.7);

  GcnResult again = gcn_train(easy.g, split, cfg);
  REQUIRE(again.history.size() == easy_r.history.size());
  for (size_t e = 0; e < again.history.size(); ++e)
    CHECK(again.history[e].loss.total == easy_r.history[e].loss.total);
}

TEST_CASE("checkpoints round-trip bitwise and reject corruption") {
  namespace fs = std::filesystem;
  csbm::CsbmSample sample = heterophilic(30, 0.5, 31);
  graph::LabelSplit split = graph::make_split(sample.g, 0.6, 0.2, 0.2, 7);
  TrainConfig cfg = small_train_config(71);
  cfg.max_epochs = 6;
  TrainResult r = spam::train::train(sample.g, split, cfg);

  fs::path dir = fs::temp_directory_path() / "spam_ckpt_test";
  fs::create_directories(dir);
  std::string prefix = (dir / "model").string();
  save_checkpoint(prefix, r.model.params, "{}", r.best_epoch, r.best_val_acc);

  Checkpoint ck = load_checkpoint(prefix);
  REQUIRE(ck.params.size() == r.model.params.size());
  for (size_t p = 0; p < ck.params.size(); ++p) {
    CHECK(ck.params.names[p] == r.model.params.names[p]);
    CHECK(ck.params.values[p] == r.model.params.values[p]);  // bitwise
  }

  // forward outputs reproduce bitwise on a fixed probe
  Model loaded = r.model;
  loaded.params = ck.params;
  loaded.ep = compute_posterior(sample.g, loaded.params, cfg, loaded.conditioning_nodes);
  Matrix a = predict(sample.g, r.model, 4, 12345);
  Matrix b = predict(sample.g, loaded, 4, 12345);
  CHECK(a == b);

  // recorded metric reproduces from the loaded parameters
  Matrix probs = net::predict_mc(sample.g, loaded.ep, loaded.params, cfg.net_config(),
                                 cfg.mc_train, derive_seed(cfg.seed, 0xe7a1));
  int hit = 0;
  for (int i : split.val) {
    Eigen::Index arg = 0;
    double bv = probs(i, 0);
    for (Eigen::Index c = 1; c < probs.cols(); ++c)
      if (probs(i, c) > bv) {
        bv = probs(i, c);
        arg = c;
      }
    hit += (static_cast<int>(arg) == sample.g.y[static_cast<size_t>(i)]);
  }
  CHECK(static_cast<double>(hit) / split.val.size() == doctest::Approx(ck.metric));

  // truncated payload must be rejected
  {
    std::ifstream in(prefix + ".bin", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(prefix + ".bin", std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(prefix), CorruptionError);
  fs::remove_all(dir);
}

TEST_CASE("empty training set is a configuration error") {
  csbm::CsbmSample sample = heterophilic(20, 0.5, 37);
  graph::LabelSplit split;
  TrainConfig cfg = small_train_config(81);
  CHECK_THROWS_AS(spam::train::train(sample.g, split, cfg), ConfigError);
}
