#include "spam/verify.hpp"

#include "spam/csbm.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace spam::verify {

GradCheckReport full_loss_grad_check(uint64_t seed) {
  // 6 nodes, 2 classes, small widths; every objective term active
  csbm::CsbmConfig gc;
  gc.n = 6;
  gc.classes = 2;
  gc.p_in = 0.4;
  gc.p_out = 0.8;
  gc.means = csbm::orthogonal_means(2, 3, 1.0);
  gc.noise = 0.3;
  gc.seed = seed;
  csbm::CsbmSample sample = csbm::generate(gc);
  graph::GraphDataset& g = sample.g;

  train::TrainConfig cfg;
  cfg.layers = 2;
  cfg.d_val = 3;
  cfg.d_out = 3;
  cfg.encoder_hidden = 3;
  cfg.decoder_hidden = 4;
  cfg.mc_train = 2;
  cfg.coder_steps = 2;
  cfg.dropout = 0.5;  // masks are frozen by seed, so differentiable
  cfg.seed = seed;

  graph::LabelSplit split;
  for (int i = 0; i < g.n; ++i) split.train.push_back(i);

  ParamStore store;
  Rng rng(derive_seed(seed, 0x9e1));
  posterior::init_params(store, g.feature_dim() + g.num_classes, cfg.posterior_config(), rng);
  net::init_params(store, g.feature_dim(), g.num_classes, cfg.net_config(), rng);
  // central differences need every activation strictly off the relu and
  // soft-threshold kinks; zero-initialized biases put dead units exactly
  // on them, so the verification instance perturbs all biases
  for (size_t p = 0; p < store.size(); ++p) {
    const std::string& name = store.names[p];
    if (name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2")) {
      for (Eigen::Index c = 0; c < store.values[p].size(); ++c)
        store.values[p](0, c) += 0.05 + 0.1 * rng.uniform();
    }
  }

  auto adj = std::make_shared<const CsrMatrix>(graph::normalized_adjacency(g));
  graph::Incidence inc = graph::Incidence::build(g);
  Matrix cond = posterior::label_conditioned_features(g, split.train);

  GradCheckReport report;
  for (const Matrix& v : store.values) report.parameter_entries += static_cast<int>(v.size());

  // capture the sampled structures once, then differentiate with them
  // pinned; the relaxed gates keep the gradient path to the posterior
  std::vector<graph::SignedAdjacency> frozen;
  {
    diff::Tape tape;
    TapeBinding bind(tape, store);
    train::build_loss(tape, bind, g, inc, adj, cond, split.train, cfg, 0.7,
                      derive_seed(seed, 0x10ad), posterior::GateMode::kSoft, true, nullptr,
                      nullptr, &frozen);
  }

  auto t0 = std::chrono::steady_clock::now();
  report.max_rel_err = diff::grad_check(
      [&](diff::Tape& tape, const std::vector<diff::Var>& vars) {
        TapeBinding bind(store, vars);
        return train::build_loss(tape, bind, g, inc, adj, cond, split.train, cfg, 0.7,
                                 derive_seed(seed, 0x10ad), posterior::GateMode::kSoft, true,
                                 nullptr, &frozen, nullptr);
      },
      store.values);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report.pass = report.max_rel_err < 1e-4;
  return report;
}

namespace {

// Brute-force reference: coarse-to-fine grid refinement over [-3, 3]^k.
// Convexity makes every stage bracket the next; grid values upper-bound
// the true minimum by construction.
double grid_oracle_objective(const lasso::LassoProblem& p, double final_step) {
  const int k = p.dict_size();
  if (k == 0) return p.t.squaredNorm();
  double step = (k >= 4) ? 0.2 : 0.1;
  Eigen::VectorXd center = Eigen::VectorXd::Zero(k);
  double half = 3.0;
  double best_obj = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best = center;
  while (true) {
    int pts = static_cast<int>(std::floor(2.0 * half / step)) + 1;
    std::vector<int> idx(static_cast<size_t>(k), 0);
    Eigen::VectorXd alpha(k);
    best_obj = std::numeric_limits<double>::infinity();
    while (true) {
      for (int j = 0; j < k; ++j)
        alpha(j) = center(j) - half + step * idx[static_cast<size_t>(j)];
      double obj = lasso::lasso_objective(p, alpha);
      if (obj < best_obj) {
        best_obj = obj;
        best = alpha;
      }
      int j = 0;
      for (; j < k; ++j) {
        if (++idx[static_cast<size_t>(j)] < pts) break;
        idx[static_cast<size_t>(j)] = 0;
      }
      if (j == k) break;
    }
    if (step <= final_step) break;
    center = best;
    half = 1.5 * step;
    step = std::max(step / 10.0, final_step);
  }
  return best_obj;
}

}  // namespace

LassoBatteryReport lasso_oracle_battery(int instances, uint64_t seed) {
  LassoBatteryReport report;
  report.instances = instances;
  Rng rng(seed);
  for (int inst = 0; inst < instances; ++inst) {
    int k = 1 + rng.uniform_int(4);   // k <= 4
    int d = 2 + rng.uniform_int(5);   // d_val <= 6
    lasso::LassoProblem p;
    p.t = Eigen::VectorXd(d);
    for (int i = 0; i < d; ++i) p.t(i) = rng.gaussian();
    p.V = random_gaussian(d, k, rng);
    p.lambda = 0.1 + rng.uniform();

    lasso::SparseCode code = lasso::solve_lasso_cd(p, 1e-12);
    double cd_obj = lasso::lasso_objective(p, code.alpha);
    double grid_obj = grid_oracle_objective(p, 1e-3);
    report.max_objective_excess = std::max(report.max_objective_excess, cd_obj - grid_obj);
    report.max_kkt_residual =
        std::max(report.max_kkt_residual, lasso::kkt_residual(p, code.alpha));
  }

  // orthonormal closed form
  for (int inst = 0; inst < 20; ++inst) {
    int d = 5, k = 3;
    Matrix a = random_gaussian(d, k, rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    lasso::LassoProblem p;
    p.V = qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
    p.t = Eigen::VectorXd(d);
    for (int i = 0; i < d; ++i) p.t(i) = rng.gaussian();
    p.lambda = 0.2 + rng.uniform();
    lasso::SparseCode code = lasso::solve_lasso_cd(p, 1e-14);
    Eigen::VectorXd corr = p.V.transpose() * p.t;
    for (int j = 0; j < k; ++j) {
      double closed = lasso::soft_threshold(corr(j), p.lambda / 2.0);
      report.max_orthonormal_gap =
          std::max(report.max_orthonormal_gap, std::fabs(code.alpha(j) - closed));
    }
  }

  report.pass = report.max_objective_excess < 1e-4 && report.max_kkt_residual < 1e-6 &&
                report.max_orthonormal_gap < 1e-10;
  return report;
}

}  // namespace spam::verify
