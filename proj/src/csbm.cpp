#include "spam/csbm.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace spam::csbm {

void CsbmConfig::validate() const {
  if (n < 2 || classes < 1) throw ConfigError("csbm: need n >= 2 and at least one class");
  if (n % classes != 0) throw ConfigError("csbm: n must be divisible by the class count");
  if (p_in < 0.0 || p_in > 1.0 || p_out < 0.0 || p_out > 1.0)
    throw ConfigError("csbm: edge probabilities must lie in [0, 1]");
  if (means.rows() != classes || means.cols() < 1)
    throw ConfigError("csbm: need one mean row per class");
  if (noise < 0.0) throw ConfigError("csbm: noise scale must be non-negative");
}

Matrix orthogonal_means(int classes, int dim, double scale) {
  if (dim < classes) throw ConfigError("orthogonal means need dim >= classes");
  Matrix m = Matrix::Zero(classes, dim);
  for (int c = 0; c < classes; ++c) m(c, c) = scale;
  return m;
}

CsbmSample generate(const CsbmConfig& cfg) {
  cfg.validate();
  CsbmSample out;
  graph::GraphDataset& g = out.g;
  g.n = cfg.n;
  g.num_classes = std::max(cfg.classes, 2);
  const int per_class = cfg.n / cfg.classes;
  g.y.resize(static_cast<size_t>(cfg.n));
  g.labeled.assign(static_cast<size_t>(cfg.n), 1);
  for (int i = 0; i < cfg.n; ++i) g.y[static_cast<size_t>(i)] = i / per_class;

  Rng rng(derive_seed(cfg.seed, 0xc5b3));
  g.X.resize(cfg.n, cfg.means.cols());
  for (int i = 0; i < cfg.n; ++i) {
    g.X.row(i) = cfg.means.row(g.y[static_cast<size_t>(i)]);
    for (Eigen::Index d = 0; d < g.X.cols(); ++d) g.X(i, d) += cfg.noise * rng.gaussian();
  }

  for (int u = 0; u < cfg.n; ++u) {
    for (int v = u + 1; v < cfg.n; ++v) {
      bool same = g.y[static_cast<size_t>(u)] == g.y[static_cast<size_t>(v)];
      double p = same ? cfg.p_in : cfg.p_out;
      if (rng.uniform() < p) {
        g.edges.push_back({u, v});
        out.truth.states.push_back(same ? int8_t{1} : int8_t{-1});
      }
    }
  }
  return out;
}

namespace {

void require_psd(const Matrix& w, const char* name) {
  if (w.rows() != w.cols()) throw PreconditionError(std::string(name) + " must be square");
  if (!(w - Matrix(w.transpose())).isZero(1e-9))
    throw PreconditionError(std::string(name) + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w);
  if (es.eigenvalues().minCoeff() < -1e-9)
    throw PreconditionError(std::string(name) + " must be positive semidefinite (min eig " +
                            std::to_string(es.eigenvalues().minCoeff()) + ")");
}

Matrix class_means(const Matrix& h, const std::vector<int>& y, int classes) {
  Matrix m = Matrix::Zero(classes, h.cols());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(classes);
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    m.row(y[static_cast<size_t>(i)]) += h.row(i);
    counts(y[static_cast<size_t>(i)]) += 1.0;
  }
  for (int c = 0; c < classes; ++c)
    if (counts(c) > 0) m.row(c) /= counts(c);
  return m;
}

}  // namespace

MarginGrowth margin_growth_check(const CsbmConfig& cfg, const Matrix& w_self, const Matrix& w_pos,
                                 const Matrix& w_neg, int trials) {
  if (cfg.p_out <= cfg.p_in)
    throw PreconditionError(
        "margin growth hypothesis violated: needs p_out > p_in, got p_in=" +
        std::to_string(cfg.p_in) + ", p_out=" + std::to_string(cfg.p_out));
  require_psd(w_neg, "W-");

  MarginGrowth out;
  out.trials = trials;
  for (int trial = 0; trial < trials; ++trial) {
    CsbmConfig c = cfg;
    c.seed = derive_seed(cfg.seed, 0x3a7 + static_cast<uint64_t>(trial));
    CsbmSample s = generate(c);
    const Matrix& h = s.g.X;

    Matrix hp = Matrix::Zero(c.n, h.cols());  // Z+ H
    Matrix hm = Matrix::Zero(c.n, h.cols());  // Z- H
    for (size_t e = 0; e < s.g.edges.size(); ++e) {
      const graph::Edge& ed = s.g.edges[e];
      if (s.truth.states[e] > 0) {
        hp.row(ed.u) += h.row(ed.v);
        hp.row(ed.v) += h.row(ed.u);
      } else {
        hm.row(ed.u) += h.row(ed.v);
        hm.row(ed.v) += h.row(ed.u);
      }
    }
    Matrix updated = h * w_self + hp * w_pos - hm * w_neg;

    Matrix before = class_means(h, s.g.y, c.classes);
    Matrix after = class_means(updated, s.g.y, c.classes);
    bool pass = true;
    for (int a = 0; a < c.classes && pass; ++a)
      for (int b = a + 1; b < c.classes && pass; ++b)
        pass = (after.row(a) - after.row(b)).norm() > (before.row(a) - before.row(b)).norm();
    if (pass) ++out.passed;
  }
  out.pass_fraction = trials > 0 ? static_cast<double>(out.passed) / trials : 0.0;
  return out;
}

SupportRecovery support_recovery_rate(const CsbmConfig& cfg, double lambda, int trials) {
  long tp = 0, fp = 0, fn = 0;
  for (int trial = 0; trial < trials; ++trial) {
    CsbmConfig c = cfg;
    c.seed = derive_seed(cfg.seed, 0x5e4 + static_cast<uint64_t>(trial));
    CsbmSample s = generate(c);
    graph::Incidence inc = graph::Incidence::build(s.g);
    for (int i = 0; i < c.n; ++i) {
      const auto& nbrs = inc.at[static_cast<size_t>(i)];
      if (nbrs.empty()) continue;
      lasso::LassoProblem p;
      p.lambda = lambda;
      p.t = s.g.X.row(i).transpose();
      p.V.resize(s.g.X.cols(), static_cast<Eigen::Index>(nbrs.size()));
      for (size_t j = 0; j < nbrs.size(); ++j)
        p.V.col(static_cast<Eigen::Index>(j)) = s.g.X.row(nbrs[j].first).transpose();
      lasso::SparseCode code = lasso::solve_lasso_cd(p, 1e-10);
      for (size_t j = 0; j < nbrs.size(); ++j) {
        bool selected = std::fabs(code.alpha(static_cast<Eigen::Index>(j))) > 1e-8;
        bool same = s.g.y[static_cast<size_t>(nbrs[j].first)] == s.g.y[static_cast<size_t>(i)];
        if (selected && same) ++tp;
        if (selected && !same) ++fp;
        if (!selected && same) ++fn;
      }
    }
  }
  SupportRecovery out;
  out.precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  out.recall = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  return out;
}

std::array<double, 3> true_sign_distribution(const CsbmConfig& cfg, bool same_class) {
  if (same_class) return {0.0, 1.0 - cfg.p_in, cfg.p_in};
  return {cfg.p_out, 1.0 - cfg.p_out, 0.0};
}

double mean_edge_kl(const CsbmConfig& cfg, const graph::GraphDataset& g,
                    const posterior::EdgePosterior& ep) {
  if (ep.num_edges() != g.num_edges()) throw DimensionError("posterior not keyed on this graph");
  if (g.num_edges() == 0) throw PreconditionError("no edges to score");
  double total = 0.0;
  for (int e = 0; e < g.num_edges(); ++e) {
    bool same = g.y[static_cast<size_t>(g.edges[static_cast<size_t>(e)].u)] ==
                g.y[static_cast<size_t>(g.edges[static_cast<size_t>(e)].v)];
    std::array<double, 3> truth = true_sign_distribution(cfg, same);
    for (int c = 0; c < 3; ++c) {
      if (truth[static_cast<size_t>(c)] <= 0.0) continue;
      total += truth[static_cast<size_t>(c)] *
               (std::log(truth[static_cast<size_t>(c)]) -
                std::log(std::max(ep.probs(e, c), 1e-300)));
    }
  }
  return total / g.num_edges();
}

std::vector<ConsistencyPoint> posterior_consistency_trend(const CsbmConfig& cfg,
                                                          const std::vector<double>& fractions,
                                                          const train::TrainConfig& tcfg,
                                                          int num_seeds) {
  for (size_t i = 1; i < fractions.size(); ++i)
    if (fractions[i] <= fractions[i - 1])
      throw PreconditionError("labeled fractions must increase");

  std::vector<ConsistencyPoint> out;
  for (size_t fi = 0; fi < fractions.size(); ++fi) {
    double f = fractions[fi];
    if (f <= 0.0 || f > 1.0) throw PreconditionError("labeled fraction outside (0, 1]");
    double kl_sum = 0.0;
    for (int s = 0; s < num_seeds; ++s) {
      CsbmConfig c = cfg;
      c.seed = derive_seed(cfg.seed, 0xf00d + static_cast<uint64_t>(s));
      CsbmSample sample = generate(c);
      double rest = 1.0 - f;
      graph::LabelSplit split = graph::make_split(sample.g, f, rest / 2.0, rest / 2.0,
                                                  derive_seed(c.seed, fi));
      train::TrainConfig tc = tcfg;
      tc.seed = derive_seed(tcfg.seed, 0xabc + static_cast<uint64_t>(s) * 31 + fi);
      train::TrainResult r = train::train(sample.g, split, tc);
      kl_sum += mean_edge_kl(c, sample.g, r.model.ep);
    }
    out.push_back({f, kl_sum / num_seeds});
  }
  return out;
}

}  // namespace spam::csbm
