#include "spam/s2net.hpp"

#include <cmath>

namespace spam::net {

using diff::Var;

void NetConfig::validate() const {
  if (layers < 1) throw ConfigError("need at least one layer");
  if (d_val < 1 || d_out < 1) throw ConfigError("layer widths must be positive");
  if (gamma < 0.0) throw ConfigError("gamma must be non-negative");
  if (lambda <= 0.0) throw ConfigError("lambda must be positive");
  if (coder_steps < 1) throw ConfigError("coder needs at least one step");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

namespace {

std::string lname(int layer, const char* field) {
  return "net.l" + std::to_string(layer) + "." + field;
}

struct NodeNeighbors {
  std::vector<int> nbrs;
  std::vector<int> edge_ids;
  std::vector<int> signs;  // +1 / -1 aligned with nbrs
};

NodeNeighbors signed_neighbors(const graph::Incidence& inc, const graph::SignedAdjacency& z,
                               int node) {
  NodeNeighbors out;
  for (const auto& [nbr, eid] : inc.at[static_cast<size_t>(node)]) {
    int8_t s = z.states[static_cast<size_t>(eid)];
    if (s == 0) continue;
    out.nbrs.push_back(nbr);
    out.edge_ids.push_back(eid);
    out.signs.push_back(s > 0 ? 1 : -1);
  }
  return out;
}

}  // namespace

void init_params(ParamStore& store, int in_dim, int num_classes, const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  auto glorot = [&rng](int rows, int cols) {
    double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
    return random_uniform(rows, cols, rng, -s, s);
  };
  int d_in = in_dim;
  for (int l = 0; l < cfg.layers; ++l) {
    store.add(lname(l, "wv"), glorot(d_in, cfg.d_val));
    store.add(lname(l, "wt"), glorot(cfg.d_val, d_in));
    store.add(lname(l, "wo"), glorot(cfg.d_out, cfg.d_val));
    store.add(lname(l, "b"), Matrix::Zero(1, cfg.d_out));
    store.add(lname(l, "wself"), glorot(cfg.d_out, d_in));
    Matrix eta(1, 1);
    eta << 0.5;
    store.add(lname(l, "eta"), eta);
    d_in = cfg.d_out;
  }
  store.add("net.cls.w", glorot(num_classes, cfg.d_out));
  store.add("net.cls.b", Matrix::Zero(1, num_classes));
}

LayerResult s2_layer(diff::Tape& tape, const TapeBinding& params, int layer_idx, Var h,
                     const graph::GraphDataset& g, const graph::Incidence& inc,
                     const graph::SignedAdjacency& z, Var edge_gate, const NetConfig& cfg) {
  if (h.rows() != g.n) throw DimensionError("s2_layer: representation row count mismatch");
  if (z.states.size() != g.edges.size())
    throw DimensionError("s2_layer: structure not keyed on this graph");

  Var wv = params[lname(layer_idx, "wv")];
  Var wt = params[lname(layer_idx, "wt")];
  Var wo = params[lname(layer_idx, "wo")];
  Var b = params[lname(layer_idx, "b")];
  Var wself = params[lname(layer_idx, "wself")];
  Var eta = params[lname(layer_idx, "eta")];

  Var values = diff::matmul(h, wv);      // n x d_val, rows are v_j
  Var targets = diff::matmul_nt(h, wt);  // n x d_val, rows are t_i
  Var self = diff::matmul_nt(h, wself);  // n x d_out

  Var zero_row = tape.constant(Matrix::Zero(1, cfg.d_out));
  std::vector<Var> rows(static_cast<size_t>(g.n));
  Var code_l1 = tape.constant(Matrix::Zero(1, 1));

  for (int i = 0; i < g.n; ++i) {
    NodeNeighbors nn = signed_neighbors(inc, z, i);
    Var self_i = cfg.self_term ? diff::rows_gather(self, {i}) : zero_row;
    if (nn.nbrs.empty()) {
      rows[static_cast<size_t>(i)] = self_i;
      continue;
    }
    const int k = static_cast<int>(nn.nbrs.size());
    Var dict = diff::rows_scale(diff::rows_gather(values, nn.nbrs),
                                diff::rows_gather(edge_gate, nn.edge_ids));
    Var target = diff::rows_gather(targets, {i});

    Var alpha;
    if (cfg.coder == NetConfig::Coder::kUnrolled) {
      alpha = lasso::approx_sparse_code_tape(target, dict, eta, cfg.lambda, cfg.coder_steps);
    } else {
      lasso::LassoProblem p;
      p.V = dict.value().transpose();
      p.t = target.value().transpose();
      p.lambda = cfg.lambda;
      lasso::SparseCode code = lasso::solve_lasso_cd(p, 1e-12);
      alpha = tape.constant(code.alpha.transpose());
    }

    Matrix pos_mask = Matrix::Zero(1, k), neg_mask = Matrix::Zero(1, k);
    for (int j = 0; j < k; ++j)
      (nn.signs[static_cast<size_t>(j)] > 0 ? pos_mask : neg_mask)(0, j) = 1.0;
    Var weights = diff::add(
        diff::hadamard(alpha, tape.constant(pos_mask)),
        diff::scale(diff::hadamard(diff::abs(alpha), tape.constant(neg_mask)), -cfg.gamma));
    Var agg = diff::matmul(weights, dict);  // 1 x d_val
    rows[static_cast<size_t>(i)] = diff::add(self_i, diff::matmul_nt(agg, wo));
    code_l1 = diff::add(code_l1, diff::sum(diff::abs(alpha)));
  }

  LayerResult out;
  out.h = diff::add_rowvec(diff::concat_rows(rows), b);
  out.code_l1 = code_l1;
  return out;
}

ForwardResult forward(diff::Tape& tape, const TapeBinding& params, const graph::GraphDataset& g,
                      const graph::Incidence& inc, const graph::SignedAdjacency& z, Var edge_gate,
                      const NetConfig& cfg, bool training, uint64_t dropout_seed) {
  cfg.validate();
  Var h = tape.constant(g.X);
  Var code_l1 = tape.constant(Matrix::Zero(1, 1));
  for (int l = 0; l < cfg.layers; ++l) {
    LayerResult lr = s2_layer(tape, params, l, h, g, inc, z, edge_gate, cfg);
    code_l1 = diff::add(code_l1, lr.code_l1);
    h = diff::relu(lr.h);
    if (l + 1 < cfg.layers) {
      h = diff::layernorm_rows(h);
      h = diff::dropout(h, cfg.dropout, derive_seed(dropout_seed, static_cast<uint64_t>(l)),
                        training);
    }
  }
  ForwardResult out;
  out.logits = diff::add_rowvec(diff::matmul_nt(h, params["net.cls.w"]), params["net.cls.b"]);
  out.probs = diff::softmax_rows(out.logits);
  out.code_l1 = code_l1;
  return out;
}

Matrix predict_mc(const graph::GraphDataset& g, const posterior::EdgePosterior& ep,
                  const ParamStore& params, const NetConfig& cfg, int K, uint64_t seed) {
  if (K < 1) throw PreconditionError("predict_mc: K must be at least 1");
  if (ep.num_edges() != g.num_edges())
    throw DimensionError("predict_mc: posterior not keyed on this graph");
  graph::Incidence inc = graph::Incidence::build(g);
  Matrix acc = Matrix::Zero(g.n, g.num_classes);
  for (int k = 0; k < K; ++k) {
    // fresh tape per sample so memory stays flat in K
    diff::Tape tape;
    TapeBinding bind(tape, params);
    Var ones_gate = tape.constant(Matrix::Ones(g.num_edges(), 1));
    graph::SignedAdjacency z =
        posterior::sample_signed(ep, 0.5, derive_seed(seed, static_cast<uint64_t>(k)));
    ForwardResult fr = forward(tape, bind, g, inc, z, ones_gate, cfg, false, 0);
    acc += fr.probs.value();
  }
  return acc / static_cast<double>(K);
}

Eigen::RowVectorXd signed_aggregate(const Matrix& values_rows, const Eigen::VectorXd& alpha,
                                    const std::vector<int>& signs, double gamma) {
  if (values_rows.rows() != alpha.size() ||
      signs.size() != static_cast<size_t>(alpha.size()))
    throw DimensionError("signed_aggregate: misaligned inputs");
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(values_rows.cols());
  for (Eigen::Index j = 0; j < alpha.size(); ++j) {
    if (signs[static_cast<size_t>(j)] > 0)
      out += alpha(j) * values_rows.row(j);
    else
      out -= gamma * std::fabs(alpha(j)) * values_rows.row(j);
  }
  return out;
}

void calibrate_eta(ParamStore& store, const graph::GraphDataset& g, const graph::Incidence& inc,
                   const graph::SignedAdjacency& z, const NetConfig& cfg) {
  // One value-only forward with the current weights; each layer's step is
  // set from the stiffest node dictionary it saw.
  diff::Tape tape;
  TapeBinding bind(tape, store);
  Var gate = tape.constant(Matrix::Ones(g.num_edges(), 1));
  Var h = tape.constant(g.X);
  for (int l = 0; l < cfg.layers; ++l) {
    Var values = diff::matmul(h, bind[lname(l, "wv")]);
    double max_eig = 0.0;
    for (int i = 0; i < g.n; ++i) {
      NodeNeighbors nn = signed_neighbors(inc, z, i);
      if (nn.nbrs.empty()) continue;
      Matrix dict(static_cast<Eigen::Index>(nn.nbrs.size()), cfg.d_val);
      for (size_t r = 0; r < nn.nbrs.size(); ++r)
        dict.row(static_cast<Eigen::Index>(r)) = values.value().row(nn.nbrs[r]);
      max_eig = std::max(max_eig, lasso::power_iteration_max_eig(dict.transpose()));
    }
    if (max_eig > 0.0) store.at(lname(l, "eta"))(0, 0) = 1.0 / (2.0 * max_eig);
    LayerResult lr = s2_layer(tape, bind, l, h, g, inc, z, gate, cfg);
    h = diff::relu(lr.h);
    if (l + 1 < cfg.layers) h = diff::layernorm_rows(h);
  }
}

}  // namespace spam::net
