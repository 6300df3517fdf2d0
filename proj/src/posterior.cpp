#include "spam/posterior.hpp"

#include <cmath>

namespace spam::posterior {

using diff::Var;

void EdgePosterior::validate() const {
  if (probs.cols() != 3) throw DimensionError("edge posterior must have 3 columns");
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    if (probs.row(r).minCoeff() < 0.0 || std::fabs(probs.row(r).sum() - 1.0) > 1e-9)
      throw PreconditionError("edge posterior row " + std::to_string(r) + " is not a simplex");
  }
}

Matrix label_conditioned_features(const graph::GraphDataset& g,
                                  const std::vector<int>& train_nodes) {
  Matrix out = Matrix::Zero(g.n, g.feature_dim() + g.num_classes);
  out.leftCols(g.feature_dim()) = g.X;
  for (int i : train_nodes) {
    if (!g.is_labeled(i)) continue;
    out(i, g.feature_dim() + g.y[static_cast<size_t>(i)]) = 1.0;
  }
  return out;
}

void init_params(ParamStore& store, int cond_dim, const PosteriorConfig& cfg, Rng& rng) {
  auto glorot = [&rng](int rows, int cols) {
    double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
    return random_uniform(rows, cols, rng, -s, s);
  };
  store.add("enc.w1", glorot(cond_dim, cfg.encoder_hidden));
  store.add("enc.w2", glorot(cfg.encoder_hidden, cfg.encoder_hidden));
  store.add("dec.w1", glorot(2 * cfg.encoder_hidden, cfg.decoder_hidden));
  store.add("dec.b1", Matrix::Zero(1, cfg.decoder_hidden));
  store.add("dec.w2", glorot(cfg.decoder_hidden, 3));
  store.add("dec.b2", Matrix::Zero(1, 3));
}

Var encode(diff::Tape& tape, const TapeBinding& params,
           const std::shared_ptr<const CsrMatrix>& norm_adj, const Matrix& cond_features) {
  Var x = tape.constant(norm_adj->multiply(cond_features));  // first averaging round
  Var h1 = diff::relu(diff::matmul(x, params["enc.w1"]));
  Var h2 = diff::spmm_sym(norm_adj, h1);
  return diff::matmul(h2, params["enc.w2"]);
}

Var edge_logit_vars(diff::Tape& tape, const TapeBinding& params, Var embeddings,
                    const std::vector<graph::Edge>& edges) {
  std::vector<int> us, vs;
  us.reserve(edges.size());
  vs.reserve(edges.size());
  for (const graph::Edge& e : edges) {
    us.push_back(e.u);
    vs.push_back(e.v);
  }
  Var hu = diff::rows_gather(embeddings, us);
  Var hv = diff::rows_gather(embeddings, vs);
  // decode the unordered pair once, on the order-symmetrized input
  Var pair = diff::scale(
      diff::add(diff::concat_cols(hu, hv), diff::concat_cols(hv, hu)), 0.5);
  Var hidden = diff::relu(diff::add_rowvec(diff::matmul(pair, params["dec.w1"]), params["dec.b1"]));
  (void)tape;
  return diff::add_rowvec(diff::matmul(hidden, params["dec.w2"]), params["dec.b2"]);
}

EdgePosterior posterior_from_logits(const Matrix& logits) {
  EdgePosterior ep;
  ep.probs.resize(logits.rows(), 3);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double mx = logits.row(r).maxCoeff();
    Eigen::ArrayXd e = (logits.row(r).array() - mx).exp();
    ep.probs.row(r) = (e / e.sum()).matrix();
  }
  return ep;
}

namespace {

Matrix gumbel_noise(int m, uint64_t seed) {
  Rng rng(seed);
  Matrix g(m, 3);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < 3; ++c) g(r, c) = rng.gumbel();
  return g;
}

int8_t state_of_column(Eigen::Index c) { return static_cast<int8_t>(c) - 1; }

}  // namespace

SampledStructure sample_signed_tape(diff::Tape& tape, Var logits, double tau, uint64_t seed,
                                    GateMode mode, const graph::SignedAdjacency* forced) {
  if (tau <= 0.0) throw PreconditionError("gumbel-softmax temperature must be positive");
  const int m = logits.rows();
  if (forced && static_cast<int>(forced->states.size()) != m)
    throw DimensionError("forced structure not keyed on these edges");
  SampledStructure out;
  out.hard.states.resize(static_cast<size_t>(m));
  if (m == 0) {
    out.gate = tape.constant(Matrix::Zero(0, 1));
    out.soft = Matrix::Zero(0, 3);
    return out;
  }
  Var perturbed = diff::add_matrix(logits, gumbel_noise(m, seed));
  Var soft = diff::softmax_rows(diff::scale(perturbed, 1.0 / tau));
  out.soft = soft.value();

  std::vector<int> rows(static_cast<size_t>(m)), cols(static_cast<size_t>(m));
  for (int r = 0; r < m; ++r) {
    Eigen::Index best;
    if (forced) {
      best = forced->states[static_cast<size_t>(r)] + 1;
    } else {
      out.soft.row(r).maxCoeff(&best);
    }
    out.hard.states[static_cast<size_t>(r)] = state_of_column(best);
    rows[static_cast<size_t>(r)] = r;
    cols[static_cast<size_t>(r)] = static_cast<int>(best);
  }
  Var picked = diff::entries_gather(soft, rows, cols);
  out.gate = (mode == GateMode::kStraightThrough) ? diff::st_ones(picked) : picked;
  return out;
}

graph::SignedAdjacency sample_signed(const EdgePosterior& ep, double tau, uint64_t seed) {
  if (tau <= 0.0) throw PreconditionError("gumbel-softmax temperature must be positive");
  const int m = ep.num_edges();
  graph::SignedAdjacency z;
  z.states.resize(static_cast<size_t>(m));
  Rng rng(seed);
  for (int r = 0; r < m; ++r) {
    double best = -1e300;
    int arg = 0;
    for (int c = 0; c < 3; ++c) {
      double v = std::log(std::max(ep.probs(r, c), 1e-300)) + rng.gumbel();
      if (v > best) {
        best = v;
        arg = c;
      }
    }
    z.states[static_cast<size_t>(r)] = state_of_column(arg);
  }
  return z;
}

Var kl_to_prior_var(diff::Tape& tape, Var probs, const std::array<double, 3>& prior) {
  for (double p : prior)
    if (p <= 0.0) throw PreconditionError("prior must be strictly positive");
  Matrix neg_log_prior(1, 3);
  for (int c = 0; c < 3; ++c) neg_log_prior(0, c) = -std::log(prior[static_cast<size_t>(c)]);
  Var term = diff::add_rowvec(diff::log(probs), tape.constant(neg_log_prior));
  return diff::sum(diff::hadamard(probs, term));
}

Var recon_loglik_var(diff::Tape& tape, Var probs, double epsilon) {
  if (epsilon <= 0.0 || epsilon >= 0.5)
    throw PreconditionError("flip rate must lie in (0, 0.5)");
  Matrix w(3, 1);
  w << std::log1p(-epsilon), std::log(epsilon), std::log1p(-epsilon);
  return diff::sum(diff::matmul(probs, tape.constant(w)));
}

double kl_to_prior(const EdgePosterior& ep, const std::array<double, 3>& prior) {
  for (double p : prior)
    if (p <= 0.0) throw PreconditionError("prior must be strictly positive");
  double kl = 0.0;
  for (Eigen::Index r = 0; r < ep.probs.rows(); ++r) {
    for (int c = 0; c < 3; ++c) {
      double q = ep.probs(r, c);
      if (q > 0.0) kl += q * (std::log(q) - std::log(prior[static_cast<size_t>(c)]));
    }
  }
  return kl;
}

double recon_loglik(const Matrix& simplex_rows, double epsilon) {
  if (epsilon <= 0.0 || epsilon >= 0.5)
    throw PreconditionError("flip rate must lie in (0, 0.5)");
  if (simplex_rows.cols() != 3) throw DimensionError("expected 3-column simplex rows");
  double total = 0.0;
  for (Eigen::Index r = 0; r < simplex_rows.rows(); ++r) {
    total += (simplex_rows(r, 0) + simplex_rows(r, 2)) * std::log1p(-epsilon) +
             simplex_rows(r, 1) * std::log(epsilon);
  }
  return total;
}

}  // namespace spam::posterior
