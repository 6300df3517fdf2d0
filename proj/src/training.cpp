#include "spam/training.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>

namespace spam::train {

using diff::Var;
using nlohmann::json;

void TrainConfig::validate() const {
  if (lambda_sp < 0.0 || lambda_st < 0.0)
    throw ConfigError("loss weights must be non-negative");
  if (mc_train < 1 || mc_eval < 1) throw ConfigError("need at least one structure sample");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (tau_start <= 0.0 || tau_end <= 0.0 || tau_decay <= 0.0 || tau_decay > 1.0)
    throw ConfigError("invalid temperature schedule");
  if (epsilon <= 0.0 || epsilon >= 0.5) throw ConfigError("epsilon must lie in (0, 0.5)");
  if (lr <= 0.0 && lr != 0.0) throw ConfigError("learning rate must be non-negative");
  net_config().validate();
}

net::NetConfig TrainConfig::net_config() const {
  net::NetConfig nc;
  nc.layers = layers;
  nc.d_val = d_val;
  nc.d_out = d_out;
  nc.gamma = gamma;
  nc.lambda = lambda;
  nc.coder_steps = coder_steps;
  nc.self_term = self_term;
  nc.dropout = dropout;
  return nc;
}

posterior::PosteriorConfig TrainConfig::posterior_config() const {
  posterior::PosteriorConfig pc;
  pc.encoder_hidden = encoder_hidden;
  pc.decoder_hidden = decoder_hidden;
  pc.prior = prior;
  pc.epsilon = epsilon;
  return pc;
}

Var build_loss(diff::Tape& tape, const TapeBinding& bind, const graph::GraphDataset& g,
               const graph::Incidence& inc, const std::shared_ptr<const CsrMatrix>& adj,
               const Matrix& cond_features, const std::vector<int>& train_nodes,
               const TrainConfig& cfg, double tau, uint64_t seed, posterior::GateMode mode,
               bool training, LossParts* parts, const std::vector<graph::SignedAdjacency>* frozen,
               std::vector<graph::SignedAdjacency>* captured) {
  if (train_nodes.empty()) throw ConfigError("empty training set");
  const int K = cfg.mc_train;
  if (frozen && static_cast<int>(frozen->size()) != K)
    throw DimensionError("frozen structure count differs from the sample count");
  net::NetConfig nc = cfg.net_config();

  Var embeddings = posterior::encode(tape, bind, adj, cond_features);
  Var logits = posterior::edge_logit_vars(tape, bind, embeddings, g.edges);
  Var probs = diff::softmax_rows(logits);

  Var prob_sum, code_sum;
  for (int k = 0; k < K; ++k) {
    posterior::SampledStructure s = posterior::sample_signed_tape(
        tape, logits, tau, derive_seed(seed, 1000 + static_cast<uint64_t>(k)), mode,
        frozen ? &(*frozen)[static_cast<size_t>(k)] : nullptr);
    if (captured) captured->push_back(s.hard);
    net::ForwardResult fr =
        net::forward(tape, bind, g, inc, s.hard, s.gate, nc, training,
                     derive_seed(seed, 2000 + static_cast<uint64_t>(k)));
    prob_sum = (k == 0) ? fr.probs : diff::add(prob_sum, fr.probs);
    code_sum = (k == 0) ? fr.code_l1 : diff::add(code_sum, fr.code_l1);
  }
  Var mc_probs = diff::scale(prob_sum, 1.0 / static_cast<double>(K));

  std::vector<int> rows, cols;
  rows.reserve(train_nodes.size());
  cols.reserve(train_nodes.size());
  for (int i : train_nodes) {
    if (!g.is_labeled(i)) throw ConfigError("training node without a label");
    rows.push_back(i);
    cols.push_back(g.y[static_cast<size_t>(i)]);
  }
  Var picked = diff::clamp_min(diff::entries_gather(mc_probs, rows, cols), 1e-12);
  Var cls = diff::scale(diff::sum(diff::log(picked)),
                        -1.0 / static_cast<double>(train_nodes.size()));

  Var sparse = diff::scale(code_sum, 1.0 / (static_cast<double>(g.n) * K));

  Var kl = posterior::kl_to_prior_var(tape, probs, cfg.prior);
  Var recon = posterior::recon_loglik_var(tape, probs, cfg.epsilon);
  Var structural = diff::sub(kl, recon);

  Var total = diff::add(cls, diff::add(diff::scale(sparse, cfg.lambda_sp),
                                       diff::scale(structural, cfg.lambda_st)));
  if (parts) {
    parts->cls = cls.value()(0, 0);
    parts->sparse = sparse.value()(0, 0);
    parts->structural = structural.value()(0, 0);
    parts->total = total.value()(0, 0);
  }
  return total;
}

LossParts loss_total(const graph::GraphDataset& g, const graph::LabelSplit& split,
                     const ParamStore& params, const TrainConfig& cfg, double tau, uint64_t seed) {
  cfg.validate();
  diff::Tape tape;
  TapeBinding bind(tape, params);
  auto adj = std::make_shared<const CsrMatrix>(graph::normalized_adjacency(g));
  graph::Incidence inc = graph::Incidence::build(g);
  Matrix cond = posterior::label_conditioned_features(g, split.train);
  LossParts parts;
  build_loss(tape, bind, g, inc, adj, cond, split.train, cfg, tau, seed,
             posterior::GateMode::kStraightThrough, true, &parts);
  return parts;
}

void Adam::step(ParamStore& params, const std::vector<Matrix>& grads, double lr) {
  if (m.empty()) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Matrix& p : params.values) {
      m.push_back(Matrix::Zero(p.rows(), p.cols()));
      v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  ++t;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t p = 0; p < params.size(); ++p) {
    m[p] = beta1 * m[p] + (1.0 - beta1) * grads[p];
    v[p] = beta2 * v[p] + (1.0 - beta2) * grads[p].cwiseProduct(grads[p]);
    Matrix mhat = m[p] / bc1;
    Matrix vhat = v[p] / bc2;
    params.values[p] -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
  }
}

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const Matrix& gm : grads) sq += gm.squaredNorm();
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (Matrix& gm : grads) gm *= s;
  }
  return norm;
}

posterior::EdgePosterior compute_posterior(const graph::GraphDataset& g, const ParamStore& params,
                                           const TrainConfig& cfg,
                                           const std::vector<int>& conditioning_nodes) {
  diff::Tape tape;
  TapeBinding bind(tape, params);
  auto adj = std::make_shared<const CsrMatrix>(graph::normalized_adjacency(g));
  Matrix cond = posterior::label_conditioned_features(g, conditioning_nodes);
  Var embeddings = posterior::encode(tape, bind, adj, cond);
  Var logits = posterior::edge_logit_vars(tape, bind, embeddings, g.edges);
  return posterior::posterior_from_logits(logits.value());
}

namespace {

double accuracy_from_probs(const graph::GraphDataset& g, const std::vector<int>& nodes,
                           const Matrix& probs) {
  int total = 0, hit = 0;
  for (int i : nodes) {
    if (!g.is_labeled(i)) continue;
    ++total;
    Eigen::Index best = 0;
    double bv = probs(i, 0);
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
      if (probs(i, c) > bv) {  // strict: ties stay at the lowest index
        bv = probs(i, c);
        best = c;
      }
    }
    if (static_cast<int>(best) == g.y[static_cast<size_t>(i)]) ++hit;
  }
  if (total == 0) throw PreconditionError("evaluation set has no labeled nodes");
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

TrainResult train(const graph::GraphDataset& g, const graph::LabelSplit& split,
                  const TrainConfig& cfg) {
  cfg.validate();
  g.validate();
  if (split.train.empty()) throw ConfigError("empty training set");

  TrainResult result;
  Model& model = result.model;
  model.cfg = cfg;
  model.conditioning_nodes = split.train;

  Rng init_rng(derive_seed(cfg.seed, 0x1417));
  posterior::init_params(model.params, g.feature_dim() + g.num_classes, cfg.posterior_config(),
                         init_rng);
  net::init_params(model.params, g.feature_dim(), g.num_classes, cfg.net_config(), init_rng);

  auto adj = std::make_shared<const CsrMatrix>(graph::normalized_adjacency(g));
  graph::Incidence inc = graph::Incidence::build(g);
  Matrix cond = posterior::label_conditioned_features(g, split.train);

  {
    posterior::EdgePosterior ep0 = compute_posterior(g, model.params, cfg, split.train);
    graph::SignedAdjacency z0 = posterior::sample_signed(ep0, 1.0, derive_seed(cfg.seed, 0xca1));
    net::calibrate_eta(model.params, g, inc, z0, cfg.net_config());
  }

  Adam adam;
  ParamStore best_params = model.params;
  double best_val = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int wait = 0;
  const bool have_val = !split.val.empty();

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    double tau = std::max(cfg.tau_end, cfg.tau_start * std::pow(cfg.tau_decay, epoch));
    double lr_now =
        cfg.lr * std::pow(cfg.lr_decay, std::floor(static_cast<double>(epoch) /
                                                   static_cast<double>(cfg.lr_decay_every)));

    diff::Tape tape;
    TapeBinding bind(tape, model.params);
    LossParts parts;
    Var total = build_loss(tape, bind, g, inc, adj, cond, split.train, cfg, tau,
                           derive_seed(cfg.seed, 3000 + static_cast<uint64_t>(epoch)),
                           posterior::GateMode::kStraightThrough, true, &parts);
    if (!std::isfinite(parts.total)) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                            " (cls=" + std::to_string(parts.cls) +
                            ", sparse=" + std::to_string(parts.sparse) +
                            ", struct=" + std::to_string(parts.structural) + ")");
    }
    tape.backward(total);

    std::vector<Matrix> grads;
    grads.reserve(model.params.size());
    for (size_t p = 0; p < model.params.size(); ++p) {
      Matrix gm = bind.vars()[p].grad();
      if (cfg.weight_decay > 0.0) gm += cfg.weight_decay * model.params.values[p];
      grads.push_back(std::move(gm));
    }
    clip_global_norm(grads, cfg.clip_norm);
    adam.step(model.params, grads, lr_now);
    // the coder step is learnable but must stay positive
    for (size_t p = 0; p < model.params.size(); ++p) {
      if (model.params.names[p].ends_with(".eta"))
        model.params.values[p](0, 0) = std::max(model.params.values[p](0, 0), 1e-4);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = parts;
    rec.tau = tau;
    rec.lr = lr_now;
    if (have_val) {
      posterior::EdgePosterior ep = compute_posterior(g, model.params, cfg, split.train);
      Matrix probs = net::predict_mc(g, ep, model.params, cfg.net_config(), cfg.mc_train,
                                     derive_seed(cfg.seed, 0xe7a1));
      rec.val_acc = accuracy_from_probs(g, split.val, probs);
      if (rec.val_acc > best_val + 1e-12) {
        best_val = rec.val_acc;
        best_loss = parts.total;
        best_params = model.params;
        best_epoch = epoch;
        wait = 0;
      } else {
        // small validation sets saturate early; ties go to the
        // better-trained checkpoint
        if (rec.val_acc >= best_val - 1e-12 && parts.total < best_loss) {
          best_loss = parts.total;
          best_params = model.params;
          best_epoch = epoch;
        }
        ++wait;
      }
    }
    result.history.push_back(rec);
    if (have_val && wait >= cfg.patience) break;
  }

  if (have_val && best_epoch >= 0) {
    model.params = best_params;
    result.best_epoch = best_epoch;
    result.best_val_acc = best_val;
  } else {
    result.best_epoch = static_cast<int>(result.history.size()) - 1;
    result.best_val_acc = result.history.empty() ? 0.0 : result.history.back().val_acc;
  }
  model.ep = compute_posterior(g, model.params, cfg, split.train);
  return result;
}

Matrix predict(const graph::GraphDataset& g, const Model& model, int K, uint64_t seed) {
  return net::predict_mc(g, model.ep, model.params, model.cfg.net_config(), K, seed);
}

double evaluate(const graph::GraphDataset& g, const std::vector<int>& nodes, const Model& model,
                int K, uint64_t seed) {
  if (nodes.empty()) throw PreconditionError("evaluation set is empty");
  Matrix probs = predict(g, model, K, seed);
  return accuracy_from_probs(g, nodes, probs);
}

// ---- GCN baseline -------------------------------------------------------

namespace {

Var gcn_logits(diff::Tape& tape, const TapeBinding& bind,
               const std::shared_ptr<const CsrMatrix>& adj, const Matrix& features, int layers,
               bool training, double dropout, uint64_t seed) {
  Var h = tape.constant(features);
  for (int l = 0; l < layers; ++l) {
    h = diff::spmm_sym(adj, h);
    h = diff::matmul(h, bind["gcn.l" + std::to_string(l) + ".w"]);
    if (l + 1 < layers) {
      h = diff::relu(h);
      h = diff::dropout(h, dropout, derive_seed(seed, static_cast<uint64_t>(l)), training);
    }
  }
  return h;
}

}  // namespace

GcnResult gcn_train(const graph::GraphDataset& g, const graph::LabelSplit& split,
                    const TrainConfig& cfg) {
  if (split.train.empty()) throw ConfigError("empty training set");
  GcnResult result;
  result.model.layers = std::max(2, cfg.layers);
  result.model.hidden = cfg.d_out;

  Rng rng(derive_seed(cfg.seed, 0x6c9));
  auto glorot = [&rng](int rows, int cols) {
    double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
    return random_uniform(rows, cols, rng, -s, s);
  };
  int d_in = g.feature_dim();
  for (int l = 0; l < result.model.layers; ++l) {
    int d_out = (l + 1 == result.model.layers) ? g.num_classes : result.model.hidden;
    result.model.params.add("gcn.l" + std::to_string(l) + ".w", glorot(d_in, d_out));
    d_in = d_out;
  }

  auto adj = std::make_shared<const CsrMatrix>(graph::normalized_adjacency(g));
  std::vector<int> rows, cols;
  for (int i : split.train) {
    rows.push_back(i);
    cols.push_back(g.y[static_cast<size_t>(i)]);
  }

  Adam adam;
  ParamStore best = result.model.params;
  double best_val = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1, wait = 0;
  const bool have_val = !split.val.empty();

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    double lr_now =
        cfg.lr * std::pow(cfg.lr_decay, std::floor(static_cast<double>(epoch) /
                                                   static_cast<double>(cfg.lr_decay_every)));
    diff::Tape tape;
    TapeBinding bind(tape, result.model.params);
    Var logits = gcn_logits(tape, bind, adj, g.X, result.model.layers, true, cfg.dropout,
                            derive_seed(cfg.seed, 4000 + static_cast<uint64_t>(epoch)));
    Var probs = diff::softmax_rows(logits);
    Var picked = diff::clamp_min(diff::entries_gather(probs, rows, cols), 1e-12);
    Var loss = diff::scale(diff::sum(diff::log(picked)),
                           -1.0 / static_cast<double>(rows.size()));
    double lv = loss.value()(0, 0);
    if (!std::isfinite(lv))
      throw DivergenceError("gcn training diverged at epoch " + std::to_string(epoch));
    tape.backward(loss);

    std::vector<Matrix> grads;
    for (size_t p = 0; p < result.model.params.size(); ++p) {
      Matrix gm = bind.vars()[p].grad();
      if (cfg.weight_decay > 0.0) gm += cfg.weight_decay * result.model.params.values[p];
      grads.push_back(std::move(gm));
    }
    clip_global_norm(grads, cfg.clip_norm);
    adam.step(result.model.params, grads, lr_now);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss.cls = lv;
    rec.loss.total = lv;
    rec.lr = lr_now;
    if (have_val) {
      rec.val_acc = gcn_evaluate(g, split.val, result.model);
      if (rec.val_acc > best_val + 1e-12) {
        best_val = rec.val_acc;
        best_loss = lv;
        best = result.model.params;
        best_epoch = epoch;
        wait = 0;
      } else {
        if (rec.val_acc >= best_val - 1e-12 && lv < best_loss) {
          best_loss = lv;
          best = result.model.params;
          best_epoch = epoch;
        }
        ++wait;
      }
    }
    result.history.push_back(rec);
    if (have_val && wait >= cfg.patience) break;
  }
  if (have_val && best_epoch >= 0) {
    result.model.params = best;
    result.best_epoch = best_epoch;
    result.best_val_acc = best_val;
  } else {
    result.best_epoch = static_cast<int>(result.history.size()) - 1;
  }
  return result;
}

double gcn_evaluate(const graph::GraphDataset& g, const std::vector<int>& nodes,
                    const GcnModel& model) {
  diff::Tape tape;
  TapeBinding bind(tape, model.params);
  auto adj = std::make_shared<const CsrMatrix>(graph::normalized_adjacency(g));
  Var logits = gcn_logits(tape, bind, adj, g.X, model.layers, false, 0.0, 0);
  Matrix probs = diff::softmax_rows(logits).value();
  return accuracy_from_probs(g, nodes, probs);
}

// ---- checkpoints ----------------------------------------------------------

void save_checkpoint(const std::string& prefix, const ParamStore& params,
                     const std::string& config_echo, int epoch, double metric) {
  json manifest;
  manifest["format"] = "spam-checkpoint-v1";
  manifest["epoch"] = epoch;
  manifest["metric"] = metric;
  manifest["config"] = config_echo;
  json tensors = json::array();
  for (size_t p = 0; p < params.size(); ++p) {
    tensors.push_back({{"name", params.names[p]},
                       {"rows", params.values[p].rows()},
                       {"cols", params.values[p].cols()}});
  }
  manifest["tensors"] = tensors;
  {
    std::ofstream out(prefix + ".json");
    if (!out) throw ParseError("cannot write " + prefix + ".json");
    out << manifest.dump(2) << '\n';
  }
  {
    std::ofstream out(prefix + ".bin", std::ios::binary);
    if (!out) throw ParseError("cannot write " + prefix + ".bin");
    for (const Matrix& mtx : params.values)
      out.write(reinterpret_cast<const char*>(mtx.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(mtx.size())));
  }
}

Checkpoint load_checkpoint(const std::string& prefix) {
  std::ifstream in(prefix + ".json");
  if (!in) throw CorruptionError("missing checkpoint manifest " + prefix + ".json");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("bad checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "spam-checkpoint-v1")
    throw CorruptionError("unknown checkpoint format");

  Checkpoint ck;
  ck.epoch = manifest.value("epoch", 0);
  ck.metric = manifest.value("metric", 0.0);
  ck.config_echo = manifest.value("config", "");

  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw CorruptionError("missing checkpoint payload " + prefix + ".bin");
  for (const auto& tj : manifest.at("tensors")) {
    std::string name = tj.at("name").get<std::string>();
    Eigen::Index rows = tj.at("rows").get<Eigen::Index>();
    Eigen::Index cols = tj.at("cols").get<Eigen::Index>();
    Matrix mtx(rows, cols);
    bin.read(reinterpret_cast<char*>(mtx.data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(mtx.size())));
    if (bin.gcount() != static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(mtx.size())))
      throw CorruptionError("checkpoint payload truncated at tensor " + name);
    ck.params.add(name, std::move(mtx));
  }
  char extra;
  if (bin.read(&extra, 1))
    throw CorruptionError("checkpoint payload longer than manifest");
  return ck;
}

}  // namespace spam::train
