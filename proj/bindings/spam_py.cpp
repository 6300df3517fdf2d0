#include "spam/csbm.hpp"
#include "spam/experiment.hpp"
#include "spam/robustness.hpp"
#include "spam/sparsecode.hpp"
#include "spam/training.hpp"
#include "spam/verify.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace spam;

namespace {

graph::GraphDataset make_dataset(const Matrix& x, const std::vector<int>& y,
                                 const std::vector<std::pair<int, int>>& edges,
                                 int num_classes) {
  graph::GraphDataset g;
  g.n = static_cast<int>(x.rows());
  g.X = x;
  g.y = y;
  g.labeled.resize(static_cast<size_t>(g.n));
  for (int i = 0; i < g.n; ++i) g.labeled[static_cast<size_t>(i)] = (y[static_cast<size_t>(i)] >= 0);
  for (auto [u, v] : edges) {
    if (u == v) continue;
    g.edges.push_back({std::min(u, v), std::max(u, v)});
  }
  g.num_classes = num_classes;
  g.validate();
  return g;
}

train::TrainConfig config_from_kwargs(const py::dict& kw) {
  train::TrainConfig cfg;
  for (auto item : kw) {
    std::string key = py::str(item.first);
    auto val = item.second;
    if (key == "layers") cfg.layers = val.cast<int>();
    else if (key == "d_val") cfg.d_val = val.cast<int>();
    else if (key == "d_out") cfg.d_out = val.cast<int>();
    else if (key == "encoder_hidden") cfg.encoder_hidden = val.cast<int>();
    else if (key == "decoder_hidden") cfg.decoder_hidden = val.cast<int>();
    else if (key == "coder_steps") cfg.coder_steps = val.cast<int>();
    else if (key == "self_term") cfg.self_term = val.cast<bool>();
    else if (key == "lambda_l1") cfg.lambda = val.cast<double>();
    else if (key == "lambda_sp") cfg.lambda_sp = val.cast<double>();
    else if (key == "lambda_st") cfg.lambda_st = val.cast<double>();
    else if (key == "gamma") cfg.gamma = val.cast<double>();
    else if (key == "epsilon") cfg.epsilon = val.cast<double>();
    else if (key == "mc_train") cfg.mc_train = val.cast<int>();
    else if (key == "mc_eval") cfg.mc_eval = val.cast<int>();
    else if (key == "tau_start") cfg.tau_start = val.cast<double>();
    else if (key == "tau_end") cfg.tau_end = val.cast<double>();
    else if (key == "tau_decay") cfg.tau_decay = val.cast<double>();
    else if (key == "lr") cfg.lr = val.cast<double>();
    else if (key == "lr_decay") cfg.lr_decay = val.cast<double>();
    else if (key == "lr_decay_every") cfg.lr_decay_every = val.cast<int>();
    else if (key == "weight_decay") cfg.weight_decay = val.cast<double>();
    else if (key == "clip_norm") cfg.clip_norm = val.cast<double>();
    else if (key == "max_epochs") cfg.max_epochs = val.cast<int>();
    else if (key == "patience") cfg.patience = val.cast<int>();
    else if (key == "dropout") cfg.dropout = val.cast<double>();
    else if (key == "seed") cfg.seed = val.cast<uint64_t>();
    else throw ConfigError("unknown training option '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_spamnet, m) {
  m.doc() = "sparse Bayesian message passing over signed graph structures";

  py::register_exception<Error>(m, "SpamError");

  py::class_<graph::GraphDataset>(m, "GraphDataset")
      .def_property_readonly("n", [](const graph::GraphDataset& g) { return g.n; })
      .def_property_readonly("num_classes",
                             [](const graph::GraphDataset& g) { return g.num_classes; })
      .def_property_readonly("x", [](const graph::GraphDataset& g) { return g.X; })
      .def_property_readonly("y", [](const graph::GraphDataset& g) { return g.y; })
      .def_property_readonly("edges",
                             [](const graph::GraphDataset& g) {
                               std::vector<std::pair<int, int>> out;
                               for (const auto& e : g.edges) out.emplace_back(e.u, e.v);
                               return out;
                             })
      .def("homophily_ratio", [](const graph::GraphDataset& g) { return homophily_ratio(g); });

  m.def("dataset", &make_dataset, py::arg("x"), py::arg("y"), py::arg("edges"),
        py::arg("num_classes"), "build an in-memory dataset (y = -1 marks unlabeled nodes)");

  m.def("load_dataset",
        [](const std::string& edges, const std::string& features, const std::string& labels) {
          return graph::load_dataset(edges, features, labels);
        },
        py::arg("edges"), py::arg("features"), py::arg("labels"));

  m.def("save_dataset",
        [](const graph::GraphDataset& g, const std::string& edges, const std::string& features,
           const std::string& labels) { graph::save_dataset(g, edges, features, labels); },
        py::arg("dataset"), py::arg("edges"), py::arg("features"), py::arg("labels"));

  m.def("csbm",
        [](int n, int classes, double p_in, double p_out, int dim, double mean_scale,
           double noise, uint64_t seed) {
          csbm::CsbmConfig cfg;
          cfg.n = n;
          cfg.classes = classes;
          cfg.p_in = p_in;
          cfg.p_out = p_out;
          cfg.means = csbm::orthogonal_means(classes, std::max(dim, classes), mean_scale);
          cfg.noise = noise;
          cfg.seed = seed;
          csbm::CsbmSample s = csbm::generate(cfg);
          std::vector<int> signs(s.truth.states.begin(), s.truth.states.end());
          return py::make_tuple(s.g, signs);
        },
        py::arg("n"), py::arg("classes") = 2, py::arg("p_in") = 0.05, py::arg("p_out") = 0.2,
        py::arg("dim") = 8, py::arg("mean_scale") = 1.0, py::arg("noise") = 0.5,
        py::arg("seed") = 1,
        "contextual stochastic block model sample; returns (dataset, edge signs)");

  py::class_<graph::LabelSplit>(m, "LabelSplit")
      .def_readonly("train", &graph::LabelSplit::train)
      .def_readonly("val", &graph::LabelSplit::val)
      .def_readonly("test", &graph::LabelSplit::test);

  m.def("make_split",
        [](const graph::GraphDataset& g, double train, double val, double test, uint64_t seed) {
          return graph::make_split(g, train, val, test, seed);
        },
        py::arg("dataset"), py::arg("train") = 0.6, py::arg("val") = 0.2, py::arg("test") = 0.2,
        py::arg("seed") = 1);

  py::class_<train::Model>(m, "Model")
      .def_property_readonly("edge_posterior",
                             [](const train::Model& m_) { return m_.ep.probs; });

  py::class_<train::TrainResult>(m, "TrainResult")
      .def_readonly("model", &train::TrainResult::model)
      .def_readonly("best_epoch", &train::TrainResult::best_epoch)
      .def_readonly("best_val_acc", &train::TrainResult::best_val_acc)
      .def_property_readonly("history", [](const train::TrainResult& r) {
        py::list rows;
        for (const auto& rec : r.history) {
          py::dict d;
          d["epoch"] = rec.epoch;
          d["cls_loss"] = rec.loss.cls;
          d["sparse_loss"] = rec.loss.sparse;
          d["struct_loss"] = rec.loss.structural;
          d["total_loss"] = rec.loss.total;
          d["val_acc"] = rec.val_acc;
          rows.append(d);
        }
        return rows;
      });

  m.def("train",
        [](const graph::GraphDataset& g, const graph::LabelSplit& split, const py::kwargs& kw) {
          return train::train(g, split, config_from_kwargs(kw));
        },
        py::arg("dataset"), py::arg("split"));

  m.def("evaluate",
        [](const graph::GraphDataset& g, const std::vector<int>& nodes, const train::Model& mdl,
           int k, uint64_t seed) { return train::evaluate(g, nodes, mdl, k, seed); },
        py::arg("dataset"), py::arg("nodes"), py::arg("model"), py::arg("k") = 8,
        py::arg("seed") = 1);

  m.def("predict_mc",
        [](const graph::GraphDataset& g, const train::Model& mdl, int k, uint64_t seed) {
          return train::predict(g, mdl, k, seed);
        },
        py::arg("dataset"), py::arg("model"), py::arg("k") = 8, py::arg("seed") = 1,
        "class probabilities averaged over k sampled signed structures");

  py::class_<train::GcnResult>(m, "GcnResult").def_readonly("best_epoch", &train::GcnResult::best_epoch);

  m.def("gcn_train_evaluate",
        [](const graph::GraphDataset& g, const graph::LabelSplit& split, const py::kwargs& kw) {
          train::GcnResult r = train::gcn_train(g, split, config_from_kwargs(kw));
          return train::gcn_evaluate(g, split.test, r.model);
        },
        py::arg("dataset"), py::arg("split"), "train the reference gcn, return test accuracy");

  m.def("solve_lasso",
        [](const Matrix& dictionary, const Eigen::VectorXd& target, double lam, double tol) {
          lasso::LassoProblem p;
          p.V = dictionary;
          p.t = target;
          p.lambda = lam;
          lasso::SparseCode code = lasso::solve_lasso_cd(p, tol);
          return py::make_tuple(code.alpha, lasso::kkt_residual(p, code.alpha), code.converged);
        },
        py::arg("dictionary"), py::arg("target"), py::arg("lam") = 0.1, py::arg("tol") = 1e-10,
        "exact coordinate-descent lasso; returns (alpha, kkt_residual, converged)");

  m.def("approx_sparse_code",
        [](const Matrix& dictionary, const Eigen::VectorXd& target, double lam, int steps) {
          lasso::LassoProblem p;
          p.V = dictionary;
          p.t = target;
          p.lambda = lam;
          return lasso::approx_sparse_code(p, steps).alpha;
        },
        py::arg("dictionary"), py::arg("target"), py::arg("lam") = 0.1, py::arg("steps") = 3);

  m.def("soft_threshold", &lasso::soft_threshold, py::arg("x"), py::arg("tau"));

  m.def("delete_edges",
        [](const graph::GraphDataset& g, double rho, uint64_t seed) {
          return perturb::delete_edges(g, rho, seed);
        },
        py::arg("dataset"), py::arg("rho"), py::arg("seed") = 0);

  m.def("add_feature_noise",
        [](const graph::GraphDataset& g, double sigma, uint64_t seed) {
          return perturb::add_feature_noise(g, sigma, seed);
        },
        py::arg("dataset"), py::arg("sigma"), py::arg("seed") = 0);

  m.def("adversarial_flip",
        [](const graph::GraphDataset& g, double budget, uint64_t seed) {
          return perturb::adversarial_flip(g, budget, seed);
        },
        py::arg("dataset"), py::arg("budget"), py::arg("seed") = 0);

  m.def("grad_check_full_loss", [](uint64_t seed) {
    verify::GradCheckReport r = verify::full_loss_grad_check(seed);
    return py::make_tuple(r.max_rel_err, r.pass);
  }, py::arg("seed") = 7);
}
