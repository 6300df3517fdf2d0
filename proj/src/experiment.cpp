#include "spam/experiment.hpp"

#include "spam/verify.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

namespace spam::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void require_keys(const json& j, const std::string& where,
                  const std::vector<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ConfigError("unknown configuration key '" + where + "." + it.key() + "'");
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("configuration key '" + key + "' has the wrong type");
  }
}

perturb::Kind parse_kind(const std::string& s) {
  if (s == "delete-edges") return perturb::Kind::kDeleteEdges;
  if (s == "feature-noise") return perturb::Kind::kFeatureNoise;
  if (s == "adversarial-flip") return perturb::Kind::kAdversarialFlip;
  throw ConfigError("unknown perturbation kind '" + s + "'");
}

std::string kind_name(perturb::Kind k) {
  switch (k) {
    case perturb::Kind::kDeleteEdges:
      return "delete-edges";
    case perturb::Kind::kFeatureNoise:
      return "feature-noise";
    case perturb::Kind::kAdversarialFlip:
      return "adversarial-flip";
  }
  return "?";
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  out << content;
}

std::string csv_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

// Independent cells, deterministic collection order regardless of the
// worker count.
template <typename Fn>
void parallel_cells(int count, Fn&& fn) {
  int workers = std::min(thread_count(), count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct SeedRun {
  SeedOutcome outcome;
  std::vector<train::EpochRecord> history;
  ParamStore params;
};

SeedRun run_one_seed(const ExperimentConfig& cfg, const graph::GraphDataset& base,
                     uint64_t seed) {
  graph::GraphDataset g = base;
  if (cfg.perturbation) {
    perturb::PerturbationSpec spec = *cfg.perturbation;
    spec.seed = seed;
    g = perturb::apply(g, spec);
  }
  graph::LabelSplit split =
      graph::make_split(g, cfg.train_frac, cfg.val_frac, cfg.test_frac, seed);
  train::TrainConfig tc = cfg.tcfg;
  tc.seed = seed;

  SeedRun out;
  out.outcome.seed = seed;
  if (cfg.model == "gcn") {
    train::GcnResult r = train::gcn_train(g, split, tc);
    out.outcome.test_acc = train::gcn_evaluate(g, split.test, r.model);
    out.history = r.history;
    out.params = r.model.params;
  } else {
    train::TrainResult r = train::train(g, split, tc);
    out.outcome.test_acc =
        train::evaluate(g, split.test, r.model, tc.mc_eval, derive_seed(seed, 0xacc));
    out.history = r.history;
    out.params = r.model.params;
  }
  return out;
}

void write_metrics_csv(const fs::path& path, const std::vector<train::EpochRecord>& history) {
  std::string csv = "epoch,cls_loss,sparse_loss,struct_loss,total_loss,val_acc\n";
  for (const train::EpochRecord& r : history) {
    csv += std::to_string(r.epoch) + "," + csv_double(r.loss.cls) + "," +
           csv_double(r.loss.sparse) + "," + csv_double(r.loss.structural) + "," +
           csv_double(r.loss.total) + "," + csv_double(r.val_acc) + "\n";
  }
  write_text(path, csv);
}

std::vector<SeedOutcome> seed_protocol(const ExperimentConfig& cfg,
                                       const graph::GraphDataset& base,
                                       std::vector<SeedRun>* runs_out) {
  std::vector<SeedRun> runs(cfg.seeds.size());
  parallel_cells(static_cast<int>(cfg.seeds.size()),
                 [&](int i) { runs[static_cast<size_t>(i)] = run_one_seed(cfg, base, cfg.seeds[static_cast<size_t>(i)]); });
  std::vector<SeedOutcome> rows;
  rows.reserve(runs.size());
  for (const SeedRun& r : runs) rows.push_back(r.outcome);
  if (runs_out) *runs_out = std::move(runs);
  return rows;
}

}  // namespace

graph::GraphDataset DatasetSpec::materialize() const {
  if (kind == Kind::kFiles) return graph::load_dataset(edges, features, labels);
  return csbm::generate(csbm).g;
}

int thread_count() {
  const char* env = std::getenv("SPAM_THREADS");
  if (!env) return 1;
  int v = std::atoi(env);
  return v < 1 ? 1 : v;
}

Aggregate aggregate(const std::vector<SeedOutcome>& rows) {
  Aggregate agg;
  agg.per_seed = rows;
  if (rows.empty()) return agg;
  for (const SeedOutcome& r : rows) agg.mean += r.test_acc;
  agg.mean /= static_cast<double>(rows.size());
  if (rows.size() > 1) {
    double var = 0.0;
    for (const SeedOutcome& r : rows) var += (r.test_acc - agg.mean) * (r.test_acc - agg.mean);
    agg.stddev = std::sqrt(var / static_cast<double>(rows.size() - 1));
  }
  return agg;
}

ExperimentConfig parse_config(const json& j) {
  require_keys(j, "", {"tag", "output_dir", "seeds", "dataset", "split", "train", "model",
                       "perturbation", "grid", "mc_study", "robustness"});
  ExperimentConfig cfg;
  cfg.echo = j;
  cfg.tag = get_or<std::string>(j, "tag", cfg.tag);
  cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir);
  if (j.contains("seeds")) {
    cfg.seeds.clear();
    for (const auto& s : j.at("seeds")) cfg.seeds.push_back(s.get<uint64_t>());
    if (cfg.seeds.empty()) throw ConfigError("'seeds' must not be empty");
  }
  cfg.model = get_or<std::string>(j, "model", cfg.model);
  if (cfg.model != "spam" && cfg.model != "gcn")
    throw ConfigError("'model' must be \"spam\" or \"gcn\"");

  if (!j.contains("dataset")) throw ConfigError("missing 'dataset'");
  {
    const json& d = j.at("dataset");
    std::string kind = get_or<std::string>(d, "kind", "");
    if (kind == "files") {
      require_keys(d, "dataset", {"kind", "edges", "features", "labels"});
      cfg.dataset.kind = DatasetSpec::Kind::kFiles;
      for (const char* k : {"edges", "features", "labels"})
        if (!d.contains(k)) throw ConfigError(std::string("dataset.") + k + " is required");
      cfg.dataset.edges = d.at("edges").get<std::string>();
      cfg.dataset.features = d.at("features").get<std::string>();
      cfg.dataset.labels = d.at("labels").get<std::string>();
    } else if (kind == "csbm") {
      require_keys(d, "dataset",
                   {"kind", "n", "classes", "p_in", "p_out", "dim", "mean_scale", "noise",
                    "seed"});
      cfg.dataset.kind = DatasetSpec::Kind::kCsbm;
      csbm::CsbmConfig& c = cfg.dataset.csbm;
      c.n = get_or<int>(d, "n", 200);
      c.classes = get_or<int>(d, "classes", 2);
      c.p_in = get_or<double>(d, "p_in", 0.05);
      c.p_out = get_or<double>(d, "p_out", 0.2);
      int dim = get_or<int>(d, "dim", 8);
      double scale = get_or<double>(d, "mean_scale", 1.0);
      c.means = csbm::orthogonal_means(c.classes, std::max(dim, c.classes), scale);
      c.noise = get_or<double>(d, "noise", 0.5);
      c.seed = get_or<uint64_t>(d, "seed", 1);
      c.validate();
    } else {
      throw ConfigError("dataset.kind must be \"files\" or \"csbm\"");
    }
  }

  if (j.contains("split")) {
    const json& s = j.at("split");
    require_keys(s, "split", {"train", "val", "test"});
    cfg.train_frac = get_or<double>(s, "train", cfg.train_frac);
    cfg.val_frac = get_or<double>(s, "val", cfg.val_frac);
    cfg.test_frac = get_or<double>(s, "test", cfg.test_frac);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    require_keys(t, "train",
                 {"layers", "d_val", "d_out", "encoder_hidden", "decoder_hidden", "coder_steps",
                  "self_term", "lambda", "lambda_sp", "lambda_st", "gamma", "epsilon", "prior",
                  "mc_train", "mc_eval", "tau_start", "tau_end", "tau_decay", "lr", "lr_decay",
                  "lr_decay_every", "weight_decay", "clip_norm", "max_epochs", "patience",
                  "dropout"});
    train::TrainConfig& c = cfg.tcfg;
    c.layers = get_or<int>(t, "layers", c.layers);
    c.d_val = get_or<int>(t, "d_val", c.d_val);
    c.d_out = get_or<int>(t, "d_out", c.d_out);
    c.encoder_hidden = get_or<int>(t, "encoder_hidden", c.encoder_hidden);
    c.decoder_hidden = get_or<int>(t, "decoder_hidden", c.decoder_hidden);
    c.coder_steps = get_or<int>(t, "coder_steps", c.coder_steps);
    c.self_term = get_or<bool>(t, "self_term", c.self_term);
    c.lambda = get_or<double>(t, "lambda", c.lambda);
    c.lambda_sp = get_or<double>(t, "lambda_sp", c.lambda_sp);
    c.lambda_st = get_or<double>(t, "lambda_st", c.lambda_st);
    c.gamma = get_or<double>(t, "gamma", c.gamma);
    c.epsilon = get_or<double>(t, "epsilon", c.epsilon);
    if (t.contains("prior")) {
      auto p = t.at("prior").get<std::vector<double>>();
      if (p.size() != 3) throw ConfigError("train.prior must have 3 entries");
      c.prior = {p[0], p[1], p[2]};
    }
    c.mc_train = get_or<int>(t, "mc_train", c.mc_train);
    c.mc_eval = get_or<int>(t, "mc_eval", c.mc_eval);
    c.tau_start = get_or<double>(t, "tau_start", c.tau_start);
    c.tau_end = get_or<double>(t, "tau_end", c.tau_end);
    c.tau_decay = get_or<double>(t, "tau_decay", c.tau_decay);
    c.lr = get_or<double>(t, "lr", c.lr);
    c.lr_decay = get_or<double>(t, "lr_decay", c.lr_decay);
    c.lr_decay_every = get_or<int>(t, "lr_decay_every", c.lr_decay_every);
    c.weight_decay = get_or<double>(t, "weight_decay", c.weight_decay);
    c.clip_norm = get_or<double>(t, "clip_norm", c.clip_norm);
    c.max_epochs = get_or<int>(t, "max_epochs", c.max_epochs);
    c.patience = get_or<int>(t, "patience", c.patience);
    c.dropout = get_or<double>(t, "dropout", c.dropout);
    c.validate();
  }

  if (j.contains("perturbation")) {
    const json& p = j.at("perturbation");
    require_keys(p, "perturbation", {"kind", "magnitude"});
    perturb::PerturbationSpec spec;
    spec.kind = parse_kind(get_or<std::string>(p, "kind", ""));
    spec.magnitude = get_or<double>(p, "magnitude", 0.0);
    spec.validate();
    cfg.perturbation = spec;
  }

  if (j.contains("grid")) {
    const json& gj = j.at("grid");
    require_keys(gj, "grid", {"lambda_sp", "lambda_st"});
    cfg.grid_lambda_sp = get_or<std::vector<double>>(gj, "lambda_sp", {});
    cfg.grid_lambda_st = get_or<std::vector<double>>(gj, "lambda_st", {});
  }

  if (j.contains("mc_study")) {
    const json& mj = j.at("mc_study");
    require_keys(mj, "mc_study", {"k_values"});
    cfg.mc_k = get_or<std::vector<int>>(mj, "k_values", {});
    for (size_t i = 0; i < cfg.mc_k.size(); ++i) {
      if (cfg.mc_k[i] < 1 || (i > 0 && cfg.mc_k[i] <= cfg.mc_k[i - 1]))
        throw ConfigError("mc_study.k_values must be ascending and at least 1");
    }
  }

  if (j.contains("robustness")) {
    const json& rj = j.at("robustness");
    require_keys(rj, "robustness", {"kind", "magnitudes", "models"});
    cfg.rob_kind = parse_kind(get_or<std::string>(rj, "kind", "delete-edges"));
    cfg.rob_magnitudes = get_or<std::vector<double>>(rj, "magnitudes", {});
    if (rj.contains("models"))
      cfg.rob_models = rj.at("models").get<std::vector<std::string>>();
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

int cmd_run(const ExperimentConfig& cfg, std::ostream& log) {
  fs::create_directories(cfg.output_dir);
  write_text(fs::path(cfg.output_dir) / "config_echo.json", cfg.echo.dump(2) + "\n");
  graph::GraphDataset base = cfg.dataset.materialize();

  std::vector<SeedRun> runs;
  std::vector<SeedOutcome> rows = seed_protocol(cfg, base, &runs);

  for (const SeedRun& r : runs) {
    std::string tag = std::to_string(r.outcome.seed);
    write_metrics_csv(fs::path(cfg.output_dir) / ("metrics_seed" + tag + ".csv"), r.history);
    train::save_checkpoint((fs::path(cfg.output_dir) / ("checkpoint_seed" + tag)).string(),
                           r.params, cfg.echo.dump(), static_cast<int>(r.history.size()),
                           r.outcome.test_acc);
  }

  Aggregate agg = aggregate(rows);
  std::string csv = "tag,seed,test_acc\n";
  for (const SeedOutcome& r : rows)
    csv += cfg.tag + "," + std::to_string(r.seed) + "," + csv_double(r.test_acc) + "\n";
  csv += cfg.tag + ",mean," + csv_double(agg.mean) + "\n";
  csv += cfg.tag + ",std," + csv_double(agg.stddev) + "\n";
  write_text(fs::path(cfg.output_dir) / "summary.csv", csv);

  log << cfg.tag << ": test accuracy " << agg.mean << " +/- " << agg.stddev << " over "
      << rows.size() << " seed(s)\n";
  return 0;
}

int cmd_grid(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.grid_lambda_sp.empty() || cfg.grid_lambda_st.empty())
    throw ConfigError("grid requires non-empty grid.lambda_sp and grid.lambda_st");
  fs::create_directories(cfg.output_dir);
  write_text(fs::path(cfg.output_dir) / "config_echo.json", cfg.echo.dump(2) + "\n");
  graph::GraphDataset base = cfg.dataset.materialize();

  std::string csv = "lambda_sp,lambda_st,mean_acc,std_acc\n";
  for (double sp : cfg.grid_lambda_sp) {
    for (double st : cfg.grid_lambda_st) {
      ExperimentConfig cell = cfg;
      cell.tcfg.lambda_sp = sp;
      cell.tcfg.lambda_st = st;
      Aggregate agg = aggregate(seed_protocol(cell, base, nullptr));
      csv += csv_double(sp) + "," + csv_double(st) + "," + csv_double(agg.mean) + "," +
             csv_double(agg.stddev) + "\n";
      log << "grid cell (lambda_sp=" << sp << ", lambda_st=" << st << "): " << agg.mean
          << " +/- " << agg.stddev << "\n";
    }
  }
  write_text(fs::path(cfg.output_dir) / "sensitivity.csv", csv);
  return 0;
}

int cmd_mc_study(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.mc_k.empty()) throw ConfigError("mc-study requires mc_study.k_values");
  fs::create_directories(cfg.output_dir);
  write_text(fs::path(cfg.output_dir) / "config_echo.json", cfg.echo.dump(2) + "\n");
  graph::GraphDataset base = cfg.dataset.materialize();

  // one trained model per seed, evaluated at every K
  struct Cell {
    graph::LabelSplit split;
    train::TrainResult result;
    graph::GraphDataset g;
  };
  std::vector<Cell> cells(cfg.seeds.size());
  parallel_cells(static_cast<int>(cfg.seeds.size()), [&](int i) {
    uint64_t seed = cfg.seeds[static_cast<size_t>(i)];
    Cell& cell = cells[static_cast<size_t>(i)];
    cell.g = base;
    if (cfg.perturbation) {
      perturb::PerturbationSpec spec = *cfg.perturbation;
      spec.seed = seed;
      cell.g = perturb::apply(cell.g, spec);
    }
    cell.split = graph::make_split(cell.g, cfg.train_frac, cfg.val_frac, cfg.test_frac, seed);
    train::TrainConfig tc = cfg.tcfg;
    tc.seed = seed;
    cell.result = train::train(cell.g, cell.split, tc);
  });

  std::string csv = "k,mean_acc,std_acc\n";
  for (int k : cfg.mc_k) {
    std::vector<SeedOutcome> rows;
    for (size_t i = 0; i < cells.size(); ++i) {
      double acc = train::evaluate(cells[i].g, cells[i].split.test, cells[i].result.model, k,
                                   derive_seed(cfg.seeds[i], 0xacc0 + static_cast<uint64_t>(k)));
      rows.push_back({cfg.seeds[i], acc});
    }
    Aggregate agg = aggregate(rows);
    csv += std::to_string(k) + "," + csv_double(agg.mean) + "," + csv_double(agg.stddev) + "\n";
    log << "K=" << k << ": " << agg.mean << " +/- " << agg.stddev << "\n";
  }
  write_text(fs::path(cfg.output_dir) / "mc_study.csv", csv);
  return 0;
}

int cmd_robustness(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.rob_magnitudes.empty()) throw ConfigError("robustness requires robustness.magnitudes");
  fs::create_directories(cfg.output_dir);
  write_text(fs::path(cfg.output_dir) / "config_echo.json", cfg.echo.dump(2) + "\n");
  graph::GraphDataset base = cfg.dataset.materialize();

  std::string csv = "model,kind,magnitude,mean_acc,std_acc,completed,aborted\n";
  for (const std::string& model : cfg.rob_models) {
    perturb::TrainerFn trainer = [&](const graph::GraphDataset& g,
                                     uint64_t seed) -> std::optional<double> {
      try {
        graph::LabelSplit split =
            graph::make_split(g, cfg.train_frac, cfg.val_frac, cfg.test_frac, seed);
        train::TrainConfig tc = cfg.tcfg;
        tc.seed = seed;
        if (model == "gcn") {
          train::GcnResult r = train::gcn_train(g, split, tc);
          return train::gcn_evaluate(g, split.test, r.model);
        }
        train::TrainResult r = train::train(g, split, tc);
        return train::evaluate(g, split.test, r.model, tc.mc_eval, derive_seed(seed, 0xacc));
      } catch (const DivergenceError&) {
        return std::nullopt;
      }
    };
    auto curve =
        perturb::robustness_curve(base, trainer, cfg.rob_kind, cfg.rob_magnitudes, cfg.seeds);
    for (const perturb::CurveCell& cell : curve) {
      csv += model + "," + kind_name(cfg.rob_kind) + "," + csv_double(cell.magnitude) + "," +
             csv_double(cell.mean_acc) + "," + csv_double(cell.std_acc) + "," +
             std::to_string(cell.completed) + "," + std::to_string(cell.aborted) + "\n";
      log << model << " @ " << cell.magnitude << ": " << cell.mean_acc << " +/- "
          << cell.std_acc << " (" << cell.completed << " ok, " << cell.aborted << " aborted)\n";
    }
  }
  write_text(fs::path(cfg.output_dir) / "robustness.csv", csv);
  return 0;
}

int cmd_csbm_verify(const CsbmVerifyOptions& opt, std::ostream& log) {
  int failures = 0;
  auto report = [&](bool pass, const std::string& line) {
    log << (pass ? "[PASS] " : "[FAIL] ") << line << "\n";
    if (!pass) ++failures;
  };

  {
    csbm::CsbmConfig cfg;
    cfg.n = 400;
    cfg.classes = 2;
    cfg.p_in = 0.05;
    cfg.p_out = 0.2;
    cfg.means = csbm::orthogonal_means(2, 4, 1.0);
    cfg.noise = 0.4;
    cfg.seed = 21;
    Matrix id = Matrix::Identity(4, 4);
    csbm::MarginGrowth mg = csbm::margin_growth_check(cfg, id, id, id, opt.margin_trials);
    report(mg.passed * 20 >= 18 * mg.trials,
           "margin growth: " + std::to_string(mg.passed) + "/" + std::to_string(mg.trials) +
               " trials grew every inter-class distance");
  }

  {
    csbm::CsbmConfig cfg;
    cfg.n = 80;
    cfg.classes = 2;
    cfg.p_in = 0.2;
    cfg.p_out = 0.2;
    cfg.means = csbm::orthogonal_means(2, 8, 1.0);
    cfg.noise = 0.125;
    cfg.seed = 37;
    csbm::SupportRecovery sr = csbm::support_recovery_rate(cfg, 0.4, opt.support_trials);
    report(sr.precision >= 0.9, "support recovery: precision " + std::to_string(sr.precision) +
                                    ", recall " + std::to_string(sr.recall));
  }

  {
    // empirical mean of the positive channel vs its closed form
    const int trials = 200;
    csbm::CsbmConfig cfg;
    cfg.n = 30;
    cfg.classes = 2;
    cfg.p_in = 0.1;
    cfg.p_out = 0.3;
    cfg.means = csbm::orthogonal_means(2, 4, 1.0);
    cfg.noise = 0.2;
    cfg.seed = 11;
    Matrix dev_sum, var_sum;
    for (int t = 0; t < trials; ++t) {
      csbm::CsbmConfig c = cfg;
      c.seed = derive_seed(cfg.seed, static_cast<uint64_t>(t));
      csbm::CsbmSample s = csbm::generate(c);
      const Matrix& h = s.g.X;
      Matrix zp_h = Matrix::Zero(c.n, h.cols());
      for (size_t e = 0; e < s.g.edges.size(); ++e) {
        if (s.truth.states[e] != 1) continue;
        zp_h.row(s.g.edges[e].u) += h.row(s.g.edges[e].v);
        zp_h.row(s.g.edges[e].v) += h.row(s.g.edges[e].u);
      }
      Matrix expected = Matrix::Zero(c.n, h.cols());
      Matrix var = Matrix::Zero(c.n, h.cols());
      for (int i = 0; i < c.n; ++i)
        for (int jn = 0; jn < c.n; ++jn) {
          if (i == jn || s.g.y[static_cast<size_t>(i)] != s.g.y[static_cast<size_t>(jn)])
            continue;
          expected.row(i) += cfg.p_in * h.row(jn);
          var.row(i) += cfg.p_in * (1 - cfg.p_in) * h.row(jn).cwiseProduct(h.row(jn));
        }
      if (t == 0) {
        dev_sum = Matrix::Zero(c.n, h.cols());
        var_sum = Matrix::Zero(c.n, h.cols());
      }
      dev_sum += zp_h - expected;
      var_sum += var;
    }
    int checked = 0, outside = 0;
    for (Eigen::Index i = 0; i < dev_sum.rows(); ++i)
      for (Eigen::Index d = 0; d < dev_sum.cols(); ++d) {
        if (var_sum(i, d) == 0.0) continue;
        ++checked;
        if (std::fabs(dev_sum(i, d)) > 3.0 * std::sqrt(var_sum(i, d))) ++outside;
      }
    report(checked > 0 && outside * 50 < checked,
           "expected signed propagation: " + std::to_string(outside) + "/" +
               std::to_string(checked) + " entries outside 3 sigma");
  }

  if (opt.run_trend) {
    csbm::CsbmConfig cfg;
    cfg.n = 120;
    cfg.classes = 2;
    cfg.p_in = 0.08;
    cfg.p_out = 0.25;
    cfg.means = csbm::orthogonal_means(2, 6, 1.2);
    cfg.noise = 0.5;
    cfg.seed = 4242;
    train::TrainConfig tc;
    tc.layers = 1;
    tc.d_val = 16;
    tc.d_out = 16;
    tc.encoder_hidden = 16;
    tc.decoder_hidden = 16;
    tc.mc_train = 3;
    tc.max_epochs = 120;
    tc.patience = 120;
    tc.dropout = 0.1;
    tc.seed = 77;
    auto trend = csbm::posterior_consistency_trend(cfg, {0.1, 0.3, 0.6}, tc, opt.trend_seeds);
    bool ok = true;
    std::string detail = "posterior consistency trend: kl";
    for (size_t i = 0; i < trend.size(); ++i) {
      detail += (i ? " -> " : " ") + std::to_string(trend[i].mean_kl);
      if (i > 0 && trend[i].mean_kl > trend[i - 1].mean_kl + 1e-12) ok = false;
    }
    report(ok, detail);
  }

  return failures;
}

int cmd_check(std::ostream& log) {
  int failures = 0;
  verify::GradCheckReport gr = verify::full_loss_grad_check();
  log << (gr.pass ? "[PASS] " : "[FAIL] ") << "full-objective gradient check: max rel err "
      << gr.max_rel_err << " over " << gr.parameter_entries << " entries in " << gr.seconds
      << "s\n";
  if (!gr.pass) ++failures;

  verify::LassoBatteryReport lb = verify::lasso_oracle_battery();
  log << (lb.pass ? "[PASS] " : "[FAIL] ") << "lasso oracle battery: objective excess "
      << lb.max_objective_excess << ", kkt " << lb.max_kkt_residual << ", orthonormal gap "
      << lb.max_orthonormal_gap << " over " << lb.instances << " instances\n";
  if (!lb.pass) ++failures;
  return failures;
}

}  // namespace spam::cli
