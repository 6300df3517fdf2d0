#include "spam/graphcore.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace spam::graph {

namespace {

bool parse_double(const std::string& tok, double& out) {
  const char* begin = tok.c_str();
  const char* end = begin + tok.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_int(const std::string& tok, long& out) {
  const char* begin = tok.c_str();
  const char* end = begin + tok.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& tok : out) {
    size_t a = tok.find_first_not_of(" \t");
    size_t b = tok.find_last_not_of(" \t");
    tok = (a == std::string::npos) ? std::string() : tok.substr(a, b - a + 1);
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

void GraphDataset::validate() const {
  if (n <= 0) throw DimensionError("dataset has no nodes");
  if (X.rows() != n) throw DimensionError("feature row count differs from node count");
  if (X.cols() < 1) throw DimensionError("feature dimension must be >= 1");
  if (num_classes < 2) throw DimensionError("need at least 2 classes");
  if (static_cast<int>(y.size()) != n || static_cast<int>(labeled.size()) != n)
    throw DimensionError("label arrays sized inconsistently");
  std::set<std::pair<int, int>> seen;
  for (const Edge& e : edges) {
    if (e.u == e.v) throw DimensionError("self-loop present");
    if (e.u > e.v) throw DimensionError("edge not normalized to u < v");
    if (e.u < 0 || e.v >= n) throw DimensionError("edge endpoint out of range");
    if (!seen.insert({e.u, e.v}).second) throw DimensionError("duplicate edge present");
  }
  for (int i = 0; i < n; ++i) {
    if (labeled[i] && (y[i] < 0 || y[i] >= num_classes))
      throw DimensionError("labeled node with class out of range");
  }
}

GraphDataset load_dataset(const std::string& edge_path, const std::string& feature_path,
                          const std::string& label_path, LoadReport* report) {
  GraphDataset g;

  // features
  {
    auto lines = read_lines(feature_path);
    std::vector<std::vector<double>> rows;
    for (size_t ln = 0; ln < lines.size(); ++ln) {
      if (lines[ln].empty()) continue;
      auto toks = split_csv(lines[ln]);
      std::vector<double> row(toks.size());
      bool numeric = true;
      for (size_t j = 0; j < toks.size(); ++j) {
        if (!parse_double(toks[j], row[j])) {
          numeric = false;
          break;
        }
      }
      if (!numeric) {
        if (rows.empty() && ln == 0) continue;  // header row
        throw ParseError(feature_path + ":" + std::to_string(ln + 1) +
                         ": non-numeric feature value");
      }
      if (!rows.empty() && row.size() != rows.front().size())
        throw ParseError(feature_path + ":" + std::to_string(ln + 1) +
                         ": inconsistent column count");
      rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError(feature_path + ": no feature rows");
    g.n = static_cast<int>(rows.size());
    g.X.resize(g.n, static_cast<Eigen::Index>(rows.front().size()));
    for (int i = 0; i < g.n; ++i)
      for (size_t j = 0; j < rows[static_cast<size_t>(i)].size(); ++j)
        g.X(i, static_cast<Eigen::Index>(j)) = rows[static_cast<size_t>(i)][j];
  }

  // labels
  g.y.assign(static_cast<size_t>(g.n), -1);
  g.labeled.assign(static_cast<size_t>(g.n), 0);
  {
    auto lines = read_lines(label_path);
    int max_class = -1;
    for (size_t ln = 0; ln < lines.size(); ++ln) {
      if (lines[ln].empty()) continue;
      auto toks = split_csv(lines[ln]);
      long node = 0, cls = 0;
      if (toks.size() != 2 || !parse_int(toks[0], node) || !parse_int(toks[1], cls)) {
        if (ln == 0) continue;  // header row
        throw ParseError(label_path + ":" + std::to_string(ln + 1) +
                         ": expected node_id,class_id");
      }
      if (node < 0 || node >= g.n)
        throw ParseError(label_path + ":" + std::to_string(ln + 1) + ": node id out of range");
      if (cls < 0)
        throw ParseError(label_path + ":" + std::to_string(ln + 1) + ": negative class id");
      g.y[static_cast<size_t>(node)] = static_cast<int>(cls);
      g.labeled[static_cast<size_t>(node)] = 1;
      max_class = std::max(max_class, static_cast<int>(cls));
    }
    g.num_classes = std::max(max_class + 1, 2);
  }

  // edges
  {
    auto lines = read_lines(edge_path);
    std::set<std::pair<int, int>> seen;
    LoadReport rep;
    for (size_t ln = 0; ln < lines.size(); ++ln) {
      const std::string& line = lines[ln];
      if (line.empty() || line[0] == '#') continue;
      std::istringstream iss(line);
      std::string a, b, extra;
      if (!(iss >> a >> b) || (iss >> extra))
        throw ParseError(edge_path + ":" + std::to_string(ln + 1) + ": expected 'u<TAB>v'");
      long u = 0, v = 0;
      if (!parse_int(a, u) || !parse_int(b, v))
        throw ParseError(edge_path + ":" + std::to_string(ln + 1) + ": non-integer node id");
      if (u < 0 || v < 0 || u >= g.n || v >= g.n)
        throw ParseError(edge_path + ":" + std::to_string(ln + 1) +
                         ": edge endpoint has no feature row");
      if (u == v) {
        rep.self_loops_removed++;
        continue;
      }
      int lo = static_cast<int>(std::min(u, v)), hi = static_cast<int>(std::max(u, v));
      if (!seen.insert({lo, hi}).second) {
        rep.duplicate_edges_removed++;
        continue;
      }
      g.edges.push_back({lo, hi});
    }
    std::sort(g.edges.begin(), g.edges.end(), [](const Edge& x, const Edge& y) {
      return std::tie(x.u, x.v) < std::tie(y.u, y.v);
    });
    if (report) *report = rep;
  }

  g.validate();
  return g;
}

void save_dataset(const GraphDataset& g, const std::string& edge_path,
                  const std::string& feature_path, const std::string& label_path) {
  {
    std::ofstream out(edge_path);
    if (!out) throw ParseError("cannot write " + edge_path);
    for (const Edge& e : g.edges) out << e.u << '\t' << e.v << '\n';
  }
  {
    std::ofstream out(feature_path);
    if (!out) throw ParseError("cannot write " + feature_path);
    char buf[64];
    for (int i = 0; i < g.n; ++i) {
      for (int j = 0; j < g.feature_dim(); ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", g.X(i, j));
        out << (j ? "," : "") << buf;
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(label_path);
    if (!out) throw ParseError("cannot write " + label_path);
    for (int i = 0; i < g.n; ++i)
      if (g.is_labeled(i)) out << i << ',' << g.y[static_cast<size_t>(i)] << '\n';
  }
}

double homophily_ratio(const GraphDataset& g, int* skipped_edges) {
  int qualifying = 0, same = 0, skipped = 0;
  for (const Edge& e : g.edges) {
    if (!g.is_labeled(e.u) || !g.is_labeled(e.v)) {
      skipped++;
      continue;
    }
    qualifying++;
    if (g.y[static_cast<size_t>(e.u)] == g.y[static_cast<size_t>(e.v)]) same++;
  }
  if (skipped_edges) *skipped_edges = skipped;
  if (qualifying == 0) throw PreconditionError("homophily ratio undefined: no fully-labeled edges");
  return static_cast<double>(same) / static_cast<double>(qualifying);
}

NeighborSets neighbor_sets(const GraphDataset& g, const SignedAdjacency& z, int node) {
  if (z.states.size() != g.edges.size())
    throw DimensionError("signed adjacency not keyed on this graph's edges");
  NeighborSets out;
  for (size_t e = 0; e < g.edges.size(); ++e) {
    int other;
    if (g.edges[e].u == node)
      other = g.edges[e].v;
    else if (g.edges[e].v == node)
      other = g.edges[e].u;
    else
      continue;
    if (z.states[e] > 0)
      out.positive.push_back(other);
    else if (z.states[e] < 0)
      out.negative.push_back(other);
  }
  return out;
}

Incidence Incidence::build(const GraphDataset& g) {
  Incidence inc;
  inc.at.resize(static_cast<size_t>(g.n));
  for (size_t e = 0; e < g.edges.size(); ++e) {
    inc.at[static_cast<size_t>(g.edges[e].u)].push_back({g.edges[e].v, static_cast<int>(e)});
    inc.at[static_cast<size_t>(g.edges[e].v)].push_back({g.edges[e].u, static_cast<int>(e)});
  }
  return inc;
}

LabelSplit make_split(const GraphDataset& g, double train_frac, double val_frac,
                      double test_frac, uint64_t seed) {
  if (train_frac <= 0.0 || val_frac < 0.0 || test_frac < 0.0)
    throw SplitError("train fraction must be positive, others non-negative");
  if (std::fabs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
    throw SplitError("split fractions must sum to 1");

  std::vector<std::vector<int>> by_class(static_cast<size_t>(g.num_classes));
  std::vector<int> unlabeled;
  for (int i = 0; i < g.n; ++i) {
    if (g.is_labeled(i))
      by_class[static_cast<size_t>(g.y[static_cast<size_t>(i)])].push_back(i);
    else
      unlabeled.push_back(i);
  }

  LabelSplit split;
  split.seed = seed;
  Rng rng(derive_seed(seed, 0x5711u));
  const double fracs[3] = {train_frac, val_frac, test_frac};
  for (size_t c = 0; c < by_class.size(); ++c) {
    auto& nodes = by_class[c];
    if (nodes.empty()) continue;
    rng.shuffle(nodes);
    size_t k = nodes.size();
    size_t counts[3];
    double rema[3];
    size_t assigned = 0;
    for (int p = 0; p < 3; ++p) {
      double want = fracs[p] * static_cast<double>(k);
      counts[p] = static_cast<size_t>(std::floor(want));
      rema[p] = want - std::floor(want);
      assigned += counts[p];
    }
    // largest-remainder rounding, ties resolved train > val > test
    while (assigned < k) {
      int best = 0;
      for (int p = 1; p < 3; ++p)
        if (rema[p] > rema[best] + 1e-12) best = p;
      counts[best]++;
      rema[best] = -1.0;
      assigned++;
    }
    for (int p = 0; p < 3; ++p) {
      if (fracs[p] > 0.0 && counts[p] < 1)
        throw SplitError("class " + std::to_string(c) + " has too few nodes for the split");
    }
    size_t at = 0;
    for (size_t i = 0; i < counts[0]; ++i) split.train.push_back(nodes[at++]);
    for (size_t i = 0; i < counts[1]; ++i) split.val.push_back(nodes[at++]);
    for (size_t i = 0; i < counts[2]; ++i) split.test.push_back(nodes[at++]);
  }
  for (int u : unlabeled) split.test.push_back(u);
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

CsrMatrix normalized_adjacency(const GraphDataset& g) {
  std::vector<double> deg(static_cast<size_t>(g.n), 1.0);  // self-loop
  for (const Edge& e : g.edges) {
    deg[static_cast<size_t>(e.u)] += 1.0;
    deg[static_cast<size_t>(e.v)] += 1.0;
  }
  std::vector<std::tuple<int, int, double>> trips;
  trips.reserve(g.edges.size() * 2 + static_cast<size_t>(g.n));
  for (int i = 0; i < g.n; ++i) trips.emplace_back(i, i, 1.0 / deg[static_cast<size_t>(i)]);
  for (const Edge& e : g.edges) {
    double w = 1.0 / std::sqrt(deg[static_cast<size_t>(e.u)] * deg[static_cast<size_t>(e.v)]);
    trips.emplace_back(e.u, e.v, w);
    trips.emplace_back(e.v, e.u, w);
  }
  return CsrMatrix::from_triplets(g.n, g.n, std::move(trips));
}

}  // namespace spam::graph
