// Test-only oracles, independent of the implementation paths they check.
#pragma once

#include "spam/s2net.hpp"
#include "spam/sparsecode.hpp"

#include <limits>
#include <vector>

namespace spam::testing {

struct GridResult {
  Eigen::VectorXd alpha;
  double objective = std::numeric_limits<double>::infinity();
};

// Brute-force minimization of the lasso objective over [lo, hi]^k by
// coarse-to-fine grid refinement down to final_step. The objective is
// convex, so each stage brackets the minimizer of the next.
inline GridResult lasso_grid_search(const lasso::LassoProblem& p, double final_step = 1e-3,
                                    double lo = -3.0, double hi = 3.0) {
  const int k = p.dict_size();
  GridResult best;
  best.alpha = Eigen::VectorXd::Zero(k);
  if (k == 0) {
    best.objective = p.t.squaredNorm();
    return best;
  }

  double step = (k >= 4) ? 0.2 : 0.1;
  Eigen::VectorXd center = Eigen::VectorXd::Constant(k, (lo + hi) / 2.0);
  double half = (hi - lo) / 2.0;

  while (true) {
    int pts = static_cast<int>(std::floor(2.0 * half / step)) + 1;
    std::vector<int> idx(static_cast<size_t>(k), 0);
    Eigen::VectorXd alpha(k);
    best.objective = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_alpha = center;
    while (true) {
      for (int j = 0; j < k; ++j)
        alpha(j) = center(j) - half + step * idx[static_cast<size_t>(j)];
      double obj = lasso::lasso_objective(p, alpha);
      if (obj < best.objective) {
        best.objective = obj;
        best_alpha = alpha;
      }
      int j = 0;
      for (; j < k; ++j) {
        if (++idx[static_cast<size_t>(j)] < pts) break;
        idx[static_cast<size_t>(j)] = 0;
      }
      if (j == k) break;
    }
    best.alpha = best_alpha;
    if (step <= final_step) break;
    center = best_alpha;
    half = 1.5 * step;
    step = std::max(step / 10.0, final_step);
  }
  return best;
}

// Exact mixture over all 3^m signed states, weighted by the factorized
// posterior. Feasible for m <= ~8.
inline Matrix enumerate_marginal(const graph::GraphDataset& g, const posterior::EdgePosterior& ep,
                                 const ParamStore& params, const net::NetConfig& cfg) {
  const int m = g.num_edges();
  graph::Incidence inc = graph::Incidence::build(g);
  Matrix acc = Matrix::Zero(g.n, g.num_classes);
  std::vector<int> state(static_cast<size_t>(m), 0);
  while (true) {
    double w = 1.0;
    graph::SignedAdjacency z;
    z.states.resize(static_cast<size_t>(m));
    for (int e = 0; e < m; ++e) {
      z.states[static_cast<size_t>(e)] = static_cast<int8_t>(state[static_cast<size_t>(e)] - 1);
      w *= ep.probs(e, state[static_cast<size_t>(e)]);
    }
    if (w > 0.0) {
      diff::Tape tape;
      TapeBinding bind(tape, params);
      net::ForwardResult fr = net::forward(tape, bind, g, inc, z,
                                           tape.constant(Matrix::Ones(m, 1)), cfg, false, 0);
      acc += w * fr.probs.value();
    }
    int e = 0;
    for (; e < m; ++e) {
      if (++state[static_cast<size_t>(e)] < 3) break;
      state[static_cast<size_t>(e)] = 0;
    }
    if (e == m) break;
  }
  return acc;
}

}  // namespace spam::testing
