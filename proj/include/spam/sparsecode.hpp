#pragma once

#include "spam/common.hpp"
#include "spam/diffmath.hpp"

#include <optional>
#include <vector>

namespace spam::lasso {

// min_alpha ||t - V alpha||_2^2 + lambda ||alpha||_1   (no 1/2 factor)
struct LassoProblem {
  Eigen::VectorXd t;  // d_val
  Matrix V;           // d_val x k, columns are neighbor values
  double lambda = 0.1;

  int dict_size() const { return static_cast<int>(V.cols()); }
  void validate() const;
};

struct SparseCode {
  std::vector<int> neighbor_ids;  // aligned with alpha; coefficients off
                                  // this list are implicitly zero
  Eigen::VectorXd alpha;
  double lambda = 0.0;
  bool converged = true;
  std::vector<int> frozen_columns;  // zero-norm dictionary columns
};

double soft_threshold(double x, double tau);

double lasso_objective(const LassoProblem& p, const Eigen::VectorXd& alpha);

// Cyclic coordinate descent; terminates when the largest coordinate change
// in a sweep drops below tol. Zero-norm columns are frozen at zero.
SparseCode solve_lasso_cd(const LassoProblem& p, double tol = 1e-10, int max_iter = 10000);

// First-order optimality violation; zero certifies an exact solution.
double kkt_residual(const LassoProblem& p, const Eigen::VectorXd& alpha);

// Largest eigenvalue of V^T V estimated with a fixed number of power
// iterations.
double power_iteration_max_eig(const Matrix& V, int iters = 10, uint64_t seed = 17);

// T unrolled ISTA steps from alpha = 0. When eta is not supplied it is
// initialized to 1 / power_iteration_max_eig(V).
SparseCode approx_sparse_code(const LassoProblem& p, int steps,
                              std::optional<double> eta = std::nullopt);

// Tape version used inside the network: values are rows (t is 1 x d, the
// dictionary D holds neighbor values as rows, alpha comes back as 1 x k).
diff::Var approx_sparse_code_tape(diff::Var t_row, diff::Var dict_rows, diff::Var eta,
                                  double lambda, int steps);

}  // namespace spam::lasso
