#include "spam/sparsecode.hpp"

#include <cmath>

namespace spam::lasso {

void LassoProblem::validate() const {
  if (lambda <= 0.0) throw PreconditionError("lasso: lambda must be positive");
  if (V.cols() > 0 && V.rows() != t.size())
    throw DimensionError("lasso: dictionary and target dimensions disagree");
  if (!V.allFinite() || !t.allFinite()) throw PreconditionError("lasso: non-finite input");
}

double soft_threshold(double x, double tau) {
  if (tau < 0.0) throw PreconditionError("soft_threshold: tau must be non-negative");
  double mag = std::fabs(x) - tau;
  if (mag <= 0.0) return 0.0;
  return x > 0 ? mag : -mag;
}

double lasso_objective(const LassoProblem& p, const Eigen::VectorXd& alpha) {
  if (alpha.size() != p.V.cols()) throw DimensionError("lasso objective: alpha size mismatch");
  Eigen::VectorXd r = p.t - p.V * alpha;
  return r.squaredNorm() + p.lambda * alpha.lpNorm<1>();
}

SparseCode solve_lasso_cd(const LassoProblem& p, double tol, int max_iter) {
  p.validate();
  if (tol <= 0.0) throw PreconditionError("lasso: tol must be positive");
  const int k = p.dict_size();
  SparseCode code;
  code.lambda = p.lambda;
  code.neighbor_ids.resize(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) code.neighbor_ids[static_cast<size_t>(j)] = j;
  code.alpha = Eigen::VectorXd::Zero(k);
  if (k == 0) return code;

  Eigen::VectorXd norms(k);
  for (int j = 0; j < k; ++j) {
    norms(j) = p.V.col(j).squaredNorm();
    if (norms(j) == 0.0) code.frozen_columns.push_back(j);
  }

  Eigen::VectorXd r = p.t;  // residual t - V alpha, alpha starts at zero
  const double thr = p.lambda / 2.0;
  code.converged = false;
  for (int it = 0; it < max_iter; ++it) {
    double max_change = 0.0;
    for (int j = 0; j < k; ++j) {
      if (norms(j) == 0.0) continue;
      double old = code.alpha(j);
      double cj = p.V.col(j).dot(r) + norms(j) * old;
      double next = soft_threshold(cj, thr) / norms(j);
      if (next != old) {
        r += p.V.col(j) * (old - next);
        code.alpha(j) = next;
      }
      max_change = std::max(max_change, std::fabs(next - old));
    }
    if (max_change < tol) {
      code.converged = true;
      break;
    }
  }
  return code;
}

double kkt_residual(const LassoProblem& p, const Eigen::VectorXd& alpha) {
  if (alpha.size() != p.V.cols()) throw DimensionError("kkt_residual: alpha size mismatch");
  if (p.V.cols() == 0) return 0.0;
  Eigen::VectorXd g = 2.0 * p.V.transpose() * (p.V * alpha - p.t);
  double res = 0.0;
  for (int j = 0; j < alpha.size(); ++j) {
    double v;
    if (alpha(j) != 0.0)
      v = std::fabs(g(j) + p.lambda * (alpha(j) > 0 ? 1.0 : -1.0));
    else
      v = std::max(0.0, std::fabs(g(j)) - p.lambda);
    res = std::max(res, v);
  }
  return res;
}

double power_iteration_max_eig(const Matrix& V, int iters, uint64_t seed) {
  const int k = static_cast<int>(V.cols());
  if (k == 0) return 0.0;
  Matrix gram = V.transpose() * V;
  Rng rng(seed);
  Eigen::VectorXd x(k);
  for (int j = 0; j < k; ++j) x(j) = rng.gaussian();
  double norm = x.norm();
  if (norm == 0.0) return 0.0;
  x /= norm;
  double eig = 0.0;
  for (int it = 0; it < iters; ++it) {
    Eigen::VectorXd y = gram * x;
    double ynorm = y.norm();
    if (ynorm == 0.0) return 0.0;
    eig = x.dot(y);
    x = y / ynorm;
  }
  return eig;
}

SparseCode approx_sparse_code(const LassoProblem& p, int steps, std::optional<double> eta) {
  p.validate();
  if (steps < 1) throw PreconditionError("approx_sparse_code: need at least one step");
  if (eta.has_value() && *eta <= 0.0)
    throw PreconditionError("approx_sparse_code: eta must be positive");
  const int k = p.dict_size();
  SparseCode code;
  code.lambda = p.lambda;
  code.neighbor_ids.resize(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) code.neighbor_ids[static_cast<size_t>(j)] = j;
  code.alpha = Eigen::VectorXd::Zero(k);
  if (k == 0) return code;

  // The squared-error term has gradient 2 V^T (V a - t), so the largest
  // stable step is 1 / (2 eig_max(V^T V)); on an orthonormal dictionary
  // this is 1/2, where a single step is exact.
  double step = eta.has_value() ? *eta : 1.0 / std::max(2.0 * power_iteration_max_eig(p.V), 1e-12);
  for (int it = 0; it < steps; ++it) {
    Eigen::VectorXd z =
        code.alpha + 2.0 * step * (p.V.transpose() * (p.t - p.V * code.alpha));
    for (int j = 0; j < k; ++j) code.alpha(j) = soft_threshold(z(j), step * p.lambda);
  }
  return code;
}

diff::Var approx_sparse_code_tape(diff::Var t_row, diff::Var dict_rows, diff::Var eta,
                                  double lambda, int steps) {
  if (steps < 1) throw PreconditionError("approx_sparse_code: need at least one step");
  diff::Tape& tape = *t_row.tape();
  const int k = dict_rows.rows();
  diff::Var alpha = tape.constant(Matrix::Zero(1, k));
  for (int it = 0; it < steps; ++it) {
    diff::Var resid = diff::sub(t_row, diff::matmul(alpha, dict_rows));
    diff::Var grad_step = diff::matmul_nt(resid, dict_rows);      // 1 x k
    diff::Var z = diff::add(alpha, diff::mul_scalar(eta, grad_step, 2.0));
    alpha = diff::soft_threshold(z, eta, lambda);
  }
  return alpha;
}

}  // namespace spam::lasso
