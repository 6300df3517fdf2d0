#pragma once

#include "spam/training.hpp"

#include <string>

namespace spam::verify {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double seconds = 0.0;
  int parameter_entries = 0;
  bool pass = false;  // max_rel_err < 1e-4
};

// Central-difference check of the complete training objective (frozen
// structure noise, relaxed samples) on a fixed 6-node two-layer instance.
GradCheckReport full_loss_grad_check(uint64_t seed = 7);

struct LassoBatteryReport {
  int instances = 0;
  double max_objective_excess = 0.0;  // cd objective minus grid oracle
  double max_kkt_residual = 0.0;
  double max_orthonormal_gap = 0.0;   // vs the closed form
  bool pass = false;
};

// Exact-solver battery: random instances (k <= 4, d_val <= 6) against a
// coarse-to-fine grid oracle, optimality certificates, and the orthonormal
// closed form.
LassoBatteryReport lasso_oracle_battery(int instances = 200, uint64_t seed = 11);

}  // namespace spam::verify
