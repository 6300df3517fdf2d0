#pragma once

#include "spam/common.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace spam::diff {

class Tape;

// Handle to a node on a Tape. Cheap to copy; lifetime bound to the tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  // Accumulated gradient (zeros before backward()).
  const Matrix& grad() const;
  int rows() const { return static_cast<int>(value().rows()); }
  int cols() const { return static_cast<int>(value().cols()); }
  bool valid() const { return tape_ != nullptr; }
  int index() const { return idx_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, int idx) : tape_(tape), idx_(idx) {}

  Tape* tape_ = nullptr;
  int idx_ = -1;
};

// Record of one computation. Values are computed eagerly; backward() runs
// the recorded adjoint closures in reverse order. Single-threaded by
// design: one tape per worker.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Tracked input: gradients will be accumulated here.
  Var leaf(Matrix value);
  // Untracked input: grad is never requested nor produced.
  Var constant(Matrix value);

  // Seeds d loss / d loss = 1 and sweeps the recorded closures in reverse.
  // loss must be 1x1. Leaves not reachable from loss keep zero gradients;
  // in debug mode they are listed in warnings().
  void backward(Var loss);

  void set_debug(bool on) { debug_ = on; }
  bool debug() const { return debug_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  void clear_warnings() { warnings_.clear(); }

  size_t size() const { return nodes_.size(); }

  // --- internal surface used by the op constructors ---
  int emit(Matrix value, std::vector<int> parents, BackFn back, bool requires_grad);
  Var wrap(int idx) { return Var(this, idx); }
  const Matrix& value_of(int idx) const { return nodes_[idx].value; }
  Matrix& grad_of(int idx);
  bool requires_grad(int idx) const { return nodes_[idx].requires_grad; }
  bool is_leaf(int idx) const { return nodes_[idx].is_leaf; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // allocated on first touch
    std::vector<int> parents;
    BackFn back;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  std::vector<Node> nodes_;
  bool debug_ = false;
  std::vector<std::string> warnings_;
};

// ---- op constructors -------------------------------------------------

Var matmul(Var a, Var b);     // a * b
Var matmul_nt(Var a, Var b);  // a * b^T
Var matmul_tn(Var a, Var b);  // a^T * b

// y = s * x with s a fixed symmetric operator (normalized adjacency).
Var spmm_sym(std::shared_ptr<const CsrMatrix> s, Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var add_rowvec(Var m, Var row);    // broadcast 1xC row over every row of m
Var rows_scale(Var m, Var colvec); // row r scaled by colvec(r, 0)
Var scale(Var x, double c);
Var add_matrix(Var x, const Matrix& c);
Var neg(Var x);

Var relu(Var x);
Var abs(Var x);
Var sign(Var x);  // zero gradient everywhere
Var log(Var x);
Var clamp_min(Var x, double lo);
Var softmax_rows(Var x);
Var layernorm_rows(Var x);

// Elementwise sign(x) * max(|x| - lambda*eta, 0); eta is a 1x1 variable.
Var soft_threshold(Var x, Var eta, double lambda);

// Straight-through gate: forward value is all-ones, backward is identity.
Var st_ones(Var x);

Var rows_gather(Var x, std::vector<int> rows);
Var entries_gather(Var x, std::vector<int> rows, std::vector<int> cols);
Var concat_cols(Var a, Var b);
Var concat_rows(const std::vector<Var>& parts);
Var sum(Var x);                            // 1x1
Var mul_scalar(Var s, Var m, double c = 1.0);  // c * s(0,0) * m

// Inverted-scaling Bernoulli mask, identity when !training or rate == 0.
Var dropout(Var x, double rate, uint64_t seed, bool training);

enum class Unary { kRelu, kSoftmaxRows, kLayernormRows, kAbs, kSign };
Var apply_unary(Var x, Unary f);

void backward(Var loss);

// ---- finite-difference gradient checking -----------------------------

// Builds the computation twice to verify determinism, then compares the
// analytic gradient of every parameter entry against central differences.
// Returns max over entries of |analytic - fd| / max(1, |fd|).
using BuildFn = std::function<Var(Tape&, const std::vector<Var>&)>;
double grad_check(const BuildFn& f, const std::vector<Matrix>& params, double h = 1e-6);

}  // namespace spam::diff
