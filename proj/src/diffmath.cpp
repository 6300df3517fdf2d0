#include "spam/diffmath.hpp"

#include <cmath>
#include <cstring>

namespace spam::diff {

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw Error("operands live on different tapes");
}

void require_shape(Var v, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (v.rows() != rows || v.cols() != cols)
    throw DimensionError(std::string(what) + ": got " + std::to_string(v.rows()) + "x" +
                         std::to_string(v.cols()) + ", want " + std::to_string(rows) + "x" +
                         std::to_string(cols));
}

}  // namespace

const Matrix& Var::value() const {
  if (!tape_) throw Error("value() on empty Var");
  return tape_->value_of(idx_);
}

const Matrix& Var::grad() const {
  if (!tape_) throw Error("grad() on empty Var");
  return tape_->grad_of(idx_);
}

Var Tape::leaf(Matrix value) {
  int idx = emit(std::move(value), {}, nullptr, true);
  nodes_[idx].is_leaf = true;
  return Var(this, idx);
}

Var Tape::constant(Matrix value) {
  int idx = emit(std::move(value), {}, nullptr, false);
  return Var(this, idx);
}

int Tape::emit(Matrix value, std::vector<int> parents, BackFn back, bool requires_grad) {
  if (debug_ && !value.allFinite())
    throw Error("non-finite value produced at tape node " + std::to_string(nodes_.size()));
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.back = std::move(back);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Matrix& Tape::grad_of(int idx) {
  Node& n = nodes_[idx];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error("loss lives on a different tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw DimensionError("backward() needs a scalar loss");

  // Reachability sweep so unrelated subgraphs are skipped.
  std::vector<char> reach(nodes_.size(), 0);
  std::vector<int> stack{loss.index()};
  reach[loss.index()] = 1;
  while (!stack.empty()) {
    int i = stack.back();
    stack.pop_back();
    for (int p : nodes_[i].parents) {
      if (!reach[p] && nodes_[p].requires_grad) {
        reach[p] = 1;
        stack.push_back(p);
      }
    }
  }

  grad_of(loss.index())(0, 0) += 1.0;
  for (int i = loss.index(); i >= 0; --i) {
    if (!reach[i] || !nodes_[i].back) continue;
    nodes_[i].back(*this, grad_of(i));
  }

  if (debug_) {
    for (size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].is_leaf && !reach[i])
        warnings_.push_back("leaf node " + std::to_string(i) +
                            " is disconnected from the loss; gradient left at zero");
    }
  }
}

void backward(Var loss) { loss.tape()->backward(loss); }

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions disagree");
  Tape& t = *a.tape();
  int ai = a.index(), bi = b.index();
  bool rg = t.requires_grad(ai) || t.requires_grad(bi);
  Matrix value = a.value() * b.value();
  Tape::BackFn back;
  if (rg) {
    back = [ai, bi](Tape& t, const Matrix& g) {
      if (t.requires_grad(ai)) t.grad_of(ai) += g * t.value_of(bi).transpose();
      if (t.requires_grad(bi)) t.grad_of(bi) += t.value_of(ai).transpose() * g;
    };
  }
  return t.wrap(t.emit(std::move(value), {ai, bi}, std::move(back), rg));
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: inner dimensions disagree");
  Tape& t = *a.tape();
  int ai = a.index(), bi = b.index();
  bool rg = t.requires_grad(ai) || t.requires_grad(bi);
  Matrix value = a.value() * b.value().transpose();
  Tape::BackFn back;
  if (rg) {
    back = [ai, bi](Tape& t, const Matrix& g) {
      if (t.requires_grad(ai)) t.grad_of(ai) += g * t.value_of(bi);
      if (t.requires_grad(bi)) t.grad_of(bi) += g.transpose() * t.value_of(ai);
    };
  }
  return t.wrap(t.emit(std::move(value), {ai, bi}, std::move(back), rg));
}

Var matmul_tn(Var a, Var b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows()) throw DimensionError("matmul_tn: inner dimensions disagree");
  Tape& t = *a.tape();
  int ai = a.index(), bi = b.index();
  bool rg = t.requires_grad(ai) || t.requires_grad(bi);
  Matrix value = a.value().transpose() * b.value();
  Tape::BackFn back;
  if (rg) {
    back = [ai, bi](Tape& t, const Matrix& g) {
      if (t.requires_grad(ai)) t.grad_of(ai) += t.value_of(bi) * g.transpose();
      if (t.requires_grad(bi)) t.grad_of(bi) += t.value_of(ai) * g;
    };
  }
  return t.wrap(t.emit(std::move(value), {ai, bi}, std::move(back), rg));
}

Var spmm_sym(std::shared_ptr<const CsrMatrix> s, Var x) {
  Tape& t = *x.tape();
  int xi = x.index();
  bool rg = t.requires_grad(xi);
  Matrix value = s->multiply(x.value());
  Tape::BackFn back;
  if (rg) {
    back = [xi, s](Tape& t, const Matrix& g) { t.grad_of(xi) += s->multiply(g); };
  }
  return t.wrap(t.emit(std::move(value), {xi}, std::move(back), rg));
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(b, a.rows(), a.cols(), "add");
  Tape& t = *a.tape();
  int ai = a.index(), bi = b.index();
  bool rg = t.requires_grad(ai) || t.requires_grad(bi);
  Matrix value = a.value() + b.value();
  Tape::BackFn back;
  if (rg) {
    back = [ai, bi](Tape& t, const Matrix& g) {
      if (t.requires_grad(ai)) t.grad_of(ai) += g;
      if (t.requires_grad(bi)) t.grad_of(bi) += g;
    };
  }
  return t.wrap(t.emit(std::move(value), {ai, bi}, std::move(back), rg));
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(b, a.rows(), a.cols(), "sub");
  Tape& t = *a.tape();
  int ai = a.index(), bi = b.index();
  bool rg = t.requires_grad(ai) || t.requires_grad(bi);
  Matrix value = a.value() - b.value();
  Tape::BackFn back;
  if (rg) {
    back = [ai, bi](Tape& t, const Matrix& g) {
      if (t.requires_grad(ai)) t.grad_of(ai) += g;
      if (t.requires_grad(bi)) t.grad_of(bi) -= g;
    };
  }
  return t.wrap(t.emit(std::move(value), {ai, bi}, std::move(back), rg));
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(b, a.rows(), a.cols(), "hadamard");
  Tape& t = *a.tape();
  int ai = a.index(), bi = b.index();
  bool rg = t.requires_grad(ai) || t.requires_grad(bi);
  Matrix value = a.value().cwiseProduct(b.value());
  Tape::BackFn back;
  if (rg) {
    back = [ai, bi](Tape& t, const Matrix& g) {
      if (t.requires_grad(ai)) t.grad_of(ai) += g.cwiseProduct(t.value_of(bi));
      if (t.requires_grad(bi)) t.grad_of(bi) += g.cwiseProduct(t.value_of(ai));
    };
  }
  return t.wrap(t.emit(std::move(value), {ai, bi}, std::move(back), rg));
}

Var add_rowvec(Var m, Var row) {
  require_same_tape(m, row);
  require_shape(row, 1, m.cols(), "add_rowvec");
  Tape& t = *m.tape();
  int mi = m.index(), ri = row.index();
  bool rg = t.requires_grad(mi) || t.requires_grad(ri);
  Matrix value = m.value().rowwise() + row.value().row(0);
  Tape::BackFn back;
  if (rg) {
    back = [mi, ri](Tape& t, const Matrix& g) {
      if (t.requires_grad(mi)) t.grad_of(mi) += g;
      if (t.requires_grad(ri)) t.grad_of(ri) += g.colwise().sum();
    };
  }
  return t.wrap(t.emit(std::move(value), {mi, ri}, std::move(back), rg));
}

Var rows_scale(Var m, Var colvec) {
  require_same_tape(m, colvec);
  require_shape(colvec, m.rows(), 1, "rows_scale");
  Tape& t = *m.tape();
  int mi = m.index(), ci = colvec.index();
  bool rg = t.requires_grad(mi) || t.requires_grad(ci);
  Matrix value = colvec.value().col(0).asDiagonal() * m.value();
  Tape::BackFn back;
  if (rg) {
    back = [mi, ci](Tape& t, const Matrix& g) {
      if (t.requires_grad(mi)) t.grad_of(mi) += t.value_of(ci).col(0).asDiagonal() * g;
      if (t.requires_grad(ci))
        t.grad_of(ci).col(0) += g.cwiseProduct(t.value_of(mi)).rowwise().sum();
    };
  }
  return t.wrap(t.emit(std::move(value), {mi, ci}, std::move(back), rg));
}

Var scale(Var x, double c) {
  Tape& t = *x.tape();
  int xi = x.index();
  bool rg = t.requires_grad(xi);
  Matrix value = c * x.value();
  Tape::BackFn back;
  if (rg) back = [xi, c](Tape& t, const Matrix& g) { t.grad_of(xi) += c * g; };
  return t.wrap(t.emit(std::move(value), {xi}, std::move(back), rg));
}

Var add_matrix(Var x, const Matrix& c) {
  if (x.rows() != c.rows() || x.cols() != c.cols())
    throw DimensionError("add_matrix shape mismatch");
  Tape& t = *x.tape();
  int xi = x.index();
  bool rg = t.requires_grad(xi);
  Matrix value = x.value() + c;
  Tape::BackFn back;
  if (rg) back = [xi](Tape& t, const Matrix& g) { t.grad_of(xi) += g; };
  return t.wrap(t.emit(std::move(value), {xi}, std::move(back), rg));
}

Var neg(Var x) { return scale(x, -1.0); }

Var relu(Var x) {
  Tape& t = *x.tape();
  int xi = x.index();
  bool rg = t.requires_grad(xi);
  Matrix value = x.value().cwiseMax(0.0);
  Tape::BackFn back;
  if (rg) {
    back = [xi](Tape& t, const Matrix& g) {
      const Matrix& xv = t.value_of(xi);
      t.grad_of(xi) += g.cwiseProduct((xv.array() > 0.0).cast<double>().matrix());
    };
  }
  return t.wrap(t.emit(std::move(value), {xi}, std::move(back), rg));
}

Var abs(Var x) {
  Tape& t = *x.tape();
  int xi = x.index();
  bool rg = t.requires_grad(xi);
  Matrix value = x.value().cwiseAbs();
  Tape::BackFn back;
  if (rg) {
    back = [xi](Tape& t, const Matrix& g) {
      const Matrix& xv = t.value_of(xi);
      t.grad_of(xi) += g.cwiseProduct(xv.array().sign().matrix());
    };
  }
  return t.wrap(t.emit(std::move(value), {xi}, std::move(back), rg));
}

Var sign(Var x) {
  Tape& t = *x.tape();
  Matrix value = x.value().array().sign().matrix();
  // piecewise constant: zero gradient
  return t.wrap(t.emit(std::move(value), {x.index()}, nullptr, false));
}

Var log(Var x) {
  Tape& t = *x.tape();
  int xi = x.index();
  bool rg = t.requires_grad(xi);
  Matrix value = x.value().array().log().matrix();
  Tape::BackFn back;
  if (rg) {
    back = [xi](Tape& t, const Matrix& g) {
      t.grad_of(xi) += g.cwiseQuotient(t.value_of(xi));
    };
  }
  return t.wrap(t.emit(std::move(value), {xi}, std::move(back), rg));
}

Var clamp_min(Var x, double lo) {
  Tape& t = *x.tape();
  int xi = x.index();
  bool rg = t.requires_grad(xi);
  Matrix value = x.value().cwiseMax(lo);
  Tape::BackFn back;
  if (rg) {
    back = [xi, lo](Tape& t, const Matrix& g) {
      const Matrix& xv = t.value_of(xi);
      t.grad_of(xi) += g.cwiseProduct((xv.array() > lo).cast<double>().matrix());
    };
  }
  return t.wrap(t.emit(std::move(value), {xi}, std::move(back), rg));
}

Var softmax_rows(Var x) {
  Tape& t = *x.tape();
  int xi = x.index();
  bool rg = t.requires_grad(xi);
  Matrix value(x.rows(), x.cols());
  const Matrix& xv = x.value();
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    double mx = xv.row(r).maxCoeff();
    Eigen::ArrayXd e = (xv.row(r).array() - mx).exp();
    value.row(r) = (e / e.sum()).matrix();
  }
  Tape::BackFn back;
  if (rg) {
    back = [xi, p = value](Tape& t, const Matrix& g) {
      Matrix& gx = t.grad_of(xi);
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        double dot = g.row(r).dot(p.row(r));
        gx.row(r) += (p.row(r).array() * (g.row(r).array() - dot)).matrix();
      }
    };
  }
  return t.wrap(t.emit(std::move(value), {xi}, std::move(back), rg));
}

Var layernorm_rows(Var x) {
  if (x.cols() < 1) throw DimensionError("layernorm_rows: empty input");
  constexpr double kEps = 1e-12;
  Tape& t = *x.tape();
  int xi = x.index();
  bool rg = t.requires_grad(xi);
  const Matrix& xv = x.value();
  const double d = static_cast<double>(xv.cols());
  Matrix value(xv.rows(), xv.cols());
  Eigen::VectorXd inv_sigma(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    double mu = xv.row(r).mean();
    double var = (xv.row(r).array() - mu).square().sum() / d;
    double is = 1.0 / std::sqrt(var + kEps);
    inv_sigma(r) = is;
    value.row(r) = ((xv.row(r).array() - mu) * is).matrix();
  }
  Tape::BackFn back;
  if (rg) {
    back = [xi, y = value, inv_sigma, d](Tape& t, const Matrix& g) {
      Matrix& gx = t.grad_of(xi);
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        double gmean = g.row(r).mean();
        double gymean = g.row(r).cwiseProduct(y.row(r)).sum() / d;
        gx.row(r) += (inv_sigma(r) *
                      (g.row(r).array() - gmean - y.row(r).array() * gymean))
                         .matrix();
      }
    };
  }
  return t.wrap(t.emit(std::move(value), {xi}, std::move(back), rg));
}

Var soft_threshold(Var x, Var eta, double lambda) {
  require_same_tape(x, eta);
  require_shape(eta, 1, 1, "soft_threshold eta");
  if (eta.value()(0, 0) <= 0.0) throw PreconditionError("soft_threshold: eta must be positive");
  Tape& t = *x.tape();
  int xi = x.index(), ei = eta.index();
  bool rg = t.requires_grad(xi) || t.requires_grad(ei);
  double tau = lambda * eta.value()(0, 0);
  const Matrix& xv = x.value();
  Matrix value =
      (xv.array().sign() * (xv.array().abs() - tau).max(0.0)).matrix();
  Tape::BackFn back;
  if (rg) {
    back = [xi, ei, tau, lambda](Tape& t, const Matrix& g) {
      const Matrix& xv = t.value_of(xi);
      Eigen::ArrayXXd active = (xv.array().abs() > tau).cast<double>();
      if (t.requires_grad(xi)) t.grad_of(xi) += g.cwiseProduct(active.matrix());
      if (t.requires_grad(ei))
        t.grad_of(ei)(0, 0) +=
            -lambda * (g.array() * xv.array().sign() * active).sum();
    };
  }
  return t.wrap(t.emit(std::move(value), {xi, ei}, std::move(back), rg));
}

Var st_ones(Var x) {
  Tape& t = *x.tape();
  int xi = x.index();
  bool rg = t.requires_grad(xi);
  Matrix value = Matrix::Ones(x.rows(), x.cols());
  Tape::BackFn back;
  if (rg) back = [xi](Tape& t, const Matrix& g) { t.grad_of(xi) += g; };
  return t.wrap(t.emit(std::move(value), {xi}, std::move(back), rg));
}

Var rows_gather(Var x, std::vector<int> rows) {
  Tape& t = *x.tape();
  int xi = x.index();
  bool rg = t.requires_grad(xi);
  Matrix value(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= x.rows()) throw DimensionError("rows_gather: index out of range");
    value.row(static_cast<Eigen::Index>(r)) = x.value().row(rows[r]);
  }
  Tape::BackFn back;
  if (rg) {
    back = [xi, rows](Tape& t, const Matrix& g) {
      Matrix& gx = t.grad_of(xi);
      for (size_t r = 0; r < rows.size(); ++r)
        gx.row(rows[r]) += g.row(static_cast<Eigen::Index>(r));
    };
  }
  return t.wrap(t.emit(std::move(value), {xi}, std::move(back), rg));
}

Var entries_gather(Var x, std::vector<int> rows, std::vector<int> cols) {
  if (rows.size() != cols.size()) throw DimensionError("entries_gather: index lists disagree");
  Tape& t = *x.tape();
  int xi = x.index();
  bool rg = t.requires_grad(xi);
  Matrix value(static_cast<Eigen::Index>(rows.size()), 1);
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= x.rows() || cols[r] < 0 || cols[r] >= x.cols())
      throw DimensionError("entries_gather: index out of range");
    value(static_cast<Eigen::Index>(r), 0) = x.value()(rows[r], cols[r]);
  }
  Tape::BackFn back;
  if (rg) {
    back = [xi, rows, cols](Tape& t, const Matrix& g) {
      Matrix& gx = t.grad_of(xi);
      for (size_t r = 0; r < rows.size(); ++r)
        gx(rows[r], cols[r]) += g(static_cast<Eigen::Index>(r), 0);
    };
  }
  return t.wrap(t.emit(std::move(value), {xi}, std::move(back), rg));
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows()) throw DimensionError("concat_cols: row counts disagree");
  Tape& t = *a.tape();
  int ai = a.index(), bi = b.index();
  bool rg = t.requires_grad(ai) || t.requires_grad(bi);
  Matrix value(a.rows(), a.cols() + b.cols());
  value << a.value(), b.value();
  Tape::BackFn back;
  if (rg) {
    int ac = a.cols(), bc = b.cols();
    back = [ai, bi, ac, bc](Tape& t, const Matrix& g) {
      if (t.requires_grad(ai)) t.grad_of(ai) += g.leftCols(ac);
      if (t.requires_grad(bi)) t.grad_of(bi) += g.rightCols(bc);
    };
  }
  return t.wrap(t.emit(std::move(value), {ai, bi}, std::move(back), rg));
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  Tape& t = *parts[0].tape();
  Eigen::Index total = 0;
  bool rg = false;
  std::vector<int> parents;
  parents.reserve(parts.size());
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    if (p.cols() != parts[0].cols()) throw DimensionError("concat_rows: column counts disagree");
    total += p.rows();
    rg = rg || t.requires_grad(p.index());
    parents.push_back(p.index());
  }
  Matrix value(total, parts[0].cols());
  Eigen::Index at = 0;
  std::vector<std::pair<int, int>> spans;  // (offset, rows) aligned with parents
  spans.reserve(parts.size());
  for (const Var& p : parts) {
    value.middleRows(at, p.rows()) = p.value();
    spans.emplace_back(static_cast<int>(at), p.rows());
    at += p.rows();
  }
  Tape::BackFn back;
  if (rg) {
    back = [parents, spans](Tape& t, const Matrix& g) {
      for (size_t i = 0; i < parents.size(); ++i) {
        if (t.requires_grad(parents[i]))
          t.grad_of(parents[i]) += g.middleRows(spans[i].first, spans[i].second);
      }
    };
  }
  return t.wrap(t.emit(std::move(value), std::move(parents), std::move(back), rg));
}

Var sum(Var x) {
  Tape& t = *x.tape();
  int xi = x.index();
  bool rg = t.requires_grad(xi);
  Matrix value(1, 1);
  // fixed left-to-right accumulation over the row-major layout
  double acc = 0.0;
  const Matrix& xv = x.value();
  for (Eigen::Index r = 0; r < xv.rows(); ++r)
    for (Eigen::Index c = 0; c < xv.cols(); ++c) acc += xv(r, c);
  value(0, 0) = acc;
  Tape::BackFn back;
  if (rg) {
    back = [xi](Tape& t, const Matrix& g) {
      t.grad_of(xi).array() += g(0, 0);
    };
  }
  return t.wrap(t.emit(std::move(value), {xi}, std::move(back), rg));
}

Var mul_scalar(Var s, Var m, double c) {
  require_same_tape(s, m);
  require_shape(s, 1, 1, "mul_scalar s");
  Tape& t = *s.tape();
  int si = s.index(), mi = m.index();
  bool rg = t.requires_grad(si) || t.requires_grad(mi);
  Matrix value = (c * s.value()(0, 0)) * m.value();
  Tape::BackFn back;
  if (rg) {
    back = [si, mi, c](Tape& t, const Matrix& g) {
      if (t.requires_grad(mi)) t.grad_of(mi) += (c * t.value_of(si)(0, 0)) * g;
      if (t.requires_grad(si))
        t.grad_of(si)(0, 0) += c * g.cwiseProduct(t.value_of(mi)).sum();
    };
  }
  return t.wrap(t.emit(std::move(value), {si, mi}, std::move(back), rg));
}

Var dropout(Var x, double rate, uint64_t seed, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw PreconditionError("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  Rng rng(seed);
  Matrix mask(x.rows(), x.cols());
  double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      mask(r, c) = (rng.uniform() >= rate) ? keep_scale : 0.0;
  Var m = x.tape()->constant(std::move(mask));
  return hadamard(x, m);
}

Var apply_unary(Var x, Unary f) {
  switch (f) {
    case Unary::kRelu:
      return relu(x);
    case Unary::kSoftmaxRows:
      return softmax_rows(x);
    case Unary::kLayernormRows:
      return layernorm_rows(x);
    case Unary::kAbs:
      return abs(x);
    case Unary::kSign:
      return sign(x);
  }
  throw Error("unknown unary kind");
}

double grad_check(const BuildFn& f, const std::vector<Matrix>& params, double h) {
  if (h < 1e-8 || h > 1e-4) throw PreconditionError("grad_check: h outside [1e-8, 1e-4]");

  auto eval = [&](const std::vector<Matrix>& p) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(p.size());
    for (const Matrix& m : p) vars.push_back(t.leaf(m));
    Var loss = f(t, vars);
    if (loss.rows() != 1 || loss.cols() != 1)
      throw DimensionError("grad_check: computation must produce a scalar");
    return loss.value()(0, 0);
  };

  // analytic gradients
  Tape t;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Matrix& m : params) vars.push_back(t.leaf(m));
  Var loss = f(t, vars);
  if (loss.rows() != 1 || loss.cols() != 1)
    throw DimensionError("grad_check: computation must produce a scalar");
  double base = loss.value()(0, 0);
  t.backward(loss);
  std::vector<Matrix> analytic;
  analytic.reserve(vars.size());
  for (const Var& v : vars) analytic.push_back(v.grad());

  // determinism contract: rebuilding must reproduce the loss bitwise
  double replay = eval(params);
  if (std::memcmp(&replay, &base, sizeof(double)) != 0)
    throw ContractViolation("grad_check: computation is not deterministic for fixed inputs");

  double max_rel = 0.0;
  std::vector<Matrix> work = params;
  for (size_t p = 0; p < work.size(); ++p) {
    for (Eigen::Index r = 0; r < work[p].rows(); ++r) {
      for (Eigen::Index c = 0; c < work[p].cols(); ++c) {
        double orig = work[p](r, c);
        work[p](r, c) = orig + h;
        double up = eval(work);
        work[p](r, c) = orig - h;
        double down = eval(work);
        work[p](r, c) = orig;
        double fd = (up - down) / (2.0 * h);
        double rel = std::fabs(analytic[p](r, c) - fd) / std::max(1.0, std::fabs(fd));
        if (rel > max_rel) max_rel = rel;
      }
    }
  }
  return max_rel;
}

}  // namespace spam::diff
