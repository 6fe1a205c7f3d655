#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "doscond/common.hpp"

namespace doscond {

// Primitive operations. The set is closed under differentiation: every VJP
// rule below is expressed with these same primitives, so gradient() can be
// applied to its own output (double backprop). Step is the relu derivative
// (0 at the origin); its own derivative is zero almost everywhere.
enum class Op : uint8_t {
  Const,
  Var,
  MatMul,
  Add,
  Mul,        // elementwise
  ScalarMul,  // (1x1 node) * matrix node
  Sigmoid,
  Relu,
  Step,
  Exp,
  Log,
  Transpose,
  RowSum,   // (r,c) -> (r,1)
  RowMean,  // (r,c) -> (r,1)
  ColSum,   // ones^T * X: (r,c) -> (1,c)
  SoftmaxXent,  // sum over rows of cross-entropy(softmax(logits), onehot) -> (1,1)
  FrobSq,   // squared Frobenius norm -> (1,1)
  Sum,      // sum of all entries -> (1,1)
  Reshape,  // row-major
};

struct ExprNode {
  Op op;
  int a = -1;
  int b = -1;
  int rows = 0;
  int cols = 0;
  int var = -1;  // variable id when op == Var
  Mat value;     // payload when op == Const
};

class Tape;

// Lightweight handle into a Tape. Valid as long as the tape lives.
struct Expr {
  Tape* tape = nullptr;
  int id = -1;
  int rows() const;
  int cols() const;
};

/// Values for the free variables of an expression, keyed by variable id.
class Binding {
 public:
  Binding() = default;
  explicit Binding(int var_count) : values_(var_count), set_(var_count, false) {}

  void set(const Expr& var, Mat value);
  void set_id(int var_id, Mat value) {
    grow(var_id);
    values_[static_cast<size_t>(var_id)] = std::move(value);
    set_[static_cast<size_t>(var_id)] = true;
  }
  bool has(int var_id) const {
    return var_id >= 0 && var_id < static_cast<int>(set_.size()) &&
           set_[static_cast<size_t>(var_id)];
  }
  const Mat& get(int var_id) const {
    if (!has(var_id)) throw std::runtime_error("Binding: unbound variable");
    return values_[static_cast<size_t>(var_id)];
  }
  Mat& mutable_ref(int var_id) {
    if (!has(var_id)) throw std::runtime_error("Binding: unbound variable");
    return values_[static_cast<size_t>(var_id)];
  }

 private:
  void grow(int var_id) {
    if (var_id < 0) throw std::invalid_argument("Binding: negative variable id");
    if (var_id >= static_cast<int>(values_.size())) {
      values_.resize(static_cast<size_t>(var_id) + 1);
      set_.resize(static_cast<size_t>(var_id) + 1, false);
    }
  }
  std::vector<Mat> values_;
  std::vector<bool> set_;
};

/// Append-only arena of expression nodes. Construction is single-threaded;
/// a finished tape is immutable under evaluate() and may be evaluated
/// concurrently with distinct bindings and workspaces.
class Tape {
 public:
  int size() const { return static_cast<int>(nodes_.size()); }
  int var_count() const { return n_vars_; }
  const ExprNode& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  Expr constant(Mat m) {
    ExprNode n;
    n.op = Op::Const;
    n.rows = static_cast<int>(m.rows());
    n.cols = static_cast<int>(m.cols());
    n.value = std::move(m);
    return push(n);
  }
  Expr scalar(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }
  Expr ones(int r, int c) { return constant(Mat::Ones(r, c)); }
  Expr zeros(int r, int c) { return constant(Mat::Zero(r, c)); }
  Expr identity(int n) { return constant(Mat::Identity(n, n)); }

  Expr variable(int rows, int cols) {
    ExprNode n;
    n.op = Op::Var;
    n.rows = rows;
    n.cols = cols;
    n.var = n_vars_++;
    return push(n);
  }

  Expr emit(Op op, int a, int b, int rows, int cols) {
    ExprNode n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.rows = rows;
    n.cols = cols;
    return push(n);
  }

 private:
  Expr push(ExprNode n) {
    nodes_.push_back(std::move(n));
    return Expr{this, static_cast<int>(nodes_.size()) - 1};
  }
  std::vector<ExprNode> nodes_;
  int n_vars_ = 0;
};

inline int Expr::rows() const { return tape->node(id).rows; }
inline int Expr::cols() const { return tape->node(id).cols; }

inline void Binding::set(const Expr& var, Mat value) {
  const ExprNode& n = var.tape->node(var.id);
  if (n.op != Op::Var) throw std::invalid_argument("Binding::set: not a variable");
  set_id(n.var, std::move(value));
}

namespace detail {
inline Tape& same_tape(const Expr& a, const Expr& b) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw std::invalid_argument("operands belong to different tapes");
  return *a.tape;
}
[[noreturn]] inline void shape_error(const char* what, const Expr& a) {
  throw std::invalid_argument(std::string("shape mismatch in ") + what + " (" +
                              std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + ")");
}
}  // namespace detail

inline Expr matmul(Expr a, Expr b) {
  Tape& t = detail::same_tape(a, b);
  if (a.cols() != b.rows()) detail::shape_error("matmul", a);
  return t.emit(Op::MatMul, a.id, b.id, a.rows(), b.cols());
}
inline Expr add(Expr a, Expr b) {
  Tape& t = detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("add", a);
  return t.emit(Op::Add, a.id, b.id, a.rows(), a.cols());
}
inline Expr mul(Expr a, Expr b) {
  Tape& t = detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("mul", a);
  return t.emit(Op::Mul, a.id, b.id, a.rows(), a.cols());
}
inline Expr scalar_mul(Expr s, Expr x) {
  Tape& t = detail::same_tape(s, x);
  if (s.rows() != 1 || s.cols() != 1) detail::shape_error("scalar_mul", s);
  return t.emit(Op::ScalarMul, s.id, x.id, x.rows(), x.cols());
}
inline Expr scale(double c, Expr x) { return scalar_mul(x.tape->scalar(c), x); }
inline Expr sub(Expr a, Expr b) { return add(a, scale(-1.0, b)); }

inline Expr unary(Op op, Expr x, int rows, int cols) {
  return x.tape->emit(op, x.id, -1, rows, cols);
}
inline Expr sigmoid(Expr x) { return unary(Op::Sigmoid, x, x.rows(), x.cols()); }
inline Expr relu(Expr x) { return unary(Op::Relu, x, x.rows(), x.cols()); }
inline Expr step(Expr x) { return unary(Op::Step, x, x.rows(), x.cols()); }
inline Expr exp(Expr x) { return unary(Op::Exp, x, x.rows(), x.cols()); }
inline Expr log(Expr x) { return unary(Op::Log, x, x.rows(), x.cols()); }
inline Expr transpose(Expr x) { return unary(Op::Transpose, x, x.cols(), x.rows()); }
inline Expr row_sum(Expr x) { return unary(Op::RowSum, x, x.rows(), 1); }
inline Expr row_mean(Expr x) { return unary(Op::RowMean, x, x.rows(), 1); }
inline Expr col_sum(Expr x) { return unary(Op::ColSum, x, 1, x.cols()); }
inline Expr frob_sq(Expr x) { return unary(Op::FrobSq, x, 1, 1); }
inline Expr sum(Expr x) { return unary(Op::Sum, x, 1, 1); }
inline Expr reshape(Expr x, int rows, int cols) {
  if (x.rows() * x.cols() != rows * cols) detail::shape_error("reshape", x);
  return unary(Op::Reshape, x, rows, cols);
}

inline Expr softmax_xent(Expr logits, Expr onehot) {
  Tape& t = detail::same_tape(logits, onehot);
  if (logits.rows() != onehot.rows() || logits.cols() != onehot.cols())
    detail::shape_error("softmax_xent", logits);
  return t.emit(Op::SoftmaxXent, logits.id, onehot.id, 1, 1);
}

// 1/x for positive x, within the primitive set
inline Expr reciprocal(Expr x) { return exp(scale(-1.0, log(x))); }
// sqrt for positive x
inline Expr sqrt(Expr x) { return exp(scale(0.5, log(x))); }

// Row-wise softmax, composed from primitives. Used as the derivative carrier
// of SoftmaxXent so second-order differentiation flows through it.
inline Expr softmax(Expr logits) {
  Tape& t = *logits.tape;
  Expr lse = log(row_sum(exp(logits)));                    // (r,1)
  Expr shift = matmul(lse, t.ones(1, logits.cols()));      // (r,C)
  return exp(sub(logits, shift));
}

namespace detail {

inline void mark_needed(const Tape& tape, std::span<const Expr> roots,
                        std::vector<uint8_t>& needed) {
  needed.assign(static_cast<size_t>(tape.size()), 0);
  std::vector<int> stack;
  for (const Expr& r : roots) {
    if (r.tape != &tape) throw std::invalid_argument("root from another tape");
    if (r.id < 0 || r.id >= tape.size()) throw std::invalid_argument("bad root id");
    stack.push_back(r.id);
  }
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    if (needed[static_cast<size_t>(id)]) continue;
    needed[static_cast<size_t>(id)] = 1;
    const ExprNode& n = tape.node(id);
    if (n.a >= 0) stack.push_back(n.a);
    if (n.b >= 0) stack.push_back(n.b);
  }
}

inline void eval_node(const Tape& tape, int id, const Binding& binding,
                      std::vector<Mat>& val) {
  const ExprNode& n = tape.node(id);
  Mat& out = val[static_cast<size_t>(id)];
  switch (n.op) {
    case Op::Const:
      out = n.value;
      break;
    case Op::Var: {
      const Mat& v = binding.get(n.var);
      if (v.rows() != n.rows || v.cols() != n.cols)
        throw std::invalid_argument("bound value has wrong shape");
      out = v;
      break;
    }
    case Op::MatMul:
      out.noalias() = val[static_cast<size_t>(n.a)] * val[static_cast<size_t>(n.b)];
      break;
    case Op::Add:
      out = val[static_cast<size_t>(n.a)] + val[static_cast<size_t>(n.b)];
      break;
    case Op::Mul:
      out = val[static_cast<size_t>(n.a)].cwiseProduct(val[static_cast<size_t>(n.b)]);
      break;
    case Op::ScalarMul:
      out = val[static_cast<size_t>(n.a)](0, 0) * val[static_cast<size_t>(n.b)];
      break;
    case Op::Sigmoid:
      out = (0.5 * (0.5 * val[static_cast<size_t>(n.a)].array()).tanh() + 0.5).matrix();
      break;
    case Op::Relu:
      out = val[static_cast<size_t>(n.a)].cwiseMax(0.0);
      break;
    case Op::Step:
      out = (val[static_cast<size_t>(n.a)].array() > 0.0).cast<double>().matrix();
      break;
    case Op::Exp:
      out = val[static_cast<size_t>(n.a)].array().exp().matrix();
      break;
    case Op::Log:
      out = val[static_cast<size_t>(n.a)].array().log().matrix();
      break;
    case Op::Transpose:
      out = val[static_cast<size_t>(n.a)].transpose();
      break;
    case Op::RowSum:
      out = val[static_cast<size_t>(n.a)].rowwise().sum();
      break;
    case Op::RowMean:
      out = val[static_cast<size_t>(n.a)].rowwise().mean();
      break;
    case Op::ColSum:
      out = val[static_cast<size_t>(n.a)].colwise().sum();
      break;
    case Op::SoftmaxXent: {
      const Mat& z = val[static_cast<size_t>(n.a)];
      const Mat& y = val[static_cast<size_t>(n.b)];
      double total = 0.0;
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        double m = z.row(i).maxCoeff();
        double lse = m + std::log((z.row(i).array() - m).exp().sum());
        total += lse - z.row(i).dot(y.row(i));
      }
      out.resize(1, 1);
      out(0, 0) = total;
      break;
    }
    case Op::FrobSq: {
      out.resize(1, 1);
      out(0, 0) = val[static_cast<size_t>(n.a)].squaredNorm();
      break;
    }
    case Op::Sum: {
      out.resize(1, 1);
      out(0, 0) = val[static_cast<size_t>(n.a)].sum();
      break;
    }
    case Op::Reshape: {
      const Mat& in = val[static_cast<size_t>(n.a)];
      const int c_in = static_cast<int>(in.cols());
      out.resize(n.rows, n.cols);
      const int total = n.rows * n.cols;
      for (int k = 0; k < total; ++k) {
        out(k / n.cols, k % n.cols) = in(k / c_in, k % c_in);
      }
      break;
    }
  }
}

}  // namespace detail

/// Evaluates several roots in one pass, sharing common subexpressions.
/// `workspace` (node id -> value) can be reused across calls to avoid
/// reallocation; pass nullptr for a private scratch buffer.
inline std::vector<Mat> evaluate_many(std::span<const Expr> roots,
                                      const Binding& binding,
                                      std::vector<Mat>* workspace = nullptr) {
  if (roots.empty()) return {};
  const Tape& tape = *roots[0].tape;
  std::vector<uint8_t> needed;
  detail::mark_needed(tape, roots, needed);
  std::vector<Mat> local;
  std::vector<Mat>& val = workspace ? *workspace : local;
  if (static_cast<int>(val.size()) < tape.size()) val.resize(static_cast<size_t>(tape.size()));
  int max_id = 0;
  for (const Expr& r : roots) max_id = std::max(max_id, r.id);
  for (int id = 0; id <= max_id; ++id) {
    if (needed[static_cast<size_t>(id)]) detail::eval_node(tape, id, binding, val);
  }
  std::vector<Mat> out;
  out.reserve(roots.size());
  for (const Expr& r : roots) out.push_back(val[static_cast<size_t>(r.id)]);
  return out;
}

inline Mat evaluate(Expr root, const Binding& binding,
                    std::vector<Mat>* workspace = nullptr) {
  Expr roots[1] = {root};
  return std::move(evaluate_many(roots, binding, workspace)[0]);
}

/// Reverse-mode differentiation of a scalar expression with respect to a set
/// of variables. Returns gradient *expressions* on the same tape, built only
/// from the primitive op set, so the result can itself be differentiated.
/// A variable that does not influence the scalar yields a zero constant of
/// the variable's shape.
inline std::vector<Expr> gradient(Expr scalar_root, std::span<const Expr> wrt) {
  Tape& tape = *scalar_root.tape;
  if (scalar_root.rows() != 1 || scalar_root.cols() != 1)
    throw std::invalid_argument("gradient: root must be scalar (1x1)");
  for (const Expr& v : wrt) {
    if (v.tape != &tape) throw std::invalid_argument("gradient: wrt from another tape");
    if (tape.node(v.id).op != Op::Var)
      throw std::invalid_argument("gradient: wrt entries must be variables");
  }

  std::vector<uint8_t> needed;
  Expr roots[1] = {scalar_root};
  detail::mark_needed(tape, roots, needed);

  const int root_id = scalar_root.id;
  std::vector<Expr> adj(static_cast<size_t>(root_id) + 1, Expr{});
  adj[static_cast<size_t>(root_id)] = tape.scalar(1.0);

  auto accumulate = [&](int id, Expr contribution) {
    Expr& slot = adj[static_cast<size_t>(id)];
    slot = (slot.tape == nullptr) ? contribution : add(slot, contribution);
  };

  // Nodes only reference lower ids, so a reverse sweep sees every node after
  // all of its consumers. Adjoint expressions are appended past root_id and
  // never revisited.
  for (int id = root_id; id >= 0; --id) {
    if (!needed[static_cast<size_t>(id)]) continue;
    Expr g = adj[static_cast<size_t>(id)];
    if (g.tape == nullptr) continue;
    const ExprNode& n = tape.node(id);
    Expr self{&tape, id};
    Expr a{&tape, n.a};
    Expr b{&tape, n.b};
    switch (n.op) {
      case Op::Const:
      case Op::Var:
      case Op::Step:
        break;
      case Op::MatMul:
        accumulate(n.a, matmul(g, transpose(b)));
        accumulate(n.b, matmul(transpose(a), g));
        break;
      case Op::Add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::Mul:
        accumulate(n.a, mul(g, b));
        accumulate(n.b, mul(g, a));
        break;
      case Op::ScalarMul:
        accumulate(n.b, scalar_mul(a, g));
        accumulate(n.a, sum(mul(g, b)));
        break;
      case Op::Sigmoid: {
        Expr one = tape.ones(n.rows, n.cols);
        accumulate(n.a, mul(g, mul(self, sub(one, self))));
        break;
      }
      case Op::Relu:
        accumulate(n.a, mul(g, step(a)));
        break;
      case Op::Exp:
        accumulate(n.a, mul(g, self));
        break;
      case Op::Log:
        // 1/x = exp(-log x); reuses this node's value
        accumulate(n.a, mul(g, exp(scale(-1.0, self))));
        break;
      case Op::Transpose:
        accumulate(n.a, transpose(g));
        break;
      case Op::RowSum:
        accumulate(n.a, matmul(g, tape.ones(1, a.cols())));
        break;
      case Op::RowMean:
        accumulate(n.a, scale(1.0 / a.cols(), matmul(g, tape.ones(1, a.cols()))));
        break;
      case Op::ColSum:
        accumulate(n.a, matmul(tape.ones(a.rows(), 1), g));
        break;
      case Op::SoftmaxXent:
        // d/dlogits = softmax(logits) - onehot; labels receive no gradient
        accumulate(n.a, scalar_mul(g, sub(softmax(a), b)));
        break;
      case Op::FrobSq:
        accumulate(n.a, scalar_mul(scale(2.0, g), a));
        break;
      case Op::Sum:
        accumulate(n.a, scalar_mul(g, tape.ones(a.rows(), a.cols())));
        break;
      case Op::Reshape:
        accumulate(n.a, reshape(g, a.rows(), a.cols()));
        break;
    }
  }

  std::vector<Expr> out;
  out.reserve(wrt.size());
  for (const Expr& v : wrt) {
    Expr g = (v.id <= root_id) ? adj[static_cast<size_t>(v.id)] : Expr{};
    out.push_back(g.tape ? g : tape.zeros(v.rows(), v.cols()));
  }
  return out;
}

inline Expr gradient(Expr scalar_root, Expr wrt) {
  Expr vars[1] = {wrt};
  return gradient(scalar_root, vars)[0];
}

/// Max relative error between the analytic gradient of `scalar_root` w.r.t.
/// `var` and a central finite difference at the bound point:
///   max_ij |analytic - (f(x + h e_ij) - f(x - h e_ij)) / 2h| / max(1, |analytic|)
inline double finite_diff_check(Expr scalar_root, Expr var, const Binding& binding,
                                double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be > 0");
  Mat analytic = evaluate(gradient(scalar_root, var), binding);
  const ExprNode& vn = var.tape->node(var.id);
  Binding probe = binding;
  Mat base = binding.get(vn.var);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < base.rows(); ++i) {
    for (Eigen::Index j = 0; j < base.cols(); ++j) {
      Mat pt = base;
      pt(i, j) = base(i, j) + h;
      probe.set_id(vn.var, pt);
      double fp = evaluate(scalar_root, probe)(0, 0);
      pt(i, j) = base(i, j) - h;
      probe.set_id(vn.var, pt);
      double fm = evaluate(scalar_root, probe)(0, 0);
      double fd = (fp - fm) / (2.0 * h);
      double a = analytic(i, j);
      if (!std::isfinite(fd) || !std::isfinite(a))
        throw std::runtime_error("finite_diff_check: non-finite value");
      worst = std::max(worst, std::abs(a - fd) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

}  // namespace doscond
