#include "latsg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>

namespace latsg {

void warn(const std::string& msg) { std::cerr << "[latsg] warning: " << msg << "\n"; }

void warn_once(const std::string& msg) {
  static std::mutex mu;
  static std::set<std::string> seen;
  {
    std::lock_guard<std::mutex> lock(mu);
    if (!seen.insert(msg).second) return;
  }
  warn(msg);
}

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

NodePtr make_node(std::vector<int> shape) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value.resize(shape_numel(n->shape));
  return n;
}

void ensure_grad(const NodePtr& n) {
  if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_2d(const Tensor& a, const char* op) {
  if (a.dim() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(a.shape()));
}

// Finalizes an op: finite check, requires_grad propagation, tape recording.
Tensor finish(NodePtr out, bool rg, const char* op, std::function<void()> bwd) {
  check_finite(*out, op);
  out->requires_grad = rg;
  if (rg) {
    if (Tape* t = Tape::active()) t->record(std::move(bwd));
  }
  return wrap_node(std::move(out));
}

}  // namespace

void check_finite(const TensorNode& n, const char* where) {
  for (double v : n.value) {
    if (!std::isfinite(v))
      throw NumericError(std::string(where) + ": non-finite value in result");
  }
}

// ---- Tensor ----

Tensor wrap_node(NodePtr n) { return Tensor(std::move(n)); }

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = make_node(std::move(shape));
  n->requires_grad = requires_grad;
  return wrap_node(std::move(n));
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  auto n = make_node(std::move(shape));
  std::fill(n->value.begin(), n->value.end(), v);
  return wrap_node(std::move(n));
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  if (shape_numel(n->shape) != data.size())
    throw ShapeError("from: data size does not match shape " + shape_str(n->shape));
  n->value = std::move(data);
  return wrap_node(std::move(n));
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ShapeError("from_rows: no rows");
  int c = static_cast<int>(rows[0].size());
  std::vector<double> data;
  data.reserve(rows.size() * rows[0].size());
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != c) throw ShapeError("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return from({static_cast<int>(rows.size()), c}, std::move(data));
}

int Tensor::rows() const {
  require_2d(*this, "rows");
  return node_->shape[0];
}

int Tensor::cols() const {
  require_2d(*this, "cols");
  return node_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) throw UsageError("item: tensor has " + std::to_string(size()) + " elements");
  return node_->value[0];
}

double Tensor::at(int r, int c) const {
  require_2d(*this, "at");
  return node_->value[static_cast<std::size_t>(r) * node_->shape[1] + c];
}

double Tensor::grad_at(int i) const {
  if (node_->grad.empty()) return 0.0;
  return node_->grad[static_cast<std::size_t>(i)];
}

Tensor& Tensor::set_requires_grad(bool rg) {
  node_->requires_grad = rg;
  return *this;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detached() const {
  auto n = std::make_shared<TensorNode>();
  n->shape = node_->shape;
  n->value = node_->value;
  return wrap_node(std::move(n));
}

// ---- Tape ----

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw UsageError("backward: loss must be a scalar tensor");
  if (!loss.requires_grad())
    throw UsageError("backward: loss does not depend on any tracked parameter");
  const NodePtr& n = loss.node();
  ensure_grad(n);
  n->grad[0] = 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

// ---- element-wise ----

namespace {

// Shared skeleton for unary f(x) with dy/dx supplied per element.
template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd bwd) {
  NodePtr out = make_node(a.shape());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = fwd(av[i]);
  NodePtr an = a.node();
  NodePtr on = out;
  return finish(
      out, a.requires_grad(), name, [an, on, bwd]() {
        if (on->grad.empty() || !an->requires_grad) return;
        ensure_grad(an);
        for (std::size_t i = 0; i < an->value.size(); ++i)
          an->grad[i] += on->grad[i] * bwd(an->value[i], on->value[i]);
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  NodePtr out = make_node(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + bv[i];
  NodePtr an = a.node(), bn = b.node(), on = out;
  return finish(out, a.requires_grad() || b.requires_grad(), "add", [an, bn, on]() {
    if (on->grad.empty()) return;
    if (an->requires_grad) {
      ensure_grad(an);
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      for (std::size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += on->grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  NodePtr out = make_node(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] - bv[i];
  NodePtr an = a.node(), bn = b.node(), on = out;
  return finish(out, a.requires_grad() || b.requires_grad(), "sub", [an, bn, on]() {
    if (on->grad.empty()) return;
    if (an->requires_grad) {
      ensure_grad(an);
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      for (std::size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] -= on->grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  NodePtr out = make_node(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * bv[i];
  NodePtr an = a.node(), bn = b.node(), on = out;
  return finish(out, a.requires_grad() || b.requires_grad(), "mul", [an, bn, on]() {
    if (on->grad.empty()) return;
    if (an->requires_grad) {
      ensure_grad(an);
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      for (std::size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->value[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  NodePtr out = make_node(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] / bv[i];
  NodePtr an = a.node(), bn = b.node(), on = out;
  return finish(out, a.requires_grad() || b.requires_grad(), "div", [an, bn, on]() {
    if (on->grad.empty()) return;
    if (an->requires_grad) {
      ensure_grad(an);
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i] / bn->value[i];
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      for (std::size_t i = 0; i < bn->grad.size(); ++i)
        bn->grad[i] -= on->grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
    }
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(a, "add_scalar", [c](double x) { return x + c; },
                  [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary_op(a, "mul_scalar", [c](double x) { return x * c; },
                  [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary_op(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, "sigmoid",
                  [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                                 : std::exp(x) / (1.0 + std::exp(x)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor exp_(const Tensor& a) {
  return unary_op(a, "exp", [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log_(const Tensor& a) {
  return unary_op(a, "log", [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt_(const Tensor& a) {
  return unary_op(a, "sqrt", [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor abs_(const Tensor& a) {
  return unary_op(a, "abs", [](double x) { return std::fabs(x); },
                  [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor reciprocal(const Tensor& a) {
  return unary_op(a, "reciprocal", [](double x) { return 1.0 / x; },
                  [](double, double y) { return -y * y; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "minimum");
  NodePtr out = make_node(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] <= bv[i] ? av[i] : bv[i];
  NodePtr an = a.node(), bn = b.node(), on = out;
  return finish(out, a.requires_grad() || b.requires_grad(), "minimum", [an, bn, on]() {
    if (on->grad.empty()) return;
    for (std::size_t i = 0; i < on->grad.size(); ++i) {
      bool take_a = an->value[i] <= bn->value[i];
      if (take_a && an->requires_grad) {
        ensure_grad(an);
        an->grad[i] += on->grad[i];
      } else if (!take_a && bn->requires_grad) {
        ensure_grad(bn);
        bn->grad[i] += on->grad[i];
      }
    }
  });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "maximum");
  NodePtr out = make_node(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] >= bv[i] ? av[i] : bv[i];
  NodePtr an = a.node(), bn = b.node(), on = out;
  return finish(out, a.requires_grad() || b.requires_grad(), "maximum", [an, bn, on]() {
    if (on->grad.empty()) return;
    for (std::size_t i = 0; i < on->grad.size(); ++i) {
      bool take_a = an->value[i] >= bn->value[i];
      if (take_a && an->requires_grad) {
        ensure_grad(an);
        an->grad[i] += on->grad[i];
      } else if (!take_a && bn->requires_grad) {
        ensure_grad(bn);
        bn->grad[i] += on->grad[i];
      }
    }
  });
}

// ---- matrix ----

namespace {

void mm_kernel(const double* a, const double* b, double* c, int r, int k, int n) {
  // c(r x n) += a(r x k) * b(k x n), c assumed zeroed
  for (int i = 0; i < r; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double aik = arow[p];
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

// da(r x k) += go(r x n) * b^T(n x k)
void mm_nt_acc(const double* go, const double* b, double* da, int r, int k, int n) {
  for (int i = 0; i < r; ++i) {
    const double* grow = go + static_cast<std::size_t>(i) * n;
    double* drow = da + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + static_cast<std::size_t>(p) * n;
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
      drow[p] += s;
    }
  }
}

// db(k x n) += a^T(k x r) * go(r x n)
void mm_tn_acc(const double* a, const double* go, double* db, int r, int k, int n) {
  for (int i = 0; i < r; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    const double* grow = go + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double aik = arow[p];
      double* drow = db + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) drow[j] += aik * grow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  int r = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  NodePtr out = make_node({r, n});
  mm_kernel(a.values().data(), b.values().data(), out->value.data(), r, k, n);
  NodePtr an = a.node(), bn = b.node(), on = out;
  return finish(out, a.requires_grad() || b.requires_grad(), "matmul", [an, bn, on, r, k, n]() {
    if (on->grad.empty()) return;
    if (an->requires_grad) {
      ensure_grad(an);
      mm_nt_acc(on->grad.data(), bn->value.data(), an->grad.data(), r, k, n);
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      mm_tn_acc(an->value.data(), on->grad.data(), bn->grad.data(), r, k, n);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  int r = a.shape()[0], c = a.shape()[1];
  NodePtr out = make_node({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out->value[static_cast<std::size_t>(j) * r + i] = a.at(i, j);
  NodePtr an = a.node(), on = out;
  return finish(out, a.requires_grad(), "transpose", [an, on, r, c]() {
    if (on->grad.empty() || !an->requires_grad) return;
    ensure_grad(an);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        an->grad[static_cast<std::size_t>(i) * c + j] += on->grad[static_cast<std::size_t>(j) * r + i];
  });
}

// ---- broadcasting ----

namespace {
void require_row_vec(const Tensor& x, const Tensor& row, const char* op) {
  require_2d(x, op);
  if (row.dim() != 1 || row.shape()[0] != x.shape()[1])
    throw ShapeError(std::string(op) + ": row vector must have shape {" +
                     std::to_string(x.shape()[1]) + "}");
}
void require_col_vec(const Tensor& x, const Tensor& col, const char* op) {
  require_2d(x, op);
  if (col.dim() != 2 || col.shape()[0] != x.shape()[0] || col.shape()[1] != 1)
    throw ShapeError(std::string(op) + ": column vector must have shape {" +
                     std::to_string(x.shape()[0]) + ",1}");
}
}  // namespace

Tensor row_broadcast_add(const Tensor& x, const Tensor& row) {
  require_row_vec(x, row, "row_broadcast_add");
  int r = x.shape()[0], c = x.shape()[1];
  NodePtr out = make_node(x.shape());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out->value[static_cast<std::size_t>(i) * c + j] = x.at(i, j) + row.at(j);
  NodePtr xn = x.node(), rn = row.node(), on = out;
  return finish(out, x.requires_grad() || row.requires_grad(), "row_broadcast_add",
                [xn, rn, on, r, c]() {
                  if (on->grad.empty()) return;
                  if (xn->requires_grad) {
                    ensure_grad(xn);
                    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i];
                  }
                  if (rn->requires_grad) {
                    ensure_grad(rn);
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < c; ++j)
                        rn->grad[j] += on->grad[static_cast<std::size_t>(i) * c + j];
                  }
                });
}

Tensor row_broadcast_mul(const Tensor& x, const Tensor& row) {
  require_row_vec(x, row, "row_broadcast_mul");
  int r = x.shape()[0], c = x.shape()[1];
  NodePtr out = make_node(x.shape());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out->value[static_cast<std::size_t>(i) * c + j] = x.at(i, j) * row.at(j);
  NodePtr xn = x.node(), rn = row.node(), on = out;
  return finish(out, x.requires_grad() || row.requires_grad(), "row_broadcast_mul",
                [xn, rn, on, r, c]() {
                  if (on->grad.empty()) return;
                  if (xn->requires_grad) {
                    ensure_grad(xn);
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < c; ++j)
                        xn->grad[static_cast<std::size_t>(i) * c + j] +=
                            on->grad[static_cast<std::size_t>(i) * c + j] * rn->value[j];
                  }
                  if (rn->requires_grad) {
                    ensure_grad(rn);
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < c; ++j)
                        rn->grad[j] += on->grad[static_cast<std::size_t>(i) * c + j] *
                                       xn->value[static_cast<std::size_t>(i) * c + j];
                  }
                });
}

Tensor col_broadcast_add(const Tensor& x, const Tensor& col) {
  require_col_vec(x, col, "col_broadcast_add");
  int r = x.shape()[0], c = x.shape()[1];
  NodePtr out = make_node(x.shape());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out->value[static_cast<std::size_t>(i) * c + j] = x.at(i, j) + col.at(i);
  NodePtr xn = x.node(), cn = col.node(), on = out;
  return finish(out, x.requires_grad() || col.requires_grad(), "col_broadcast_add",
                [xn, cn, on, r, c]() {
                  if (on->grad.empty()) return;
                  if (xn->requires_grad) {
                    ensure_grad(xn);
                    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i];
                  }
                  if (cn->requires_grad) {
                    ensure_grad(cn);
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < c; ++j)
                        cn->grad[i] += on->grad[static_cast<std::size_t>(i) * c + j];
                  }
                });
}

Tensor col_broadcast_mul(const Tensor& x, const Tensor& col) {
  require_col_vec(x, col, "col_broadcast_mul");
  int r = x.shape()[0], c = x.shape()[1];
  NodePtr out = make_node(x.shape());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out->value[static_cast<std::size_t>(i) * c + j] = x.at(i, j) * col.at(i);
  NodePtr xn = x.node(), cn = col.node(), on = out;
  return finish(out, x.requires_grad() || col.requires_grad(), "col_broadcast_mul",
                [xn, cn, on, r, c]() {
                  if (on->grad.empty()) return;
                  if (xn->requires_grad) {
                    ensure_grad(xn);
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < c; ++j)
                        xn->grad[static_cast<std::size_t>(i) * c + j] +=
                            on->grad[static_cast<std::size_t>(i) * c + j] * cn->value[i];
                  }
                  if (cn->requires_grad) {
                    ensure_grad(cn);
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < c; ++j)
                        cn->grad[i] += on->grad[static_cast<std::size_t>(i) * c + j] *
                                       xn->value[static_cast<std::size_t>(i) * c + j];
                  }
                });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
  NodePtr out = make_node({1});
  double s = 0.0;
  for (double v : a.values()) s += v;
  out->value[0] = s;
  NodePtr an = a.node(), on = out;
  return finish(out, a.requires_grad(), "sum", [an, on]() {
    if (on->grad.empty() || !an->requires_grad) return;
    ensure_grad(an);
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[0];
  });
}

Tensor mean(const Tensor& a) {
  NodePtr out = make_node({1});
  double s = 0.0;
  for (double v : a.values()) s += v;
  double n = static_cast<double>(a.size());
  out->value[0] = s / n;
  NodePtr an = a.node(), on = out;
  return finish(out, a.requires_grad(), "mean", [an, on, n]() {
    if (on->grad.empty() || !an->requires_grad) return;
    ensure_grad(an);
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[0] / n;
  });
}

Tensor row_sum(const Tensor& a) {
  require_2d(a, "row_sum");
  int r = a.shape()[0], c = a.shape()[1];
  NodePtr out = make_node({r, 1});
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += a.at(i, j);
    out->value[i] = s;
  }
  NodePtr an = a.node(), on = out;
  return finish(out, a.requires_grad(), "row_sum", [an, on, r, c]() {
    if (on->grad.empty() || !an->requires_grad) return;
    ensure_grad(an);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) an->grad[static_cast<std::size_t>(i) * c + j] += on->grad[i];
  });
}

Tensor row_mean(const Tensor& a) {
  require_2d(a, "row_mean");
  int r = a.shape()[0], c = a.shape()[1];
  NodePtr out = make_node({r, 1});
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += a.at(i, j);
    out->value[i] = s / c;
  }
  NodePtr an = a.node(), on = out;
  return finish(out, a.requires_grad(), "row_mean", [an, on, r, c]() {
    if (on->grad.empty() || !an->requires_grad) return;
    ensure_grad(an);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        an->grad[static_cast<std::size_t>(i) * c + j] += on->grad[i] / c;
  });
}

Tensor min_reduce(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("min_reduce: empty tensor");
  NodePtr out = make_node({1});
  std::size_t arg = 0;
  for (std::size_t i = 1; i < a.size(); ++i)
    if (a.values()[i] < a.values()[arg]) arg = i;
  out->value[0] = a.values()[arg];
  NodePtr an = a.node(), on = out;
  return finish(out, a.requires_grad(), "min_reduce", [an, on, arg]() {
    if (on->grad.empty() || !an->requires_grad) return;
    ensure_grad(an);
    an->grad[arg] += on->grad[0];
  });
}

Tensor median(const Tensor& a) {
  std::size_t n = a.size();
  if (n == 0) throw ShapeError("median: empty tensor");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a.values()[i] < a.values()[j]; });
  NodePtr out = make_node({1});
  NodePtr an = a.node(), on = out;
  if (n % 2 == 1) {
    std::size_t m = order[n / 2];
    out->value[0] = a.values()[m];
    return finish(out, a.requires_grad(), "median", [an, on, m]() {
      if (on->grad.empty() || !an->requires_grad) return;
      ensure_grad(an);
      an->grad[m] += on->grad[0];
    });
  }
  std::size_t lo = order[n / 2 - 1], hi = order[n / 2];
  out->value[0] = 0.5 * (a.values()[lo] + a.values()[hi]);
  return finish(out, a.requires_grad(), "median", [an, on, lo, hi]() {
    if (on->grad.empty() || !an->requires_grad) return;
    ensure_grad(an);
    an->grad[lo] += 0.5 * on->grad[0];
    an->grad[hi] += 0.5 * on->grad[0];
  });
}

// ---- shape ----

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshape: element count mismatch for " + shape_str(shape));
  NodePtr out = std::make_shared<TensorNode>();
  out->shape = std::move(shape);
  out->value = a.values();
  NodePtr an = a.node(), on = out;
  return finish(out, a.requires_grad(), "reshape", [an, on]() {
    if (on->grad.empty() || !an->requires_grad) return;
    ensure_grad(an);
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_2d(a, "concat_rows");
  require_2d(b, "concat_rows");
  if (a.shape()[1] != b.shape()[1]) throw ShapeError("concat_rows: column counts differ");
  int ra = a.shape()[0], rb = b.shape()[0], c = a.shape()[1];
  NodePtr out = make_node({ra + rb, c});
  std::copy(a.values().begin(), a.values().end(), out->value.begin());
  std::copy(b.values().begin(), b.values().end(),
            out->value.begin() + static_cast<std::ptrdiff_t>(a.size()));
  NodePtr an = a.node(), bn = b.node(), on = out;
  return finish(out, a.requires_grad() || b.requires_grad(), "concat_rows", [an, bn, on]() {
    if (on->grad.empty()) return;
    std::size_t na = an->value.size();
    if (an->requires_grad) {
      ensure_grad(an);
      for (std::size_t i = 0; i < na; ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      for (std::size_t i = 0; i < bn->value.size(); ++i) bn->grad[i] += on->grad[na + i];
    }
  });
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  require_2d(a, "slice_rows");
  int r = a.shape()[0], c = a.shape()[1];
  if (r0 < 0 || r1 > r || r0 >= r1) throw ShapeError("slice_rows: bad range");
  NodePtr out = make_node({r1 - r0, c});
  std::copy(a.values().begin() + static_cast<std::ptrdiff_t>(r0) * c,
            a.values().begin() + static_cast<std::ptrdiff_t>(r1) * c, out->value.begin());
  NodePtr an = a.node(), on = out;
  return finish(out, a.requires_grad(), "slice_rows", [an, on, r0, c]() {
    if (on->grad.empty() || !an->requires_grad) return;
    ensure_grad(an);
    std::size_t base = static_cast<std::size_t>(r0) * c;
    for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[base + i] += on->grad[i];
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_2d(a, "concat_cols");
  require_2d(b, "concat_cols");
  if (a.shape()[0] != b.shape()[0]) throw ShapeError("concat_cols: row counts differ");
  int r = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  NodePtr out = make_node({r, ca + cb});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < ca; ++j)
      out->value[static_cast<std::size_t>(i) * (ca + cb) + j] = a.at(i, j);
    for (int j = 0; j < cb; ++j)
      out->value[static_cast<std::size_t>(i) * (ca + cb) + ca + j] = b.at(i, j);
  }
  NodePtr an = a.node(), bn = b.node(), on = out;
  return finish(out, a.requires_grad() || b.requires_grad(), "concat_cols",
                [an, bn, on, r, ca, cb]() {
                  if (on->grad.empty()) return;
                  if (an->requires_grad) {
                    ensure_grad(an);
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < ca; ++j)
                        an->grad[static_cast<std::size_t>(i) * ca + j] +=
                            on->grad[static_cast<std::size_t>(i) * (ca + cb) + j];
                  }
                  if (bn->requires_grad) {
                    ensure_grad(bn);
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < cb; ++j)
                        bn->grad[static_cast<std::size_t>(i) * cb + j] +=
                            on->grad[static_cast<std::size_t>(i) * (ca + cb) + ca + j];
                  }
                });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  require_2d(a, "slice_cols");
  int r = a.shape()[0], c = a.shape()[1];
  if (c0 < 0 || c1 > c || c0 >= c1) throw ShapeError("slice_cols: bad range");
  int w = c1 - c0;
  NodePtr out = make_node({r, w});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < w; ++j)
      out->value[static_cast<std::size_t>(i) * w + j] = a.at(i, c0 + j);
  NodePtr an = a.node(), on = out;
  return finish(out, a.requires_grad(), "slice_cols", [an, on, r, c, c0, w]() {
    if (on->grad.empty() || !an->requires_grad) return;
    ensure_grad(an);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j)
        an->grad[static_cast<std::size_t>(i) * c + c0 + j] +=
            on->grad[static_cast<std::size_t>(i) * w + j];
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  require_2d(a, "gather_rows");
  int r = a.shape()[0], c = a.shape()[1];
  if (idx.empty()) throw ShapeError("gather_rows: empty index list");
  for (int i : idx)
    if (i < 0 || i >= r) throw ShapeError("gather_rows: index out of range");
  NodePtr out = make_node({static_cast<int>(idx.size()), c});
  for (std::size_t k = 0; k < idx.size(); ++k)
    for (int j = 0; j < c; ++j) out->value[k * c + j] = a.at(idx[k], j);
  NodePtr an = a.node(), on = out;
  auto ic = idx;
  return finish(out, a.requires_grad(), "gather_rows", [an, on, ic, c]() {
    if (on->grad.empty() || !an->requires_grad) return;
    ensure_grad(an);
    for (std::size_t k = 0; k < ic.size(); ++k)
      for (int j = 0; j < c; ++j)
        an->grad[static_cast<std::size_t>(ic[k]) * c + j] += on->grad[k * c + j];
  });
}

Tensor stack_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("stack_scalars: empty list");
  NodePtr out = make_node({static_cast<int>(xs.size()), 1});
  bool rg = false;
  std::vector<NodePtr> nodes;
  nodes.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != 1) throw ShapeError("stack_scalars: inputs must be scalars");
    out->value[i] = xs[i].values()[0];
    rg = rg || xs[i].requires_grad();
    nodes.push_back(xs[i].node());
  }
  NodePtr on = out;
  return finish(out, rg, "stack_scalars", [nodes, on]() {
    if (on->grad.empty()) return;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i]->requires_grad) continue;
      ensure_grad(nodes[i]);
      nodes[i]->grad[0] += on->grad[i];
    }
  });
}

// ---- softmax ----

Tensor softmax(const Tensor& a) {
  for (double v : a.values())
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  int r, c;
  if (a.dim() == 1) {
    r = 1;
    c = a.shape()[0];
  } else if (a.dim() == 2) {
    r = a.shape()[0];
    c = a.shape()[1];
  } else {
    throw ShapeError("softmax: expected 1-D or 2-D tensor");
  }
  NodePtr out = make_node(a.shape());
  for (int i = 0; i < r; ++i) {
    const double* xin = a.values().data() + static_cast<std::size_t>(i) * c;
    double* xout = out->value.data() + static_cast<std::size_t>(i) * c;
    double mx = xin[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xin[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      xout[j] = std::exp(xin[j] - mx);
      z += xout[j];
    }
    for (int j = 0; j < c; ++j) xout[j] /= z;
  }
  NodePtr an = a.node(), on = out;
  return finish(out, a.requires_grad(), "softmax", [an, on, r, c]() {
    if (on->grad.empty() || !an->requires_grad) return;
    ensure_grad(an);
    for (int i = 0; i < r; ++i) {
      const double* y = on->value.data() + static_cast<std::size_t>(i) * c;
      const double* gy = on->grad.data() + static_cast<std::size_t>(i) * c;
      double* gx = an->grad.data() + static_cast<std::size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += gy[j] * y[j];
      for (int j = 0; j < c; ++j) gx[j] += y[j] * (gy[j] - dot);
    }
  });
}

// ---- losses ----

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
  require_same_shape(logits, target, "bce_with_logits");
  NodePtr out = make_node(logits.shape());
  const auto& z = logits.values();
  const auto& t = target.values();
  for (std::size_t i = 0; i < z.size(); ++i)
    out->value[i] = std::max(z[i], 0.0) - z[i] * t[i] + std::log1p(std::exp(-std::fabs(z[i])));
  NodePtr zn = logits.node(), tn = target.node(), on = out;
  return finish(out, logits.requires_grad(), "bce_with_logits", [zn, tn, on]() {
    if (on->grad.empty() || !zn->requires_grad) return;
    ensure_grad(zn);
    for (std::size_t i = 0; i < zn->value.size(); ++i) {
      double z = zn->value[i];
      double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      zn->grad[i] += on->grad[i] * (s - tn->value[i]);
    }
  });
}

}  // namespace latsg
