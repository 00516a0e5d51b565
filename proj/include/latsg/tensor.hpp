#ifndef LATSG_TENSOR_HPP_
#define LATSG_TENSOR_HPP_

#include <functional>
#include <memory>
#include <vector>

#include "latsg/common.hpp"

namespace latsg {

// Dense float64 tensor with a reverse-mode tape. 1-D and 2-D shapes cover
// everything this project needs; data is row-major.
struct TensorNode {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on demand during backward
  bool requires_grad = false;
};

using NodePtr = std::shared_ptr<TensorNode>;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v);
  static Tensor from(std::vector<int> shape, std::vector<double> data);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim() const { return static_cast<int>(node_->shape.size()); }
  int rows() const;
  int cols() const;
  std::size_t size() const { return node_->value.size(); }

  double item() const;  // UsageError unless size()==1
  double at(int i) const { return node_->value[static_cast<std::size_t>(i)]; }
  double at(int r, int c) const;

  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  double grad_at(int i) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg);
  void zero_grad();

  // Detached copy of the values; never part of any graph.
  Tensor detached() const;

  const NodePtr& node() const { return node_; }

 private:
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}
  NodePtr node_;
  friend Tensor wrap_node(NodePtr);
};

Tensor wrap_node(NodePtr n);

// Computation record. Ops push backward closures while a tape is active
// (thread-local); backward() replays them in exact reverse order, so
// gradient accumulation is deterministic. One tape per training step; never
// share a tape across concurrent steps.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
  std::size_t size() const { return steps_.size(); }

  // Seeds d(loss)/d(loss)=1 and runs the record backwards. UsageError if the
  // loss is not a scalar or was not computed under this tape.
  void backward(const Tensor& loss);

  static Tape* active();

  struct Scope {
    explicit Scope(Tape& t);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

 private:
  std::vector<std::function<void()>> steps_;
};

// ---- element-wise / scalar ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor abs_(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor minimum(const Tensor& a, const Tensor& b);  // ties route grad to a
Tensor maximum(const Tensor& a, const Tensor& b);  // ties route grad to a

// ---- matrix ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- broadcasting over a 2-D tensor ----
Tensor row_broadcast_add(const Tensor& x, const Tensor& row);  // row: {C}
Tensor row_broadcast_mul(const Tensor& x, const Tensor& row);
Tensor col_broadcast_add(const Tensor& x, const Tensor& col);  // col: {R,1}
Tensor col_broadcast_mul(const Tensor& x, const Tensor& col);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor row_sum(const Tensor& a);   // {R,C} -> {R,1}
Tensor row_mean(const Tensor& a);  // {R,C} -> {R,1}
Tensor min_reduce(const Tensor& a);  // grad to first argmin
Tensor median(const Tensor& a);      // even size: mean of the two middles

// ---- shape ----
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, int r0, int r1);  // half-open
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
Tensor stack_scalars(const std::vector<Tensor>& xs);  // n scalars -> {n,1}

// Row-wise softmax with max subtraction; a 1-D input is one row.
// Fatal NumericError on non-finite input.
Tensor softmax(const Tensor& a);

// Numerically safe binary cross-entropy from logits; `target` is a constant
// (no gradient flows into it).
Tensor bce_with_logits(const Tensor& logits, const Tensor& target);

// Throws NumericError if any entry is NaN/Inf. Every op calls this on its
// output, so a poisoned value fails fast at its source.
void check_finite(const TensorNode& n, const char* where);

}  // namespace latsg

#endif  // LATSG_TENSOR_HPP_
