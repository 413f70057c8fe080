#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "midl/tensor.hpp"

namespace midl {

// Reverse-mode autodiff over a define-by-run graph. The graph is rebuilt on
// every forward pass; parameter leaves persist across graphs and accumulate
// gradients additively (callers zero them between optimizer steps).

// log() inputs are clamped at this epsilon so p*log(p) -> 0 as p -> 0.
inline constexpr double kLogEps = 1e-12;

struct Node {
  const char* op;
  std::vector<std::shared_ptr<Node>> inputs;
  Tensor value;
  Tensor grad;  // accumulated d(loss)/d(value), summed over backward() calls
  Tensor flow;  // transient buffer used inside a single backward() traversal
  std::function<void(Node&)> backprop;  // pushes this->flow into inputs' flow

  Node(const char* op_tag, Tensor v)
      : op(op_tag), value(std::move(v)), grad(Tensor::zeros(value.rows(), value.cols())) {}
};

using NodePtr = std::shared_ptr<Node>;

// Handle to a graph node; cheap to copy.
class Value {
 public:
  Value() = default;
  explicit Value(NodePtr n) : n_(std::move(n)) {}

  const Tensor& value() const { return n_->value; }
  const Tensor& grad() const { return n_->grad; }
  Tensor& grad() { return n_->grad; }
  const NodePtr& node() const { return n_; }
  Index rows() const { return n_->value.rows(); }
  Index cols() const { return n_->value.cols(); }
  explicit operator bool() const { return n_ != nullptr; }

 private:
  NodePtr n_;
};

// Leaves.
Value constant(Tensor t);
Value parameter(Tensor t);  // identical node, named for intent at call sites

// Elementwise; binary ops require matching shapes.
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value negate(const Value& a);
Value relu(const Value& a);
Value logc(const Value& a);  // log(max(x, kLogEps))
Value expn(const Value& a);
Value sigmoid(const Value& a);
Value rsqrt(const Value& a);  // x^(-1/2), x > 0
Value mul_scalar(const Value& a, double c);
Value add_scalar(const Value& a, double c);

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator-(const Value& a) { return negate(a); }

// Matrix product [m,k]x[k,n]; throws on inner-dimension mismatch naming both shapes.
Value matmul(const Value& a, const Value& b);

// Row-wise softmax with max subtraction; rows are probability simplex points.
Value softmax_rows(const Value& a);

// Reductions and broadcasts.
Value sum_all(const Value& a);              // [r,c] -> [1,1]
Value mean_all(const Value& a);             // [r,c] -> [1,1]
Value row_sum(const Value& a);              // [B,d] -> [B,1]
Value row_mean(const Value& a);             // [B,d] -> [B,1]
Value col_mean(const Value& a);             // [B,d] -> [1,d]
Value bcast_cols(const Value& a, Index n);  // [B,1] -> [B,n]
Value bcast_rows(const Value& a, Index b);  // [1,d] -> [b,d]
Value concat_cols(const Value& a, const Value& b);

// Seeds d(loss)/d(loss) = 1 and accumulates d(loss)/d(node) into every node
// reachable from `loss`. Additive: calling twice doubles the gradients.
// Throws std::logic_error if `loss` is not a [1,1] scalar.
void backward(const Value& loss);

}  // namespace midl
