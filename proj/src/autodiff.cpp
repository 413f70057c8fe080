#include "midl/autodiff.hpp"

#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>

namespace midl {

namespace {

Value make_node(const char* op, Tensor value, std::vector<NodePtr> inputs,
                std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>(op, std::move(value));
  n->inputs = std::move(inputs);
  n->backprop = std::move(backprop);
  return Value(n);
}

void require_same_shape(const char* op, const Value& a, const Value& b) {
  if (!same_shape(a.value(), b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                                " vs " + b.value().shape_str());
}

}  // namespace

Value constant(Tensor t) { return Value(std::make_shared<Node>("const", std::move(t))); }
Value parameter(Tensor t) { return Value(std::make_shared<Node>("param", std::move(t))); }

Value add(const Value& a, const Value& b) {
  require_same_shape("add", a, b);
  Tensor out(a.rows(), a.cols());
  out.array() = a.value().array() + b.value().array();
  return make_node("add", std::move(out), {a.node(), b.node()}, [](Node& self) {
    self.inputs[0]->flow.array() += self.flow.array();
    self.inputs[1]->flow.array() += self.flow.array();
  });
}

Value sub(const Value& a, const Value& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.rows(), a.cols());
  out.array() = a.value().array() - b.value().array();
  return make_node("sub", std::move(out), {a.node(), b.node()}, [](Node& self) {
    self.inputs[0]->flow.array() += self.flow.array();
    self.inputs[1]->flow.array() -= self.flow.array();
  });
}

Value mul(const Value& a, const Value& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.rows(), a.cols());
  out.array() = a.value().array() * b.value().array();
  return make_node("mul", std::move(out), {a.node(), b.node()}, [](Node& self) {
    self.inputs[0]->flow.array() += self.flow.array() * self.inputs[1]->value.array();
    self.inputs[1]->flow.array() += self.flow.array() * self.inputs[0]->value.array();
  });
}

Value negate(const Value& a) {
  Tensor out(a.rows(), a.cols());
  out.array() = -a.value().array();
  return make_node("negate", std::move(out), {a.node()},
                   [](Node& self) { self.inputs[0]->flow.array() -= self.flow.array(); });
}

Value relu(const Value& a) {
  Tensor out(a.rows(), a.cols());
  out.array() = a.value().array().max(0.0);
  return make_node("relu", std::move(out), {a.node()}, [](Node& self) {
    const auto& x = self.inputs[0]->value.array();
    self.inputs[0]->flow.array() += (x > 0.0).select(self.flow.array(), 0.0);
  });
}

Value logc(const Value& a) {
  Tensor out(a.rows(), a.cols());
  out.array() = a.value().array().max(kLogEps).log();
  return make_node("log", std::move(out), {a.node()}, [](Node& self) {
    const auto& x = self.inputs[0]->value.array();
    // Constant below the clamp, so zero slope there.
    self.inputs[0]->flow.array() += (x > kLogEps).select(self.flow.array() / x, 0.0);
  });
}

Value expn(const Value& a) {
  Tensor out(a.rows(), a.cols());
  out.array() = a.value().array().exp();
  return make_node("exp", std::move(out), {a.node()}, [](Node& self) {
    self.inputs[0]->flow.array() += self.flow.array() * self.value.array();
  });
}

Value sigmoid(const Value& a) {
  Tensor out(a.rows(), a.cols());
  const auto& x = a.value().array();
  // Branch on sign for stability; exp() argument is always <= 0.
  out.array() = (x >= 0.0).select(1.0 / (1.0 + (-x).exp()), x.exp() / (1.0 + x.exp()));
  return make_node("sigmoid", std::move(out), {a.node()}, [](Node& self) {
    const auto& s = self.value.array();
    self.inputs[0]->flow.array() += self.flow.array() * s * (1.0 - s);
  });
}

Value rsqrt(const Value& a) {
  Tensor out(a.rows(), a.cols());
  out.array() = a.value().array().rsqrt();
  return make_node("rsqrt", std::move(out), {a.node()}, [](Node& self) {
    const auto& y = self.value.array();
    self.inputs[0]->flow.array() += self.flow.array() * (-0.5) * y * y * y;
  });
}

Value mul_scalar(const Value& a, double c) {
  Tensor out(a.rows(), a.cols());
  out.array() = a.value().array() * c;
  return make_node("mul_scalar", std::move(out), {a.node()},
                   [c](Node& self) { self.inputs[0]->flow.array() += self.flow.array() * c; });
}

Value add_scalar(const Value& a, double c) {
  Tensor out(a.rows(), a.cols());
  out.array() = a.value().array() + c;
  return make_node("add_scalar", std::move(out), {a.node()},
                   [](Node& self) { self.inputs[0]->flow.array() += self.flow.array(); });
}

Value matmul(const Value& a, const Value& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions disagree, " + a.value().shape_str() +
                                " x " + b.value().shape_str());
  Tensor out(a.rows(), b.cols());
  out.mat().noalias() = a.value().mat() * b.value().mat();
  return make_node("matmul", std::move(out), {a.node(), b.node()}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    self.inputs[0]->flow.mat().noalias() += self.flow.mat() * bv.mat().transpose();
    self.inputs[1]->flow.mat().noalias() += av.mat().transpose() * self.flow.mat();
  });
}

Value softmax_rows(const Value& a) {
  if (a.cols() < 2) throw std::invalid_argument("softmax: needs at least 2 classes");
  Tensor out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    ArrayX z = a.value().row_array(r);
    ArrayX e = (z - z.maxCoeff()).exp();
    out.mat().row(r) = (e / e.sum()).matrix();
  }
  return make_node("softmax", std::move(out), {a.node()}, [](Node& self) {
    // row-wise: g_in = p .* (g - <g, p>)
    for (Index r = 0; r < self.value.rows(); ++r) {
      const ArrayX p = self.value.row_array(r);
      const ArrayX g = self.flow.row_array(r);
      const double dot = (g * p).sum();
      self.inputs[0]->flow.mat().row(r) += (p * (g - dot)).matrix();
    }
  });
}

Value sum_all(const Value& a) {
  return make_node("sum", Tensor::scalar(a.value().array().sum()), {a.node()}, [](Node& self) {
    self.inputs[0]->flow.array() += self.flow.array()[0];
  });
}

Value mean_all(const Value& a) {
  const double n = static_cast<double>(a.value().size());
  return make_node("mean", Tensor::scalar(a.value().array().sum() / n), {a.node()},
                   [n](Node& self) { self.inputs[0]->flow.array() += self.flow.array()[0] / n; });
}

Value row_sum(const Value& a) {
  Tensor out(a.rows(), 1);
  out.mat() = a.value().mat().rowwise().sum();
  return make_node("row_sum", std::move(out), {a.node()}, [](Node& self) {
    self.inputs[0]->flow.mat().noalias() +=
        self.flow.mat() * Eigen::RowVectorXd::Ones(self.inputs[0]->value.cols());
  });
}

Value row_mean(const Value& a) {
  const double d = static_cast<double>(a.cols());
  Tensor out(a.rows(), 1);
  out.mat() = a.value().mat().rowwise().sum() / d;
  return make_node("row_mean", std::move(out), {a.node()}, [d](Node& self) {
    self.inputs[0]->flow.mat().noalias() +=
        (self.flow.mat() / d) * Eigen::RowVectorXd::Ones(self.inputs[0]->value.cols());
  });
}

Value col_mean(const Value& a) {
  const double b = static_cast<double>(a.rows());
  Tensor out(1, a.cols());
  out.mat() = a.value().mat().colwise().sum() / b;
  return make_node("col_mean", std::move(out), {a.node()}, [b](Node& self) {
    self.inputs[0]->flow.mat().noalias() +=
        Eigen::VectorXd::Ones(self.inputs[0]->value.rows()) * (self.flow.mat() / b);
  });
}

Value bcast_cols(const Value& a, Index n) {
  if (a.cols() != 1) throw std::invalid_argument("bcast_cols: input must be [B,1]");
  Tensor out(a.rows(), n);
  out.mat().noalias() = a.value().mat() * Eigen::RowVectorXd::Ones(n);
  return make_node("bcast_cols", std::move(out), {a.node()}, [](Node& self) {
    self.inputs[0]->flow.mat() += self.flow.mat().rowwise().sum();
  });
}

Value bcast_rows(const Value& a, Index b) {
  if (a.rows() != 1) throw std::invalid_argument("bcast_rows: input must be [1,d]");
  Tensor out(b, a.cols());
  out.mat().noalias() = Eigen::VectorXd::Ones(b) * a.value().mat();
  return make_node("bcast_rows", std::move(out), {a.node()}, [](Node& self) {
    self.inputs[0]->flow.mat() += self.flow.mat().colwise().sum();
  });
}

Value concat_cols(const Value& a, const Value& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("concat_cols: row counts disagree, " + a.value().shape_str() +
                                " vs " + b.value().shape_str());
  Tensor out(a.rows(), a.cols() + b.cols());
  out.mat().leftCols(a.cols()) = a.value().mat();
  out.mat().rightCols(b.cols()) = b.value().mat();
  return make_node("concat", std::move(out), {a.node(), b.node()}, [](Node& self) {
    const Index ca = self.inputs[0]->value.cols();
    const Index cb = self.inputs[1]->value.cols();
    self.inputs[0]->flow.mat() += self.flow.mat().leftCols(ca);
    self.inputs[1]->flow.mat() += self.flow.mat().rightCols(cb);
  });
}

void backward(const Value& loss) {
  if (!loss || loss.value().size() != 1)
    throw std::logic_error("backward: loss must be a scalar, got " +
                           (loss ? loss.value().shape_str() : std::string("<null>")));

  // Iterative post-order DFS; `order` ends up topologically sorted.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* n;
    std::size_t next;
  };
  std::vector<Frame> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->inputs.size()) {
      Node* child = f.n->inputs[f.next++].get();
      if (seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->flow = Tensor::zeros(n->value.rows(), n->value.cols());
  loss.node()->flow.array()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
  // Fold the traversal's flow into the persistent accumulators and release it.
  for (Node* n : order) {
    n->grad.array() += n->flow.array();
    n->flow = Tensor();
  }
}

}  // namespace midl
