#pragma once

// Dense double tensors with an eagerly built reverse-mode graph.
// Each op records its parents and a backprop closure; the graph for one
// forward pass is discarded once the tensors holding it go out of scope.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "subfuse/errors.hpp"

namespace subfuse {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One node of the recorded graph. `backprop` reads this node's `grad` and
// accumulates into the grads of `parents`; it is empty for leaves.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(TensorNode&)> backprop;
  std::vector<double> grad;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Value-semantic handle to a graph node. Tensors are immutable after
// creation except for leaf values updated by the optimizer between steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(std::vector<double> v, Shape s) {
    return make(std::move(v), std::move(s), false);
  }

  static Tensor scalar(double v) { return constant({v}, Shape{}); }

  static Tensor zeros(Shape s) {
    std::vector<double> v(numel(s), 0.0);
    return make(std::move(v), std::move(s), false);
  }

  // A gradient-carrying leaf (model parameter or checked input).
  static Tensor param(std::vector<double> v, Shape s) {
    return make(std::move(v), std::move(s), true);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& values() const { return node_->value; }

  // In-place update of a leaf between steps. Rejected for op outputs: the
  // recorded graph would silently go stale.
  std::vector<double>& mutable_values() {
    if (!node_->parents.empty())
      throw contract_error("mutable_values: tensor is an op output, not a leaf");
    return node_->value;
  }

  double item() const {
    if (size() != 1) throw contract_error("item: tensor has " + std::to_string(size()) + " elements, expected 1");
    return node_->value[0];
  }

  const TensorNode* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

  static Tensor from_node(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  static Tensor make(std::vector<double> v, Shape s, bool req) {
    if (v.size() != numel(s))
      throw dim_error("tensor: data length " + std::to_string(v.size()) + " does not match shape " + shape_str(s));
    for (double x : v)
      if (!std::isfinite(x)) throw numeric_error("tensor: non-finite value in constructor");
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(s);
    n->value = std::move(v);
    n->requires_grad = req;
    return from_node(std::move(n));
  }

  NodePtr node_;
};

// Creates an op node. Finiteness of the output is enforced here, so any op
// entering an error state (NaN/Inf) throws instead of propagating garbage.
// When no parent requires a gradient the parents and the backprop rule are
// dropped and the result behaves as a constant.
inline Tensor make_op(const char* op_name, Shape shape, std::vector<double> value,
                      std::vector<Tensor> parents, std::function<void(TensorNode&)> backprop) {
  if (value.size() != numel(shape))
    throw dim_error(std::string(op_name) + ": output size mismatch");
  for (double x : value)
    if (!std::isfinite(x))
      throw numeric_error(std::string(op_name) + ": non-finite value produced");
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = false;
  for (const Tensor& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (Tensor& p : parents) n->parents.push_back(p.node_ptr());
    n->backprop = std::move(backprop);
  }
  return Tensor::from_node(std::move(n));
}

// Gradients produced by one backward pass, keyed by node identity.
// Tensors never visited (unreachable from the loss) read back as zeros.
class GradMap {
 public:
  bool visited(const Tensor& t) const { return grads_.count(t.node()) != 0; }

  const std::vector<double>* find(const Tensor& t) const {
    auto it = grads_.find(t.node());
    return it == grads_.end() ? nullptr : &it->second;
  }

  std::vector<double> grad_values(const Tensor& t) const {
    if (const auto* g = find(t)) return *g;
    return std::vector<double>(t.size(), 0.0);
  }

  Tensor grad(const Tensor& t) const { return Tensor::constant(grad_values(t), t.shape()); }

  void set(const TensorNode* n, std::vector<double> g) { grads_[n] = std::move(g); }

 private:
  std::unordered_map<const TensorNode*, std::vector<double>> grads_;
};

// The linearized graph below one scalar loss: nodes in topological order
// (parents before users). Each node is visited exactly once; gradient of a
// node is the sum over all of its uses.
class GradTape {
 public:
  static GradTape record(const Tensor& loss) {
    if (loss.size() != 1)
      throw contract_error("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    GradTape tape;
    if (!loss.requires_grad()) {
      tape.root_ = loss.node_ptr();
      return tape;
    }
    // Iterative post-order DFS over grad-requiring parents.
    std::unordered_set<const TensorNode*> seen;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(loss.node_ptr(), 0);
    seen.insert(loss.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        NodePtr p = node->parents[next++];
        if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
      } else {
        tape.order_.push_back(node);
        stack.pop_back();
      }
    }
    tape.root_ = loss.node_ptr();
    return tape;
  }

  // Runs the backward sweep and returns a copy of every visited gradient.
  GradMap run() {
    GradMap out;
    if (!root_->requires_grad) return out;
    for (auto& n : order_) {
      n->grad.assign(n->value.size(), 0.0);
    }
    root_->grad[0] = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      TensorNode& n = **it;
      if (n.backprop) n.backprop(n);
    }
    for (auto& n : order_) out.set(n.get(), std::move(n->grad));
    for (auto& n : order_) n->grad.clear();
    return out;
  }

  std::size_t node_count() const { return order_.size(); }

 private:
  std::vector<NodePtr> order_;
  NodePtr root_;
};

inline GradMap backward(const Tensor& loss) { return GradTape::record(loss).run(); }

}  // namespace subfuse
