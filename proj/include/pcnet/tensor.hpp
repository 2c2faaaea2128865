#pragma once

// Dense tensors with a reverse-mode differentiation tape.
//
// A Tensor is a cheap handle onto a graph node. Nodes produced by an operation
// keep their inputs alive together with a backward rule; calling backward() on
// a scalar walks the recorded graph in reverse topological order and
// accumulates gradients into every leaf that requires them.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pcnet/error.hpp"

namespace pcnet {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::span<T> ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T{0});
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> data(numel(shape), T{0});
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    std::vector<T> data(numel(shape), v);
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{}, {v}, requires_grad); }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) : node_(std::make_shared<detail::Node<T>>()) {
    if (numel(shape) != data.size())
      throw ConfigError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                        to_string(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> data() const { return node_->value; }
  // Only leaves may be written in place (parameter updates, test fixtures).
  std::span<T> mutable_data() {
    if (!node_->inputs.empty()) throw UsageError("in-place write to a non-leaf tensor");
    return node_->value;
  }
  const std::vector<T>& values() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (size() != 1) throw UsageError("item() on a tensor with shape " + to_string(shape()));
    return node_->value[0];
  }

  T at(std::initializer_list<std::size_t> idx) const { return node_->value[offset(idx)]; }

  // Copy of the values with no history.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  const NodePtr& node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  // Builds an operation result. `backward` receives the result node whose
  // grad is populated and must accumulate into inputs that require grad.
  static Tensor from_op(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                        std::function<void(detail::Node<T>&)> backward) {
    Tensor out(std::move(shape), std::move(data), false);
    for (const auto& in : inputs)
      if (in.requires_grad()) out.node_->requires_grad = true;
    if (out.node_->requires_grad) {
      for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != rank()) throw UsageError("index rank mismatch for shape " + to_string(shape()));
    std::size_t off = 0;
    std::size_t i = 0;
    for (auto v : idx) off = off * node_->shape[i++] + v;
    return off;
  }

  NodePtr node_;
};

// Ordered list of recorded operations reachable from a root; inputs precede
// their consumers.
template <typename T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  static Tape record(const Tensor<T>& root) {
    Tape tape;
    std::unordered_set<const detail::Node<T>*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    if (root.requires_grad()) stack.emplace_back(root.node(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        const auto& child = node->inputs[next++];
        if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(child, 0);
      } else {
        tape.order_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  const std::vector<NodePtr>& order() const { return order_; }

  void run_backward() {
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      auto& node = **it;
      if (node.backward && !node.grad.empty()) node.backward(node);
    }
  }

 private:
  std::vector<NodePtr> order_;
};

// Seeds d(loss)/d(loss) = 1 and propagates. Gradients accumulate across calls
// until zero_grad() is invoked on the leaves.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.rank() != 0) throw UsageError("backward() requires a 0-dimensional loss, got " + to_string(loss.shape()));
  if (!loss.requires_grad()) return;
  auto tape = Tape<T>::record(loss);
  loss.node()->ensure_grad()[0] += T{1};
  tape.run_backward();
  // Intermediate grads are not needed once propagated.
  for (auto& node : tape.order())
    if (!node->inputs.empty()) node->grad.clear();
}

}  // namespace pcnet
