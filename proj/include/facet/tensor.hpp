#pragma once

// Reverse-mode differentiable n-dimensional array.
//
// A Tensor is a cheap handle onto a shared graph node. Operations that see at
// least one input with requires_grad record a backward closure on the result;
// backward() walks the recorded graph in reverse topological order and then
// releases it, so a graph can only be differentiated once.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace facet {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor shape " + to_string(shape) + " has a zero-length axis");
    }
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor shape " + to_string(shape) + " needs " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  // Builds the result of a recorded operation. The closure receives the result
  // node and must accumulate its grad into the parents that require grad.
  static Tensor from_op(Shape shape, std::vector<T> values,
                        std::vector<Tensor> inputs,
                        std::function<void(Node<T>&)> backward_fn) {
    Tensor out(std::move(shape), std::move(values));
    bool needs = false;
    if (grad_enabled()) {
      for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
      auto& n = *out.node_;
      n.requires_grad = true;
      n.leaf = false;
      n.parents.reserve(inputs.size());
      for (auto& in : inputs) n.parents.push_back(in.node_);
      n.backward = std::move(backward_fn);
    }
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> data() { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad() { return node_->grad; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  void set_requires_grad(bool flag) {
    if (!node_->leaf) throw std::logic_error("requires_grad can only be changed on leaf tensors");
    node_->requires_grad = flag;
    if (flag) {
      node_->ensure_grad();
    } else {
      node_->grad.clear();
    }
  }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->data.size(), T(0));
  }

  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }

  T at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw ShapeError("index rank does not match tensor rank");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= node_->shape[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
      flat = flat * node_->shape[axis] + i;
      ++axis;
    }
    return node_->data[flat];
  }

  // Copy of the values with no graph history.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  // Same values converted to another scalar type, no graph history.
  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return Tensor<U>(shape(), std::move(out));
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Populates d(loss)/d(leaf) on every reachable leaf with requires_grad and then
// releases the recorded graph.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward on an undefined tensor");
  if (loss.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  auto root = loss.node();
  if (root->released) {
    throw std::logic_error("backward called twice on the same graph; rebuild the forward pass first");
  }
  if (!root->requires_grad) {
    throw std::logic_error("backward on a tensor detached from any parameter (requires_grad is false)");
  }

  // Owning pointers: releasing a node's parent links must not free nodes that
  // are still waiting to be visited.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{root, 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (parent->requires_grad && seen.insert(parent.get()).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (root->leaf) {
    root->ensure_grad();
    root->grad[0] += T(1);
    return;
  }
  root->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->get();
    if (node->leaf) continue;
    if (node->backward && node->grad.size() == node->data.size()) {
      for (auto& p : node->parents) {
        if (p->requires_grad) p->ensure_grad();
      }
      node->backward(*node);
    }
    node->backward = nullptr;
    node->parents.clear();
    node->released = true;
    if (node != root.get()) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

}  // namespace facet
