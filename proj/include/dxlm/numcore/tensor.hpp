#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dxlm/numcore/errors.hpp"

namespace dxlm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

enum class Precision { Single, Double };

struct GraphConfig {
  Precision precision = Precision::Single;
  std::uint64_t seed = 0;
};

// Graph recording is on by default; NoGradGuard disables it for the current
// thread (evaluation, finite differences, decoding).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Handle to a node of the define-by-run graph. Copies share the node.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " elements, got " +
                       std::to_string(data.size()));
    }
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
    }
    auto node = std::make_shared<NodeType>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  // Rank-0 tensor holding one value.
  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::size_t size(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
      throw IndexError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                       shape_str(shape()));
    }
    return node_->shape[static_cast<std::size_t>(a)];
  }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }

  T item() const {
    if (numel() != 1) throw ContractError("tensor: item() on " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  const char* op() const { return node_->op; }

  // New leaf holding a copy of the values; no graph history.
  Tensor detach() const { return from_data(shape(), node_->data, false); }

  // Reverse-mode sweep from a scalar. Gradients accumulate into every
  // requires_grad tensor reachable from this one.
  void backward() const;

  NodeType* node() const { return node_.get(); }
  const std::shared_ptr<NodeType>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<NodeType> node_;
};

template <typename T>
void Tensor<T>::backward() const {
  if (!defined() || numel() != 1 || rank() != 0) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (defined() ? shape_str(shape()) : std::string("<undefined>")));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<NodeType*> order;
  std::unordered_set<NodeType*> visited;
  std::vector<std::pair<NodeType*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodeType* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeType* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dxlm
