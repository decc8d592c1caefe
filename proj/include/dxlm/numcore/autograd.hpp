#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "dxlm/numcore/tensor.hpp"

// Building blocks for defining differentiable operations outside numcore.
namespace dxlm::autograd {

template <typename T>
using BackwardFn = std::function<void(detail::Node<T>& self)>;

template <typename T>
void require_finite(const char* op, std::span<const T> values) {
  // Branch-free exponent test first; it vectorizes, the indexed scan below does not.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits exp_mask = sizeof(T) == 4 ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
  Bits bad = 0;
  for (const T v : values) bad |= Bits((std::bit_cast<Bits>(v) & exp_mask) == exp_mask);
  if (!bad) return;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(op) + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

// Wraps freshly computed values into a graph node. The backward closure is
// recorded only when grad mode is on and some parent requires a gradient;
// it reads self.grad and accumulates into self.parents[i]->grad_buffer().
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      const std::vector<Tensor<T>>& parents, BackwardFn<T> backward) {
  require_finite<T>(op, data);
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (shape_numel(node->shape) != node->data.size()) {
    throw ShapeError(std::string(op) + ": internal shape/data mismatch");
  }
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

// Grad buffer of parent i if it takes part in differentiation, else null.
template <typename T>
std::vector<T>* parent_grad(detail::Node<T>& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

}  // namespace dxlm::autograd
