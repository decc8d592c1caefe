#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dxlm/numcore/ops.hpp"
#include "dxlm/numcore/rng.hpp"
#include "dxlm/numcore/tensor.hpp"

namespace dxlm::testing {

template <typename T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>::from_data(shape, std::move(v), requires_grad);
}

template <typename T>
Tensor<T> constant(const Shape& shape, std::vector<T> values) {
  return Tensor<T>::from_data(shape, std::move(values));
}

template <typename T>
T max_abs_diff(std::span<const T> a, std::span<const T> b) {
  T m = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Scalar probe loss sum(x * weights) with fixed random weights, so every
// output entry carries a distinct upstream gradient.
template <typename T>
Tensor<T> probe_loss(const Tensor<T>& x, const Tensor<T>& weights) {
  return sum(mul(x, weights));
}

inline TokenIds random_ids(std::size_t batch, std::size_t length, std::size_t vocab, Rng& rng) {
  std::vector<std::int32_t> ids(batch * length);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(vocab));
  return TokenIds(batch, length, std::move(ids));
}

}  // namespace dxlm::testing
