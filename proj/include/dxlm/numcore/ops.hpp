#pragma once

#include <cstdint>
#include <vector>

#include "dxlm/numcore/tensor.hpp"

namespace dxlm {

// Integer token ids laid out row-major as [batch, length].
struct TokenIds {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> ids;

  TokenIds() = default;
  TokenIds(std::size_t b, std::size_t l, std::vector<std::int32_t> v)
      : batch(b), length(l), ids(std::move(v)) {
    if (ids.size() != batch * length) {
      throw ShapeError("token ids: " + std::to_string(ids.size()) + " values for [" +
                       std::to_string(batch) + "," + std::to_string(length) + "]");
    }
  }

  std::int32_t at(std::size_t b, std::size_t i) const { return ids[b * length + i]; }

  // Columns [start, start + len) of every row.
  TokenIds window(std::size_t start, std::size_t len) const {
    if (start + len > length) {
      throw IndexError("token ids: window [" + std::to_string(start) + "," +
                       std::to_string(start + len) + ") exceeds length " +
                       std::to_string(length));
    }
    std::vector<std::int32_t> out;
    out.reserve(batch * len);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < len; ++i) out.push_back(at(b, start + i));
    }
    return TokenIds(batch, len, std::move(out));
  }
};

// Binary elementwise ops accept equal shapes, or one operand whose shape is a
// trailing suffix of the other's (broadcast over leading batch dimensions).
// A rank-0 scalar is the empty suffix and broadcasts everywhere.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);

// [.., m, k] x [.., k, n] -> [.., m, n]. Batch dimensions must match or one
// side's batch shape must be a suffix of the other's.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Swaps the last two axes.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> swap_axes(const Tensor<T>& a, int axis0, int axis1);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t start, std::size_t length);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);

// Full reductions return rank-0 tensors; axis reductions drop the axis.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a, int axis);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a, int axis);

template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);

// Max-subtracted softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& a, int axis);

// Row gather: table [V, d], ids [B, L] -> [B, L, d]. Gradients scatter-add.
template <typename T> Tensor<T> embedding_gather(const Tensor<T>& table, const TokenIds& ids);

// Resolves a possibly negative axis against a rank.
std::size_t normalize_axis(int axis, std::size_t rank, const char* op);

}  // namespace dxlm
