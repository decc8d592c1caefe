#include "dxlm/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "dxlm/numcore/autograd.hpp"
#include "dxlm/numcore/gemm.hpp"

namespace dxlm {

using autograd::make_result;
using autograd::parent_grad;

namespace {

thread_local bool g_grad_enabled = true;

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

std::string two_shapes(const Shape& a, const Shape& b) {
  return shape_str(a) + " vs " + shape_str(b);
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

enum class Binary { Add, Sub, Mul };

// Visits (out, a, b) flat indices for suffix broadcasting; the larger operand
// is walked contiguously and the smaller one repeats with its own period.
template <typename F>
void for_each_pair(std::size_t na, std::size_t nb, F&& f) {
  if (na == nb) {
    for (std::size_t i = 0; i < na; ++i) f(i, i, i);
  } else if (na > nb) {
    for (std::size_t r = 0; r < na; r += nb)
      for (std::size_t j = 0; j < nb; ++j) f(r + j, r + j, j);
  } else {
    for (std::size_t r = 0; r < nb; r += na)
      for (std::size_t j = 0; j < na; ++j) f(r + j, j, r + j);
  }
}

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Binary kind, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool a_big = is_suffix(sb, sa);
  if (!a_big && !is_suffix(sa, sb)) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + two_shapes(sa, sb));
  }
  const Shape out_shape = a_big ? sa : sb;
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  const T* da = a.data().data();
  const T* db = b.data().data();
  std::vector<T> out(shape_numel(out_shape));
  T* o = out.data();
  switch (kind) {
    case Binary::Add:
      for_each_pair(na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = da[ia] + db[ib]; });
      break;
    case Binary::Sub:
      for_each_pair(na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = da[ia] - db[ib]; });
      break;
    case Binary::Mul:
      for_each_pair(na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = da[ia] * db[ib]; });
      break;
  }
  return make_result<T>(op, out_shape, std::move(out), {a, b}, [kind, na, nb](detail::Node<T>& self) {
    const T* g = self.grad.data();
    const T* va = self.parents[0]->data.data();
    const T* vb = self.parents[1]->data.data();
    if (auto* pa = parent_grad(self, 0)) {
      T* ga = pa->data();
      if (kind == Binary::Mul) {
        for_each_pair(na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * vb[ib]; });
      } else {
        for_each_pair(na, nb, [&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += g[i]; });
      }
    }
    if (auto* pb = parent_grad(self, 1)) {
      T* gb = pb->data();
      if (kind == Binary::Mul) {
        for_each_pair(na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * va[ia]; });
      } else if (kind == Binary::Sub) {
        for_each_pair(na, nb, [&](std::size_t i, std::size_t, std::size_t ib) { gb[ib] -= g[i]; });
      } else {
        for_each_pair(na, nb, [&](std::size_t i, std::size_t, std::size_t ib) { gb[ib] += g[i]; });
      }
    }
  });
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary(const Tensor<T>& a, const char* op, Fwd fwd, Bwd dydx) {
  const auto da = a.data();
  std::vector<T> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = fwd(da[i]);
  return make_result<T>(op, a.shape(), std::move(out), {a}, [dydx](detail::Node<T>& self) {
    auto* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& x = self.parents[0]->data;
    const auto& y = self.data;
    for (std::size_t i = 0; i < y.size(); ++i) (*ga)[i] += self.grad[i] * dydx(x[i], y[i]);
  });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw IndexError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, Binary::Add, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, Binary::Sub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, Binary::Mul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>(
      a, "scale", [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + two_shapes(sa, sb));
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t n = sb.back();
  if (sb[sb.size() - 2] != k) {
    throw ShapeError("matmul: inner dimensions differ, " + two_shapes(sa, sb));
  }
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  const bool a_big = is_suffix(batch_b, batch_a);
  if (!a_big && !is_suffix(batch_a, batch_b)) {
    throw ShapeError("matmul: batch dimensions not broadcastable, " + two_shapes(sa, sb));
  }
  Shape out_shape = a_big ? batch_a : batch_b;
  const std::size_t nbatch = shape_numel(out_shape);
  const std::size_t na = shape_numel(batch_a);
  const std::size_t nb = shape_numel(batch_b);
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<T> out(nbatch * m * n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  if (nb == 1) {
    // Shared right operand: fold the batch into the row dimension.
    blas::gemm<T>(false, false, na * m, n, k, T(1), pa, k, pb, n, T(0), out.data(), n);
  } else {
    for (std::size_t i = 0; i < nbatch; ++i) {
      blas::gemm<T>(false, false, m, n, k, T(1), pa + (i % na) * m * k, k, pb + (i % nb) * k * n,
                    n, T(0), out.data() + i * m * n, n);
    }
  }

  return make_result<T>("matmul", std::move(out_shape), std::move(out), {a, b},
                        [m, n, k, na, nb, nbatch](detail::Node<T>& self) {
    const T* g = self.grad.data();
    const T* va = self.parents[0]->data.data();
    const T* vb = self.parents[1]->data.data();
    auto* ga = parent_grad(self, 0);
    auto* gb = parent_grad(self, 1);
    if (nb == 1) {
      if (ga) blas::gemm<T>(false, true, na * m, k, n, T(1), g, n, vb, n, T(1), ga->data(), k);
      if (gb) blas::gemm<T>(true, false, k, n, na * m, T(1), va, k, g, n, T(1), gb->data(), n);
      return;
    }
    for (std::size_t i = 0; i < nbatch; ++i) {
      const T* gi = g + i * m * n;
      if (ga) {
        blas::gemm<T>(false, true, m, k, n, T(1), gi, n, vb + (i % nb) * k * n, n, T(1),
                      ga->data() + (i % na) * m * k, k);
      }
      if (gb) {
        blas::gemm<T>(true, false, k, n, m, T(1), va + (i % na) * m * k, k, gi, n, T(1),
                      gb->data() + (i % nb) * k * n, n);
      }
    }
  });
}

template <typename T>
Tensor<T> swap_axes(const Tensor<T>& a, int axis0, int axis1) {
  const std::size_t r = a.rank();
  const std::size_t x = normalize_axis(axis0, r, "swap_axes");
  const std::size_t y = normalize_axis(axis1, r, "swap_axes");
  const Shape& in_shape = a.shape();
  Shape out_shape = in_shape;
  std::swap(out_shape[x], out_shape[y]);

  // For every output flat index, the matching input flat index.
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  std::vector<std::size_t> perm_strides = in_strides;
  std::swap(perm_strides[x], perm_strides[y]);

  const std::size_t n = a.numel();
  auto index = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*index)[i] = src;
    for (std::size_t d = r; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        src += perm_strides[d];
        break;
      }
      src -= perm_strides[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  const auto da = a.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = da[(*index)[i]];
  return make_result<T>("swap_axes", std::move(out_shape), std::move(out), {a},
                        [index](detail::Node<T>& self) {
    auto* ga = parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[(*index)[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() < 2) throw ShapeError("transpose: rank < 2 shape " + shape_str(a.shape()));
  return swap_axes(a, -2, -1);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + two_shapes(a.shape(), shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {a},
                        [](detail::Node<T>& self) {
    auto* ga = parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, a.rank(), "slice");
  const AxisSplit s = split_at(a.shape(), ax);
  if (length == 0 || start + length > s.extent) {
    throw IndexError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + length) + ") outside extent " +
                     std::to_string(s.extent));
  }
  Shape out_shape = a.shape();
  out_shape[ax] = length;
  const auto da = a.data();
  std::vector<T> out;
  out.reserve(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const auto first = da.begin() + static_cast<std::ptrdiff_t>((o * s.extent + start) * s.inner);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(length * s.inner));
  }
  return make_result<T>("slice", std::move(out_shape), std::move(out), {a},
                        [s, start, length](detail::Node<T>& self) {
    auto* ga = parent_grad(self, 0);
    if (!ga) return;
    const std::size_t block = length * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      T* dst = ga->data() + (o * s.extent + start) * s.inner;
      const T* src = self.grad.data() + o * block;
      for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const std::size_t ax = normalize_axis(axis, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  const Shape off_axis = out_shape;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out_shape.size()) {
      throw ShapeError("concat: rank mismatch " + two_shapes(parts[0].shape(), probe));
    }
    extents.push_back(probe[ax]);
    probe[ax] = 0;
    if (probe != off_axis) {
      throw ShapeError("concat: shapes differ off-axis " + two_shapes(parts[0].shape(), p.shape()));
    }
    out_shape[ax] += extents.back();
  }
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<T> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto dp = parts[pi].data();
    const std::size_t block = extents[pi] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(dp.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.begin() + static_cast<std::ptrdiff_t>((o * s.extent + offset) * s.inner));
    }
    offset += extents[pi];
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), parts,
                        [s, extents](detail::Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < extents.size(); ++pi) {
      const std::size_t block = extents[pi] * s.inner;
      if (auto* gp = parent_grad(self, pi)) {
        for (std::size_t o = 0; o < s.outer; ++o) {
          const T* src = self.grad.data() + (o * s.extent + offset) * s.inner;
          T* dst = gp->data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      offset += extents[pi];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  const auto da = a.data();
  T total = std::accumulate(da.begin(), da.end(), T(0));
  return make_result<T>("sum", Shape{}, {total}, {a}, [](detail::Node<T>& self) {
    auto* ga = parent_grad(self, 0);
    if (!ga) return;
    for (auto& v : *ga) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, int axis) {
  const std::size_t ax = normalize_axis(axis, a.rank(), "sum");
  const AxisSplit s = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  const auto da = a.data();
  std::vector<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += da[(o * s.extent + e) * s.inner + i];
  return make_result<T>("sum_axis", std::move(out_shape), std::move(out), {a},
                        [s](detail::Node<T>& self) {
    auto* ga = parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < s.extent; ++e)
        for (std::size_t i = 0; i < s.inner; ++i)
          (*ga)[(o * s.extent + e) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, int axis) {
  const std::size_t ax = normalize_axis(axis, a.rank(), "mean");
  return scale(sum(a, axis), T(1) / static_cast<T>(a.shape()[ax]));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary<T>(
      a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary<T>(
      a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary<T>(
      a, "sigmoid", [](T x) { return stable_sigmoid(x); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  const std::size_t ax = normalize_axis(axis, a.rank(), "softmax");
  autograd::require_finite<T>("softmax", a.data());
  const AxisSplit s = split_at(a.shape(), ax);
  const auto da = a.data();
  std::vector<T> out(da.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, da[base + e * s.inner]);
      T z = T(0);
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T v = std::exp(da[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
    }
  }
  return make_result<T>("softmax", a.shape(), std::move(out), {a}, [s](detail::Node<T>& self) {
    auto* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        T dot = T(0);
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t j = base + e * s.inner;
          dot += g[j] * y[j];
        }
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t j = base + e * s.inner;
          (*ga)[j] += y[j] * (g[j] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> embedding_gather(const Tensor<T>& table, const TokenIds& ids) {
  if (table.rank() != 2) {
    throw ShapeError("embedding_gather: table must be [V, d], got " + shape_str(table.shape()));
  }
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  for (std::size_t b = 0; b < ids.batch; ++b) {
    for (std::size_t i = 0; i < ids.length; ++i) {
      const auto id = ids.at(b, i);
      if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
        throw VocabularyError("embedding_gather: id " + std::to_string(id) + " at position (" +
                              std::to_string(b) + "," + std::to_string(i) +
                              ") outside vocabulary of " + std::to_string(vocab));
      }
    }
  }
  const auto dt = table.data();
  std::vector<T> out(ids.ids.size() * d);
  for (std::size_t r = 0; r < ids.ids.size(); ++r) {
    std::copy_n(dt.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids.ids[r]) * d),
                d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  auto rows = std::make_shared<std::vector<std::int32_t>>(ids.ids);
  return make_result<T>("embedding_gather", Shape{ids.batch, ids.length, d}, std::move(out),
                        {table}, [rows, d](detail::Node<T>& self) {
    auto* gt = parent_grad(self, 0);
    if (!gt) return;
    for (std::size_t r = 0; r < rows->size(); ++r) {
      T* dst = gt->data() + static_cast<std::size_t>((*rows)[r]) * d;
      const T* src = self.grad.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template class Tensor<float>;
template class Tensor<double>;

#define DXLM_INSTANTIATE_OPS(T)                                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> transpose(const Tensor<T>&);                                      \
  template Tensor<T> swap_axes(const Tensor<T>&, int, int);                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                 \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);           \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                       \
  template Tensor<T> sum(const Tensor<T>&);                                            \
  template Tensor<T> sum(const Tensor<T>&, int);                                       \
  template Tensor<T> mean(const Tensor<T>&);                                           \
  template Tensor<T> mean(const Tensor<T>&, int);                                      \
  template Tensor<T> exp(const Tensor<T>&);                                            \
  template Tensor<T> log(const Tensor<T>&);                                            \
  template Tensor<T> sigmoid(const Tensor<T>&);                                        \
  template Tensor<T> softmax(const Tensor<T>&, int);                                   \
  template Tensor<T> embedding_gather(const Tensor<T>&, const TokenIds&);

DXLM_INSTANTIATE_OPS(float)
DXLM_INSTANTIATE_OPS(double)

}  // namespace dxlm
