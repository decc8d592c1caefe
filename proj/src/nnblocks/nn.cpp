#include "dxlm/nnblocks/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dxlm/numcore/autograd.hpp"
#include "dxlm/numcore/gemm.hpp"

namespace dxlm::nn {

using autograd::make_result;
using autograd::parent_grad;

template <typename T>
Tensor<T> init_normal(const Shape& shape, Rng& rng, double init_std) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, init_std));
  return Tensor<T>::from_data(shape, std::move(v), true);
}

template <typename T>
Tensor<T> ones_gain(std::size_t d) {
  return Tensor<T>::full({d}, T(1), true);
}

template <typename T>
AttentionParams<T> AttentionParams<T>::make(std::size_t d_model, std::size_t n_heads, Rng& rng,
                                            double init_std) {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ContractError("attention: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
  }
  AttentionParams p;
  p.n_heads = n_heads;
  p.w_q = init_normal<T>({d_model, d_model}, rng, init_std);
  p.w_k = init_normal<T>({d_model, d_model}, rng, init_std);
  p.w_v = init_normal<T>({d_model, d_model}, rng, init_std);
  p.w_o = init_normal<T>({d_model, d_model}, rng, init_std);
  return p;
}

template <typename T>
void AttentionParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + "w_q", w_q});
  out.push_back({prefix + "w_k", w_k});
  out.push_back({prefix + "w_v", w_v});
  out.push_back({prefix + "w_o", w_o});
}

template <typename T>
FfnParams<T> FfnParams<T>::make(std::size_t d_model, std::size_t mult, Rng& rng,
                                double init_std, bool learnable_beta) {
  if (mult == 0) throw ContractError("ffn: mult must be positive");
  FfnParams p;
  p.mult = mult;
  p.w_in = init_normal<T>({d_model, mult * d_model}, rng, init_std);
  p.w_out = init_normal<T>({mult * d_model, d_model}, rng, init_std);
  p.eswish = ESwishParam<T>::make(learnable_beta);
  return p;
}

template <typename T>
void FfnParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + "w_in", w_in});
  out.push_back({prefix + "w_out", w_out});
  eswish.collect(out, prefix + "eswish.");
}

template <typename T>
Tensor<T> swish(const Tensor<T>& x) {
  return mul(x, sigmoid(x));
}

namespace {

template <typename T>
T stable_sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace

// y = x * s with s = sigmoid(beta x); dy/dx = s + beta x s (1 - s), dy/dbeta = x^2 s (1 - s).
template <typename T>
Tensor<T> eswish(const Tensor<T>& x, const ESwishParam<T>& p) {
  if (p.beta.rank() != 0) {
    throw ShapeError("eswish: beta must be a scalar, got " + shape_str(p.beta.shape()));
  }
  const T beta = p.beta.item();
  const T* xv = x.data().data();
  auto sig = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> out(x.numel());
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T s = stable_sigmoid(beta * xv[i]);
    (*sig)[i] = s;
    out[i] = xv[i] * s;
  }
  return make_result<T>("eswish", x.shape(), std::move(out), {x, p.beta},
                        [sig, beta](detail::Node<T>& self) {
    const T* g = self.grad.data();
    const T* xv = self.parents[0]->data.data();
    const std::size_t n = self.grad.size();
    if (auto* gx = parent_grad(self, 0)) {
      T* dst = gx->data();
#pragma omp parallel for schedule(static)
      for (std::size_t i = 0; i < n; ++i) {
        const T s = (*sig)[i];
        dst[i] += g[i] * (s + beta * xv[i] * s * (T(1) - s));
      }
    }
    if (auto* gb = parent_grad(self, 1)) {
      T acc = T(0);
      for (std::size_t i = 0; i < n; ++i) {
        const T s = (*sig)[i];
        acc += g[i] * xv[i] * xv[i] * s * (T(1) - s);
      }
      (*gb)[0] += acc;
    }
  });
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain) {
  if (x.rank() == 0 || gain.rank() != 1 || gain.shape()[0] != x.shape().back()) {
    throw ShapeError("rms_norm: gain " + shape_str(gain.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  const std::size_t d = gain.shape()[0];
  const std::size_t rows = x.numel() / d;
  const T* xv = x.data().data();
  const T* gv = gain.data().data();
  auto inv_rms = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * d;
    T ss = T(0);
    for (std::size_t j = 0; j < d; ++j) ss += xr[j] * xr[j];
    const T inv = T(1) / std::sqrt(ss / static_cast<T>(d) + static_cast<T>(kRmsEps));
    (*inv_rms)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xr[j] * inv * gv[j];
  }
  return make_result<T>("rms_norm", x.shape(), std::move(out), {x, gain},
                        [d, rows, inv_rms](detail::Node<T>& self) {
    const T* g = self.grad.data();
    const T* xv = self.parents[0]->data.data();
    const T* gv = self.parents[1]->data.data();
    auto* gx = parent_grad(self, 0);
    auto* gg = parent_grad(self, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      const T inv = (*inv_rms)[r];
      const T* xr = xv + r * d;
      const T* gr = g + r * d;
      if (gx) {
        // d/dx of x_j * inv: inv * g_j * gain_j - inv^3 / d * x_j * sum_i(g_i gain_i x_i)
        T dot = T(0);
        for (std::size_t j = 0; j < d; ++j) dot += gr[j] * gv[j] * xr[j];
        const T c = inv * inv * inv * dot / static_cast<T>(d);
        T* dst = gx->data() + r * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += inv * gr[j] * gv[j] - c * xr[j];
      }
      if (gg) {
        for (std::size_t j = 0; j < d; ++j) (*gg)[j] += gr[j] * xr[j] * inv;
      }
    }
  });
}

namespace {

// Multi-head scaled dot-product attention on already projected inputs
// q [B, Lq, d], k and v [B, Lk, d]. Heads are strided column blocks, so no
// head split or merge copies are made. Probabilities are kept for backward.
template <typename T>
Tensor<T> attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         std::size_t heads, bool causal, Tensor<T>* weights) {
  const std::size_t batch = q.shape()[0], lq = q.shape()[1], lk = k.shape()[1];
  const std::size_t d = q.shape()[2], hd = d / heads;
  const T scale_by = T(1) / std::sqrt(static_cast<T>(hd));
  auto probs = std::make_shared<std::vector<T>>(batch * heads * lq * lk);
  std::vector<T> out(batch * lq * d);
  const T* qv = q.data().data();
  const T* kv = k.data().data();
  const T* vv = v.data().data();
#pragma omp parallel for schedule(static)
  for (std::size_t bh = 0; bh < batch * heads; ++bh) {
    const std::size_t b = bh / heads, h = bh % heads;
    T* pr = probs->data() + bh * lq * lk;
    const std::size_t qo = b * lq * d + h * hd, ko = b * lk * d + h * hd;
    blas::gemm<T>(false, true, lq, lk, hd, scale_by, qv + qo, d, kv + ko, d, T(0), pr, lk);
    for (std::size_t i = 0; i < lq; ++i) {
      T* row = pr + i * lk;
      // Masked keys get the additive mask value; exp underflows them to 0.
      if (causal) {
        for (std::size_t j = i + 1; j < lk; ++j) row[j] += mask_value<T>();
      }
      const T mx = *std::max_element(row, row + lk);
      T z = T(0);
      for (std::size_t j = 0; j < lk; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      const T inv = T(1) / z;
      for (std::size_t j = 0; j < lk; ++j) row[j] *= inv;
    }
    blas::gemm<T>(false, false, lq, hd, lk, T(1), pr, lk, vv + ko, d, T(0),
                  out.data() + qo, d);
  }
  if (weights) *weights = Tensor<T>::from_data({batch, heads, lq, lk}, *probs);
  return make_result<T>("attention", q.shape(), std::move(out), {q, k, v},
                        [probs, batch, heads, lq, lk, d, hd, scale_by](detail::Node<T>& self) {
    const T* g = self.grad.data();
    const T* qv = self.parents[0]->data.data();
    const T* kv = self.parents[1]->data.data();
    const T* vv = self.parents[2]->data.data();
    auto* gq = parent_grad(self, 0);
    auto* gk = parent_grad(self, 1);
    auto* gv = parent_grad(self, 2);
    // Each (batch, head) pair writes a disjoint block of every gradient.
#pragma omp parallel for schedule(static)
    for (std::size_t bh = 0; bh < batch * heads; ++bh) {
      const std::size_t b = bh / heads, h = bh % heads;
      const T* pr = probs->data() + bh * lq * lk;
      const std::size_t qo = b * lq * d + h * hd, ko = b * lk * d + h * hd;
      if (gv) {
        blas::gemm<T>(true, false, lk, hd, lq, T(1), pr, lk, g + qo, d, T(1), gv->data() + ko, d);
      }
      if (!gq && !gk) continue;
      std::vector<T> ds(lq * lk);
      // dP = dO V^T, then dS = P * (dP - rowsum(dP * P)) * scale
      blas::gemm<T>(false, true, lq, lk, hd, T(1), g + qo, d, vv + ko, d, T(0), ds.data(), lk);
      for (std::size_t i = 0; i < lq; ++i) {
        T* row = ds.data() + i * lk;
        const T* prow = pr + i * lk;
        T dot = T(0);
        for (std::size_t j = 0; j < lk; ++j) dot += row[j] * prow[j];
        for (std::size_t j = 0; j < lk; ++j) row[j] = prow[j] * (row[j] - dot) * scale_by;
      }
      if (gq) {
        blas::gemm<T>(false, false, lq, hd, lk, T(1), ds.data(), lk, kv + ko, d, T(1),
                      gq->data() + qo, d);
      }
      if (gk) {
        blas::gemm<T>(true, false, lk, hd, lq, T(1), ds.data(), lk, qv + qo, d, T(1),
                      gk->data() + ko, d);
      }
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> attention(const Tensor<T>& q_in, const Tensor<T>& kv_in, const AttentionParams<T>& p,
                    Mask mask, Tensor<T>* weights) {
  const std::size_t d = p.d_model();
  if (q_in.rank() != 3 || kv_in.rank() != 3 || q_in.shape()[2] != d || kv_in.shape()[2] != d ||
      q_in.shape()[0] != kv_in.shape()[0]) {
    throw ShapeError("attention: expected [B,L,d] inputs with d=" + std::to_string(d) + ", got " +
                     shape_str(q_in.shape()) + " and " + shape_str(kv_in.shape()));
  }
  const std::size_t lq = q_in.shape()[1];
  const std::size_t lk = kv_in.shape()[1];
  if (mask == Mask::Causal && lq != lk) {
    throw ContractError("attention: causal mask needs Lq == Lk, got " + std::to_string(lq) +
                        " and " + std::to_string(lk));
  }
  auto mixed = attention_core(matmul(q_in, p.w_q), matmul(kv_in, p.w_k), matmul(kv_in, p.w_v),
                              p.n_heads, mask == Mask::Causal, weights);
  return matmul(mixed, p.w_o);
}

template <typename T>
Tensor<T> ffn(const Tensor<T>& x, const FfnParams<T>& p) {
  return matmul(eswish(matmul(x, p.w_in), p.eswish), p.w_out);
}

template <typename T>
Tensor<T> embed(const TokenIds& tokens, const Tensor<T>& table) {
  return embedding_gather(table, tokens);
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const TokenIds& targets) {
  if (logits.rank() < 2) {
    throw ShapeError("cross_entropy: logits need rank >= 2, got " + shape_str(logits.shape()));
  }
  const std::size_t vocab = logits.shape().back();
  const std::size_t rows = logits.numel() / vocab;
  if (targets.ids.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.ids.size()) + " targets for " +
                     std::to_string(rows) + " logit rows " + shape_str(logits.shape()));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const auto t = targets.ids[r];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw VocabularyError("cross_entropy: target " + std::to_string(t) + " at row " +
                            std::to_string(r) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
  autograd::require_finite<T>("cross_entropy", logits.data());
  const T* lv = logits.data().data();
  // Per-row softmax kept for the backward pass.
  auto probs = std::make_shared<std::vector<T>>(logits.numel());
  T total = T(0);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* lr = lv + r * vocab;
    T* pr = probs->data() + r * vocab;
    const T mx = *std::max_element(lr, lr + vocab);
    T z = T(0);
    for (std::size_t j = 0; j < vocab; ++j) {
      pr[j] = std::exp(lr[j] - mx);
      z += pr[j];
    }
    const T lse = mx + std::log(z);
    total += lse - lr[targets.ids[r]];
    for (std::size_t j = 0; j < vocab; ++j) pr[j] /= z;
  }
  auto tgt = std::make_shared<std::vector<std::int32_t>>(targets.ids);
  return make_result<T>("cross_entropy", Shape{}, {total / static_cast<T>(rows)}, {logits},
                        [probs, tgt, rows, vocab](detail::Node<T>& self) {
    auto* gl = parent_grad(self, 0);
    if (!gl) return;
    const T scale_by = self.grad[0] / static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* pr = probs->data() + r * vocab;
      T* dst = gl->data() + r * vocab;
      for (std::size_t j = 0; j < vocab; ++j) dst[j] += scale_by * pr[j];
      dst[(*tgt)[r]] -= scale_by;
    }
  });
}

#define DXLM_INSTANTIATE_NN(T)                                                                  \
  template struct AttentionParams<T>;                                                           \
  template struct FfnParams<T>;                                                                 \
  template Tensor<T> init_normal<T>(const Shape&, Rng&, double);                                \
  template Tensor<T> ones_gain<T>(std::size_t);                                                 \
  template Tensor<T> swish(const Tensor<T>&);                                                   \
  template Tensor<T> eswish(const Tensor<T>&, const ESwishParam<T>&);                           \
  template Tensor<T> rms_norm(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const AttentionParams<T>&,   \
                               Mask, Tensor<T>*);                                               \
  template Tensor<T> ffn(const Tensor<T>&, const FfnParams<T>&);                                \
  template Tensor<T> embed(const TokenIds&, const Tensor<T>&);                                  \
  template Tensor<T> cross_entropy(const Tensor<T>&, const TokenIds&);

DXLM_INSTANTIATE_NN(float)
DXLM_INSTANTIATE_NN(double)

}  // namespace dxlm::nn
