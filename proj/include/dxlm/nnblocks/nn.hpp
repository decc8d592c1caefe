#pragma once

#include <string>
#include <vector>

#include "dxlm/numcore/ops.hpp"
#include "dxlm/numcore/rng.hpp"
#include "dxlm/numcore/tensor.hpp"

// Building blocks shared by the TransformerX block, the dense stack and the
// multi-token heads. Linear maps use the row-vector convention y = x W and
// carry no bias.
namespace dxlm::nn {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

// Epsilon inside the RMSNorm square root.
inline constexpr double kRmsEps = 1e-6;

// Additive pre-softmax mask value for excluded keys.
template <typename T>
constexpr T mask_value() {
  return sizeof(T) == sizeof(float) ? T(-1e9) : T(-1e18);
}

enum class Mask { Causal, None };

// Learnable scalar slope of eSwish; starts at exactly 1 so the activation
// begins as plain Swish. A frozen parameter stays at 1 (Swish ablation).
template <typename T>
struct ESwishParam {
  Tensor<T> beta;

  static ESwishParam make(bool learnable = true) {
    return {Tensor<T>::scalar(T(1), learnable)};
  }
  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + "beta", beta});
  }
};

template <typename T>
struct AttentionParams {
  Tensor<T> w_q, w_k, w_v, w_o;  // each [d_model, d_model]
  std::size_t n_heads = 1;

  std::size_t d_model() const { return w_q.shape()[0]; }
  std::size_t head_dim() const { return d_model() / n_heads; }

  static AttentionParams make(std::size_t d_model, std::size_t n_heads, Rng& rng, double init_std);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct FfnParams {
  Tensor<T> w_in;   // [d_model, mult * d_model]
  Tensor<T> w_out;  // [mult * d_model, d_model]
  ESwishParam<T> eswish;
  std::size_t mult = 4;

  static FfnParams make(std::size_t d_model, std::size_t mult, Rng& rng, double init_std,
                        bool learnable_beta = true);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

// Normal(0, init_std) matrix marked as a learnable parameter.
template <typename T>
Tensor<T> init_normal(const Shape& shape, Rng& rng, double init_std);

template <typename T>
Tensor<T> ones_gain(std::size_t d);

template <typename T> Tensor<T> swish(const Tensor<T>& x);
template <typename T> Tensor<T> eswish(const Tensor<T>& x, const ESwishParam<T>& p);

// x / sqrt(mean(x^2) + 1e-6) * gain over the last axis.
template <typename T> Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain);

// Multi-head scaled dot-product attention. Queries come from q_in, keys and
// values from kv_in; self-attention passes the same tensor twice. With
// Mask::Causal query p sees keys 0..p and Lq must equal Lk. When `weights` is
// non-null it receives the [B, heads, Lq, Lk] attention probabilities.
template <typename T>
Tensor<T> attention(const Tensor<T>& q_in, const Tensor<T>& kv_in, const AttentionParams<T>& p,
                    Mask mask, Tensor<T>* weights = nullptr);

// w_out * eswish(w_in * x)
template <typename T> Tensor<T> ffn(const Tensor<T>& x, const FfnParams<T>& p);

template <typename T> Tensor<T> embed(const TokenIds& tokens, const Tensor<T>& table);

// Mean over all positions of -log softmax(logits)[target], via log-sum-exp.
template <typename T> Tensor<T> cross_entropy(const Tensor<T>& logits, const TokenIds& targets);

}  // namespace dxlm::nn
