#pragma once

#include <vector>

#include "dxlm/nnblocks/nn.hpp"

// Multi-scale convolution transformer block: causal self-attention, then
// depthwise-separable 1D convolution branches of several kernel lengths that
// are fused back into the stream one after another through cross-attention,
// then an eSwish feed-forward layer.
namespace dxlm::tx {

template <typename T>
struct DsConvParams {
  std::size_t kernel_len = 1;
  Tensor<T> depthwise;  // [k, C]
  Tensor<T> pointwise;  // [C, C]; the leading unit axis of a 1xCxN kernel is dropped

  static DsConvParams make(std::size_t kernel_len, std::size_t channels, Rng& rng,
                           double init_std);
  void collect(nn::ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct ScaleBranch {
  DsConvParams<T> conv;
  nn::ESwishParam<T> activation;  // applied to the pointwise output
  nn::AttentionParams<T> fusion_attn;
  nn::FfnParams<T> fusion_mlp;

  void collect(nn::ParamList<T>& out, const std::string& prefix) const;
};

struct BlockConfig {
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t fusion_mult = 4;
  std::vector<std::size_t> kernels = {3, 15};  // strictly increasing
  bool conv_enabled = true;   // false gives a plain attention + FFN layer
  bool learnable_beta = true;  // false freezes every eSwish slope at 1 (Swish)
  bool small_first = true;     // order in which branches enter the fusion chain
  double init_std = 0.006;
};

template <typename T>
struct TransformerXBlock {
  nn::AttentionParams<T> self_attn;
  std::vector<ScaleBranch<T>> branches;  // ordered small -> large kernel
  nn::FfnParams<T> ffn;
  Tensor<T> attn_norm, conv_norm, ffn_norm;
  bool small_first = true;

  static TransformerXBlock make(const BlockConfig& config, Rng& rng);
  void collect(nn::ParamList<T>& out, const std::string& prefix) const;
};

// Causal depthwise pass (k-1 zeros of left padding, so position l sees
// x[l-k+1 .. l]) followed by pointwise channel mixing. Length is preserved.
template <typename T>
Tensor<T> ds_conv_1d(const Tensor<T>& x, const DsConvParams<T>& p);

// h = eSwish(ds_conv_1d(x))
template <typename T>
Tensor<T> branch_features(const Tensor<T>& x, const DsConvParams<T>& p,
                          const nn::ESwishParam<T>& activation);

// x <- x + MLP(x + CrossAttention(x, h_i)) for each branch in turn.
template <typename T>
Tensor<T> fusion_chain(const Tensor<T>& x0, const std::vector<Tensor<T>>& hs,
                       const std::vector<ScaleBranch<T>>& branches, bool small_first = true);

// Pre-norm block. The result already includes the identity path, so a block
// whose matrices are all zero maps x to itself.
template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const TransformerXBlock<T>& block);

// Closed-form learnable parameter count of one block.
std::size_t block_param_count(const BlockConfig& config);

void validate(const BlockConfig& config);

}  // namespace dxlm::tx
