#include "dxlm/transformerx/transformerx.hpp"

#include "dxlm/numcore/autograd.hpp"

namespace dxlm::tx {

using autograd::make_result;
using autograd::parent_grad;

void validate(const BlockConfig& c) {
  if (c.d_model == 0 || c.n_heads == 0 || c.d_model % c.n_heads != 0) {
    throw ConfigError("block: d_model " + std::to_string(c.d_model) +
                      " must be a positive multiple of n_heads " + std::to_string(c.n_heads));
  }
  if (c.ffn_mult == 0 || c.fusion_mult == 0) throw ConfigError("block: mult must be positive");
  if (!c.conv_enabled) return;
  if (c.kernels.empty()) throw ConfigError("block: at least one convolution kernel is required");
  for (std::size_t i = 0; i < c.kernels.size(); ++i) {
    if (c.kernels[i] == 0) throw ConfigError("block: kernel lengths must be >= 1");
    if (i > 0 && c.kernels[i] <= c.kernels[i - 1]) {
      throw ConfigError("block: kernel lengths must be strictly increasing");
    }
  }
}

template <typename T>
DsConvParams<T> DsConvParams<T>::make(std::size_t kernel_len, std::size_t channels, Rng& rng,
                                      double init_std) {
  if (kernel_len == 0) throw ContractError("ds_conv: kernel length must be >= 1");
  DsConvParams p;
  p.kernel_len = kernel_len;
  p.depthwise = nn::init_normal<T>({kernel_len, channels}, rng, init_std);
  p.pointwise = nn::init_normal<T>({channels, channels}, rng, init_std);
  return p;
}

template <typename T>
void DsConvParams<T>::collect(nn::ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + "depthwise", depthwise});
  out.push_back({prefix + "pointwise", pointwise});
}

template <typename T>
void ScaleBranch<T>::collect(nn::ParamList<T>& out, const std::string& prefix) const {
  conv.collect(out, prefix + "conv.");
  activation.collect(out, prefix + "act.");
  fusion_attn.collect(out, prefix + "fusion_attn.");
  fusion_mlp.collect(out, prefix + "fusion_mlp.");
}

template <typename T>
TransformerXBlock<T> TransformerXBlock<T>::make(const BlockConfig& c, Rng& rng) {
  validate(c);
  TransformerXBlock b;
  b.small_first = c.small_first;
  b.self_attn = nn::AttentionParams<T>::make(c.d_model, c.n_heads, rng, c.init_std);
  if (c.conv_enabled) {
    for (std::size_t k : c.kernels) {
      ScaleBranch<T> br;
      br.conv = DsConvParams<T>::make(k, c.d_model, rng, c.init_std);
      br.activation = nn::ESwishParam<T>::make(c.learnable_beta);
      br.fusion_attn = nn::AttentionParams<T>::make(c.d_model, c.n_heads, rng, c.init_std);
      br.fusion_mlp =
          nn::FfnParams<T>::make(c.d_model, c.fusion_mult, rng, c.init_std, c.learnable_beta);
      b.branches.push_back(std::move(br));
    }
    b.conv_norm = nn::ones_gain<T>(c.d_model);
  }
  b.ffn = nn::FfnParams<T>::make(c.d_model, c.ffn_mult, rng, c.init_std, c.learnable_beta);
  b.attn_norm = nn::ones_gain<T>(c.d_model);
  b.ffn_norm = nn::ones_gain<T>(c.d_model);
  return b;
}

template <typename T>
void TransformerXBlock<T>::collect(nn::ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + "attn_norm", attn_norm});
  self_attn.collect(out, prefix + "self_attn.");
  if (!branches.empty()) out.push_back({prefix + "conv_norm", conv_norm});
  for (std::size_t i = 0; i < branches.size(); ++i) {
    branches[i].collect(out, prefix + "branch" + std::to_string(i) + ".");
  }
  out.push_back({prefix + "ffn_norm", ffn_norm});
  ffn.collect(out, prefix + "ffn.");
}

namespace {

// y[b,l,c] = sum_j x[b, l + j - (k-1), c] * K[j,c], zero outside the sequence.
template <typename T>
Tensor<T> causal_depthwise(const Tensor<T>& x, const Tensor<T>& kernel) {
  if (x.rank() != 3 || kernel.rank() != 2 || kernel.shape()[1] != x.shape()[2]) {
    throw ShapeError("ds_conv_1d: input " + shape_str(x.shape()) + " vs depthwise kernel " +
                     shape_str(kernel.shape()));
  }
  const std::size_t batch = x.shape()[0], len = x.shape()[1], ch = x.shape()[2];
  const std::size_t k = kernel.shape()[0];
  const T* xv = x.data().data();
  const T* kv = kernel.data().data();
  std::vector<T> out(x.numel(), T(0));
#pragma omp parallel for schedule(static)
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t l = 0; l < len; ++l) {
      T* dst = out.data() + (b * len + l) * ch;
      for (std::size_t j = 0; j < k; ++j) {
        if (l + j < k - 1) continue;
        const std::size_t src_l = l + j - (k - 1);
        const T* src = xv + (b * len + src_l) * ch;
        const T* kr = kv + j * ch;
        for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c] * kr[c];
      }
    }
  }
  return make_result<T>("ds_conv_depthwise", x.shape(), std::move(out), {x, kernel},
                        [batch, len, ch, k](detail::Node<T>& self) {
    const T* g = self.grad.data();
    const T* xv = self.parents[0]->data.data();
    const T* kv = self.parents[1]->data.data();
    auto* gx = parent_grad(self, 0);
    auto* gk = parent_grad(self, 1);
    if (gx) {
#pragma omp parallel for schedule(static)
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t l = 0; l < len; ++l) {
          const T* gr = g + (b * len + l) * ch;
          for (std::size_t j = 0; j < k; ++j) {
            if (l + j < k - 1) continue;
            T* dst = gx->data() + (b * len + l + j - (k - 1)) * ch;
            const T* kr = kv + j * ch;
            for (std::size_t c = 0; c < ch; ++c) dst[c] += gr[c] * kr[c];
          }
        }
      }
    }
    if (!gk) return;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t l = 0; l < len; ++l) {
        const T* gr = g + (b * len + l) * ch;
        for (std::size_t j = 0; j < k; ++j) {
          if (l + j < k - 1) continue;
          T* dst = gk->data() + j * ch;
          const T* src = xv + (b * len + l + j - (k - 1)) * ch;
          for (std::size_t c = 0; c < ch; ++c) dst[c] += gr[c] * src[c];
        }
      }
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> ds_conv_1d(const Tensor<T>& x, const DsConvParams<T>& p) {
  return matmul(causal_depthwise(x, p.depthwise), p.pointwise);
}

template <typename T>
Tensor<T> branch_features(const Tensor<T>& x, const DsConvParams<T>& p,
                          const nn::ESwishParam<T>& activation) {
  return nn::eswish(ds_conv_1d(x, p), activation);
}

template <typename T>
Tensor<T> fusion_chain(const Tensor<T>& x0, const std::vector<Tensor<T>>& hs,
                       const std::vector<ScaleBranch<T>>& branches, bool small_first) {
  if (branches.empty()) throw ContractError("fusion_chain: no branches");
  if (hs.size() != branches.size()) {
    throw ContractError("fusion_chain: " + std::to_string(hs.size()) + " feature maps for " +
                        std::to_string(branches.size()) + " branches");
  }
  Tensor<T> x = x0;
  const std::size_t n = branches.size();
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t i = small_first ? step : n - 1 - step;
    const auto& br = branches[i];
    auto mixed = add(x, nn::attention(x, hs[i], br.fusion_attn, nn::Mask::Causal));
    x = add(x, nn::ffn(mixed, br.fusion_mlp));
  }
  return x;
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const TransformerXBlock<T>& block) {
  auto normed = nn::rms_norm(x, block.attn_norm);
  auto a = add(x, nn::attention(normed, normed, block.self_attn, nn::Mask::Causal));
  Tensor<T> f = a;
  if (!block.branches.empty()) {
    auto conv_in = nn::rms_norm(a, block.conv_norm);
    std::vector<Tensor<T>> hs;
    hs.reserve(block.branches.size());
    for (const auto& br : block.branches) {
      hs.push_back(branch_features(conv_in, br.conv, br.activation));
    }
    f = fusion_chain(a, hs, block.branches, block.small_first);
  }
  return add(f, nn::ffn(nn::rms_norm(f, block.ffn_norm), block.ffn));
}

std::size_t block_param_count(const BlockConfig& c) {
  const std::size_t d = c.d_model;
  std::size_t n = 4 * d * d;                   // self-attention
  n += 2 * c.ffn_mult * d * d + 1;             // FFN + eSwish slope
  n += 2 * d;                                  // attention and FFN norm gains
  if (c.conv_enabled) {
    n += d;                                    // shared norm before the branches
    for (std::size_t k : c.kernels) {
      n += k * d + d * d + 1;                  // depthwise, pointwise, branch slope
      n += 4 * d * d;                          // fusion cross-attention
      n += 2 * c.fusion_mult * d * d + 1;      // fusion MLP
    }
  }
  return n;
}

#define DXLM_INSTANTIATE_TX(T)                                                            \
  template struct DsConvParams<T>;                                                        \
  template struct ScaleBranch<T>;                                                         \
  template struct TransformerXBlock<T>;                                                   \
  template Tensor<T> ds_conv_1d(const Tensor<T>&, const DsConvParams<T>&);                \
  template Tensor<T> branch_features(const Tensor<T>&, const DsConvParams<T>&,            \
                                     const nn::ESwishParam<T>&);                          \
  template Tensor<T> fusion_chain(const Tensor<T>&, const std::vector<Tensor<T>>&,        \
                                  const std::vector<ScaleBranch<T>>&, bool);              \
  template Tensor<T> block_forward(const Tensor<T>&, const TransformerXBlock<T>&);

DXLM_INSTANTIATE_TX(float)
DXLM_INSTANTIATE_TX(double)

}  // namespace dxlm::tx
