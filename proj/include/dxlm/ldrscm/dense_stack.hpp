#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dxlm/transformerx/transformerx.hpp"

// Stacks of blocks joined by learnable dense residual skips:
//   H_{l+1} = Layer(H_l) + sum_{i=0..l} alpha_i^{(l)} H_i,
//   alpha^{(l)} = softmax(a^{(l)}),
// with two fixed baselines (uniform dense weights, plain residual).
namespace dxlm::dense {

enum class ResidualStrategy { LearnableDense, FixedDense, Standard };

std::string to_string(ResidualStrategy s);
ResidualStrategy parse_strategy(const std::string& name);

// Raw skip logits; layer l owns a vector of length l + 1, all zero at init.
template <typename T>
struct AlphaBank {
  std::vector<Tensor<T>> raw_logits;

  static AlphaBank make(std::size_t depth, bool learnable = true);
  std::size_t depth() const { return raw_logits.size(); }
  void collect(nn::ParamList<T>& out, const std::string& prefix) const;
};

// softmax(a^{(l)}); uniform 1/(l+1) while the logits are zero.
template <typename T>
Tensor<T> normalized_alphas(const AlphaBank<T>& bank, std::size_t layer);

template <typename T>
struct Stack {
  std::vector<tx::TransformerXBlock<T>> blocks;
  AlphaBank<T> alphas;  // populated only for LearnableDense
  ResidualStrategy strategy = ResidualStrategy::LearnableDense;

  static Stack make(const tx::BlockConfig& block, std::size_t depth, ResidualStrategy strategy,
                    Rng& rng);
  std::size_t depth() const { return blocks.size(); }
  void collect(nn::ParamList<T>& out, const std::string& prefix) const;
};

// Final representation plus every layer output H_0..H_n (depth + 1 tensors,
// so activation memory grows linearly with depth).
template <typename T>
struct StackOutput {
  Tensor<T> final;
  std::vector<Tensor<T>> taps;
};

template <typename T>
using LayerFn = std::function<Tensor<T>(std::size_t layer, const Tensor<T>& h)>;

// The skip-combination rule with an arbitrary per-layer transformation.
// `alphas` is only read for LearnableDense.
template <typename T>
StackOutput<T> stack_forward(const Tensor<T>& h0, std::size_t depth, ResidualStrategy strategy,
                             const AlphaBank<T>& alphas, const LayerFn<T>& layer);

template <typename T>
StackOutput<T> stack_forward(const Tensor<T>& h0, const Stack<T>& stack);

template <typename T>
struct AlphaGradRow {
  std::size_t layer = 0;
  std::size_t alpha_index = 0;
  T normalized_value = T(0);
  T analytic_grad = T(0);
  T fd_grad = T(0);
};

// Analytic gradients of every raw skip logit next to central differences.
// `loss_fn` must rebuild the forward graph on each call. Empty for
// strategies without learnable skips.
template <typename T>
std::vector<AlphaGradRow<T>> alpha_grad_report(const Stack<T>& stack,
                                               const std::function<Tensor<T>()>& loss_fn,
                                               T eps = sizeof(T) == 4 ? T(1e-3) : T(1e-6));

}  // namespace dxlm::dense
