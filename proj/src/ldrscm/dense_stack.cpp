#include "dxlm/ldrscm/dense_stack.hpp"

namespace dxlm::dense {

std::string to_string(ResidualStrategy s) {
  switch (s) {
    case ResidualStrategy::LearnableDense: return "learnable_dense";
    case ResidualStrategy::FixedDense: return "fixed_dense";
    case ResidualStrategy::Standard: return "standard";
  }
  return "unknown";
}

ResidualStrategy parse_strategy(const std::string& name) {
  if (name == "learnable_dense" || name == "ldrscm") return ResidualStrategy::LearnableDense;
  if (name == "fixed_dense" || name == "fdrc") return ResidualStrategy::FixedDense;
  if (name == "standard" || name == "src") return ResidualStrategy::Standard;
  throw ConfigError("unknown residual strategy '" + name +
                    "' (expected learnable_dense, fixed_dense or standard)");
}

template <typename T>
AlphaBank<T> AlphaBank<T>::make(std::size_t depth, bool learnable) {
  AlphaBank bank;
  for (std::size_t l = 0; l < depth; ++l) {
    bank.raw_logits.push_back(Tensor<T>::zeros({l + 1}, learnable));
  }
  return bank;
}

template <typename T>
void AlphaBank<T>::collect(nn::ParamList<T>& out, const std::string& prefix) const {
  for (std::size_t l = 0; l < raw_logits.size(); ++l) {
    out.push_back({prefix + "layer" + std::to_string(l), raw_logits[l]});
  }
}

template <typename T>
Tensor<T> normalized_alphas(const AlphaBank<T>& bank, std::size_t layer) {
  if (layer >= bank.depth()) {
    throw IndexError("normalized_alphas: layer " + std::to_string(layer) +
                     " outside stack depth " + std::to_string(bank.depth()));
  }
  return softmax(bank.raw_logits[layer], 0);
}

template <typename T>
Stack<T> Stack<T>::make(const tx::BlockConfig& block, std::size_t depth,
                        ResidualStrategy strategy, Rng& rng) {
  if (depth == 0) throw ConfigError("stack: depth must be >= 1");
  Stack s;
  s.strategy = strategy;
  for (std::size_t l = 0; l < depth; ++l) {
    s.blocks.push_back(tx::TransformerXBlock<T>::make(block, rng));
  }
  if (strategy == ResidualStrategy::LearnableDense) s.alphas = AlphaBank<T>::make(depth);
  return s;
}

template <typename T>
void Stack<T>::collect(nn::ParamList<T>& out, const std::string& prefix) const {
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    blocks[l].collect(out, prefix + "block" + std::to_string(l) + ".");
  }
  alphas.collect(out, prefix + "alpha.");
}

template <typename T>
StackOutput<T> stack_forward(const Tensor<T>& h0, std::size_t depth, ResidualStrategy strategy,
                             const AlphaBank<T>& alphas, const LayerFn<T>& layer) {
  if (strategy == ResidualStrategy::LearnableDense && alphas.depth() < depth) {
    throw ContractError("stack_forward: alpha bank covers " + std::to_string(alphas.depth()) +
                        " layers, stack has " + std::to_string(depth));
  }
  StackOutput<T> out;
  out.taps.reserve(depth + 1);
  out.taps.push_back(h0);
  for (std::size_t l = 0; l < depth; ++l) {
    const Tensor<T>& h = out.taps.back();
    Tensor<T> transformed = layer(l, h);
    Tensor<T> skip;
    if (strategy == ResidualStrategy::Standard) {
      skip = h;
    } else {
      // Fixed weights go through the same mul/add sequence as learned ones so
      // both strategies agree bit for bit while the logits are still zero.
      Tensor<T> weights = strategy == ResidualStrategy::LearnableDense
                              ? normalized_alphas(alphas, l)
                              : Tensor<T>::full({l + 1}, T(1) / static_cast<T>(l + 1));
      for (std::size_t i = 0; i <= l; ++i) {
        auto term = mul(out.taps[i], reshape(slice(weights, 0, i, 1), Shape{}));
        skip = i == 0 ? term : add(skip, term);
      }
    }
    out.taps.push_back(add(transformed, skip));
  }
  out.final = out.taps.back();
  return out;
}

template <typename T>
StackOutput<T> stack_forward(const Tensor<T>& h0, const Stack<T>& stack) {
  return stack_forward<T>(h0, stack.depth(), stack.strategy, stack.alphas,
                          [&stack](std::size_t l, const Tensor<T>& h) {
                            return tx::block_forward(h, stack.blocks[l]);
                          });
}

template <typename T>
std::vector<AlphaGradRow<T>> alpha_grad_report(const Stack<T>& stack,
                                               const std::function<Tensor<T>()>& loss_fn,
                                               T eps) {
  std::vector<AlphaGradRow<T>> rows;
  if (stack.strategy != ResidualStrategy::LearnableDense) return rows;
  std::vector<Tensor<T>> logits = stack.alphas.raw_logits;
  for (auto& a : logits) a.zero_grad();
  loss_fn().backward();

  auto value = [&] {
    NoGradGuard guard;
    return loss_fn().item();
  };
  for (std::size_t l = 0; l < logits.size(); ++l) {
    const auto norm = normalized_alphas(stack.alphas, l);
    auto data = logits[l].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      AlphaGradRow<T> row;
      row.layer = l;
      row.alpha_index = i;
      row.normalized_value = norm.data()[i];
      row.analytic_grad = logits[l].has_grad() ? logits[l].grad()[i] : T(0);
      const T saved = data[i];
      data[i] = saved + eps;
      const T up = value();
      data[i] = saved - eps;
      const T down = value();
      data[i] = saved;
      row.fd_grad = (up - down) / (T(2) * eps);
      rows.push_back(row);
    }
    logits[l].zero_grad();
  }
  return rows;
}

#define DXLM_INSTANTIATE_DENSE(T)                                                              \
  template struct AlphaBank<T>;                                                                \
  template struct Stack<T>;                                                                    \
  template Tensor<T> normalized_alphas(const AlphaBank<T>&, std::size_t);                      \
  template StackOutput<T> stack_forward(const Tensor<T>&, std::size_t, ResidualStrategy,       \
                                        const AlphaBank<T>&, const LayerFn<T>&);               \
  template StackOutput<T> stack_forward(const Tensor<T>&, const Stack<T>&);                    \
  template std::vector<AlphaGradRow<T>> alpha_grad_report(                                     \
      const Stack<T>&, const std::function<Tensor<T>()>&, T);

DXLM_INSTANTIATE_DENSE(float)
DXLM_INSTANTIATE_DENSE(double)

}  // namespace dxlm::dense
