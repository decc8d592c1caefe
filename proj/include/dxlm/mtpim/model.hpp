#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dxlm/ldrscm/dense_stack.hpp"
#include "dxlm/mtpim/mtpim.hpp"

namespace dxlm::mtp {

struct ModelConfig {
  std::size_t vocab = 257;
  std::size_t max_seq_len = 128;
  std::size_t n_layers = 4;
  tx::BlockConfig block;
  dense::ResidualStrategy residual = dense::ResidualStrategy::LearnableDense;
  std::size_t n_depths = 2;
  std::vector<double> gammas;  // empty: uniform
  double lambda_mpt = 0.3;
  bool tie_main_head = false;
  double init_std = 0.006;
};

void validate(const ModelConfig& c);

// Byte-level language model: token + learned absolute position embeddings,
// the dense-residual TransformerX stack, a final RMSNorm, the main
// next-token head and the multi-token heads sharing the token table.
template <typename T>
struct LanguageModel {
  ModelConfig config;
  Tensor<T> token_table;  // [V, d]
  Tensor<T> pos_table;    // [max_seq_len, d]
  dense::Stack<T> stack;
  Tensor<T> final_norm;
  Tensor<T> main_head;    // [d, V]; unset when tied to the token table
  MtpimParams<T> mtp;

  static LanguageModel make(const ModelConfig& config, Rng& rng);

  // Parameters in a fixed order with stable dotted names.
  nn::ParamList<T> parameters() const;

  Tensor<T> embed_inputs(const TokenIds& inputs) const;
  dense::StackOutput<T> backbone(const TokenIds& inputs) const;
  Tensor<T> main_logits(const Tensor<T>& h) const;
};

template <typename T>
struct ModelOutput {
  Tensor<T> backbone;
  Tensor<T> main_logits;
  std::vector<Tensor<T>> depth_logits;
};

template <typename T>
ModelOutput<T> forward(const LanguageModel<T>& model, const MtpimBatch& batch);

template <typename T>
JointLoss<T> model_loss(const LanguageModel<T>& model, const MtpimBatch& batch);

struct DecodeStep {
  std::size_t step = 0;
  std::size_t proposed = 0;  // draft tokens offered by the depth heads
  std::size_t accepted = 0;  // drafts confirmed by the main head
  std::size_t emitted = 0;   // tokens appended this step
};

struct DecodeResult {
  std::vector<std::int32_t> tokens;  // continuation only
  std::vector<DecodeStep> steps;

  std::size_t total_proposed() const;
  std::size_t total_accepted() const;
  double accept_rate() const;
};

// Plain greedy decoding with the main head. Contexts longer than
// max_seq_len keep their last max_seq_len tokens.
template <typename T>
std::vector<std::int32_t> greedy_decode(const LanguageModel<T>& model,
                                        const std::vector<std::int32_t>& prompt, long max_new);

// Depth heads draft up to n_depths tokens beyond the main head's next token;
// one main-head pass verifies them greedily. The output equals
// greedy_decode token for token. Once the context fills the window the loop
// degrades to plain greedy steps.
template <typename T>
DecodeResult draft_verify_decode(const LanguageModel<T>& model,
                                 const std::vector<std::int32_t>& prompt, long max_new);

}  // namespace dxlm::mtp
