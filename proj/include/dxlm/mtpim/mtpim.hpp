#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dxlm/nnblocks/nn.hpp"

// Multi-token prediction heads. Depth j (1-based) cross-attends from the
// previous depth's state to embeddings of the tokens shifted by j positions
// and predicts tokens[i + j + 1] at position i.
namespace dxlm::mtp {

// Token windows for one training batch. `tokens` carries seq_len + n_depths + 1
// columns so every depth has its targets.
struct MtpimBatch {
  TokenIds tokens;
  std::size_t seq_len = 0;

  TokenIds inputs() const { return tokens.window(0, seq_len); }
  TokenIds main_targets() const { return tokens.window(1, seq_len); }
  TokenIds shifted(std::size_t j) const { return tokens.window(j, seq_len); }
  TokenIds depth_targets(std::size_t j) const { return tokens.window(j + 1, seq_len); }
};

template <typename T>
struct DepthParams {
  nn::AttentionParams<T> cross_attn;
  Tensor<T> query_norm, key_norm, out_norm;  // [d]
  Tensor<T> head;                            // [d, V]

  void collect(nn::ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct MtpimParams {
  std::vector<DepthParams<T>> depths;
  std::vector<double> gammas;  // one non-negative weight per depth

  std::size_t n_depths() const { return depths.size(); }

  // Empty `gammas` means uniform 1 / n_depths.
  static MtpimParams make(std::size_t d_model, std::size_t vocab, std::size_t n_depths,
                          std::size_t n_heads, std::vector<double> gammas, Rng& rng,
                          double init_std);
  void collect(nn::ParamList<T>& out, const std::string& prefix) const;
};

// h_j = h_prev + attention(norm(h_prev), norm(shifted_emb)), causal, with j
// counted from 1.
template <typename T>
Tensor<T> depth_step(const Tensor<T>& h_prev, const Tensor<T>& shifted_emb, std::size_t j,
                     const MtpimParams<T>& p);

template <typename T>
Tensor<T> depth_logits(const Tensor<T>& h_j, std::size_t j, const MtpimParams<T>& p);

// Logits [B, L, V] for every depth. `token_table` is the backbone's embedding.
template <typename T>
std::vector<Tensor<T>> mtpim_forward(const Tensor<T>& h_backbone, const MtpimBatch& batch,
                                     const Tensor<T>& token_table, const MtpimParams<T>& p);

template <typename T>
struct JointLoss {
  Tensor<T> total;
  Tensor<T> main;
  std::vector<Tensor<T>> per_depth;
};

// total = CE(main) + lambda_mpt * sum_j gamma_j CE(depth j)
template <typename T>
JointLoss<T> joint_loss(const Tensor<T>& main_logits, const std::vector<Tensor<T>>& depth_logits,
                        const MtpimBatch& batch, const std::vector<double>& gammas,
                        double lambda_mpt);

}  // namespace dxlm::mtp
