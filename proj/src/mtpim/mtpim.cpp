#include "dxlm/mtpim/mtpim.hpp"

namespace dxlm::mtp {

template <typename T>
void DepthParams<T>::collect(nn::ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + "query_norm", query_norm});
  out.push_back({prefix + "key_norm", key_norm});
  cross_attn.collect(out, prefix + "cross_attn.");
  out.push_back({prefix + "out_norm", out_norm});
  out.push_back({prefix + "head", head});
}

template <typename T>
MtpimParams<T> MtpimParams<T>::make(std::size_t d_model, std::size_t vocab,
                                    std::size_t n_depths, std::size_t n_heads,
                                    std::vector<double> gammas, Rng& rng, double init_std) {
  if (gammas.empty() && n_depths > 0) {
    gammas.assign(n_depths, 1.0 / static_cast<double>(n_depths));
  }
  if (gammas.size() != n_depths) {
    throw ConfigError("mtpim: " + std::to_string(gammas.size()) + " gammas for " +
                      std::to_string(n_depths) + " depths");
  }
  for (double g : gammas) {
    if (!(g >= 0.0)) throw ConfigError("mtpim: gammas must be non-negative");
  }
  MtpimParams p;
  p.gammas = std::move(gammas);
  for (std::size_t j = 0; j < n_depths; ++j) {
    DepthParams<T> d;
    d.cross_attn = nn::AttentionParams<T>::make(d_model, n_heads, rng, init_std);
    d.head = nn::init_normal<T>({d_model, vocab}, rng, init_std);
    d.query_norm = nn::ones_gain<T>(d_model);
    d.key_norm = nn::ones_gain<T>(d_model);
    d.out_norm = nn::ones_gain<T>(d_model);
    p.depths.push_back(std::move(d));
  }
  return p;
}

template <typename T>
void MtpimParams<T>::collect(nn::ParamList<T>& out, const std::string& prefix) const {
  for (std::size_t j = 0; j < depths.size(); ++j) {
    depths[j].collect(out, prefix + "depth" + std::to_string(j + 1) + ".");
  }
}

namespace {

template <typename T>
const DepthParams<T>& depth_at(const MtpimParams<T>& p, std::size_t j) {
  if (j == 0 || j > p.n_depths()) {
    throw IndexError("mtpim: depth " + std::to_string(j) + " outside 1.." +
                     std::to_string(p.n_depths()));
  }
  return p.depths[j - 1];
}

}  // namespace

template <typename T>
Tensor<T> depth_step(const Tensor<T>& h_prev, const Tensor<T>& shifted_emb, std::size_t j,
                     const MtpimParams<T>& p) {
  const auto& d = depth_at(p, j);
  auto q = nn::rms_norm(h_prev, d.query_norm);
  auto kv = nn::rms_norm(shifted_emb, d.key_norm);
  return add(h_prev, nn::attention(q, kv, d.cross_attn, nn::Mask::Causal));
}

template <typename T>
Tensor<T> depth_logits(const Tensor<T>& h_j, std::size_t j, const MtpimParams<T>& p) {
  const auto& d = depth_at(p, j);
  return matmul(nn::rms_norm(h_j, d.out_norm), d.head);
}

template <typename T>
std::vector<Tensor<T>> mtpim_forward(const Tensor<T>& h_backbone, const MtpimBatch& batch,
                                     const Tensor<T>& token_table, const MtpimParams<T>& p) {
  std::vector<Tensor<T>> logits;
  if (p.n_depths() == 0) return logits;
  const std::size_t len = h_backbone.size(1);
  if (batch.seq_len != len || batch.tokens.length < len + p.n_depths() + 1) {
    throw ContractError("mtpim_forward: " + std::to_string(batch.tokens.length) +
                        " tokens per row, need seq_len " + std::to_string(len) + " + " +
                        std::to_string(p.n_depths()) + " depths + 1");
  }
  Tensor<T> h = h_backbone;
  for (std::size_t j = 1; j <= p.n_depths(); ++j) {
    h = depth_step(h, nn::embed(batch.shifted(j), token_table), j, p);
    logits.push_back(depth_logits(h, j, p));
  }
  return logits;
}

template <typename T>
JointLoss<T> joint_loss(const Tensor<T>& main_logits, const std::vector<Tensor<T>>& depth_logits,
                        const MtpimBatch& batch, const std::vector<double>& gammas,
                        double lambda_mpt) {
  if (!(lambda_mpt >= 0.0)) throw ContractError("joint_loss: lambda_mpt must be >= 0");
  if (gammas.size() < depth_logits.size()) {
    throw ContractError("joint_loss: " + std::to_string(gammas.size()) + " gammas for " +
                        std::to_string(depth_logits.size()) + " depths");
  }
  JointLoss<T> out;
  out.main = nn::cross_entropy(main_logits, batch.main_targets());
  out.total = out.main;
  for (std::size_t j = 0; j < depth_logits.size(); ++j) {
    auto ce = nn::cross_entropy(depth_logits[j], batch.depth_targets(j + 1));
    out.per_depth.push_back(ce);
    if (lambda_mpt == 0.0) continue;
    out.total = add(out.total, scale(ce, static_cast<T>(lambda_mpt * gammas[j])));
  }
  return out;
}

#define DXLM_INSTANTIATE_MTP(T)                                                                \
  template struct DepthParams<T>;                                                              \
  template struct MtpimParams<T>;                                                              \
  template Tensor<T> depth_step(const Tensor<T>&, const Tensor<T>&, std::size_t,               \
                                const MtpimParams<T>&);                                        \
  template Tensor<T> depth_logits(const Tensor<T>&, std::size_t, const MtpimParams<T>&);       \
  template std::vector<Tensor<T>> mtpim_forward(const Tensor<T>&, const MtpimBatch&,           \
                                                const Tensor<T>&, const MtpimParams<T>&);      \
  template JointLoss<T> joint_loss(const Tensor<T>&, const std::vector<Tensor<T>>&,            \
                                   const MtpimBatch&, const std::vector<double>&, double);

DXLM_INSTANTIATE_MTP(float)
DXLM_INSTANTIATE_MTP(double)

}  // namespace dxlm::mtp
