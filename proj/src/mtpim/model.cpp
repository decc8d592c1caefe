#include "dxlm/mtpim/model.hpp"

#include <algorithm>

namespace dxlm::mtp {

void validate(const ModelConfig& c) {
  if (c.vocab < 2) throw ConfigError("model: vocab must be >= 2");
  if (c.max_seq_len == 0) throw ConfigError("model: max_seq_len must be >= 1");
  if (c.n_layers == 0) throw ConfigError("model: n_layers must be >= 1");
  if (!c.gammas.empty() && c.gammas.size() != c.n_depths) {
    throw ConfigError("model: gammas has " + std::to_string(c.gammas.size()) +
                      " entries, n_depths is " + std::to_string(c.n_depths));
  }
  for (double g : c.gammas) {
    if (!(g >= 0.0)) throw ConfigError("model: gammas must be non-negative");
  }
  if (!(c.lambda_mpt >= 0.0)) throw ConfigError("model: lambda_mpt must be >= 0");
  if (!(c.init_std > 0.0)) throw ConfigError("model: init_std must be positive");
  tx::validate(c.block);
}

template <typename T>
LanguageModel<T> LanguageModel<T>::make(const ModelConfig& config, Rng& rng) {
  validate(config);
  LanguageModel m;
  m.config = config;
  const std::size_t d = config.block.d_model;
  tx::BlockConfig block = config.block;
  block.init_std = config.init_std;
  m.token_table = nn::init_normal<T>({config.vocab, d}, rng, config.init_std);
  m.pos_table = nn::init_normal<T>({config.max_seq_len, d}, rng, config.init_std);
  m.stack = dense::Stack<T>::make(block, config.n_layers, config.residual, rng);
  m.final_norm = nn::ones_gain<T>(d);
  if (!config.tie_main_head) m.main_head = nn::init_normal<T>({d, config.vocab}, rng, config.init_std);
  m.mtp = MtpimParams<T>::make(d, config.vocab, config.n_depths, block.n_heads, config.gammas,
                               rng, config.init_std);
  return m;
}

template <typename T>
nn::ParamList<T> LanguageModel<T>::parameters() const {
  nn::ParamList<T> out;
  out.push_back({"embed.token", token_table});
  out.push_back({"embed.pos", pos_table});
  stack.collect(out, "stack.");
  out.push_back({"final_norm", final_norm});
  if (!config.tie_main_head) out.push_back({"head.main", main_head});
  mtp.collect(out, "mtp.");
  return out;
}

template <typename T>
Tensor<T> LanguageModel<T>::embed_inputs(const TokenIds& inputs) const {
  if (inputs.length == 0 || inputs.length > config.max_seq_len) {
    throw ContractError("model: sequence length " + std::to_string(inputs.length) +
                        " outside 1.." + std::to_string(config.max_seq_len));
  }
  return add(nn::embed(inputs, token_table), slice(pos_table, 0, 0, inputs.length));
}

template <typename T>
dense::StackOutput<T> LanguageModel<T>::backbone(const TokenIds& inputs) const {
  return dense::stack_forward(embed_inputs(inputs), stack);
}

template <typename T>
Tensor<T> LanguageModel<T>::main_logits(const Tensor<T>& h) const {
  auto normed = nn::rms_norm(h, final_norm);
  return config.tie_main_head ? matmul(normed, transpose(token_table)) : matmul(normed, main_head);
}

template <typename T>
ModelOutput<T> forward(const LanguageModel<T>& model, const MtpimBatch& batch) {
  ModelOutput<T> out;
  out.backbone = model.backbone(batch.inputs()).final;
  out.main_logits = model.main_logits(out.backbone);
  out.depth_logits = mtpim_forward(out.backbone, batch, model.token_table, model.mtp);
  return out;
}

template <typename T>
JointLoss<T> model_loss(const LanguageModel<T>& model, const MtpimBatch& batch) {
  auto out = forward(model, batch);
  return joint_loss(out.main_logits, out.depth_logits, batch, model.mtp.gammas,
                    model.config.lambda_mpt);
}

std::size_t DecodeResult::total_proposed() const {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.proposed;
  return n;
}

std::size_t DecodeResult::total_accepted() const {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.accepted;
  return n;
}

double DecodeResult::accept_rate() const {
  const auto p = total_proposed();
  return p == 0 ? 0.0 : static_cast<double>(total_accepted()) / static_cast<double>(p);
}

namespace {

// Greedy choice at `pos` of [1, L, V] logits; ties go to the lowest id.
template <typename T>
std::int32_t argmax_at(const Tensor<T>& logits, std::size_t pos) {
  const std::size_t vocab = logits.size(2);
  const T* row = logits.data().data() + pos * vocab;
  return static_cast<std::int32_t>(std::max_element(row, row + vocab) - row);
}

TokenIds row(std::vector<std::int32_t>::const_iterator begin,
             std::vector<std::int32_t>::const_iterator end) {
  return TokenIds(1, static_cast<std::size_t>(end - begin), std::vector<std::int32_t>(begin, end));
}

void check_decode_args(const std::vector<std::int32_t>& prompt, long max_new, std::size_t vocab) {
  if (max_new <= 0) throw ContractError("decode: max_new must be positive");
  if (prompt.empty()) throw ContractError("decode: prompt must contain at least one token");
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    if (prompt[i] < 0 || static_cast<std::size_t>(prompt[i]) >= vocab) {
      throw VocabularyError("decode: prompt id " + std::to_string(prompt[i]) + " at position " +
                            std::to_string(i) + " outside vocabulary of " +
                            std::to_string(vocab));
    }
  }
}

template <typename T>
std::int32_t greedy_next(const LanguageModel<T>& model, const std::vector<std::int32_t>& ctx) {
  const std::size_t n = std::min(ctx.size(), model.config.max_seq_len);
  auto logits = model.main_logits(model.backbone(row(ctx.end() - static_cast<long>(n), ctx.end())).final);
  return argmax_at(logits, n - 1);
}

}  // namespace

template <typename T>
std::vector<std::int32_t> greedy_decode(const LanguageModel<T>& model,
                                        const std::vector<std::int32_t>& prompt, long max_new) {
  check_decode_args(prompt, max_new, model.config.vocab);
  NoGradGuard guard;
  std::vector<std::int32_t> ctx = prompt, out;
  while (out.size() < static_cast<std::size_t>(max_new)) {
    out.push_back(greedy_next(model, ctx));
    ctx.push_back(out.back());
  }
  return out;
}

template <typename T>
DecodeResult draft_verify_decode(const LanguageModel<T>& model,
                                 const std::vector<std::int32_t>& prompt, long max_new) {
  check_decode_args(prompt, max_new, model.config.vocab);
  if (model.mtp.n_depths() == 0) throw ContractError("decode: model has no prediction depths");
  NoGradGuard guard;
  const std::size_t window = model.config.max_seq_len;
  const std::size_t limit = static_cast<std::size_t>(max_new);
  std::vector<std::int32_t> ctx = prompt;
  DecodeResult result;

  while (result.tokens.size() < limit) {
    DecodeStep step;
    step.step = result.steps.size();
    const std::size_t n = ctx.size();
    const std::size_t remaining = limit - result.tokens.size();
    std::vector<std::int32_t> emit;

    if (n >= window) {
      emit.push_back(greedy_next(model, ctx));
    } else {
      auto h = model.backbone(row(ctx.begin(), ctx.end())).final;
      emit.push_back(argmax_at(model.main_logits(h), n - 1));
      // Verification runs on ctx + t0 + drafts, which must fit the window.
      const std::size_t drafts =
          std::min({model.mtp.n_depths(), window - n - 1, remaining - 1});
      if (drafts > 0) {
        std::vector<std::int32_t> ext = ctx;
        ext.push_back(emit.front());
        for (std::size_t j = 1; j <= drafts; ++j) {
          auto shifted = nn::embed(row(ext.begin() + static_cast<long>(j),
                                       ext.begin() + static_cast<long>(j + n)),
                                   model.token_table);
          h = depth_step(h, shifted, j, model.mtp);
          ext.push_back(argmax_at(depth_logits(h, j, model.mtp), n - 1));
        }
        step.proposed = drafts;
        auto verify = model.main_logits(model.backbone(row(ext.begin(), ext.end())).final);
        std::size_t m = 1;
        for (; m <= drafts; ++m) {
          const std::int32_t g = argmax_at(verify, n - 1 + m);
          emit.push_back(g);
          if (g != ext[n + m]) break;
          ++step.accepted;
        }
        if (m > drafts && emit.size() < remaining) {
          emit.push_back(argmax_at(verify, n + drafts));
        }
      }
    }
    if (emit.size() > remaining) emit.resize(remaining);
    step.emitted = emit.size();
    for (auto t : emit) {
      ctx.push_back(t);
      result.tokens.push_back(t);
    }
    result.steps.push_back(step);
  }
  return result;
}

#define DXLM_INSTANTIATE_MODEL(T)                                                              \
  template struct LanguageModel<T>;                                                            \
  template ModelOutput<T> forward(const LanguageModel<T>&, const MtpimBatch&);                 \
  template JointLoss<T> model_loss(const LanguageModel<T>&, const MtpimBatch&);                \
  template std::vector<std::int32_t> greedy_decode(const LanguageModel<T>&,                    \
                                                   const std::vector<std::int32_t>&, long);    \
  template DecodeResult draft_verify_decode(const LanguageModel<T>&,                           \
                                            const std::vector<std::int32_t>&, long);

DXLM_INSTANTIATE_MODEL(float)
DXLM_INSTANTIATE_MODEL(double)

}  // namespace dxlm::mtp
