#include "dxlm/harness/train.hpp"

#include <malloc.h>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numbers>

#include "dxlm/numcore/grad_check.hpp"

namespace dxlm::harness {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename T>
MetricsRow eval_row(const TrainState<T>& state, const RunConfig& c, const Corpus& corpus) {
  const auto t0 = Clock::now();
  const EvalResult r =
      evaluate(state.model, corpus.heldout, c.eval_batch_size, c.train.seq_len, c.eval_batches);
  MetricsRow row;
  row.step = state.step;
  row.split = "heldout";
  row.loss_total = r.loss;
  row.loss_main = r.loss;
  row.lr = lr_at(state.step == 0 ? 0 : state.step - 1, c.train);
  row.tokens_seen = state.tokens_seen;
  row.wall_ms = ms_since(t0);
  return row;
}

template <typename T>
void train_impl(const RunConfig& c, const Corpus& corpus, MetricsSink* sink) {
  auto state = TrainState<T>::make(c);
  const bool resumed = !c.resume.empty();
  if (resumed) load_checkpoint(c.resume, state);
  TrainOptions opts;
  opts.checkpoint_path = checkpoint_path(c);
  train(state, c, corpus, sink, opts);
}

std::string yes_no(bool b) { return b ? "✓" : "×"; }

}  // namespace

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

void set_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

Corpus load_corpus(const RunConfig& c) {
  return split_corpus(tokenize_bytes(read_file(c.corpus)), c.heldout_fraction);
}

template <typename T>
EvalResult evaluate(const mtp::LanguageModel<T>& model, const std::vector<std::int32_t>& ids,
                    std::size_t batch, std::size_t seq_len, std::size_t max_batches) {
  NoGradGuard no_grad;
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& b : eval_batches(ids, batch, seq_len, max_batches)) {
    const auto h = model.backbone(b.inputs()).final;
    const auto ce = nn::cross_entropy(model.main_logits(h), b.main_targets());
    const std::size_t n = b.tokens.batch * seq_len;
    total += static_cast<double>(ce.item()) * static_cast<double>(n);
    tokens += n;
  }
  EvalResult r;
  r.tokens = tokens;
  r.loss = total / static_cast<double>(tokens);
  r.perplexity = std::exp(r.loss);
  r.bpb = r.loss / std::numbers::ln2;
  return r;
}

template <typename T>
void train(TrainState<T>& state, const RunConfig& c, const Corpus& corpus, MetricsSink* sink,
           const TrainOptions& options) {
  const std::size_t stop = options.stop_at == 0 ? c.train.total_steps : options.stop_at;
  if (stop > c.train.total_steps) {
    throw ContractError("train: stop_at beyond total_steps");
  }
  const auto params = state.model.parameters();
  const std::size_t L = c.train.seq_len;
  const std::size_t depths = c.model.n_depths;
  auto emit = [&](const MetricsRow& row) {
    if (sink) sink->write(row);
  };

  while (state.step < stop) {
    const auto t0 = Clock::now();
    const std::string rng_before = state.data_rng.state();
    const std::size_t B = batch_size_at(state.step, c.train);
    MetricsRow row;
    try {
      const auto batch = sample_batch(corpus.train, B, L, depths, state.data_rng);
      const auto loss = mtp::model_loss(state.model, batch);
      loss.total.backward();
      row.loss_total = static_cast<double>(loss.total.item());
      row.loss_main = static_cast<double>(loss.main.item());
      for (const auto& d : loss.per_depth) row.loss_mpt.push_back(static_cast<double>(d.item()));
      row.grad_norm = clip_grad_norm(params, c.train.clip_norm);
    } catch (const NumericError& e) {
      for (const auto& p : params) {
        auto t = p.tensor;
        t.zero_grad();
      }
      state.data_rng.restore(rng_before);
      std::string where;
      if (!options.checkpoint_path.empty()) {
        const std::string path = options.checkpoint_path + ".last_good";
        save_checkpoint(path, state, c);
        where = "; last good state saved to " + path;
      }
      throw NumericError("step " + std::to_string(state.step) + ": " + e.what() + where);
    }
    row.lr = lr_at(state.step, c.train);
    adamw_step(params, state.adam, c.train, row.lr);
    state.tokens_seen += B * L;
    row.step = state.step;
    row.tokens_seen = state.tokens_seen;
    ++state.step;
    row.wall_ms = ms_since(t0);
    emit(row);

    const bool last = state.step == c.train.total_steps;
    if (options.evaluate && (last || (c.eval_every != 0 && state.step % c.eval_every == 0))) {
      emit(eval_row(state, c, corpus));
    }
    if (!options.checkpoint_path.empty() &&
        (last || (c.checkpoint_every != 0 && state.step % c.checkpoint_every == 0))) {
      save_checkpoint(options.checkpoint_path, state, c);
    }
  }
}

std::string checkpoint_path(const RunConfig& c) {
  return (std::filesystem::path(c.out_dir) / (c.run_name + ".ckpt")).string();
}

std::string metrics_prefix(const RunConfig& c) {
  return (std::filesystem::path(c.out_dir) / c.run_name).string();
}

void run_training(const RunConfig& c, MetricsSink* extra_sink) {
  const Corpus corpus = load_corpus(c);
  FileSink file(metrics_prefix(c), c.model.n_depths, c.write_csv, !c.resume.empty());
  std::vector<MetricsSink*> sinks{&file};
  if (extra_sink) sinks.push_back(extra_sink);
  TeeSink tee(sinks);
  if (c.precision == Precision::Single) {
    train_impl<float>(c, corpus, &tee);
  } else {
    train_impl<double>(c, corpus, &tee);
  }
}

AblationGrid parse_grid(const std::string& spec) {
  AblationGrid g;
  std::string item;
  std::vector<std::string> axes;
  for (char ch : spec + ",") {
    if (ch == ',') {
      if (!item.empty()) axes.push_back(item);
      item.clear();
    } else if (ch != ' ') {
      item.push_back(ch);
    }
  }
  for (const auto& a : axes) {
    if (a == "residual" || a == "all") {
      g.residual = {dense::ResidualStrategy::LearnableDense, dense::ResidualStrategy::FixedDense,
                    dense::ResidualStrategy::Standard};
    }
    if (a == "activation" || a == "all") g.eswish = {true, false};
    if (a == "mtpim" || a == "all") g.mtpim = {true, false};
    if (a == "conv" || a == "all") g.conv = {true, false};
    if (a != "residual" && a != "activation" && a != "mtpim" && a != "conv" && a != "all") {
      throw ConfigError("ablate: unknown grid axis '" + a +
                        "'; valid axes: residual, activation, mtpim, conv, all");
    }
  }
  return g;
}

namespace {

template <typename T>
void check_frozen_slopes(const TrainState<T>& state, const std::string& cell) {
  for (const auto& p : state.model.parameters()) {
    const auto& n = p.name;
    if (n.size() < 4 || n.compare(n.size() - 4, 4, "beta") != 0) continue;
    if (p.tensor.requires_grad() || p.tensor.item() != T(1)) {
      throw ContractError("ablate: cell " + cell + " has slope '" + n + "' = " +
                          std::to_string(static_cast<double>(p.tensor.item())) +
                          ", expected frozen at 1");
    }
  }
}

template <typename T>
void run_cell(const RunConfig& c, const Corpus& corpus, MetricsSink* sink, bool frozen) {
  auto state = TrainState<T>::make(c);
  if (frozen) check_frozen_slopes(state, c.run_name);
  train(state, c, corpus, sink);
  if (frozen) check_frozen_slopes(state, c.run_name);
}

}  // namespace

AblationResult ablate(const RunConfig& base, const AblationGrid& grid) {
  auto axis = [](const auto& values, auto fallback) {
    using V = std::decay_t<decltype(fallback)>;
    return values.empty() ? std::vector<V>{fallback} : std::vector<V>(values.begin(), values.end());
  };
  const auto residuals = axis(grid.residual, base.model.residual);
  const auto eswish = axis(grid.eswish, base.model.block.learnable_beta);
  const auto mtpim = axis(grid.mtpim, base.model.n_depths > 0);
  const auto conv = axis(grid.conv, base.model.block.conv_enabled);
  if (!grid.mtpim.empty() && base.model.n_depths == 0) {
    throw ConfigError("ablate: the mtpim axis needs n_depths >= 1 in the base config");
  }

  const Corpus corpus = load_corpus(base);
  const bool single = residuals.size() * eswish.size() * mtpim.size() * conv.size() == 1;
  AblationResult result;
  for (auto r : residuals) {
    for (bool e : eswish) {
      for (bool m : mtpim) {
        for (bool cv : conv) {
          RunConfig c = base;
          c.model.residual = r;
          c.model.block.learnable_beta = e;
          if (!m) {
            c.model.n_depths = 0;
            c.model.gammas.clear();
          }
          c.model.block.conv_enabled = cv;
          c.resume.clear();
          std::string name = dense::to_string(r) + "_" + (e ? "eswish" : "swish") + "_mtpim-" +
                             (m ? "on" : "off") + "_conv-" + (cv ? "on" : "off");
          // A one-cell grid is the base run itself.
          c.run_name = single ? base.run_name : base.run_name + "_" + name;
          finalize(c);
          FileSink file(metrics_prefix(c), c.model.n_depths, false);
          MemorySink mem;
          TeeSink tee({&file, &mem});
          if (c.precision == Precision::Single) {
            run_cell<float>(c, corpus, &tee, !e);
          } else {
            run_cell<double>(c, corpus, &tee, !e);
          }
          CellResult cell;
          cell.name = name;
          cell.config = c;
          cell.metrics_path = metrics_prefix(c) + ".ndjson";
          for (const auto& row : mem.rows) {
            if (row.split == "train") {
              if (row.step == 0) cell.step0_loss = row.loss_total;
              cell.final_train_loss = row.loss_total;
            } else {
              cell.heldout_bpb = row.loss_main / std::numbers::ln2;
            }
          }
          result.cells.push_back(std::move(cell));
        }
      }
    }
  }

  std::string& s = result.summary;
  s = "| cell | learnable α | dense skips | eSwish | MTPIM | multi-scale conv | step-0 loss | "
      "final train loss | held-out bpb |\n";
  s += "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& cell : result.cells) {
    const auto& m = cell.config.model;
    char nums[128];
    std::snprintf(nums, sizeof nums, "%.6f | %.6f | %.4f", cell.step0_loss, cell.final_train_loss,
                  cell.heldout_bpb);
    s += "| " + cell.name + " | " + yes_no(m.residual == dense::ResidualStrategy::LearnableDense) +
         " | " + yes_no(m.residual != dense::ResidualStrategy::Standard) + " | " +
         yes_no(m.block.learnable_beta) + " | " + yes_no(m.n_depths > 0) + " | " +
         yes_no(m.block.conv_enabled) + " | " + nums + " |\n";
  }
  result.summary_path =
      (std::filesystem::path(base.out_dir) / (base.run_name + "_summary.md")).string();
  std::ofstream out(result.summary_path);
  if (!out) throw ConfigError("ablate: cannot write '" + result.summary_path + "'");
  out << s;
  return result;
}

std::string module_of(const std::string& n) {
  auto has = [&n](const char* part) { return n.find(part) != std::string::npos; };
  auto ends = [&n](const std::string& suffix) {
    return n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (n.rfind("embed.", 0) == 0) return "embedding";
  if (n.rfind("mtp.", 0) == 0) {
    if (has("cross_attn")) return "mtpim.cross_attn";
    if (ends(".head")) return "mtpim.head";
    return "mtpim.norm";
  }
  if (has("alpha.")) return "ldrscm.alpha";
  if (ends("beta")) return "eswish.beta";
  if (has(".conv.")) return "transformerx.conv";
  if (has("fusion_")) return "transformerx.fusion";
  if (has("self_attn.")) return "attention";
  if (has(".ffn.")) return "ffn";
  if (n == "head.main") return "head.main";
  if (has("norm")) return "norm";
  return "other";
}

std::vector<ModuleError> gradcheck_suite(const mtp::ModelConfig& cfg, std::size_t seq_len,
                                         std::size_t batch, std::size_t entries_per_tensor,
                                         std::uint64_t seed) {
  Rng rng(seed);
  mtp::ModelConfig mc = cfg;
  // Larger weights than the training init so every path carries signal.
  mc.init_std = 0.5 / std::sqrt(static_cast<double>(mc.block.d_model));
  auto model = mtp::LanguageModel<double>::make(mc, rng);
  // Move every non-matrix parameter off its symmetric starting point.
  for (const auto& p : model.parameters()) {
    if (p.tensor.rank() >= 2) continue;
    auto t = p.tensor;
    for (auto& v : t.mutable_data()) v += 0.3 * rng.normal(0.0, 1.0);
  }
  const std::size_t width = seq_len + mc.n_depths + 1;
  std::vector<std::int32_t> ids(batch * width);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(mc.vocab));
  const mtp::MtpimBatch b{TokenIds(batch, width, ids), seq_len};

  nn::ParamList<double> params;
  for (const auto& p : model.parameters()) {
    if (p.tensor.requires_grad()) params.push_back(p);
  }
  std::vector<Tensor<double>> tensors;
  for (const auto& p : params) tensors.push_back(p.tensor);
  GradCheckOptions<double> opts;
  opts.max_entries_per_param = entries_per_tensor;
  opts.sample_seed = seed;
  const auto report =
      grad_check_report<double>([&] { return mtp::model_loss(model, b).total; }, tensors, opts);

  std::vector<double> per_param(report.per_param_max.begin(), report.per_param_max.end());
  if (entries_per_tensor != 0) {
    // Random sampling rarely lands on a table row the probe batch reads, so
    // embedding tables get extra entries drawn from the rows in use.
    auto loss = [&] { return mtp::model_loss(model, b).total; };
    loss().backward();
    const std::size_t d = mc.block.d_model;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const bool token = params[i].name == "embed.token";
      if (!token && params[i].name != "embed.pos") continue;
      auto t = params[i].tensor;
      const std::vector<double> analytic(t.grad().begin(), t.grad().end());
      for (std::size_t e = 0; e < entries_per_tensor; ++e) {
        const std::size_t row = token ? static_cast<std::size_t>(ids[rng.below(ids.size())])
                                       : rng.below(seq_len);
        const std::size_t j = row * d + rng.below(d);
        NoGradGuard no_grad;
        const double saved = t.data()[j];
        const double eps = default_grad_eps<double>();
        t.mutable_data()[j] = saved + eps;
        const double up = loss().item();
        t.mutable_data()[j] = saved - eps;
        const double down = loss().item();
        t.mutable_data()[j] = saved;
        const double numeric = (up - down) / (2 * eps);
        per_param[i] = std::max(per_param[i],
                                std::abs(analytic[j] - numeric) / std::max(1.0, std::abs(numeric)));
      }
    }
    for (const auto& p : params) {
      auto t = p.tensor;
      t.zero_grad();
    }
  }

  std::vector<ModuleError> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string mod = module_of(params[i].name);
    auto it = std::find_if(out.begin(), out.end(), [&](const ModuleError& m) { return m.module == mod; });
    if (it == out.end()) {
      out.push_back({mod, 0.0, 0, 0});
      it = out.end() - 1;
    }
    it->max_rel_err = std::max(it->max_rel_err, per_param[i]);
    ++it->tensors;
    const std::size_t n = params[i].tensor.numel();
    const bool table = params[i].name.rfind("embed.", 0) == 0;
    it->entries += entries_per_tensor == 0 ? n : std::min(n, entries_per_tensor) * (table ? 2 : 1);
  }
  return out;
}

#define DXLM_INSTANTIATE_TRAIN(T)                                                                  \
  template EvalResult evaluate(const mtp::LanguageModel<T>&, const std::vector<std::int32_t>&,     \
                               std::size_t, std::size_t, std::size_t);                             \
  template void train(TrainState<T>&, const RunConfig&, const Corpus&, MetricsSink*,               \
                      const TrainOptions&);

DXLM_INSTANTIATE_TRAIN(float)
DXLM_INSTANTIATE_TRAIN(double)

}  // namespace dxlm::harness
