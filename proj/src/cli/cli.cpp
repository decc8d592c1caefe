#include "dxlm/cli/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "dxlm/harness/train.hpp"

namespace dxlm::cli {

namespace {

using namespace dxlm::harness;

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string data;
  std::string grid = "residual";
  std::string prompt;
  bool prompt_set = false;
  std::size_t tokens = 0;
  std::size_t gc_seq_len = 8;
  std::size_t gc_batch = 2;
};

RunConfig effective_config(const Options& o) {
  RunConfig c = desk_config();
  load_config_file(c, o.config_path);
  for (const auto& a : o.overrides) apply_assignment(c, a);
  finalize(c);
  return c;
}

void echo_config(const RunConfig& c, std::ostream& out) {
  out << "# effective config\n" << to_text(c) << "# end config\n" << std::flush;
}

template <typename T>
TrainState<T> restored_state(const RunConfig& c, const std::string& checkpoint) {
  const std::string path = checkpoint.empty() ? checkpoint_path(c) : checkpoint;
  if (!std::filesystem::exists(path)) {
    throw ConfigError("checkpoint '" + path + "' not found; train first or pass --checkpoint");
  }
  auto state = TrainState<T>::make(c);
  load_checkpoint(path, state);
  return state;
}

template <typename T>
void cmd_eval(const RunConfig& c, const Options& o, std::ostream& out) {
  const auto state = restored_state<T>(c, o.checkpoint);
  std::vector<std::int32_t> ids =
      o.data.empty() ? load_corpus(c).heldout : tokenize_bytes(read_file(o.data));
  const auto r = evaluate(state.model, ids, c.eval_batch_size, c.train.seq_len, c.eval_batches);
  const double unigram = unigram_entropy_bits(ids);
  out << std::setprecision(6) << std::fixed;
  out << "data: " << (o.data.empty() ? c.corpus + " (held-out split)" : o.data) << "\n";
  out << "step: " << state.step << "\n";
  out << "tokens: " << r.tokens << "\n";
  out << "loss_nats: " << r.loss << "\n";
  out << "perplexity: " << r.perplexity << "\n";
  out << "bits_per_byte: " << r.bpb << "\n";
  out << "unigram_entropy_bits: " << unigram << "\n";
  out << "below_unigram: " << (r.bpb < unigram ? "yes" : "no") << "\n";
}

template <typename T>
void cmd_decode(const RunConfig& c, const Options& o, std::ostream& out) {
  const auto state = restored_state<T>(c, o.checkpoint);
  const std::string prompt = o.prompt_set ? o.prompt : c.prompt;
  const long n = static_cast<long>(o.tokens == 0 ? c.decode_tokens : o.tokens);
  const auto result = mtp::draft_verify_decode(state.model, tokenize_bytes(prompt), n);

  const std::string stats_path = metrics_prefix(c) + ".decode.ndjson";
  std::filesystem::create_directories(std::filesystem::path(stats_path).parent_path());
  std::ofstream stats(stats_path);
  if (!stats) throw ConfigError("decode: cannot write '" + stats_path + "'");
  for (const auto& s : result.steps) {
    nlohmann::ordered_json j;
    j["step"] = s.step;
    j["split"] = "decode";
    j["proposed"] = s.proposed;
    j["accepted"] = s.accepted;
    j["emitted"] = s.emitted;
    stats << j.dump() << '\n';
  }
  out << "prompt: " << nlohmann::json(prompt).dump() << "\n";
  out << "continuation: " << nlohmann::json(detokenize(result.tokens)).dump() << "\n";
  out << "passes: " << result.steps.size() << "\n";
  out << "drafts_proposed: " << result.total_proposed() << "\n";
  out << "drafts_accepted: " << result.total_accepted() << "\n";
  out << "accept_rate: " << std::setprecision(4) << std::fixed << result.accept_rate() << "\n";
  out << "step_stats: " << stats_path << "\n";
}

int cmd_gradcheck(const RunConfig& c, const Options& o, std::ostream& out) {
  const std::size_t L = std::min(o.gc_seq_len, c.train.seq_len);
  const auto rows = gradcheck_suite(c.model, L, o.gc_batch, c.gradcheck_entries, c.train.seed);
  out << "gradcheck: double precision, batch " << o.gc_batch << ", seq_len " << L << ", "
      << (c.gradcheck_entries == 0 ? std::string("all") : std::to_string(c.gradcheck_entries))
      << " entries per tensor\n";
  out << std::left << std::setw(22) << "module" << std::setw(9) << "tensors" << std::setw(9)
      << "entries" << "max_rel_err\n";
  double worst = 0.0;
  for (const auto& r : rows) {
    out << std::left << std::setw(22) << r.module << std::setw(9) << r.tensors << std::setw(9)
        << r.entries << std::scientific << std::setprecision(3) << r.max_rel_err << "\n"
        << std::defaultfloat;
    worst = std::max(worst, r.max_rel_err);
  }
  const bool ok = worst < 1e-5;
  out << "max over modules: " << std::scientific << std::setprecision(3) << worst
      << (ok ? " (< 1e-5)" : " (>= 1e-5, FAILED)") << "\n"
      << std::defaultfloat;
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale dense-residual TransformerX language model toolkit", "dxlm"};
  app.require_subcommand(1);
  Options o;

  auto common = [&o](CLI::App* sub) {
    sub->add_option("-c,--config", o.config_path, "key=value configuration file")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("overrides", o.overrides, "key=value overrides applied after the file");
  };
  auto* train = app.add_subcommand("train", "train a model, writing metrics and checkpoints");
  common(train);
  auto* eval = app.add_subcommand("eval", "held-out loss, perplexity and bits per byte");
  common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint (default <out_dir>/<run_name>.ckpt)");
  eval->add_option("--data", o.data, "file to evaluate (default: held-out split of corpus)");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check per module");
  common(gradcheck);
  gradcheck->add_option("--seq-len", o.gc_seq_len, "sequence length of the probe batch");
  gradcheck->add_option("--batch", o.gc_batch, "rows in the probe batch");
  auto* ablate_cmd = app.add_subcommand("ablate", "train every cell of an ablation grid");
  common(ablate_cmd);
  ablate_cmd->add_option("--grid", o.grid, "axes: residual, activation, mtpim, conv or all");
  auto* decode = app.add_subcommand("decode", "draft-verify decoding from a prompt");
  common(decode);
  decode->add_option("--checkpoint", o.checkpoint, "checkpoint (default <out_dir>/<run_name>.ckpt)");
  auto* prompt_opt = decode->add_option("--prompt", o.prompt, "prompt text");
  decode->add_option("--tokens", o.tokens, "tokens to generate (default decode_tokens)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitConfig;
  }
  o.prompt_set = prompt_opt->count() > 0;

  try {
    const RunConfig c = effective_config(o);
    echo_config(c, out);
    tune_allocator();
    set_threads(c.threads);
    if (train->parsed()) {
      run_training(c);
      out << "metrics: " << metrics_prefix(c) << ".ndjson\n";
      out << "checkpoint: " << checkpoint_path(c) << "\n";
    } else if (eval->parsed()) {
      c.precision == Precision::Single ? cmd_eval<float>(c, o, out) : cmd_eval<double>(c, o, out);
    } else if (gradcheck->parsed()) {
      return cmd_gradcheck(c, o, out);
    } else if (ablate_cmd->parsed()) {
      const auto result = harness::ablate(c, parse_grid(o.grid));
      for (const auto& cell : result.cells) out << "cell: " << cell.metrics_path << "\n";
      out << result.summary;
      out << "summary: " << result.summary_path << "\n";
    } else if (decode->parsed()) {
      c.precision == Precision::Single ? cmd_decode<float>(c, o, out)
                                       : cmd_decode<double>(c, o, out);
    }
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DeterminismError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}

}  // namespace dxlm::cli
