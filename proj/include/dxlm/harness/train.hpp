#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dxlm/harness/checkpoint.hpp"
#include "dxlm/harness/config.hpp"
#include "dxlm/harness/data.hpp"
#include "dxlm/harness/metrics.hpp"

namespace dxlm::harness {

// Large-block allocator settings for the training loop: keeps freed tensor
// buffers in the heap instead of returning them to the OS every step.
void tune_allocator();

// Sets the OpenMP team size when n > 0. Results do not depend on it.
void set_threads(int n);

Corpus load_corpus(const RunConfig& c);

struct EvalResult {
  double loss = 0.0;  // mean next-token cross-entropy, nats
  double perplexity = 0.0;
  double bpb = 0.0;
  std::size_t tokens = 0;
};

// Main-head loss over non-overlapping windows of `ids`.
template <typename T>
EvalResult evaluate(const mtp::LanguageModel<T>& model, const std::vector<std::int32_t>& ids,
                    std::size_t batch, std::size_t seq_len, std::size_t max_batches);

struct TrainOptions {
  std::size_t stop_at = 0;  // run steps [state.step, stop_at); 0 means total_steps
  std::string checkpoint_path;  // empty disables checkpoints
  bool evaluate = true;
};

// Deterministic loop from state.step: sample, forward, joint loss, backward,
// clip, AdamW. One "train" row per step; "heldout" rows (main-head loss, step
// = number of completed updates) every eval_every steps and after the last
// one. A non-finite loss or gradient saves the pre-step state to
// <checkpoint_path>.last_good (when a path is set) and rethrows NumericError.
template <typename T>
void train(TrainState<T>& state, const RunConfig& c, const Corpus& corpus, MetricsSink* sink,
           const TrainOptions& options = {});

std::string checkpoint_path(const RunConfig& c);
std::string metrics_prefix(const RunConfig& c);

// Full run as the CLI performs it: resume when configured, write metrics
// under out_dir, checkpoint on cadence. Dispatches on c.precision.
void run_training(const RunConfig& c, MetricsSink* extra_sink = nullptr);

// Ablation axes; an empty axis keeps the base configuration's value.
struct AblationGrid {
  std::vector<dense::ResidualStrategy> residual;
  std::vector<bool> eswish;
  std::vector<bool> mtpim;
  std::vector<bool> conv;
};

// Comma-separated axis names from {residual, activation, mtpim, conv}, or
// "all" for every axis; each named axis takes all of its values.
AblationGrid parse_grid(const std::string& spec);

struct CellResult {
  std::string name;
  RunConfig config;
  std::string metrics_path;
  double step0_loss = 0.0;
  double final_train_loss = 0.0;
  double heldout_bpb = 0.0;
};

struct AblationResult {
  std::vector<CellResult> cells;
  std::string summary;  // markdown table
  std::string summary_path;
};

// Runs every cell with the base seed and data, one NDJSON metrics file per
// cell under out_dir, plus summary.md. Swish cells are checked to end with
// every slope still exactly 1.
AblationResult ablate(const RunConfig& base, const AblationGrid& grid);

struct ModuleError {
  std::string module;
  double max_rel_err = 0.0;
  std::size_t tensors = 0;
  std::size_t entries = 0;
};

// Module group of a parameter name, e.g. "ldrscm.alpha" or "mtpim.cross_attn".
std::string module_of(const std::string& param_name);

// Finite-difference check of the joint loss in double precision over every
// parameter tensor of `model`, grouped by module. `entries_per_tensor` = 0
// checks every entry.
std::vector<ModuleError> gradcheck_suite(const mtp::ModelConfig& model, std::size_t seq_len,
                                         std::size_t batch, std::size_t entries_per_tensor,
                                         std::uint64_t seed);

}  // namespace dxlm::harness
