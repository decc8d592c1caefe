#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dxlm/harness/optim.hpp"
#include "dxlm/mtpim/model.hpp"

namespace dxlm::harness {

struct RunConfig {
  mtp::ModelConfig model;
  TrainConfig train;
  Precision precision = Precision::Single;
  bool auto_schedule = true;  // phase lengths follow total_steps

  std::string corpus = "data/kjv_1mb.txt";
  double heldout_fraction = 0.1;
  std::string out_dir = "runs";
  std::string run_name = "run";
  bool write_csv = true;

  std::size_t eval_every = 0;  // 0: only after the last step
  std::size_t eval_batches = 0;  // 0: the whole held-out split
  std::size_t eval_batch_size = 16;
  std::size_t checkpoint_every = 0;  // 0: only at the end
  std::string resume;  // checkpoint path to continue from

  std::string prompt = "In the beginning";
  std::size_t decode_tokens = 64;
  std::size_t gradcheck_entries = 6;  // sampled entries per tensor, 0 = all
  int threads = 0;  // 0 leaves the OpenMP default
};

// Desk-scale defaults: 4 layers, d_model 128, 4 heads, kernels {3, 15},
// two prediction depths, L = 128, batch 16, 3000 steps.
RunConfig desk_config();

// Every accepted key, in the order to_text prints them.
const std::vector<std::string>& config_keys();

// Throws ConfigError for unknown keys (listing every valid key) and for
// values that do not parse.
void set_key(RunConfig& c, const std::string& key, const std::string& value);
std::string get_key(const RunConfig& c, const std::string& key);

// "key=value" assignment; blank lines and '#' comments are skipped by
// parse_config_text.
void apply_assignment(RunConfig& c, const std::string& assignment);
void parse_config_text(RunConfig& c, const std::string& text);
void load_config_file(RunConfig& c, const std::string& path);

// Recomputes derived fields (auto schedule phases) and validates everything.
void finalize(RunConfig& c);

// One "key=value" line per key with all defaults materialized. Parsing the
// output with parse_config_text reproduces the same configuration.
std::string to_text(const RunConfig& c);

std::string to_string(Precision p);

}  // namespace dxlm::harness
