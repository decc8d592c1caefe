#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dxlm/harness/config.hpp"
#include "dxlm/harness/optim.hpp"
#include "dxlm/mtpim/model.hpp"
#include "dxlm/numcore/rng.hpp"

namespace dxlm::harness {

// Everything a training run needs to continue bit-identically.
template <typename T>
struct TrainState {
  mtp::LanguageModel<T> model;
  AdamState<T> adam;
  Rng data_rng;
  std::size_t step = 0;  // next step to run
  std::size_t tokens_seen = 0;

  // Model init from `seed`, data sampling from a generator derived from it.
  static TrainState make(const RunConfig& c);
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ManifestEntry {
  std::string name;
  Shape shape;
};

struct CheckpointHeader {
  std::uint32_t version = 0;
  Precision precision = Precision::Single;
  std::string config_text;
  std::uint64_t step = 0;
  std::uint64_t tokens_seen = 0;
  std::uint64_t adam_t = 0;
  std::string rng_state;
  std::vector<ManifestEntry> manifest;  // parameters, then adam.m.*, then adam.v.*
};

// Layout: "DXLMCKPT", u32 version, u32 bytes per value, then the header
// fields and manifest, then the raw little-endian values of every manifest
// tensor in order. The file is written to a temporary name and renamed.
template <typename T>
void save_checkpoint(const std::string& path, const TrainState<T>& state, const RunConfig& c);

CheckpointHeader read_checkpoint_header(const std::string& path);

// Restores `state` (already built from the same model config). Throws
// CheckpointError when the magic, version, precision or manifest disagree.
template <typename T>
void load_checkpoint(const std::string& path, TrainState<T>& state);

}  // namespace dxlm::harness
