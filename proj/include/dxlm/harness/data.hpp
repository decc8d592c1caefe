#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dxlm/mtpim/mtpim.hpp"
#include "dxlm/numcore/rng.hpp"

namespace dxlm::harness {

inline constexpr std::int32_t kPadId = 256;
inline constexpr std::size_t kByteVocab = 257;

// Byte b maps to id b.
std::vector<std::int32_t> tokenize_bytes(std::string_view text);
// Inverse of tokenize_bytes; the pad id is dropped, other ids > 255 throw.
std::string detokenize(const std::vector<std::int32_t>& ids);

std::string read_file(const std::string& path);

struct Corpus {
  std::vector<std::int32_t> train;
  std::vector<std::int32_t> heldout;
};

// The trailing `heldout_fraction` of the stream is held out.
Corpus split_corpus(const std::vector<std::int32_t>& ids, double heldout_fraction);

// Empirical entropy (bits per byte) of the byte distribution of `ids`.
double unigram_entropy_bits(const std::vector<std::int32_t>& ids);

// Window starts leave this many spare tokens past seq_len + 1 so the sampled
// positions do not depend on the number of prediction depths up to this value.
inline constexpr std::size_t kSampleReserve = 8;

// Uniformly placed windows of seq_len + n_depths + 1 tokens.
mtp::MtpimBatch sample_batch(const std::vector<std::int32_t>& ids, std::size_t batch,
                             std::size_t seq_len, std::size_t n_depths, Rng& rng);

// Non-overlapping evaluation windows of seq_len + 1 tokens, in order,
// grouped into batches. `max_batches` = 0 keeps every window.
std::vector<mtp::MtpimBatch> eval_batches(const std::vector<std::int32_t>& ids,
                                          std::size_t batch, std::size_t seq_len,
                                          std::size_t max_batches);

}  // namespace dxlm::harness
