#include "dxlm/harness/data.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dxlm::harness {

std::vector<std::int32_t> tokenize_bytes(std::string_view text) {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<std::int32_t>(static_cast<unsigned char>(c)));
  return ids;
}

std::string detokenize(const std::vector<std::int32_t>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == kPadId) continue;
    if (ids[i] < 0 || ids[i] > 255) {
      throw VocabularyError("detokenize: id " + std::to_string(ids[i]) + " at position " +
                            std::to_string(i) + " is not a byte");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(ids[i])));
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Corpus split_corpus(const std::vector<std::int32_t>& ids, double heldout_fraction) {
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
    throw ConfigError("heldout_fraction must lie in (0, 1)");
  }
  const auto n_held = static_cast<std::size_t>(std::llround(ids.size() * heldout_fraction));
  const std::size_t cut = ids.size() - n_held;
  return {std::vector<std::int32_t>(ids.begin(), ids.begin() + static_cast<long>(cut)),
          std::vector<std::int32_t>(ids.begin() + static_cast<long>(cut), ids.end())};
}

double unigram_entropy_bits(const std::vector<std::int32_t>& ids) {
  if (ids.empty()) return 0.0;
  std::array<std::size_t, kByteVocab> counts{};
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= kByteVocab) {
      throw VocabularyError("unigram_entropy_bits: id " + std::to_string(id));
    }
    ++counts[static_cast<std::size_t>(id)];
  }
  double h = 0.0;
  const double n = static_cast<double>(ids.size());
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

mtp::MtpimBatch sample_batch(const std::vector<std::int32_t>& ids, std::size_t batch,
                             std::size_t seq_len, std::size_t n_depths, Rng& rng) {
  const std::size_t width = seq_len + n_depths + 1;
  const std::size_t span = seq_len + 1 + std::max(kSampleReserve, n_depths);
  if (ids.size() < span) {
    throw ConfigError("corpus of " + std::to_string(ids.size()) + " tokens is shorter than one " +
                      std::to_string(span) + "-token training window");
  }
  std::vector<std::int32_t> tokens;
  tokens.reserve(batch * width);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t start = rng.below(ids.size() - span + 1);
    tokens.insert(tokens.end(), ids.begin() + static_cast<long>(start),
                  ids.begin() + static_cast<long>(start + width));
  }
  return {TokenIds(batch, width, std::move(tokens)), seq_len};
}

std::vector<mtp::MtpimBatch> eval_batches(const std::vector<std::int32_t>& ids,
                                          std::size_t batch, std::size_t seq_len,
                                          std::size_t max_batches) {
  const std::size_t width = seq_len + 1;
  const std::size_t windows = ids.size() / width;
  if (windows == 0) {
    throw ConfigError("held-out split of " + std::to_string(ids.size()) +
                      " tokens is shorter than one evaluation window");
  }
  std::vector<mtp::MtpimBatch> out;
  for (std::size_t w = 0; w < windows; w += batch) {
    if (max_batches != 0 && out.size() == max_batches) break;
    const std::size_t rows = std::min(batch, windows - w);
    std::vector<std::int32_t> tokens(ids.begin() + static_cast<long>(w * width),
                                     ids.begin() + static_cast<long>((w + rows) * width));
    out.push_back({TokenIds(rows, width, std::move(tokens)), seq_len});
  }
  return out;
}

}  // namespace dxlm::harness
