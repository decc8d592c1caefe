#include "dxlm/harness/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace dxlm::harness {

namespace {

constexpr char kMagic[8] = {'D', 'X', 'L', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint64_t kDataSeedMix = 0x9E3779B97F4A7C15ull;

template <typename V>
void put(std::ostream& out, V v) {
  static_assert(std::is_trivially_copyable_v<V>);
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(V));
  out.write(buf, sizeof(V));
}

template <typename V>
V take(std::istream& in) {
  char buf[sizeof(V)];
  if (!in.read(buf, sizeof(V))) throw CheckpointError("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(V));
  V v;
  std::memcpy(&v, buf, sizeof(V));
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& in) {
  const auto n = take<std::uint64_t>(in);
  if (n > (std::uint64_t{1} << 32)) throw CheckpointError("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw CheckpointError("checkpoint: truncated file");
  }
  return s;
}

template <typename T>
void put_values(std::ostream& out, std::span<const T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(T)));
  } else {
    for (T v : values) put<T>(out, v);
  }
}

template <typename T>
void take_values(std::istream& in, std::span<T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(T)))) {
      throw CheckpointError("checkpoint: truncated tensor data");
    }
  } else {
    for (T& v : values) v = take<T>(in);
  }
}

std::string shape_text(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

template <typename T>
std::vector<ManifestEntry> manifest_for(const nn::ParamList<T>& params) {
  std::vector<ManifestEntry> m;
  for (const auto& p : params) m.push_back({p.name, p.tensor.shape()});
  for (const auto& p : params) m.push_back({"adam.m." + p.name, p.tensor.shape()});
  for (const auto& p : params) m.push_back({"adam.v." + p.name, p.tensor.shape()});
  return m;
}

CheckpointHeader read_header(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw CheckpointError("checkpoint: bad magic, not a checkpoint file");
  }
  CheckpointHeader h;
  h.version = take<std::uint32_t>(in);
  if (h.version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: version " + std::to_string(h.version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  const auto width = take<std::uint32_t>(in);
  if (width == 4) h.precision = Precision::Single;
  else if (width == 8) h.precision = Precision::Double;
  else throw CheckpointError("checkpoint: unsupported value width " + std::to_string(width));
  h.config_text = take_string(in);
  h.step = take<std::uint64_t>(in);
  h.tokens_seen = take<std::uint64_t>(in);
  h.adam_t = take<std::uint64_t>(in);
  h.rng_state = take_string(in);
  const auto n = take<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    ManifestEntry e;
    e.name = take_string(in);
    const auto rank = take<std::uint64_t>(in);
    if (rank > 8) throw CheckpointError("checkpoint: implausible rank for '" + e.name + "'");
    for (std::uint64_t r = 0; r < rank; ++r) e.shape.push_back(take<std::uint64_t>(in));
    h.manifest.push_back(std::move(e));
  }
  return h;
}

}  // namespace

template <typename T>
TrainState<T> TrainState<T>::make(const RunConfig& c) {
  Rng init(c.train.seed);
  TrainState s{mtp::LanguageModel<T>::make(c.model, init), {}, Rng(c.train.seed ^ kDataSeedMix)};
  s.adam = AdamState<T>::make(s.model.parameters());
  return s;
}

template <typename T>
void save_checkpoint(const std::string& path, const TrainState<T>& state, const RunConfig& c) {
  const auto params = state.model.parameters();
  if (state.adam.m.size() != params.size()) {
    throw ContractError("save_checkpoint: optimizer state does not match the model");
  }
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write '" + tmp + "'");
    out.write(kMagic, 8);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, sizeof(T));
    put_string(out, to_text(c));
    put<std::uint64_t>(out, state.step);
    put<std::uint64_t>(out, state.tokens_seen);
    put<std::uint64_t>(out, state.adam.t);
    put_string(out, state.data_rng.state());
    const auto manifest = manifest_for(params);
    put<std::uint64_t>(out, manifest.size());
    for (const auto& e : manifest) {
      put_string(out, e.name);
      put<std::uint64_t>(out, e.shape.size());
      for (auto d : e.shape) put<std::uint64_t>(out, d);
    }
    for (const auto& p : params) put_values<T>(out, p.tensor.data());
    for (const auto& m : state.adam.m) put_values<T>(out, std::span<const T>(m));
    for (const auto& v : state.adam.v) put_values<T>(out, std::span<const T>(v));
    if (!out.flush()) throw CheckpointError("checkpoint: write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  return read_header(in);
}

template <typename T>
void load_checkpoint(const std::string& path, TrainState<T>& state) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  const CheckpointHeader h = read_header(in);
  const Precision want = sizeof(T) == sizeof(float) ? Precision::Single : Precision::Double;
  if (h.precision != want) {
    throw CheckpointError("checkpoint: stored in " + to_string(h.precision) + " precision, run uses " +
                          to_string(want));
  }
  const auto params = state.model.parameters();
  const auto expected = manifest_for(params);
  if (h.manifest.size() != expected.size()) {
    throw CheckpointError("checkpoint: " + std::to_string(h.manifest.size()) +
                          " tensors stored, model config expects " + std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& got = h.manifest[i];
    const auto& exp = expected[i];
    if (got.name != exp.name || got.shape != exp.shape) {
      throw CheckpointError("checkpoint: tensor " + std::to_string(i) + " is '" + got.name + "' " +
                            shape_text(got.shape) + ", model config expects '" + exp.name + "' " +
                            shape_text(exp.shape));
    }
  }
  // Read everything before touching the model so a truncated file leaves it intact.
  std::vector<std::vector<T>> values;
  for (const auto& p : params) {
    values.emplace_back(p.tensor.numel());
    take_values<T>(in, std::span<T>(values.back()));
  }
  AdamState<T> adam = AdamState<T>::make(params);
  for (auto& m : adam.m) take_values<T>(in, std::span<T>(m));
  for (auto& v : adam.v) take_values<T>(in, std::span<T>(v));
  in.peek();
  if (!in.eof()) throw CheckpointError("checkpoint: trailing bytes after tensor data");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto t = params[i].tensor;
    std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
    t.zero_grad();
  }
  adam.t = h.adam_t;
  state.adam = std::move(adam);
  state.data_rng.restore(h.rng_state);
  state.step = h.step;
  state.tokens_seen = h.tokens_seen;
}

#define DXLM_INSTANTIATE_CHECKPOINT(T)                                                    \
  template struct TrainState<T>;                                                          \
  template void save_checkpoint(const std::string&, const TrainState<T>&, const RunConfig&); \
  template void load_checkpoint(const std::string&, TrainState<T>&);

DXLM_INSTANTIATE_CHECKPOINT(float)
DXLM_INSTANTIATE_CHECKPOINT(double)

}  // namespace dxlm::harness
