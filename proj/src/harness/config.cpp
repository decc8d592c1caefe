#include "dxlm/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "dxlm/harness/data.hpp"

namespace dxlm::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  if (trim(s).empty()) return parts;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) parts.push_back(trim(item));
  return parts;
}

// Shortest representation that parses back to the same double.
std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Entry {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Field>
Entry size_entry(std::string key, Field field) {
  return {key, [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); },
          [field, key](RunConfig& c, const std::string& v) { field(c) = parse_size(key, v); }};
}

template <typename Field>
Entry real_entry(std::string key, Field field) {
  return {key, [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); },
          [field, key](RunConfig& c, const std::string& v) { field(c) = parse_double(key, v); }};
}

template <typename Field>
Entry bool_entry(std::string key, Field field) {
  return {key, [field](const RunConfig& c) { return fmt_bool(field(const_cast<RunConfig&>(c))); },
          [field, key](RunConfig& c, const std::string& v) { field(c) = parse_bool(key, v); }};
}

template <typename Field>
Entry text_entry(std::string key, Field field) {
  return {key, [field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)); },
          [field](RunConfig& c, const std::string& v) { field(c) = v; }};
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    // model
    e.push_back(size_entry("vocab", [](RunConfig& c) -> auto& { return c.model.vocab; }));
    e.push_back(size_entry("max_seq_len", [](RunConfig& c) -> auto& { return c.model.max_seq_len; }));
    e.push_back(size_entry("n_layers", [](RunConfig& c) -> auto& { return c.model.n_layers; }));
    e.push_back(size_entry("d_model", [](RunConfig& c) -> auto& { return c.model.block.d_model; }));
    e.push_back(size_entry("n_heads", [](RunConfig& c) -> auto& { return c.model.block.n_heads; }));
    e.push_back(size_entry("ffn_mult", [](RunConfig& c) -> auto& { return c.model.block.ffn_mult; }));
    e.push_back(
        size_entry("fusion_mult", [](RunConfig& c) -> auto& { return c.model.block.fusion_mult; }));
    e.push_back({"kernels",
                 [](const RunConfig& c) {
                   std::string s;
                   for (auto k : c.model.block.kernels) s += (s.empty() ? "" : ",") + std::to_string(k);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<std::size_t> ks;
                   for (const auto& p : split(v, ',')) ks.push_back(parse_size("kernels", p));
                   c.model.block.kernels = ks;
                 }});
    e.push_back(bool_entry("conv", [](RunConfig& c) -> auto& { return c.model.block.conv_enabled; }));
    e.push_back({"activation",
                 [](const RunConfig& c) {
                   return std::string(c.model.block.learnable_beta ? "eswish" : "swish");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "eswish") c.model.block.learnable_beta = true;
                   else if (v == "swish") c.model.block.learnable_beta = false;
                   else throw ConfigError("config: 'activation' expects eswish or swish, got '" + v + "'");
                 }});
    e.push_back(
        bool_entry("small_first", [](RunConfig& c) -> auto& { return c.model.block.small_first; }));
    e.push_back({"residual",
                 [](const RunConfig& c) { return dense::to_string(c.model.residual); },
                 [](RunConfig& c, const std::string& v) { c.model.residual = dense::parse_strategy(v); }});
    e.push_back(size_entry("n_depths", [](RunConfig& c) -> auto& { return c.model.n_depths; }));
    e.push_back({"gammas",
                 [](const RunConfig& c) {
                   std::string s;
                   for (double g : c.model.gammas) s += (s.empty() ? "" : ",") + fmt(g);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<double> gs;
                   for (const auto& p : split(v, ',')) gs.push_back(parse_double("gammas", p));
                   c.model.gammas = gs;
                 }});
    e.push_back(real_entry("lambda_mpt", [](RunConfig& c) -> auto& { return c.model.lambda_mpt; }));
    e.push_back(
        bool_entry("tie_main_head", [](RunConfig& c) -> auto& { return c.model.tie_main_head; }));
    e.push_back(real_entry("init_std", [](RunConfig& c) -> auto& { return c.model.init_std; }));
    // optimisation
    e.push_back(real_entry("adam_beta1", [](RunConfig& c) -> auto& { return c.train.adam_beta1; }));
    e.push_back(real_entry("adam_beta2", [](RunConfig& c) -> auto& { return c.train.adam_beta2; }));
    e.push_back(real_entry("adam_eps", [](RunConfig& c) -> auto& { return c.train.adam_eps; }));
    e.push_back(real_entry("weight_decay", [](RunConfig& c) -> auto& { return c.train.weight_decay; }));
    e.push_back(real_entry("clip_norm", [](RunConfig& c) -> auto& { return c.train.clip_norm; }));
    e.push_back(real_entry("peak_lr", [](RunConfig& c) -> auto& { return c.train.peak_lr; }));
    e.push_back(real_entry("final_lr", [](RunConfig& c) -> auto& { return c.train.final_lr; }));
    e.push_back(real_entry("tail_lr", [](RunConfig& c) -> auto& { return c.train.tail_lr; }));
    e.push_back({"schedule",
                 [](const RunConfig& c) { return std::string(c.auto_schedule ? "auto" : "manual"); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "auto") c.auto_schedule = true;
                   else if (v == "manual") c.auto_schedule = false;
                   else throw ConfigError("config: 'schedule' expects auto or manual, got '" + v + "'");
                 }});
    e.push_back(size_entry("warmup_steps", [](RunConfig& c) -> auto& { return c.train.warmup_steps; }));
    e.push_back(
        size_entry("constant_steps", [](RunConfig& c) -> auto& { return c.train.constant_steps; }));
    e.push_back(size_entry("decay_steps", [](RunConfig& c) -> auto& { return c.train.decay_steps; }));
    e.push_back(size_entry("tail_steps", [](RunConfig& c) -> auto& { return c.train.tail_steps; }));
    e.push_back({"batch_schedule",
                 [](const RunConfig& c) {
                   std::string s;
                   for (const auto& [step, size] : c.train.batch_schedule) {
                     s += (s.empty() ? "" : ",") + std::to_string(step) + ":" + std::to_string(size);
                   }
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<std::pair<std::size_t, std::size_t>> sched;
                   for (const auto& p : split(v, ',')) {
                     const auto colon = p.find(':');
                     if (colon == std::string::npos) {
                       // A bare number is a constant batch size.
                       sched.emplace_back(0, parse_size("batch_schedule", p));
                     } else {
                       sched.emplace_back(parse_size("batch_schedule", trim(p.substr(0, colon))),
                                          parse_size("batch_schedule", trim(p.substr(colon + 1))));
                     }
                   }
                   c.train.batch_schedule = sched;
                 }});
    e.push_back(size_entry("seq_len", [](RunConfig& c) -> auto& { return c.train.seq_len; }));
    e.push_back(size_entry("total_steps", [](RunConfig& c) -> auto& { return c.train.total_steps; }));
    e.push_back({"seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
                 [](RunConfig& c, const std::string& v) { c.train.seed = parse_u64("seed", v); }});
    // run
    e.push_back({"precision", [](const RunConfig& c) { return to_string(c.precision); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "float") c.precision = Precision::Single;
                   else if (v == "double") c.precision = Precision::Double;
                   else throw ConfigError("config: 'precision' expects float or double, got '" + v + "'");
                 }});
    e.push_back(text_entry("corpus", [](RunConfig& c) -> auto& { return c.corpus; }));
    e.push_back(real_entry("heldout_fraction", [](RunConfig& c) -> auto& { return c.heldout_fraction; }));
    e.push_back(text_entry("out_dir", [](RunConfig& c) -> auto& { return c.out_dir; }));
    e.push_back(text_entry("run_name", [](RunConfig& c) -> auto& { return c.run_name; }));
    e.push_back(bool_entry("write_csv", [](RunConfig& c) -> auto& { return c.write_csv; }));
    e.push_back(size_entry("eval_every", [](RunConfig& c) -> auto& { return c.eval_every; }));
    e.push_back(size_entry("eval_batches", [](RunConfig& c) -> auto& { return c.eval_batches; }));
    e.push_back(size_entry("eval_batch_size", [](RunConfig& c) -> auto& { return c.eval_batch_size; }));
    e.push_back(size_entry("checkpoint_every", [](RunConfig& c) -> auto& { return c.checkpoint_every; }));
    e.push_back(text_entry("resume", [](RunConfig& c) -> auto& { return c.resume; }));
    e.push_back(text_entry("prompt", [](RunConfig& c) -> auto& { return c.prompt; }));
    e.push_back(size_entry("decode_tokens", [](RunConfig& c) -> auto& { return c.decode_tokens; }));
    e.push_back(
        size_entry("gradcheck_entries", [](RunConfig& c) -> auto& { return c.gradcheck_entries; }));
    e.push_back({"threads", [](const RunConfig& c) { return std::to_string(c.threads); },
                 [](RunConfig& c, const std::string& v) {
                   c.threads = static_cast<int>(parse_size("threads", v));
                 }});
    return e;
  }();
  return entries;
}

const Entry& lookup(const std::string& key) {
  for (const auto& e : registry()) {
    if (e.key == key) return e;
  }
  std::string valid;
  for (const auto& k : config_keys()) valid += (valid.empty() ? "" : ", ") + k;
  throw ConfigError("config: unknown key '" + key + "'; valid keys: " + valid);
}

}  // namespace

std::string to_string(Precision p) { return p == Precision::Single ? "float" : "double"; }

RunConfig desk_config() {
  RunConfig c;
  c.model.vocab = kByteVocab;
  c.model.max_seq_len = 128;
  c.model.n_layers = 4;
  c.model.block.d_model = 128;
  c.model.block.n_heads = 4;
  c.model.block.ffn_mult = 4;
  c.model.block.kernels = {3, 15};
  c.model.n_depths = 2;
  c.train.seq_len = 128;
  c.train.total_steps = 3000;
  c.train.batch_schedule = {{0, 16}};
  finalize(c);
  return c;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& e : registry()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void set_key(RunConfig& c, const std::string& key, const std::string& value) {
  lookup(key).set(c, value);
}

std::string get_key(const RunConfig& c, const std::string& key) { return lookup(key).get(c); }

void apply_assignment(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("config: expected key=value, got '" + assignment + "'");
  }
  set_key(c, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void parse_config_text(RunConfig& c, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    try {
      apply_assignment(c, t);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  parse_config_text(c, ss.str());
}

void finalize(RunConfig& c) {
  if (c.auto_schedule) apply_schedule_proportions(c.train);
  mtp::validate(c.model);
  validate(c.train);
  if (c.train.seq_len > c.model.max_seq_len) {
    throw ConfigError("config: seq_len " + std::to_string(c.train.seq_len) +
                      " exceeds max_seq_len " + std::to_string(c.model.max_seq_len));
  }
  if (c.model.n_depths > kSampleReserve) {
    throw ConfigError("config: n_depths above " + std::to_string(kSampleReserve) +
                      " is not supported by the batch sampler");
  }
  if (!(c.heldout_fraction > 0.0 && c.heldout_fraction < 1.0)) {
    throw ConfigError("config: heldout_fraction must lie in (0, 1)");
  }
  if (c.eval_batch_size == 0) throw ConfigError("config: eval_batch_size must be >= 1");
  if (c.run_name.empty()) throw ConfigError("config: run_name must not be empty");
}

std::string to_text(const RunConfig& c) {
  std::string out;
  for (const auto& e : registry()) out += e.key + "=" + e.get(c) + "\n";
  return out;
}

}  // namespace dxlm::harness
