#include "dxlm/harness/metrics.hpp"

#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "dxlm/numcore/errors.hpp"

namespace dxlm::harness {

using ordered_json = nlohmann::ordered_json;

std::string to_ndjson(const MetricsRow& row) {
  ordered_json j;
  j["step"] = row.step;
  j["split"] = row.split;
  j["loss_total"] = row.loss_total;
  j["loss_main"] = row.loss_main;
  j["loss_mpt"] = row.loss_mpt;
  j["lr"] = row.lr;
  j["grad_norm"] = row.grad_norm;
  j["tokens_seen"] = row.tokens_seen;
  j["wall_ms"] = row.wall_ms;
  return j.dump();
}

MetricsRow from_ndjson(const std::string& line) {
  MetricsRow row;
  try {
    const auto j = ordered_json::parse(line);
    row.step = j.at("step").get<std::size_t>();
    row.split = j.at("split").get<std::string>();
    row.loss_total = j.at("loss_total").get<double>();
    row.loss_main = j.at("loss_main").get<double>();
    row.loss_mpt = j.at("loss_mpt").get<std::vector<double>>();
    row.lr = j.at("lr").get<double>();
    row.grad_norm = j.at("grad_norm").get<double>();
    row.tokens_seen = j.at("tokens_seen").get<std::size_t>();
    row.wall_ms = j.at("wall_ms").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("metrics: malformed row: ") + e.what());
  }
  return row;
}

std::vector<MetricsRow> read_ndjson(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("metrics: cannot open '" + path + "'");
  std::vector<MetricsRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(from_ndjson(line));
  }
  return rows;
}

std::string csv_header(std::size_t n_depths) {
  std::string h = "step,split,loss_total,loss_main";
  for (std::size_t j = 1; j <= n_depths; ++j) h += ",loss_mpt_" + std::to_string(j);
  return h + ",lr,grad_norm,tokens_seen,wall_ms";
}

std::string to_csv(const MetricsRow& row) {
  // Reuse the JSON number formatting (shortest round-trip representation).
  auto num = [](double v) { return ordered_json(v).dump(); };
  std::string s = std::to_string(row.step) + "," + row.split + "," + num(row.loss_total) + "," +
                  num(row.loss_main);
  for (double v : row.loss_mpt) s += "," + num(v);
  return s + "," + num(row.lr) + "," + num(row.grad_norm) + "," +
         std::to_string(row.tokens_seen) + "," + num(row.wall_ms);
}

FileSink::FileSink(const std::string& prefix, std::size_t n_depths, bool with_csv, bool append)
    : with_csv_(with_csv) {
  const auto parent = std::filesystem::path(prefix).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const auto mode = append ? std::ios::app : std::ios::trunc;
  ndjson_.open(prefix + ".ndjson", std::ios::out | mode);
  if (!ndjson_) throw ConfigError("metrics: cannot write '" + prefix + ".ndjson'");
  if (with_csv_) {
    const bool fresh = !append || !std::filesystem::exists(prefix + ".csv");
    csv_.open(prefix + ".csv", std::ios::out | mode);
    if (!csv_) throw ConfigError("metrics: cannot write '" + prefix + ".csv'");
    if (fresh) csv_ << csv_header(n_depths) << '\n';
  }
}

void FileSink::write(const MetricsRow& row) {
  ndjson_ << to_ndjson(row) << '\n';
  ndjson_.flush();
  if (with_csv_) {
    csv_ << to_csv(row) << '\n';
    csv_.flush();
  }
}

bool same_except_wall(const MetricsRow& a, const MetricsRow& b) {
  return a.step == b.step && a.split == b.split && a.loss_total == b.loss_total &&
         a.loss_main == b.loss_main && a.loss_mpt == b.loss_mpt && a.lr == b.lr &&
         a.grad_norm == b.grad_norm && a.tokens_seen == b.tokens_seen;
}

}  // namespace dxlm::harness
