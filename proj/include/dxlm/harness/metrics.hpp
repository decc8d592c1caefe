#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace dxlm::harness {

struct MetricsRow {
  std::size_t step = 0;
  std::string split = "train";
  double loss_total = 0.0;
  double loss_main = 0.0;
  std::vector<double> loss_mpt;  // one entry per prediction depth
  double lr = 0.0;
  double grad_norm = 0.0;
  std::size_t tokens_seen = 0;
  double wall_ms = 0.0;
};

// One JSON object per line, keys in the field order above.
std::string to_ndjson(const MetricsRow& row);
MetricsRow from_ndjson(const std::string& line);
std::vector<MetricsRow> read_ndjson(const std::string& path);

std::string csv_header(std::size_t n_depths);
std::string to_csv(const MetricsRow& row);

// Receives rows as they are produced. `sink` may be null in MetricsSink users.
class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void write(const MetricsRow& row) = 0;
};

// Keeps every row in memory.
class MemorySink : public MetricsSink {
 public:
  void write(const MetricsRow& row) override { rows.push_back(row); }
  std::vector<MetricsRow> rows;
};

// <prefix>.ndjson plus, optionally, a <prefix>.csv mirror. Appends when
// `append` is set (resumed runs).
class FileSink : public MetricsSink {
 public:
  FileSink(const std::string& prefix, std::size_t n_depths, bool with_csv, bool append = false);
  void write(const MetricsRow& row) override;

 private:
  std::ofstream ndjson_;
  std::ofstream csv_;
  bool with_csv_;
};

// Forwards to several sinks.
class TeeSink : public MetricsSink {
 public:
  explicit TeeSink(std::vector<MetricsSink*> sinks) : sinks_(std::move(sinks)) {}
  void write(const MetricsRow& row) override {
    for (auto* s : sinks_) s->write(row);
  }

 private:
  std::vector<MetricsSink*> sinks_;
};

// Row equality ignoring wall-clock time.
bool same_except_wall(const MetricsRow& a, const MetricsRow& b);

}  // namespace dxlm::harness
