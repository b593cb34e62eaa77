#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ebmflow/errors.hpp"

namespace ebmflow::io {

struct MetricRow {
  long iteration = 0;
  std::string name;
  double value = 0.0;
};

// Append-only run log, written as CSV (iteration, metric, value). Rows keep
// insertion order so reruns with the same seed produce byte-identical files.
class MetricLog {
 public:
  void add(long iteration, std::string name, double value) {
    rows_.push_back({iteration, std::move(name), value});
  }

  const std::vector<MetricRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }

  std::vector<std::pair<long, double>> series(const std::string& name) const {
    std::vector<std::pair<long, double>> out;
    for (const auto& r : rows_)
      if (r.name == name) out.emplace_back(r.iteration, r.value);
    return out;
  }

  bool has_metric(const std::string& name) const {
    for (const auto& r : rows_)
      if (r.name == name) return true;
    return false;
  }

  void write_csv(const std::string& path) const;
  static MetricLog read_csv(const std::string& path);

 private:
  std::vector<MetricRow> rows_;
};

// Round-trip-exact formatting used by every data artifact.
std::string format_double(double v);

}  // namespace ebmflow::io
