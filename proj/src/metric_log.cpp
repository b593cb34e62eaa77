#include "ebmflow/metric_log.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace ebmflow::io {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void MetricLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("MetricLog: cannot open '" + path + "' for writing");
  out << "iteration,metric,value\n";
  for (const auto& r : rows_) out << r.iteration << ',' << r.name << ',' << format_double(r.value) << '\n';
}

MetricLog MetricLog::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("MetricLog: cannot open '" + path + "'");
  MetricLog log;
  std::string line;
  if (!std::getline(in, line)) throw InputError("MetricLog: empty file '" + path + "'");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string it, name, value;
    if (!std::getline(ss, it, ',') || !std::getline(ss, name, ',') || !std::getline(ss, value))
      throw InputError("MetricLog: malformed row '" + line + "'");
    log.add(std::stol(it), name, std::stod(value));
  }
  return log;
}

}  // namespace ebmflow::io
