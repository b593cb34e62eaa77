#include "ebmflow/trace_csv.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "ebmflow/metric_log.hpp"

namespace ebmflow::io {

void write_trace_csv(const std::string& path, const Eigen::MatrixXd& initial,
                     const std::vector<Eigen::MatrixXd>& steps) {
  std::ofstream out(path);
  if (!out) throw InputError("trace: cannot open '" + path + "' for writing");
  const int d = static_cast<int>(initial.cols());
  out << "chain_id,step";
  for (int j = 0; j < d; ++j) out << ",x_" << j;
  out << ",accepted\n";
  const Eigen::MatrixXd* prev = &initial;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const Eigen::MatrixXd& cur = steps[t];
    for (Eigen::Index c = 0; c < cur.rows(); ++c) {
      out << c << ',' << (t + 1);
      for (int j = 0; j < d; ++j) out << ',' << format_double(cur(c, j));
      const bool moved = (cur.row(c) != prev->row(c));
      out << ',' << (moved ? 1 : 0) << '\n';
    }
    prev = &cur;
  }
}

TraceData read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("trace: cannot open '" + path + "'");
  std::string header;
  if (!std::getline(in, header)) throw InputError("trace: empty file '" + path + "'");
  std::stringstream hs(header);
  std::vector<std::string> cols;
  std::string col;
  while (std::getline(hs, col, ',')) cols.push_back(col);
  if (cols.size() < 4 || cols[0] != "chain_id" || cols[1] != "step" || cols.back() != "accepted")
    throw InputError("trace: '" + path + "' does not look like a sampler trace CSV");
  const int d = static_cast<int>(cols.size()) - 3;

  std::map<long, std::map<long, Eigen::VectorXd>> by_step;  // step -> chain -> state
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');
    const long chain = std::stol(tok);
    std::getline(ss, tok, ',');
    const long step = std::stol(tok);
    Eigen::VectorXd x(d);
    for (int j = 0; j < d; ++j) {
      if (!std::getline(ss, tok, ',')) throw InputError("trace: malformed row '" + line + "'");
      x[j] = std::stod(tok);
    }
    by_step[step][chain] = x;
  }

  TraceData data;
  data.dim = d;
  if (by_step.empty()) {
    data.all_rows.resize(0, d);
    return data;
  }
  data.n_chains = static_cast<int>(by_step.begin()->second.size());
  long total = 0;
  for (const auto& [step, chains] : by_step) {
    if (static_cast<int>(chains.size()) != data.n_chains)
      throw InputError("trace: step " + std::to_string(step) + " has an inconsistent chain count");
    Eigen::MatrixXd snap(data.n_chains, d);
    int r = 0;
    for (const auto& [chain, x] : chains) snap.row(r++) = x.transpose();
    data.steps.push_back(std::move(snap));
    total += data.n_chains;
  }
  data.all_rows.resize(total, d);
  Eigen::Index off = 0;
  for (const auto& snap : data.steps) {
    data.all_rows.middleRows(off, snap.rows()) = snap;
    off += snap.rows();
  }
  return data;
}

}  // namespace ebmflow::io
