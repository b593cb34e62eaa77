#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "ebmflow/errors.hpp"

namespace ebmflow::io {

// Sampler trace: columns chain_id, step, x_0..x_{d-1}, accepted.
struct TraceData {
  int n_chains = 0;
  int dim = 0;
  std::vector<Eigen::MatrixXd> steps;  // one ensemble snapshot per step
  Eigen::MatrixXd all_rows;            // every state, stacked (for sample metrics)
};

// Writes one row per (chain, step); the accepted flag is 1 when the state
// moved relative to the previous step.
void write_trace_csv(const std::string& path, const Eigen::MatrixXd& initial,
                     const std::vector<Eigen::MatrixXd>& steps);

TraceData read_trace_csv(const std::string& path);

}  // namespace ebmflow::io
