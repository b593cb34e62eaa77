#pragma once

#include <deque>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "ebmflow/errors.hpp"
#include "ebmflow/rng.hpp"

namespace ebmflow::samplers {

// Ring buffer of ensemble snapshots, one entry per raw kernel step.
struct ChainHistory {
  int capacity = 0;  // 0 = unlimited
  std::deque<Eigen::MatrixXd> steps;

  void record(const Eigen::MatrixXd& states) {
    steps.push_back(states);
    if (capacity > 0 && static_cast<int>(steps.size()) > capacity) steps.pop_front();
  }

  int length() const { return static_cast<int>(steps.size()); }
};

// n parallel chains: current states plus one counter-based RNG stream per
// chain. Per-chain streams make kernel output independent of how chains are
// scheduled across threads.
struct ChainEnsemble {
  Eigen::MatrixXd states;  // n x d
  std::vector<rng::RngStream> streams;
  std::optional<ChainHistory> history;
  std::uint64_t rng_seed = 0;
  long diverged_resets = 0;

  static ChainEnsemble create(Eigen::MatrixXd init_states, std::uint64_t seed) {
    if (!init_states.allFinite()) throw InputError("ChainEnsemble: initial states must be finite");
    ChainEnsemble e;
    e.states = std::move(init_states);
    e.rng_seed = seed;
    const auto n = e.states.rows();
    e.streams.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      e.streams.push_back(rng::RngStream::substream(seed, static_cast<std::uint64_t>(i)));
    return e;
  }

  int n() const { return static_cast<int>(states.rows()); }
  int dim() const { return static_cast<int>(states.cols()); }

  void enable_history(int capacity = 0) { history = ChainHistory{capacity, {}}; }

  void record() {
    if (history) history->record(states);
  }
};

}  // namespace ebmflow::samplers
