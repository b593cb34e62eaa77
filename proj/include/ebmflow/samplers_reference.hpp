#pragma once

#include <cmath>

#include "ebmflow/samplers.hpp"

namespace ebmflow::samplers::reference {

// Plain single-threaded, one-chain-at-a-time implementations of the kernels.
// They exist as an independent baseline for the blocked OpenMP kernels: tests
// compare trajectories on analytic targets and the benchmark compares
// throughput. Not used by the trainers.

inline KernelStats ula_run(const numerics::ScalarField& log_target, ChainEnsemble& chains,
                           const UlaConfig& cfg) {
  KernelStats stats;
  const int d = chains.dim();
  const double eta = cfg.step_size;
  const double sq = std::sqrt(2.0 * eta);
  for (int step = 0; step < cfg.n_steps; ++step) {
    for (int i = 0; i < chains.n(); ++i) {
      Eigen::VectorXd x = chains.states.row(i).transpose();
      Eigen::VectorXd g = log_target.grad(x);
      Eigen::VectorXd next = x + eta * g;
      if (cfg.noise_enabled) {
        auto& stream = chains.streams[static_cast<std::size_t>(i)];
        for (int j = 0; j < d; ++j) next[j] += sq * stream.normal();
      }
      if (next.allFinite()) chains.states.row(i) = next.transpose();
    }
    ++stats.raw_steps;
    chains.record();
  }
  stats.stacked_steps = stats.raw_steps;
  stats.final_step_size = eta;
  return stats;
}

inline KernelStats mala_run(const numerics::ScalarField& log_target, ChainEnsemble& chains,
                            const MalaConfig& cfg) {
  KernelStats stats;
  const int n = chains.n();
  const int d = chains.dim();
  Eigen::VectorXd logp(n);
  Eigen::MatrixXd grad(n, d);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x = chains.states.row(i).transpose();
    logp[i] = log_target.value(x);
    grad.row(i) = log_target.grad(x).transpose();
  }
  double eta = cfg.step_size;
  const int adapt_until = static_cast<int>(cfg.adapt_fraction * cfg.n_steps);
  for (int step = 0; step < cfg.n_steps; ++step) {
    long accepts = 0;
    const double sq = std::sqrt(2.0 * eta);
    const double inv_4eta = 1.0 / (4.0 * eta);
    for (int i = 0; i < n; ++i) {
      auto& stream = chains.streams[static_cast<std::size_t>(i)];
      Eigen::VectorXd z(d);
      for (int j = 0; j < d; ++j) z[j] = stream.normal();
      Eigen::VectorXd x = chains.states.row(i).transpose();
      Eigen::VectorXd prop = x + eta * grad.row(i).transpose() + sq * z;
      Eigen::VectorXd pg = log_target.grad(prop);
      const double plogp = log_target.value(prop);
      const double u = stream.uniform();
      if (!prop.allFinite() || !std::isfinite(plogp) || !pg.allFinite()) continue;
      const double log_q_fwd = -0.5 * z.squaredNorm();
      const double log_q_back = -(x - prop - eta * pg).squaredNorm() * inv_4eta;
      const double log_alpha = plogp + log_q_back - logp[i] - log_q_fwd;
      if (std::log(u) < log_alpha) {
        chains.states.row(i) = prop.transpose();
        logp[i] = plogp;
        grad.row(i) = pg.transpose();
        ++accepts;
      }
    }
    stats.mala_proposals += n;
    stats.mala_accepts += accepts;
    ++stats.raw_steps;
    chains.record();
    if (cfg.target_acceptance && step < adapt_until) {
      const double rate = static_cast<double>(accepts) / static_cast<double>(n);
      eta *= std::exp(cfg.adaptation_rate * (rate - *cfg.target_acceptance));
    }
  }
  stats.stacked_steps = stats.raw_steps;
  stats.final_step_size = eta;
  return stats;
}

}  // namespace ebmflow::samplers::reference
