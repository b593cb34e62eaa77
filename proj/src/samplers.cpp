#include "ebmflow/samplers.hpp"

#include <cmath>
#include <vector>

#include "ebmflow/exec.hpp"

namespace ebmflow::samplers {

namespace {

bool row_finite(const Mat& m, Eigen::Index i) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    if (!std::isfinite(m(i, j))) return false;
  return true;
}

// Redraws chain i until the reset policy produces a finite state (flow and
// base samples are finite, so one draw is the norm).
void reset_chain(ChainEnsemble& chains, Eigen::Index i, const ResetPolicy* reset) {
  if (reset == nullptr || !reset->redraw_one)
    throw NumericError("sampler: chain " + std::to_string(i) + " diverged and no reset policy is set");
  for (int attempt = 0; attempt < 100; ++attempt) {
    Eigen::VectorXd fresh = reset->redraw_one(chains.streams[static_cast<std::size_t>(i)]);
    if (fresh.allFinite()) {
      chains.states.row(i) = fresh.transpose();
      return;
    }
  }
  throw NumericError("sampler: reset policy kept producing non-finite states");
}

// Shared MALA stepping logic. flowmc_run and mala_run both drive this worker,
// which is what makes a flowMC run with zero global moves reproduce a plain
// MALA trajectory exactly.
struct MalaWorker {
  const numerics::ScalarField* target = nullptr;
  ChainEnsemble* chains = nullptr;
  const ResetPolicy* reset = nullptr;
  KernelStats* stats = nullptr;

  Vec logp;
  Mat grad;
  bool dirty = true;

  void invalidate() { dirty = true; }

  void ensure_fresh() {
    if (!dirty) return;
    const int n = chains->n();
    const int d = chains->dim();
    logp.resize(n);
    grad.resize(n, d);
    refresh_rows();
    for (Eigen::Index i = 0; i < n; ++i) {
      int attempts = 0;
      while (!std::isfinite(logp[i]) || !row_finite(grad, i)) {
        if (++attempts > 100) throw NumericError("mala: could not find a finite starting state");
        ++stats->diverged;
        ++chains->diverged_resets;
        reset_chain(*chains, i, reset);
        Mat row = chains->states.row(i);
        logp[i] = target->value_batch(row)[0];
        grad.row(i) = target->grad_batch(row).row(0);
      }
    }
    dirty = false;
  }

  void refresh_rows() {
    exec::for_blocks(chains->n(), true, [&](int begin, int count, int) {
      Mat rows = chains->states.middleRows(begin, count);
      auto [v, g] = target->eval_value_and_grad(rows);
      logp.segment(begin, count) = v;
      grad.middleRows(begin, count) = g;
    });
  }

  // One ensemble step at step size eta; returns the number of accepts.
  long step(double eta, bool frozen) {
    ensure_fresh();
    const int n = chains->n();
    const int d = chains->dim();
    const double sq = std::sqrt(2.0 * eta);
    const double inv_4eta = eta > 0.0 ? 1.0 / (4.0 * eta) : 0.0;
    const int nb = exec::num_blocks(n);
    std::vector<long> accepts(static_cast<std::size_t>(nb), 0);

    exec::for_blocks(n, true, [&](int begin, int count, int b) {
      Mat noise(count, d);
      for (int r = 0; r < count; ++r) {
        auto& stream = chains->streams[static_cast<std::size_t>(begin + r)];
        for (int j = 0; j < d; ++j) noise(r, j) = stream.normal();
      }
      Mat prop = chains->states.middleRows(begin, count) + eta * grad.middleRows(begin, count) + sq * noise;
      auto [prop_logp, prop_grad] = target->eval_value_and_grad(prop);
      for (int r = 0; r < count; ++r) {
        const Eigen::Index i = begin + r;
        auto& stream = chains->streams[static_cast<std::size_t>(i)];
        const double u = stream.uniform();
        if (!row_finite(prop, r) || !std::isfinite(prop_logp[r]) || !row_finite(prop_grad, r)) continue;
        // q(x'|x) reduces to the noise density; q(x|x') needs the reverse drift.
        const double log_q_fwd = -0.5 * noise.row(r).squaredNorm();
        const double back =
            (chains->states.row(i) - prop.row(r) - eta * prop_grad.row(r)).squaredNorm();
        const double log_q_back = -back * inv_4eta;
        const double log_alpha = prop_logp[r] + log_q_back - logp[i] - log_q_fwd;
        if (std::log(u) < log_alpha) {
          chains->states.row(i) = prop.row(r);
          logp[i] = prop_logp[r];
          grad.row(i) = prop_grad.row(r);
          ++accepts[static_cast<std::size_t>(b)];
        }
      }
    });

    long acc = 0;
    for (long a : accepts) acc += a;
    stats->mala_proposals += n;
    stats->mala_accepts += acc;
    if (frozen) {
      stats->mala_proposals_frozen += n;
      stats->mala_accepts_frozen += acc;
    }
    ++stats->raw_steps;
    chains->record();
    return acc;
  }
};

// One i-SIR ensemble step; returns the number of chains that moved.
long isir_step(const numerics::ScalarField& target, const Proposal& proposal, ChainEnsemble& chains,
               int n_particles, KernelStats& stats) {
  const int n = chains.n();
  const int d = chains.dim();
  const int k = n_particles - 1;  // fresh proposals per chain
  const int nb = exec::num_blocks(n);
  std::vector<long> moves(static_cast<std::size_t>(nb), 0);
  std::vector<long> rejected(static_cast<std::size_t>(nb), 0);

  exec::for_blocks(n, true, [&](int begin, int count, int b) {
    Mat cur = chains.states.middleRows(begin, count);
    Vec cur_logpi = target.value_batch(cur);
    Vec cur_loglam = proposal.log_density_batch(cur);
    Mat pool(static_cast<Eigen::Index>(count) * k, d);
    Vec pool_loglam(static_cast<Eigen::Index>(count) * k);
    for (int r = 0; r < count; ++r) {
      auto [p, ll] = proposal.sample_with_log_density(k, chains.streams[static_cast<std::size_t>(begin + r)]);
      pool.middleRows(static_cast<Eigen::Index>(r) * k, k) = p;
      pool_loglam.segment(static_cast<Eigen::Index>(r) * k, k) = ll;
    }
    Vec pool_logpi = target.value_batch(pool);

    for (int r = 0; r < count; ++r) {
      auto& stream = chains.streams[static_cast<std::size_t>(begin + r)];
      const double u = stream.uniform();
      // log importance weights; index 0 is the current state.
      Eigen::VectorXd logw(n_particles);
      logw[0] = cur_logpi[r] - cur_loglam[r];
      for (int j = 0; j < k; ++j) {
        const Eigen::Index row = static_cast<Eigen::Index>(r) * k + j;
        logw[j + 1] = pool_logpi[row] - pool_loglam[row];
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < n_particles; ++j)
        if (std::isfinite(logw[j])) mx = std::max(mx, logw[j]);
      if (!std::isfinite(mx)) {
        ++rejected[static_cast<std::size_t>(b)];
        continue;
      }
      double total = 0.0;
      Eigen::VectorXd w(n_particles);
      for (int j = 0; j < n_particles; ++j) {
        w[j] = std::isfinite(logw[j]) ? std::exp(logw[j] - mx) : 0.0;
        total += w[j];
      }
      if (!(total > 0.0) || !std::isfinite(total)) {
        ++rejected[static_cast<std::size_t>(b)];
        continue;
      }
      const double threshold = u * total;
      double acc = 0.0;
      int pick = n_particles - 1;
      for (int j = 0; j < n_particles; ++j) {
        acc += w[j];
        if (threshold <= acc) {
          pick = j;
          break;
        }
      }
      if (pick > 0) {
        chains.states.row(begin + r) = pool.row(static_cast<Eigen::Index>(r) * k + (pick - 1));
        ++moves[static_cast<std::size_t>(b)];
      }
    }
  });

  long moved = 0;
  for (std::size_t b = 0; b < moves.size(); ++b) {
    moved += moves[b];
    stats.isir_rejected_steps += rejected[b];
  }
  stats.global_proposals += n;
  stats.global_moves += moved;
  ++stats.raw_steps;
  chains.record();
  return moved;
}

// One independent Metropolis-Hastings move from the proposal per chain.
long imh_step(const numerics::ScalarField& target, const Proposal& proposal, ChainEnsemble& chains,
              KernelStats& stats) {
  const int n = chains.n();
  const int d = chains.dim();
  const int nb = exec::num_blocks(n);
  std::vector<long> moves(static_cast<std::size_t>(nb), 0);

  exec::for_blocks(n, true, [&](int begin, int count, int b) {
    Mat cur = chains.states.middleRows(begin, count);
    Vec cur_logpi = target.value_batch(cur);
    Vec cur_loglam = proposal.log_density_batch(cur);
    Mat prop(count, d);
    Vec prop_loglam(count);
    for (int r = 0; r < count; ++r) {
      auto [p, ll] = proposal.sample_with_log_density(1, chains.streams[static_cast<std::size_t>(begin + r)]);
      prop.row(r) = p.row(0);
      prop_loglam[r] = ll[0];
    }
    Vec prop_logpi = target.value_batch(prop);
    for (int r = 0; r < count; ++r) {
      auto& stream = chains.streams[static_cast<std::size_t>(begin + r)];
      const double u = stream.uniform();
      const double log_alpha = prop_logpi[r] + cur_loglam[r] - cur_logpi[r] - prop_loglam[r];
      if (std::isfinite(log_alpha) && std::log(u) < log_alpha) {
        chains.states.row(begin + r) = prop.row(r);
        ++moves[static_cast<std::size_t>(b)];
      }
    }
  });

  long moved = 0;
  for (long m : moves) moved += m;
  stats.global_proposals += n;
  stats.global_moves += moved;
  ++stats.raw_steps;
  chains.record();
  return moved;
}

}  // namespace

Proposal proposal_from_flow(const flow::CouplingFlow& f) {
  Proposal p;
  const flow::CouplingFlow* ptr = &f;
  p.sample_with_log_density = [ptr](int k, rng::RngStream& stream) {
    return ptr->sample_with_log_prob(k, stream);
  };
  p.log_density_batch = [ptr](const Mat& x) { return ptr->log_prob_batch(x); };
  return p;
}

Proposal proposal_from_target(const targets::TargetDistribution& t) {
  Proposal p;
  auto sampler = t.sample;
  auto logdens = t.log_density_batch;
  p.sample_with_log_density = [sampler, logdens](int k, rng::RngStream& stream) {
    Mat x = sampler(k, stream.next_u64());
    Vec ll = logdens(x);
    return std::make_pair(x, ll);
  };
  p.log_density_batch = logdens;
  return p;
}

KernelStats ula_run(const numerics::ScalarField& log_target, ChainEnsemble& chains, const UlaConfig& cfg,
                    const ResetPolicy* reset) {
  if (cfg.step_size < 0.0) throw InputError("ula_run: step size must be non-negative");
  KernelStats stats;
  const int n = chains.n();
  const int d = chains.dim();
  const double eta = cfg.step_size;
  const double sq = std::sqrt(2.0 * eta);
  const int nb = exec::num_blocks(n);
  std::vector<long> diverged(static_cast<std::size_t>(nb), 0);

  for (int step = 0; step < cfg.n_steps; ++step) {
    std::fill(diverged.begin(), diverged.end(), 0L);
    exec::for_blocks(n, true, [&](int begin, int count, int b) {
      Mat rows = chains.states.middleRows(begin, count);
      Mat g = log_target.grad_batch(rows);
      for (int r = 0; r < count; ++r) {
        const Eigen::Index i = begin + r;
        Eigen::RowVectorXd next = rows.row(r) + eta * g.row(r);
        if (cfg.noise_enabled) {
          auto& stream = chains.streams[static_cast<std::size_t>(i)];
          for (int j = 0; j < d; ++j) next[j] += sq * stream.normal();
        }
        bool finite = true;
        for (int j = 0; j < d; ++j)
          if (!std::isfinite(next[j])) finite = false;
        if (finite) {
          chains.states.row(i) = next;
        } else {
          ++diverged[static_cast<std::size_t>(b)];
          if (reset != nullptr && reset->redraw_one) reset_chain(chains, i, reset);
          // without a reset policy the previous state is kept
        }
      }
    });
    for (long dv : diverged) {
      stats.diverged += dv;
      chains.diverged_resets += dv;
    }
    ++stats.raw_steps;
    chains.record();
  }
  stats.stacked_steps = stats.raw_steps;
  stats.final_step_size = eta;
  return stats;
}

KernelStats mala_run(const numerics::ScalarField& log_target, ChainEnsemble& chains, const MalaConfig& cfg,
                     const ResetPolicy* reset) {
  if (cfg.step_size <= 0.0) throw InputError("mala_run: step size must be positive");
  if (cfg.target_acceptance && (*cfg.target_acceptance <= 0.0 || *cfg.target_acceptance >= 1.0))
    throw InputError("mala_run: target acceptance must lie in (0,1)");
  KernelStats stats;
  MalaWorker worker{&log_target, &chains, reset, &stats};
  double eta = cfg.step_size;
  const int adapt_until = static_cast<int>(cfg.adapt_fraction * cfg.n_steps);
  for (int step = 0; step < cfg.n_steps; ++step) {
    const bool adapting = cfg.target_acceptance.has_value() && step < adapt_until;
    const long acc = worker.step(eta, !adapting);
    if (adapting) {
      const double rate = static_cast<double>(acc) / static_cast<double>(chains.n());
      eta *= std::exp(cfg.adaptation_rate * (rate - *cfg.target_acceptance));
    }
  }
  stats.stacked_steps = stats.raw_steps;
  stats.final_step_size = eta;
  return stats;
}

KernelStats isir_run(const numerics::ScalarField& log_target, const Proposal& proposal,
                     ChainEnsemble& chains, const IsirConfig& cfg) {
  if (cfg.n_particles < 2) throw InputError("isir_run: need at least 2 particles");
  KernelStats stats;
  for (int step = 0; step < cfg.n_steps; ++step)
    isir_step(log_target, proposal, chains, cfg.n_particles, stats);
  stats.stacked_steps = stats.raw_steps;
  return stats;
}

KernelStats flowmc_run(const numerics::ScalarField& log_target, ChainEnsemble& chains,
                       flow::CouplingFlow& flw, const FlowMcConfig& cfg, const ResetPolicy* reset) {
  if (flw.dim() != chains.dim()) throw InputError("flowmc_run: flow dimension does not match chains");
  if (cfg.n_global < 0 || cfg.n_local < 0 || cfg.n_blocks < 0)
    throw InputError("flowmc_run: step counts must be non-negative");
  if (cfg.n_global + cfg.n_local == 0)
    throw InputError("flowmc_run: at least one of n_global, n_local must be positive");

  KernelStats stats;
  Proposal prop = proposal_from_flow(flw);
  MalaWorker worker{&log_target, &chains, reset, &stats};
  double eta = cfg.mala.step_size;
  const int adapt_until = static_cast<int>(cfg.mala.adapt_fraction * cfg.n_blocks);

  for (int b = 0; b < cfg.n_blocks; ++b) {
    for (int g = 0; g < cfg.n_global; ++g) {
      if (cfg.global_kind == GlobalKind::Isir)
        isir_step(log_target, prop, chains, cfg.isir_particles, stats);
      else
        imh_step(log_target, prop, chains, stats);
      worker.invalidate();
    }
    const bool adapting = cfg.mala.target_acceptance.has_value() && b < adapt_until;
    for (int l = 0; l < cfg.n_local; ++l) {
      const long acc = worker.step(eta, !adapting);
      if (adapting) {
        const double rate = static_cast<double>(acc) / static_cast<double>(chains.n());
        eta *= std::exp(cfg.mala.adaptation_rate * (rate - *cfg.mala.target_acceptance));
      }
    }
    if (cfg.adapt_flow && chains.n() > 0) flw.mle_step(chains.states, cfg.adapt_rate);
    ++stats.stacked_steps;
  }
  stats.final_step_size = eta;
  return stats;
}

}  // namespace ebmflow::samplers
