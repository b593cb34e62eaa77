#pragma once

#include <functional>
#include <optional>
#include <utility>

#include <Eigen/Core>

#include "ebmflow/chain_ensemble.hpp"
#include "ebmflow/coupling_flow.hpp"
#include "ebmflow/errors.hpp"
#include "ebmflow/scalar_field.hpp"
#include "ebmflow/targets.hpp"

namespace ebmflow::samplers {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct UlaConfig {
  double step_size = 1e-2;
  int n_steps = 1;
  bool noise_enabled = true;  // false: deterministic gradient flow (CoopFlow variant)
};

struct MalaConfig {
  double step_size = 1e-2;
  int n_steps = 1;
  std::optional<double> target_acceptance;  // enables multiplicative adaptation
  double adaptation_rate = 0.05;
  double adapt_fraction = 0.5;  // adaptation frozen after this fraction of steps
};

struct IsirConfig {
  int n_particles = 2;  // N >= 2; N-1 fresh proposals per step
  int n_steps = 1;
};

enum class GlobalKind { IndependentMh, Isir };

struct FlowMcConfig {
  int n_global = 1;  // global moves per block
  int n_local = 1;   // MALA steps per block
  int n_blocks = 1;
  GlobalKind global_kind = GlobalKind::Isir;
  int isir_particles = 32;
  MalaConfig mala;
  bool adapt_flow = false;  // online likelihood ascent on visited states
  double adapt_rate = 0.0;
};

// On divergence a chain is reset to a fresh draw (flow sample during flowMC,
// base sample otherwise) and the event is counted.
struct ResetPolicy {
  std::function<Eigen::VectorXd(rng::RngStream&)> redraw_one;
};

struct KernelStats {
  long raw_steps = 0;
  long stacked_steps = 0;  // flowMC: one global block + its local steps
  long mala_proposals = 0, mala_accepts = 0;
  long mala_proposals_frozen = 0, mala_accepts_frozen = 0;  // after adaptation stopped
  long global_proposals = 0, global_moves = 0;
  long isir_rejected_steps = 0;  // all-weights-degenerate steps (state kept)
  long diverged = 0;
  double final_step_size = 0.0;

  double mala_accept_rate() const {
    return mala_proposals > 0 ? static_cast<double>(mala_accepts) / static_cast<double>(mala_proposals) : 0.0;
  }
  double mala_accept_rate_frozen() const {
    return mala_proposals_frozen > 0
               ? static_cast<double>(mala_accepts_frozen) / static_cast<double>(mala_proposals_frozen)
               : mala_accept_rate();
  }
  double global_rate() const {
    return global_proposals > 0 ? static_cast<double>(global_moves) / static_cast<double>(global_proposals)
                                : 0.0;
  }
};

// Independent proposal with tractable density (flow pushforward, or an exact
// target in tests).
struct Proposal {
  std::function<std::pair<Mat, Vec>(int, rng::RngStream&)> sample_with_log_density;
  std::function<Vec(const Mat&)> log_density_batch;
};

Proposal proposal_from_flow(const flow::CouplingFlow& f);
Proposal proposal_from_target(const targets::TargetDistribution& t);

// Unadjusted Langevin: x' = x + eta * grad log pi(x) + sqrt(2 eta) z.
KernelStats ula_run(const numerics::ScalarField& log_target, ChainEnsemble& chains, const UlaConfig& cfg,
                    const ResetPolicy* reset = nullptr);

// Metropolis-adjusted Langevin with optional multiplicative step-size
// adaptation toward a target acceptance rate.
KernelStats mala_run(const numerics::ScalarField& log_target, ChainEnsemble& chains, const MalaConfig& cfg,
                     const ResetPolicy* reset = nullptr);

// Iterated sampling importance resampling: the current state joins N-1 fresh
// proposals and the next state is selected by normalized importance weights.
KernelStats isir_run(const numerics::ScalarField& log_target, const Proposal& proposal,
                     ChainEnsemble& chains, const IsirConfig& cfg);

// Composite flowMC kernel: blocks of [global flow moves -> local MALA steps],
// optionally adapting the flow to the visited states between blocks. With
// adapt_flow off the flow is strictly read-only.
KernelStats flowmc_run(const numerics::ScalarField& log_target, ChainEnsemble& chains,
                       flow::CouplingFlow& flw, const FlowMcConfig& cfg,
                       const ResetPolicy* reset = nullptr);

}  // namespace ebmflow::samplers
