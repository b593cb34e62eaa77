#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ebmflow/chain_ensemble.hpp"
#include "ebmflow/coupling_flow.hpp"
#include "ebmflow/metric_log.hpp"
#include "ebmflow/samplers.hpp"
#include "ebmflow/targets.hpp"
#include "ebmflow/tilted_ebm.hpp"

namespace ebmflow::trainers {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class Algorithm { FlowMcEbm, UlaEbm, NtEbm, CoopFlow };

std::string algorithm_name(Algorithm a);
Algorithm algorithm_from_name(const std::string& s);

// How negatives are read off the chains: final states only, k evenly spaced
// states per chain (with batch/k chains), or every visited state.
enum class NegativePolicy { LastStep, SubsampleByK, FullChain };

// Where chains start: base samples, uniform over the target box, or flow
// samples ("gaussian" in configs maps to Base).
enum class StartStrategy { Base, Uniform, Flow };

enum class PretrainKind { None, ReverseKl, MleData };

struct EnergyNetConfig {
  std::vector<int> hidden = {64, 64, 64};
  numerics::Activation activation = numerics::Activation::Softplus;
};

struct FlowNetConfig {
  int n_layers = 4;
  std::vector<int> hidden = {16, 16, 16};
};

struct PretrainConfig {
  PretrainKind kind = PretrainKind::None;
  int steps = 0;
  double rate = 1e-2;
  int batch = 256;
};

struct TrainConfig {
  std::string target_id = "two_mix";
  Algorithm algorithm = Algorithm::FlowMcEbm;
  int dataset_size = 16384;
  int batch_size = 64;
  int persistent_size = 1024;
  int epochs = 75;
  double gamma_ebm = 1e-2;
  double gamma_flow = 1e-2;
  std::uint64_t seed = 0;
  int metric_cadence = 10;
  NegativePolicy negative_policy = NegativePolicy::LastStep;
  int subsample_k = 4;
  StartStrategy start = StartStrategy::Base;
  PretrainConfig pretrain;
  EnergyNetConfig energy_net;
  FlowNetConfig flow_net;
  samplers::UlaConfig ula;         // ULA-EBM (and CoopFlow, with noise off)
  samplers::MalaConfig mala;       // NT-EBM latent kernel / ULA-EBM mala substitute
  samplers::FlowMcConfig flowmc;   // flowMC-EBM kernel
  double temperature = 1.0;        // energy rescaling for the classic baseline
  double l2_reg = 0.0;
  bool untilted = false;
  bool use_adam = false;           // opt-in; plain SGD is the default update
  double coop_freeze_fraction = 0.05;
  int traj_grid = 128;             // per-axis grid for cadence model weights (2D)
  int quad_grid = 1000;            // per-axis grid for final diagnostics
  bool log_data_loglik = false;    // per-epoch data mean log-density (2D)
  int rhat_eval_chains = 128;
  int rhat_eval_repeats = 1;
  int eval_samples = 8192;         // sample count for final weight histograms
  int checkpoint_every_epochs = 0;
  double base_sigma2 = 0.0;        // 0 = max per-dimension target variance
  std::string nt_flow_update = "frozen";  // frozen | mle
  std::string ula_kernel = "ula";         // ula | mala (baseline-fidelity knob)
};

void validate(const TrainConfig& cfg);

struct TrainState {
  targets::TargetDistribution target;
  ebm::TiltedEBM model;
  std::optional<flow::CouplingFlow> flw;
  samplers::ChainEnsemble persistent;
  Mat dataset;
  long iteration = 0;
  long total_iterations = 0;
  long coop_freeze_iterations = 0;
  long flow_updates_skipped = 0;  // non-finite flow gradients, reported and skipped
  double mala_eta = 1e-2;  // evolving local step size, carried across iterations
  rng::RngStream trainer_stream;
  io::MetricLog log;
  numerics::AdamState adam;

  // Deposited by the last step for metric logging.
  samplers::KernelStats last_stats;
  Mat last_negatives;
  std::vector<Mat> last_history;
  Mat last_init_states;
};

// Builds model/flow/persistent state, runs any configured pretraining and
// samples the dataset. Does not take any training step.
TrainState init_train_state(const TrainConfig& cfg);

// One training step of each algorithm (positives = data minibatch).
void flowmc_ebm_step(TrainState& st, const Mat& positives, const TrainConfig& cfg);
void ula_ebm_step(TrainState& st, const Mat& positives, const TrainConfig& cfg);
void nt_ebm_step(TrainState& st, const Mat& positives, const TrainConfig& cfg);
void coopflow_step(TrainState& st, const Mat& positives, const TrainConfig& cfg);

// Full loop: fresh dataset, per-epoch shuffling, metrics at the configured
// cadence, checkpoints under `outdir` when non-empty.
TrainState train(const TrainConfig& cfg, const std::string& outdir = "");

// Post-training diagnostics: mode-weight histograms and MSEs, median squared
// log-density error (2D), and split R-hat of fresh negative chains started
// from the persistent state (from the flow for CoopFlow/NT-EBM).
std::map<std::string, double> evaluate_run(TrainState& st, const TrainConfig& cfg);

}  // namespace ebmflow::trainers
