#include "ebmflow/trainers.hpp"

#include <algorithm>
#include <cmath>

#include "ebmflow/diagnostics.hpp"
#include "ebmflow/checkpoint.hpp"

namespace ebmflow::trainers {

namespace {

constexpr std::uint64_t kTagModel = 0x01;
constexpr std::uint64_t kTagFlow = 0x02;
constexpr std::uint64_t kTagPretrain = 0x03;
constexpr std::uint64_t kTagDataset = 0x04;
constexpr std::uint64_t kTagPersistentInit = 0x05;
constexpr std::uint64_t kTagPersistentEnsemble = 0x06;
constexpr std::uint64_t kTagTrainer = 0x07;
constexpr std::uint64_t kTagIterEnsemble = 0x08;
constexpr std::uint64_t kTagEval = 0x09;

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t tag) {
  return rng::RngStream::substream(seed, tag).next_u64();
}

Mat uniform_box(int n, const Vec& lo, const Vec& hi, rng::RngStream& stream) {
  Mat out(n, lo.size());
  for (int i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < lo.size(); ++j) out(i, j) = lo[j] + (hi[j] - lo[j]) * stream.uniform();
  return out;
}

// First k entries of a seeded partial Fisher-Yates permutation of 0..P-1.
// When k == P the identity selection is used and no randomness is consumed.
std::vector<int> select_indices(int population, int k, rng::RngStream& stream) {
  std::vector<int> idx(static_cast<std::size_t>(population));
  for (int i = 0; i < population; ++i) idx[static_cast<std::size_t>(i)] = i;
  if (k >= population) return idx;
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(stream.bounded(static_cast<std::uint64_t>(population - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

int chains_per_iteration(const TrainConfig& cfg) {
  if (cfg.negative_policy == NegativePolicy::SubsampleByK)
    return std::max(1, cfg.batch_size / cfg.subsample_k);
  return cfg.batch_size;
}

Mat select_negatives(const samplers::ChainEnsemble& ens, NegativePolicy policy, int k) {
  if (policy == NegativePolicy::LastStep || !ens.history || ens.history->steps.empty()) return ens.states;
  const auto& steps = ens.history->steps;
  const int t = static_cast<int>(steps.size());
  if (policy == NegativePolicy::FullChain) {
    Mat out(static_cast<Eigen::Index>(t) * ens.n(), ens.dim());
    for (int s = 0; s < t; ++s) out.middleRows(static_cast<Eigen::Index>(s) * ens.n(), ens.n()) = steps[static_cast<std::size_t>(s)];
    return out;
  }
  // SubsampleByK: k evenly spaced snapshots per chain, ending at the last.
  const int kk = std::min(k, t);
  Mat out(static_cast<Eigen::Index>(kk) * ens.n(), ens.dim());
  for (int j = 1; j <= kk; ++j) {
    const int s = (j * t) / kk - 1;
    out.middleRows(static_cast<Eigen::Index>(j - 1) * ens.n(), ens.n()) = steps[static_cast<std::size_t>(s)];
  }
  return out;
}

samplers::ResetPolicy base_reset(const flow::BaseDistribution& base) {
  samplers::ResetPolicy p;
  p.redraw_one = [base](rng::RngStream& stream) { return base.sample(1, stream).row(0).transpose().eval(); };
  return p;
}

samplers::ResetPolicy flow_reset(const flow::CouplingFlow& f) {
  samplers::ResetPolicy p;
  const flow::CouplingFlow* ptr = &f;
  p.redraw_one = [ptr](rng::RngStream& stream) { return ptr->sample(1, stream).row(0).transpose().eval(); };
  return p;
}

void update_theta(TrainState& st, const TrainConfig& cfg, const Mat& positives, const Mat& negatives) {
  ebm::GradientEstimate est = st.model.ml_gradient_estimate(positives, negatives);
  numerics::GradientRecord rec;
  rec.grads = est.grads;
  if (cfg.l2_reg > 0.0)
    rec.grads += st.model.l2_energy_regularizer(positives, negatives, cfg.l2_reg).grads;
  if (cfg.use_adam)
    numerics::adam_step(st.model.params(), rec, cfg.gamma_ebm, numerics::StepDirection::Descent, st.adam);
  else
    numerics::sgd_step(st.model.params(), rec, cfg.gamma_ebm, numerics::StepDirection::Descent);
}

std::vector<Mat> take_history(samplers::ChainEnsemble& ens) {
  std::vector<Mat> out;
  if (ens.history) {
    out.assign(ens.history->steps.begin(), ens.history->steps.end());
    ens.history->steps.clear();
  }
  return out;
}

}  // namespace

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::FlowMcEbm: return "flowmc";
    case Algorithm::UlaEbm: return "ula";
    case Algorithm::NtEbm: return "nt";
    case Algorithm::CoopFlow: return "coopflow";
  }
  return "flowmc";
}

Algorithm algorithm_from_name(const std::string& s) {
  if (s == "flowmc" || s == "flowmc_ebm") return Algorithm::FlowMcEbm;
  if (s == "ula" || s == "ula_ebm") return Algorithm::UlaEbm;
  if (s == "nt" || s == "nt_ebm") return Algorithm::NtEbm;
  if (s == "coopflow") return Algorithm::CoopFlow;
  throw InputError("unknown algorithm '" + s + "' (expected flowmc|ula|nt|coopflow)");
}

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size <= 0) throw InputError("config: batch_size must be positive");
  if (cfg.dataset_size < cfg.batch_size) throw InputError("config: dataset_size must be >= batch_size");
  if (cfg.epochs < 0) throw InputError("config: epochs must be non-negative");
  if (cfg.gamma_ebm < 0.0 || cfg.gamma_flow < 0.0) throw InputError("config: learning rates must be >= 0");
  if (cfg.metric_cadence < 1) throw InputError("config: metric_cadence must be >= 1");
  if (cfg.subsample_k < 1) throw InputError("config: subsample_k must be >= 1");
  if (cfg.temperature <= 0.0) throw InputError("config: temperature must be positive");
  const bool persistent_algo =
      cfg.algorithm == Algorithm::FlowMcEbm || cfg.algorithm == Algorithm::UlaEbm;
  if (persistent_algo && cfg.persistent_size < chains_per_iteration(cfg))
    throw InputError("config: persistent_size must be >= the number of chains per iteration");
  if (cfg.algorithm != Algorithm::UlaEbm && cfg.flow_net.n_layers < 1)
    throw InputError("config: flow_net.n_layers must be >= 1");
  if (cfg.ula_kernel != "ula" && cfg.ula_kernel != "mala")
    throw InputError("config: ula_kernel must be 'ula' or 'mala'");
  if (cfg.nt_flow_update != "frozen" && cfg.nt_flow_update != "mle")
    throw InputError("config: nt_flow_update must be 'frozen' or 'mle'");
}

TrainState init_train_state(const TrainConfig& cfg) {
  validate(cfg);
  TrainState st;
  st.target = targets::make_target(cfg.target_id);
  const int d = st.target.dim;
  const double sigma2 = cfg.base_sigma2 > 0.0 ? cfg.base_sigma2 : st.target.base_sigma2;
  flow::BaseDistribution base(d, sigma2);

  st.model = ebm::TiltedEBM::create(d, cfg.energy_net.hidden, cfg.energy_net.activation, base,
                                    derived_seed(cfg.seed, kTagModel), !cfg.untilted);
  const bool needs_flow = cfg.algorithm != Algorithm::UlaEbm;
  if (needs_flow)
    st.flw = flow::CouplingFlow::create(d, cfg.flow_net.n_layers, cfg.flow_net.hidden, base,
                                        derived_seed(cfg.seed, kTagFlow));

  st.dataset = st.target.sample(cfg.dataset_size, derived_seed(cfg.seed, kTagDataset));

  if (cfg.pretrain.kind != PretrainKind::None) {
    if (!st.flw) throw InputError("config: pretraining requires a flow");
    rng::RngStream stream = rng::RngStream::substream(cfg.seed, kTagPretrain);
    if (cfg.pretrain.kind == PretrainKind::ReverseKl) {
      st.flw->reverse_kl_pretrain(st.target.field(), cfg.pretrain.steps, cfg.pretrain.rate,
                                  cfg.pretrain.batch, stream);
    } else {
      for (int s = 0; s < cfg.pretrain.steps; ++s) {
        const int nb = std::min(cfg.pretrain.batch, cfg.dataset_size);
        Mat batch(nb, d);
        for (int r = 0; r < nb; ++r)
          batch.row(r) = st.dataset.row(static_cast<Eigen::Index>(
              stream.bounded(static_cast<std::uint64_t>(cfg.dataset_size))));
        st.flw->mle_step(batch, cfg.pretrain.rate);
      }
    }
  }

  const bool persistent_algo =
      cfg.algorithm == Algorithm::FlowMcEbm || cfg.algorithm == Algorithm::UlaEbm;
  if (persistent_algo) {
    rng::RngStream stream = rng::RngStream::substream(cfg.seed, kTagPersistentInit);
    Mat init;
    switch (cfg.start) {
      case StartStrategy::Base: init = base.sample(cfg.persistent_size, stream); break;
      case StartStrategy::Uniform:
        init = uniform_box(cfg.persistent_size, st.target.bbox_lo, st.target.bbox_hi, stream);
        break;
      case StartStrategy::Flow:
        if (!st.flw) throw InputError("config: start strategy 'flow' requires a flow");
        init = st.flw->sample(cfg.persistent_size, stream);
        break;
    }
    st.persistent = samplers::ChainEnsemble::create(init, derived_seed(cfg.seed, kTagPersistentEnsemble));
  } else {
    st.persistent = samplers::ChainEnsemble::create(Mat(0, d), derived_seed(cfg.seed, kTagPersistentEnsemble));
  }

  st.mala_eta = (cfg.algorithm == Algorithm::NtEbm || cfg.ula_kernel == "mala") ? cfg.mala.step_size
                                                                                : cfg.flowmc.mala.step_size;
  st.trainer_stream = rng::RngStream::substream(cfg.seed, kTagTrainer);
  if (cfg.use_adam) st.adam.init(st.model.params().size());
  return st;
}

void flowmc_ebm_step(TrainState& st, const Mat& positives, const TrainConfig& cfg) {
  if (!st.flw) throw InputError("flowmc_ebm_step: flow missing");
  const int m = chains_per_iteration(cfg);
  std::vector<int> idx = select_indices(st.persistent.n(), m, st.trainer_stream);

  samplers::ChainEnsemble working =
      samplers::ChainEnsemble::create(Mat::Zero(m, st.target.dim), st.persistent.rng_seed);
  for (int r = 0; r < m; ++r) {
    working.states.row(r) = st.persistent.states.row(idx[static_cast<std::size_t>(r)]);
    working.streams[static_cast<std::size_t>(r)] =
        st.persistent.streams[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])];
  }
  working.enable_history(0);
  st.last_init_states = working.states;

  samplers::FlowMcConfig fc = cfg.flowmc;
  fc.mala.step_size = st.mala_eta;
  fc.adapt_flow = false;  // the flow update is the trainer's step 5, not the sampler's
  samplers::ResetPolicy reset = flow_reset(*st.flw);
  samplers::KernelStats stats = samplers::flowmc_run(st.model.field(), working, *st.flw, fc, &reset);
  st.mala_eta = stats.final_step_size;

  for (int r = 0; r < m; ++r) {
    st.persistent.states.row(idx[static_cast<std::size_t>(r)]) = working.states.row(r);
    st.persistent.streams[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])] =
        working.streams[static_cast<std::size_t>(r)];
  }
  st.persistent.diverged_resets += stats.diverged;

  Mat negatives = select_negatives(working, cfg.negative_policy, cfg.subsample_k);
  update_theta(st, cfg, positives, negatives);
  if (cfg.gamma_flow > 0.0 && !st.flw->mle_step(negatives, cfg.gamma_flow)) ++st.flow_updates_skipped;
  st.last_stats = stats;
  st.last_negatives = std::move(negatives);
  st.last_history = take_history(working);
}

void ula_ebm_step(TrainState& st, const Mat& positives, const TrainConfig& cfg) {
  const int m = chains_per_iteration(cfg);
  std::vector<int> idx = select_indices(st.persistent.n(), m, st.trainer_stream);

  samplers::ChainEnsemble working =
      samplers::ChainEnsemble::create(Mat::Zero(m, st.target.dim), st.persistent.rng_seed);
  for (int r = 0; r < m; ++r) {
    working.states.row(r) = st.persistent.states.row(idx[static_cast<std::size_t>(r)]);
    working.streams[static_cast<std::size_t>(r)] =
        st.persistent.streams[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])];
  }
  working.enable_history(0);
  st.last_init_states = working.states;

  samplers::ResetPolicy reset = base_reset(st.model.base());
  numerics::ScalarField field = st.model.field(cfg.temperature);
  samplers::KernelStats stats;
  if (cfg.ula_kernel == "mala") {
    samplers::MalaConfig mc = cfg.mala;
    mc.step_size = st.mala_eta;
    stats = samplers::mala_run(field, working, mc, &reset);
    st.mala_eta = stats.final_step_size;
  } else {
    stats = samplers::ula_run(field, working, cfg.ula, &reset);
  }

  for (int r = 0; r < m; ++r) {
    st.persistent.states.row(idx[static_cast<std::size_t>(r)]) = working.states.row(r);
    st.persistent.streams[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])] =
        working.streams[static_cast<std::size_t>(r)];
  }
  st.persistent.diverged_resets += stats.diverged;

  Mat negatives = select_negatives(working, cfg.negative_policy, cfg.subsample_k);
  update_theta(st, cfg, positives, negatives);
  st.last_stats = stats;
  st.last_negatives = std::move(negatives);
  st.last_history = take_history(working);
}

void nt_ebm_step(TrainState& st, const Mat& positives, const TrainConfig& cfg) {
  if (!st.flw) throw InputError("nt_ebm_step: flow missing");
  const int m = chains_per_iteration(cfg);
  const std::uint64_t iter_seed =
      derived_seed(cfg.seed, kTagIterEnsemble + 0x100 * static_cast<std::uint64_t>(st.iteration));
  rng::RngStream init_stream(iter_seed);
  // Latent chains start at base samples; the pulled-back target is the model
  // density seen through the flow.
  Mat z0 = st.model.base().sample(m, init_stream);
  samplers::ChainEnsemble latent = samplers::ChainEnsemble::create(z0, iter_seed ^ 0x5a5a5a5aULL);
  latent.enable_history(0);
  st.last_init_states = st.flw->forward(z0).first;

  numerics::ScalarField pullback = st.flw->pullback_field(st.model.field());
  samplers::MalaConfig mc = cfg.mala;
  mc.step_size = st.mala_eta;
  samplers::ResetPolicy reset = base_reset(st.model.base());
  samplers::KernelStats stats = samplers::mala_run(pullback, latent, mc, &reset);
  st.mala_eta = stats.final_step_size;

  // Negatives live in x-space: map the latent trajectory through the flow.
  std::vector<Mat> zhist = take_history(latent);
  samplers::ChainEnsemble xview = samplers::ChainEnsemble::create(st.flw->forward(latent.states).first, 0);
  xview.enable_history(0);
  for (auto& zstep : zhist) xview.history->record(st.flw->forward(zstep).first);

  Mat negatives = select_negatives(xview, cfg.negative_policy, cfg.subsample_k);
  update_theta(st, cfg, positives, negatives);
  if (cfg.nt_flow_update == "mle" && cfg.gamma_flow > 0.0) st.flw->mle_step(negatives, cfg.gamma_flow);
  st.last_stats = stats;
  st.last_negatives = std::move(negatives);
  st.last_history = take_history(xview);
}

void coopflow_step(TrainState& st, const Mat& positives, const TrainConfig& cfg) {
  if (!st.flw) throw InputError("coopflow_step: flow missing");
  const int m = chains_per_iteration(cfg);
  const std::uint64_t iter_seed =
      derived_seed(cfg.seed, kTagIterEnsemble + 0x100 * static_cast<std::uint64_t>(st.iteration) + 1);
  rng::RngStream init_stream(iter_seed);
  // Fresh flow initialization every step; no persistent reuse.
  Mat x0 = st.flw->sample(m, init_stream);
  samplers::ChainEnsemble chains = samplers::ChainEnsemble::create(x0, iter_seed ^ 0x3c3c3c3cULL);
  chains.enable_history(0);
  st.last_init_states = x0;

  samplers::UlaConfig uc = cfg.ula;
  uc.noise_enabled = false;  // noise-free Langevin refinement
  samplers::ResetPolicy reset = flow_reset(*st.flw);
  samplers::KernelStats stats = samplers::ula_run(st.model.field(), chains, uc, &reset);

  Mat negatives = select_negatives(chains, cfg.negative_policy, cfg.subsample_k);
  update_theta(st, cfg, positives, negatives);
  if (st.iteration >= st.coop_freeze_iterations && cfg.gamma_flow > 0.0)
    st.flw->mle_step(negatives, cfg.gamma_flow);
  st.last_stats = stats;
  st.last_negatives = std::move(negatives);
  st.last_history = take_history(chains);
}

namespace {

void log_iteration_metrics(TrainState& st, const TrainConfig& cfg, const Mat& positives) {
  const long it = st.iteration;
  auto& log = st.log;
  const auto& ks = st.last_stats;
  log.add(it, "mala_accept", ks.mala_accept_rate());
  log.add(it, "global_rate", ks.global_rate());
  log.add(it, "mala_eta", ks.final_step_size);
  log.add(it, "diverged", static_cast<double>(ks.diverged));
  log.add(it, "energy_pos_mean", st.model.energy_batch(positives).mean());
  if (st.last_negatives.rows() > 0)
    log.add(it, "energy_neg_mean", st.model.energy_batch(st.last_negatives).mean());

  if (!st.target.modes.empty() && st.last_negatives.rows() > 0) {
    Vec w = diagnostics::mode_weights(st.last_negatives, st.target.mode_centroids());
    for (Eigen::Index i = 0; i < w.size(); ++i)
      log.add(it, "mode_weight_neg_" + std::to_string(i), w[i]);
  }
  if (st.target.dim == 2 && !st.target.modes.empty()) {
    auto grid = diagnostics::QuadratureGrid::make(st.target.bbox_lo, st.target.bbox_hi, cfg.traj_grid);
    const ebm::TiltedEBM* model = &st.model;
    Vec w = diagnostics::model_mode_weights(
        [model](const Mat& x) { return model->log_density_unnorm_batch(x); }, grid,
        st.target.mode_centroids());
    for (Eigen::Index i = 0; i < w.size(); ++i)
      log.add(it, "mode_weight_model_" + std::to_string(i), w[i]);
  }
  if (st.last_history.size() >= 4 && st.last_history.front().rows() >= 2) {
    auto report = diagnostics::split_rhat(st.last_history);
    log.add(it, "rhat_max_iter", report.max_rhat);
  }
}

double data_mean_log_density(TrainState& st, const TrainConfig& cfg) {
  auto grid = diagnostics::QuadratureGrid::make(st.target.bbox_lo, st.target.bbox_hi, cfg.traj_grid);
  const ebm::TiltedEBM* model = &st.model;
  const double log_z = diagnostics::log_integral_exp(
      grid, [model](const Mat& x) { return model->log_density_unnorm_batch(x); });
  return st.model.log_density_unnorm_batch(st.dataset).mean() - log_z;
}

}  // namespace

TrainState train(const TrainConfig& cfg, const std::string& outdir) {
  TrainState st = init_train_state(cfg);
  const long ipe = cfg.dataset_size / cfg.batch_size;
  st.total_iterations = ipe * cfg.epochs;
  st.coop_freeze_iterations =
      static_cast<long>(std::ceil(cfg.coop_freeze_fraction * static_cast<double>(st.total_iterations)));

  void (*step_fn)(TrainState&, const Mat&, const TrainConfig&) = nullptr;
  switch (cfg.algorithm) {
    case Algorithm::FlowMcEbm: step_fn = flowmc_ebm_step; break;
    case Algorithm::UlaEbm: step_fn = ula_ebm_step; break;
    case Algorithm::NtEbm: step_fn = nt_ebm_step; break;
    case Algorithm::CoopFlow: step_fn = coopflow_step; break;
  }

  std::vector<int> perm(static_cast<std::size_t>(cfg.dataset_size));
  const int d = st.target.dim;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = 0; i < cfg.dataset_size; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (int i = cfg.dataset_size - 1; i > 0; --i) {
      const int j = static_cast<int>(st.trainer_stream.bounded(static_cast<std::uint64_t>(i + 1)));
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    for (long b = 0; b < ipe; ++b) {
      Mat positives(cfg.batch_size, d);
      for (int r = 0; r < cfg.batch_size; ++r)
        positives.row(r) = st.dataset.row(perm[static_cast<std::size_t>(b * cfg.batch_size + r)]);
      step_fn(st, positives, cfg);
      if (st.iteration % cfg.metric_cadence == 0) log_iteration_metrics(st, cfg, positives);
      ++st.iteration;
    }
    if (cfg.log_data_loglik && st.target.dim == 2)
      st.log.add(st.iteration - 1, "data_mean_logdensity", data_mean_log_density(st, cfg));
    if (!outdir.empty() && cfg.checkpoint_every_epochs > 0 &&
        (epoch + 1) % cfg.checkpoint_every_epochs == 0 && epoch + 1 < cfg.epochs) {
      const std::string tag = outdir + "/ckpt_epoch" + std::to_string(epoch + 1);
      io::save_ebm(tag + "_ebm", st.model);
      if (st.flw) io::save_flow(tag + "_flow", *st.flw);
    }
  }

  if (!outdir.empty()) {
    io::save_ebm(outdir + "/ebm", st.model);
    if (st.flw) io::save_flow(outdir + "/flow", *st.flw);
  }
  return st;
}

namespace {

// One negative-sampling phase with the trained kernel, used for final
// diagnostics. Returns x-space history snapshots in *xhist when requested.
samplers::KernelStats eval_phase(TrainState& st, const TrainConfig& cfg, samplers::ChainEnsemble& ens,
                                 bool want_history, std::vector<Mat>* xhist) {
  if (want_history) ens.enable_history(0);
  samplers::KernelStats total;
  auto accumulate = [&](const samplers::KernelStats& s) {
    total.raw_steps += s.raw_steps;
    total.stacked_steps += s.stacked_steps;
    total.mala_proposals += s.mala_proposals;
    total.mala_accepts += s.mala_accepts;
    total.global_proposals += s.global_proposals;
    total.global_moves += s.global_moves;
    total.diverged += s.diverged;
    total.isir_rejected_steps += s.isir_rejected_steps;
    total.final_step_size = s.final_step_size;
  };
  for (int rep = 0; rep < std::max(1, cfg.rhat_eval_repeats); ++rep) {
    switch (cfg.algorithm) {
      case Algorithm::FlowMcEbm: {
        samplers::FlowMcConfig fc = cfg.flowmc;
        fc.mala.step_size = st.mala_eta;
        fc.mala.target_acceptance.reset();  // frozen kernel for evaluation
        fc.adapt_flow = false;
        samplers::ResetPolicy reset = flow_reset(*st.flw);
        accumulate(samplers::flowmc_run(st.model.field(), ens, *st.flw, fc, &reset));
        break;
      }
      case Algorithm::UlaEbm: {
        samplers::ResetPolicy reset = base_reset(st.model.base());
        if (cfg.ula_kernel == "mala") {
          samplers::MalaConfig mc = cfg.mala;
          mc.step_size = st.mala_eta;
          mc.target_acceptance.reset();
          accumulate(samplers::mala_run(st.model.field(cfg.temperature), ens, mc, &reset));
        } else {
          accumulate(samplers::ula_run(st.model.field(cfg.temperature), ens, cfg.ula, &reset));
        }
        break;
      }
      case Algorithm::NtEbm: {
        numerics::ScalarField pullback = st.flw->pullback_field(st.model.field());
        samplers::MalaConfig mc = cfg.mala;
        mc.step_size = st.mala_eta;
        mc.target_acceptance.reset();
        samplers::ResetPolicy reset = base_reset(st.model.base());
        accumulate(samplers::mala_run(pullback, ens, mc, &reset));
        break;
      }
      case Algorithm::CoopFlow: {
        samplers::UlaConfig uc = cfg.ula;
        uc.noise_enabled = false;
        samplers::ResetPolicy reset = flow_reset(*st.flw);
        accumulate(samplers::ula_run(st.model.field(), ens, uc, &reset));
        break;
      }
    }
  }
  if (want_history && xhist != nullptr) {
    *xhist = take_history(ens);
    if (cfg.algorithm == Algorithm::NtEbm)
      for (auto& step : *xhist) step = st.flw->forward(step).first;
  }
  return total;
}

// Chain initialization for evaluation: persistent states for the persistent
// trainers, flow samples (latent base for NT-EBM) otherwise.
samplers::ChainEnsemble eval_ensemble(TrainState& st, const TrainConfig& cfg, int n, std::uint64_t salt) {
  const std::uint64_t seed = derived_seed(cfg.seed, kTagEval + salt);
  rng::RngStream stream(seed);
  Mat init;
  switch (cfg.algorithm) {
    case Algorithm::FlowMcEbm:
    case Algorithm::UlaEbm: {
      const int take = std::min(n, st.persistent.n());
      init = st.persistent.states.topRows(take);
      break;
    }
    case Algorithm::NtEbm: init = st.model.base().sample(n, stream); break;
    case Algorithm::CoopFlow: init = st.flw->sample(n, stream); break;
  }
  return samplers::ChainEnsemble::create(init, seed ^ 0x77777777ULL);
}

}  // namespace

std::map<std::string, double> evaluate_run(TrainState& st, const TrainConfig& cfg) {
  std::map<std::string, double> out;
  const bool is_2d = st.target.dim == 2;
  const ebm::TiltedEBM* model = &st.model;
  auto model_logdens = [model](const Mat& x) { return model->log_density_unnorm_batch(x); };

  // Split R-hat of fresh negative chains.
  {
    samplers::ChainEnsemble ens = eval_ensemble(st, cfg, cfg.rhat_eval_chains, 0);
    std::vector<Mat> hist;
    samplers::KernelStats ks = eval_phase(st, cfg, ens, true, &hist);
    if (static_cast<int>(hist.size()) >= 4 && ens.n() >= 2) {
      auto report = diagnostics::split_rhat(hist);
      out["final_max_rhat"] = report.max_rhat;
    }
    out["final_mala_accept"] = ks.mala_accept_rate();
    out["final_global_rate"] = ks.global_rate();
    out["final_eta"] = st.mala_eta;
    out["eval_raw_steps"] = static_cast<double>(ks.raw_steps);
    out["eval_stacked_steps"] = static_cast<double>(ks.stacked_steps);
    out["diverged_resets"] = static_cast<double>(st.persistent.diverged_resets + ks.diverged);
  }

  if (!st.target.modes.empty()) {
    const auto centroids = st.target.mode_centroids();
    const Vec w_data = st.target.mode_weights();

    samplers::ChainEnsemble ens = eval_ensemble(st, cfg, cfg.eval_samples, 1);
    Mat init_samples = (cfg.algorithm == Algorithm::NtEbm) ? st.flw->forward(ens.states).first : ens.states;
    eval_phase(st, cfg, ens, false, nullptr);
    Mat neg_samples = (cfg.algorithm == Algorithm::NtEbm) ? st.flw->forward(ens.states).first : ens.states;

    Vec w_init = diagnostics::mode_weights(init_samples, centroids);
    Vec w_neg = diagnostics::mode_weights(neg_samples, centroids);
    for (Eigen::Index i = 0; i < w_neg.size(); ++i)
      out["final_mode_weight_neg_" + std::to_string(i)] = w_neg[i];
    out["mse_neg_vs_data"] = diagnostics::mode_weight_mse(w_neg, w_data);
    out["mse_init_vs_data"] = diagnostics::mode_weight_mse(w_init, w_data);

    if (st.flw) {
      rng::RngStream stream(derived_seed(cfg.seed, kTagEval + 2));
      Vec w_flow = diagnostics::mode_weights(st.flw->sample(cfg.eval_samples, stream), centroids);
      out["mse_flow_vs_data"] = diagnostics::mode_weight_mse(w_flow, w_data);
      if (is_2d) {
        auto grid = diagnostics::QuadratureGrid::make(st.target.bbox_lo, st.target.bbox_hi, cfg.quad_grid);
        Vec w_model = diagnostics::model_mode_weights(model_logdens, grid, centroids);
        out["mse_flow_vs_model"] = diagnostics::mode_weight_mse(w_flow, w_model);
      }
    }
    if (is_2d) {
      auto grid = diagnostics::QuadratureGrid::make(st.target.bbox_lo, st.target.bbox_hi, cfg.quad_grid);
      Vec w_model = diagnostics::model_mode_weights(model_logdens, grid, centroids);
      for (Eigen::Index i = 0; i < w_model.size(); ++i)
        out["final_mode_weight_model_" + std::to_string(i)] = w_model[i];
      Eigen::Index heavy = 0;
      w_data.maxCoeff(&heavy);
      out["final_heavy_mode_weight"] = w_model[heavy];
      out["mse_model_vs_data"] = diagnostics::mode_weight_mse(w_model, w_data);
      out["mse_neg_vs_model"] = diagnostics::mode_weight_mse(w_neg, w_model);
      out["mse_init_vs_model"] = diagnostics::mode_weight_mse(w_init, w_model);
    }
  }

  if (is_2d) {
    auto grid = diagnostics::QuadratureGrid::make(st.target.bbox_lo, st.target.bbox_hi, cfg.quad_grid);
    Mat eval_points = st.target.sample(10000, derived_seed(cfg.seed, kTagEval + 3));
    out["median_sq_logdensity_error"] =
        diagnostics::median_sq_logdensity_error(model_logdens, grid, st.target.log_density_batch, eval_points);
    out["data_mean_logdensity"] = data_mean_log_density(st, cfg);
  }
  return out;
}

}  // namespace ebmflow::trainers
