// Command-line entry point: run experiment presets, train custom configs,
// sample from checkpoints and compute diagnostics. All outputs are plain
// CSV/JSON plus binary checkpoint pairs; reruns with the same seed produce
// byte-identical data artifacts.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ebmflow/checkpoint.hpp"
#include "ebmflow/diagnostics.hpp"
#include "ebmflow/exec.hpp"
#include "ebmflow/metric_log.hpp"
#include "ebmflow/presets.hpp"
#include "ebmflow/samplers.hpp"
#include "ebmflow/targets.hpp"
#include "ebmflow/trace_csv.hpp"
#include "ebmflow/trainers.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using namespace ebmflow;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v != nullptr ? std::string(v) : fallback;
}

void apply_threads(int threads) {
  if (threads <= 0) {
    const std::string env = env_or("EBMFLOW_THREADS", "");
    if (!env.empty()) threads = std::stoi(env);
  }
  if (threads > 0) exec::set_threads(threads);
}

std::optional<std::uint64_t> seed_fallback() {
  const std::string env = env_or("EBMFLOW_SEED", "");
  if (env.empty()) return std::nullopt;
  return std::stoull(env);
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

// 300x300 grid of energy / unnormalized log-density for external plotting.
void write_density_grid(const std::string& path, const ebm::TiltedEBM& model,
                        const targets::TargetDistribution& target, int per_axis = 300) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << "x,y,energy,log_density_unnorm\n";
  const double hx = (target.bbox_hi[0] - target.bbox_lo[0]) / (per_axis - 1);
  const double hy = (target.bbox_hi[1] - target.bbox_lo[1]) / (per_axis - 1);
  for (int i = 0; i < per_axis; ++i) {
    Eigen::MatrixXd row(per_axis, 2);
    for (int j = 0; j < per_axis; ++j) {
      row(j, 0) = target.bbox_lo[0] + hx * i;
      row(j, 1) = target.bbox_lo[1] + hy * j;
    }
    Eigen::VectorXd e = model.energy_batch(row);
    Eigen::VectorXd ld = model.log_density_unnorm_batch(row);
    for (int j = 0; j < per_axis; ++j) {
      out << io::format_double(row(j, 0)) << ',' << io::format_double(row(j, 1)) << ','
          << io::format_double(e[j]) << ',' << io::format_double(ld[j]) << '\n';
    }
  }
}

void write_rhat_training_csv(const std::string& path, const io::MetricLog& log,
                             const std::string& algorithm, int dim) {
  const auto series = log.series("rhat_max_iter");
  if (series.empty()) return;
  std::ofstream out(path);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << "iteration,algorithm,dim,max_rhat\n";
  for (const auto& [it, v] : series)
    out << it << ',' << algorithm << ',' << dim << ',' << io::format_double(v) << '\n';
}

struct CommonRunArgs {
  std::string outdir = "runs/out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> overrides;
  int threads = 0;
};

int run_training(json flat, const CommonRunArgs& args, bool with_summary) {
  for (const auto& ov : args.overrides) config::apply_override(flat, ov);
  if (args.seed_set) flat["seed"] = args.seed;
  if (!flat.contains("seed")) {
    const auto fb = seed_fallback();
    if (!fb) {
      std::cerr << "error: a seed is required (--seed or EBMFLOW_SEED)\n";
      return kExitUsage;
    }
    flat["seed"] = *fb;
  }
  trainers::TrainConfig cfg = config::parse_train_config(flat);

  fs::create_directories(args.outdir);
  write_json_file(args.outdir + "/run_config.json", flat);

  trainers::TrainState st = trainers::train(cfg, args.outdir);
  st.log.write_csv(args.outdir + "/metrics.csv");
  write_rhat_training_csv(args.outdir + "/rhat_training.csv", st.log, trainers::algorithm_name(cfg.algorithm),
                          st.target.dim);
  if (st.target.dim == 2) write_density_grid(args.outdir + "/density_grid.csv", st.model, st.target);

  if (with_summary) {
    auto summary = trainers::evaluate_run(st, cfg);
    json js = json::object();
    for (const auto& [k, v] : summary) js[k] = v;
    js["algorithm"] = trainers::algorithm_name(cfg.algorithm);
    js["target"] = cfg.target_id;
    js["seed"] = cfg.seed;
    js["iterations"] = st.iteration;
    js["flow_updates_skipped"] = st.flow_updates_skipped;
    write_json_file(args.outdir + "/summary.json", js);
  }
  return kExitOk;
}

int cmd_reproduce(const std::string& preset_id, const std::string& algo, const std::string& preset_dir,
                  const CommonRunArgs& args) {
  std::string path;
  try {
    path = config::preset_path(preset_dir, preset_id);
  } catch (const InputError&) {
    std::cerr << "error: unknown preset '" << preset_id << "'. Available presets:";
    for (const auto& p : config::list_presets(preset_dir)) std::cerr << ' ' << p;
    std::cerr << '\n';
    return kExitUsage;
  }
  json preset = config::load_json_file(path);
  json flat = config::resolve_preset(preset, algo);
  return run_training(flat, args, /*with_summary=*/true);
}

int cmd_train(const std::string& config_path, const CommonRunArgs& args) {
  json flat = config::load_json_file(config_path);
  return run_training(flat, args, /*with_summary=*/false);
}

int cmd_sample(const std::string& checkpoint, const std::string& flow_prefix, const std::string& sampler,
               int n, int steps, std::uint64_t seed, const std::string& out_path, int isir_particles,
               double step_size) {
  ebm::TiltedEBM model = io::load_ebm(checkpoint);
  std::optional<flow::CouplingFlow> flw;
  if (!flow_prefix.empty()) flw = io::load_flow(flow_prefix);

  rng::RngStream init_stream(rng::RngStream::substream(seed, 0xCAFEULL).next_u64());
  Eigen::MatrixXd init = (flw && (sampler == "flowmc" || sampler == "isir"))
                             ? flw->sample(std::max(n, 0), init_stream)
                             : model.base().sample(std::max(n, 0), init_stream);
  samplers::ChainEnsemble chains = samplers::ChainEnsemble::create(init, seed);
  chains.enable_history(0);

  samplers::KernelStats stats;
  if (n > 0 && steps > 0) {
    if (sampler == "ula") {
      samplers::UlaConfig cfg{step_size, steps, true};
      stats = samplers::ula_run(model.field(), chains, cfg);
    } else if (sampler == "mala") {
      samplers::MalaConfig cfg;
      cfg.step_size = step_size;
      cfg.n_steps = steps;
      stats = samplers::mala_run(model.field(), chains, cfg);
    } else if (sampler == "isir") {
      samplers::IsirConfig cfg{isir_particles, steps};
      samplers::Proposal prop = samplers::proposal_from_flow(*flw);
      stats = samplers::isir_run(model.field(), prop, chains, cfg);
    } else {
      samplers::FlowMcConfig cfg;
      cfg.n_blocks = steps;
      cfg.n_global = 1;
      cfg.n_local = 4;
      cfg.isir_particles = isir_particles;
      cfg.mala.step_size = step_size;
      stats = samplers::flowmc_run(model.field(), chains, *flw, cfg);
    }
  }
  std::vector<Eigen::MatrixXd> steps_hist(chains.history->steps.begin(), chains.history->steps.end());
  io::write_trace_csv(out_path, init, steps_hist);
  std::cout << "chains=" << n << " steps=" << stats.raw_steps << " global_rate=" << stats.global_rate()
            << " mala_accept=" << stats.mala_accept_rate() << " diverged=" << stats.diverged << '\n';
  return kExitOk;
}

int cmd_diagnose(const std::string& samples_path, const std::vector<std::string>& metrics,
                 const std::string& checkpoint, const std::string& target_id, const std::string& out_prefix) {
  io::TraceData trace = io::read_trace_csv(samples_path);
  std::optional<ebm::TiltedEBM> model;
  if (!checkpoint.empty()) model = io::load_ebm(checkpoint);
  std::optional<targets::TargetDistribution> target;
  if (!target_id.empty()) target = targets::make_target(target_id);

  json report = json::object();
  for (const auto& metric : metrics) {
    if (metric == "rhat") {
      if (trace.steps.size() < 4) throw InputError("diagnose: rhat needs at least 4 recorded steps");
      auto r = diagnostics::split_rhat(trace.steps);
      report["max_rhat"] = r.max_rhat;
      for (Eigen::Index j = 0; j < r.per_dimension.size(); ++j)
        report["rhat_dim_" + std::to_string(j)] = r.per_dimension[j];
    } else if (metric == "mode_weights") {
      if (!target || target->modes.empty())
        throw InputError("diagnose: mode_weights needs --target with mode metadata");
      Eigen::VectorXd w = diagnostics::mode_weights(trace.all_rows, target->mode_centroids());
      for (Eigen::Index j = 0; j < w.size(); ++j) report["mode_weight_" + std::to_string(j)] = w[j];
    } else if (metric == "med_sq_err") {
      if (!model) throw InputError("diagnose: med_sq_err needs --checkpoint");
      if (!target) throw InputError("diagnose: med_sq_err needs --target");
      if (target->dim != 2) throw InputError("diagnose: med_sq_err requires a 2D target");
      const ebm::TiltedEBM* m = &*model;
      auto grid = diagnostics::QuadratureGrid::make(target->bbox_lo, target->bbox_hi, 1000);
      report["med_sq_err"] = diagnostics::median_sq_logdensity_error(
          [m](const Eigen::MatrixXd& x) { return m->log_density_unnorm_batch(x); }, grid,
          target->log_density_batch, trace.all_rows);
    } else if (metric == "energy_hist") {
      if (!model) throw InputError("diagnose: energy_hist needs --checkpoint");
      Eigen::VectorXd e = model->energy_batch(trace.all_rows);
      auto h = diagnostics::energy_histogram(e, 64);
      std::ofstream out(out_prefix + "_energy_hist.csv");
      out << "bin_lo,bin_hi,count\n";
      const double width = (h.hi - h.lo) / static_cast<double>(h.counts.size());
      for (std::size_t b = 0; b < h.counts.size(); ++b)
        out << io::format_double(h.lo + width * static_cast<double>(b)) << ','
            << io::format_double(h.lo + width * static_cast<double>(b + 1)) << ',' << h.counts[b] << '\n';
      report["energy_hist_bins"] = h.counts.size();
      report["energy_min"] = h.lo;
      report["energy_max"] = h.hi;
    } else {
      throw InputError("diagnose: unknown metric '" + metric +
                       "' (expected rhat|mode_weights|med_sq_err|energy_hist)");
    }
  }
  write_json_file(out_prefix + ".json", report);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EBM training with flow-assisted MCMC sampling"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CommonRunArgs run_args;
  int threads = 0;
  app.add_option("--threads", threads, "Worker-thread cap (does not change results)");

  std::string preset_id, algo = "flowmc";
  std::string preset_dir = env_or("EBMFLOW_PRESET_DIR", EBMFLOW_DEFAULT_PRESET_DIR);
  auto* reproduce = app.add_subcommand("reproduce", "Run a bundled experiment preset end-to-end");
  reproduce->add_option("preset", preset_id, "Preset id")->required();
  reproduce->add_option("--algo", algo, "Algorithm: flowmc|ula|nt|coopflow");
  reproduce->add_option("--preset-dir", preset_dir, "Preset directory");
  reproduce->add_option("--seed", run_args.seed, "Run seed")->each([&](const std::string&) {
    run_args.seed_set = true;
  });
  reproduce->add_option("--outdir", run_args.outdir, "Output directory");
  reproduce->add_option("--set", run_args.overrides, "Config override key=value (repeatable)");

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train from a config file");
  train->add_option("--config", config_path, "Run config JSON")->required();
  train->add_option("--seed", run_args.seed, "Run seed")->each([&](const std::string&) {
    run_args.seed_set = true;
  });
  train->add_option("--outdir", run_args.outdir, "Output directory");
  train->add_option("--set", run_args.overrides, "Config override key=value (repeatable)");
  double gamma_ebm_flag = -1.0;
  int epochs_flag = -1;
  train->add_option("--gamma-ebm", gamma_ebm_flag, "Override gamma_ebm");
  train->add_option("--epochs", epochs_flag, "Override epochs");

  std::string checkpoint, flow_prefix, sampler_id = "flowmc", sample_out = "samples.csv";
  int sample_n = 0, sample_steps = 0, isir_particles = 32;
  double sample_step_size = 1e-2;
  std::uint64_t sample_seed = 0;
  bool sample_seed_set = false;
  auto* sample = app.add_subcommand("sample", "Sample a checkpointed model");
  sample->add_option("--checkpoint", checkpoint, "EBM checkpoint prefix")->required();
  sample->add_option("--flow", flow_prefix, "Companion flow checkpoint prefix");
  sample->add_option("--sampler", sampler_id, "ula|mala|isir|flowmc");
  sample->add_option("--n", sample_n, "Number of chains")->required();
  sample->add_option("--steps", sample_steps, "Steps per chain")->required();
  sample->add_option("--seed", sample_seed, "Seed")->each([&](const std::string&) {
    sample_seed_set = true;
  });
  sample->add_option("--out", sample_out, "Trace CSV path");
  sample->add_option("--isir-particles", isir_particles, "i-SIR pool size");
  sample->add_option("--step-size", sample_step_size, "Langevin step size");

  std::string samples_path, metrics_arg, diag_checkpoint, diag_target, diag_out = "report";
  auto* diagnose = app.add_subcommand("diagnose", "Compute diagnostics from sample CSVs");
  diagnose->add_option("--samples", samples_path, "Trace CSV")->required();
  diagnose->add_option("--metric", metrics_arg, "Comma-separated metric ids")->required();
  diagnose->add_option("--checkpoint", diag_checkpoint, "EBM checkpoint prefix");
  diagnose->add_option("--target", diag_target, "Target id");
  diagnose->add_option("--out", diag_out, "Report path prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    apply_threads(threads);
    if (reproduce->parsed()) return cmd_reproduce(preset_id, algo, preset_dir, run_args);
    if (train->parsed()) {
      if (gamma_ebm_flag >= 0.0) run_args.overrides.push_back("gamma_ebm=" + std::to_string(gamma_ebm_flag));
      if (epochs_flag >= 0) run_args.overrides.push_back("epochs=" + std::to_string(epochs_flag));
      return cmd_train(config_path, run_args);
    }
    if (sample->parsed()) {
      if (!sample_seed_set) {
        const auto fb = seed_fallback();
        if (!fb) {
          std::cerr << "error: a seed is required (--seed or EBMFLOW_SEED)\n";
          return kExitUsage;
        }
        sample_seed = *fb;
      }
      if (sampler_id != "ula" && sampler_id != "mala" && sampler_id != "isir" && sampler_id != "flowmc") {
        std::cerr << "error: unknown sampler '" << sampler_id << "'\n";
        return kExitUsage;
      }
      if ((sampler_id == "flowmc" || sampler_id == "isir") && flow_prefix.empty()) {
        std::cerr << "error: sampler '" << sampler_id << "' needs --flow <checkpoint prefix>\n";
        return kExitUsage;
      }
      return cmd_sample(checkpoint, flow_prefix, sampler_id, sample_n, sample_steps, sample_seed, sample_out,
                        isir_particles, sample_step_size);
    }
    if (diagnose->parsed()) {
      std::vector<std::string> metrics;
      std::stringstream ss(metrics_arg);
      std::string m;
      while (std::getline(ss, m, ',')) metrics.push_back(m);
      return cmd_diagnose(samples_path, metrics, diag_checkpoint, diag_target, diag_out);
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
