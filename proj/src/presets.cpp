#include "ebmflow/presets.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace ebmflow::config {

using nlohmann::json;
using trainers::TrainConfig;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw InputError("config error at '" + path + "': " + what);
}

class Reader {
 public:
  explicit Reader(const json& j) : j_(j) {}

  template <typename T>
  T get(const std::string& key, const T& fallback) {
    mark(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(prefix_ + key, e.what());
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  json sub(const std::string& key) {
    mark(key);
    if (!j_.contains(key)) return json::object();
    if (!j_.at(key).is_object()) fail(prefix_ + key, "expected an object");
    return j_.at(key);
  }

  void set_prefix(std::string p) { prefix_ = std::move(p); }

  void check_no_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        fail(prefix_ + it.key(), "unknown key");
    }
  }

 private:
  void mark(const std::string& key) {
    if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) seen_.push_back(key);
  }

  const json& j_;
  std::string prefix_;
  std::vector<std::string> seen_;
};

trainers::NegativePolicy negative_policy_from(const std::string& s) {
  if (s == "last" || s == "last_step") return trainers::NegativePolicy::LastStep;
  if (s == "full" || s == "full_chain") return trainers::NegativePolicy::FullChain;
  if (s == "subsample" || s == "subsample_by_k") return trainers::NegativePolicy::SubsampleByK;
  throw InputError("config error at 'negative_policy': unknown value '" + s + "'");
}

trainers::StartStrategy start_from(const std::string& s) {
  if (s == "base" || s == "gaussian") return trainers::StartStrategy::Base;
  if (s == "uniform") return trainers::StartStrategy::Uniform;
  if (s == "flow") return trainers::StartStrategy::Flow;
  throw InputError("config error at 'start': unknown value '" + s + "'");
}

trainers::PretrainKind pretrain_from(const std::string& s) {
  if (s == "none") return trainers::PretrainKind::None;
  if (s == "reverse_kl") return trainers::PretrainKind::ReverseKl;
  if (s == "mle_data") return trainers::PretrainKind::MleData;
  throw InputError("config error at 'pretrain.kind': unknown value '" + s + "'");
}

}  // namespace

TrainConfig parse_train_config(const json& j) {
  if (!j.is_object()) throw InputError("config error at '': expected a JSON object");
  Reader r(j);
  TrainConfig cfg;
  if (!r.has("target")) fail("target", "required key missing");
  cfg.target_id = r.get<std::string>("target", "");
  cfg.algorithm = trainers::algorithm_from_name(r.get<std::string>("algorithm", "flowmc"));
  cfg.seed = r.get<std::uint64_t>("seed", 0);
  cfg.dataset_size = r.get<int>("dataset_size", cfg.dataset_size);
  cfg.batch_size = r.get<int>("batch_size", cfg.batch_size);
  cfg.persistent_size = r.get<int>("persistent_size", cfg.persistent_size);
  cfg.epochs = r.get<int>("epochs", cfg.epochs);
  cfg.gamma_ebm = r.get<double>("gamma_ebm", cfg.gamma_ebm);
  cfg.gamma_flow = r.get<double>("gamma_flow", cfg.gamma_flow);
  cfg.metric_cadence = r.get<int>("metric_cadence", cfg.metric_cadence);
  cfg.negative_policy = negative_policy_from(r.get<std::string>("negative_policy", "last"));
  cfg.subsample_k = r.get<int>("subsample_k", cfg.subsample_k);
  cfg.start = start_from(r.get<std::string>("start", "base"));
  cfg.temperature = r.get<double>("temperature", cfg.temperature);
  cfg.l2_reg = r.get<double>("l2_reg", cfg.l2_reg);
  cfg.untilted = r.get<bool>("untilted", cfg.untilted);
  cfg.use_adam = r.get<bool>("use_adam", cfg.use_adam);
  cfg.coop_freeze_fraction = r.get<double>("coop_freeze_fraction", cfg.coop_freeze_fraction);
  cfg.traj_grid = r.get<int>("traj_grid", cfg.traj_grid);
  cfg.quad_grid = r.get<int>("quad_grid", cfg.quad_grid);
  cfg.log_data_loglik = r.get<bool>("log_data_loglik", cfg.log_data_loglik);
  cfg.rhat_eval_chains = r.get<int>("rhat_eval_chains", cfg.rhat_eval_chains);
  cfg.rhat_eval_repeats = r.get<int>("rhat_eval_repeats", cfg.rhat_eval_repeats);
  cfg.eval_samples = r.get<int>("eval_samples", cfg.eval_samples);
  cfg.checkpoint_every_epochs = r.get<int>("checkpoint_every_epochs", cfg.checkpoint_every_epochs);
  cfg.base_sigma2 = r.get<double>("base_sigma2", cfg.base_sigma2);
  cfg.nt_flow_update = r.get<std::string>("nt_flow_update", cfg.nt_flow_update);
  cfg.ula_kernel = r.get<std::string>("ula_kernel", cfg.ula_kernel);

  {
    json sub = r.sub("pretrain");
    Reader rp(sub);
    rp.set_prefix("pretrain.");
    cfg.pretrain.kind = pretrain_from(rp.get<std::string>("kind", "none"));
    cfg.pretrain.steps = rp.get<int>("steps", cfg.pretrain.steps);
    cfg.pretrain.rate = rp.get<double>("rate", cfg.pretrain.rate);
    cfg.pretrain.batch = rp.get<int>("batch", cfg.pretrain.batch);
    rp.check_no_unknown();
  }
  {
    json sub = r.sub("energy_net");
    Reader re(sub);
    re.set_prefix("energy_net.");
    cfg.energy_net.hidden = re.get<std::vector<int>>("hidden", cfg.energy_net.hidden);
    cfg.energy_net.activation =
        numerics::activation_from_name(re.get<std::string>("activation", "softplus"));
    re.check_no_unknown();
  }
  {
    json sub = r.sub("flow_net");
    Reader rf(sub);
    rf.set_prefix("flow_net.");
    cfg.flow_net.n_layers = rf.get<int>("n_layers", cfg.flow_net.n_layers);
    cfg.flow_net.hidden = rf.get<std::vector<int>>("hidden", cfg.flow_net.hidden);
    rf.check_no_unknown();
  }
  {
    json sub = r.sub("ula");
    Reader ru(sub);
    ru.set_prefix("ula.");
    cfg.ula.step_size = ru.get<double>("step_size", cfg.ula.step_size);
    cfg.ula.n_steps = ru.get<int>("n_steps", cfg.ula.n_steps);
    cfg.ula.noise_enabled = ru.get<bool>("noise", cfg.ula.noise_enabled);
    ru.check_no_unknown();
  }
  {
    json sub = r.sub("mala");
    Reader rm(sub);
    rm.set_prefix("mala.");
    cfg.mala.step_size = rm.get<double>("step_size", cfg.mala.step_size);
    cfg.mala.n_steps = rm.get<int>("n_steps", cfg.mala.n_steps);
    if (rm.has("target_acceptance")) {
      const double ta = rm.get<double>("target_acceptance", 0.75);
      cfg.mala.target_acceptance = ta;
    }
    cfg.mala.adaptation_rate = rm.get<double>("adaptation_rate", cfg.mala.adaptation_rate);
    cfg.mala.adapt_fraction = rm.get<double>("adapt_fraction", cfg.mala.adapt_fraction);
    rm.check_no_unknown();
  }
  {
    json sub = r.sub("flowmc");
    Reader rf(sub);
    rf.set_prefix("flowmc.");
    cfg.flowmc.n_blocks = rf.get<int>("n_blocks", cfg.flowmc.n_blocks);
    cfg.flowmc.n_global = rf.get<int>("n_global", cfg.flowmc.n_global);
    cfg.flowmc.n_local = rf.get<int>("n_local", cfg.flowmc.n_local);
    const std::string kind = rf.get<std::string>("global_kind", "isir");
    if (kind == "isir")
      cfg.flowmc.global_kind = samplers::GlobalKind::Isir;
    else if (kind == "imh" || kind == "independent_mh")
      cfg.flowmc.global_kind = samplers::GlobalKind::IndependentMh;
    else
      fail("flowmc.global_kind", "unknown value '" + kind + "'");
    cfg.flowmc.isir_particles = rf.get<int>("isir_particles", cfg.flowmc.isir_particles);
    cfg.flowmc.mala.step_size = rf.get<double>("mala_step", cfg.flowmc.mala.step_size);
    if (rf.has("mala_target_acceptance")) {
      const double ta = rf.get<double>("mala_target_acceptance", 0.75);
      cfg.flowmc.mala.target_acceptance = ta;
    }
    cfg.flowmc.mala.adaptation_rate = rf.get<double>("mala_adaptation_rate", cfg.flowmc.mala.adaptation_rate);
    rf.check_no_unknown();
  }
  r.check_no_unknown();
  trainers::validate(cfg);
  return cfg;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path + "'");
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw InputError("cannot parse '" + path + "': " + e.what());
  }
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw InputError("override '" + assignment + "' is not of the form key=value");
  std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  std::string pointer = "/";
  for (char c : path) pointer += (c == '.') ? '/' : c;
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // plain string
  }
  try {
    j[json::json_pointer(pointer)] = parsed;
  } catch (const json::exception& e) {
    throw InputError("cannot apply override '" + assignment + "': " + e.what());
  }
}

json resolve_preset(const json& preset, const std::string& algorithm) {
  if (!preset.is_object()) throw InputError("preset: expected a JSON object");
  json flat = preset;
  json algorithms = json::object();
  if (flat.contains("algorithms")) {
    algorithms = flat.at("algorithms");
    flat.erase("algorithms");
  }
  if (!algorithms.contains(algorithm)) {
    std::string known;
    for (auto it = algorithms.begin(); it != algorithms.end(); ++it) {
      if (!known.empty()) known += ", ";
      known += it.key();
    }
    throw InputError("preset has no algorithm '" + algorithm + "' (available: " + known + ")");
  }
  flat.merge_patch(algorithms.at(algorithm));
  flat["algorithm"] = algorithm;
  return flat;
}

std::string preset_path(const std::string& preset_dir, const std::string& id) {
  const std::filesystem::path p = std::filesystem::path(preset_dir) / (id + ".json");
  if (!std::filesystem::exists(p))
    throw InputError("unknown preset '" + id + "' (no file " + p.string() + ")");
  return p.string();
}

std::vector<std::string> list_presets(const std::string& preset_dir) {
  std::vector<std::string> out;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(preset_dir, ec)) {
    if (entry.path().extension() == ".json") out.push_back(entry.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace ebmflow::config
