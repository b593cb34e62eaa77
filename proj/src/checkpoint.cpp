#include "ebmflow/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace ebmflow::io {

static_assert(std::endian::native == std::endian::little,
              "checkpoint binaries are little-endian; add byte swapping for this platform");

namespace {

using nlohmann::json;

json layout_to_json(const numerics::ParamStore& store) {
  json layout = json::array();
  for (const auto& e : store.layout()) {
    layout.push_back({{"name", e.name}, {"offset", e.offset}, {"shape", e.shape}});
  }
  return layout;
}

void check_layout(const numerics::ParamStore& store, const json& manifest) {
  const auto& layout = manifest.at("layout");
  if (layout.size() != store.layout().size())
    throw InputError("checkpoint: layout entry count does not match architecture");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& e = store.layout()[i];
    if (layout[i].at("name").get<std::string>() != e.name ||
        layout[i].at("offset").get<std::size_t>() != e.offset ||
        layout[i].at("shape").get<std::vector<std::size_t>>() != e.shape)
      throw InputError("checkpoint: layout entry '" + e.name + "' does not match architecture");
  }
}

void write_bin(const std::string& path, const numerics::ParamStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("checkpoint: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(store.data()),
            static_cast<std::streamsize>(store.size() * sizeof(double)));
}

void read_bin(const std::string& path, numerics::ParamStore& store) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw InputError("checkpoint: cannot open '" + path + "'");
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != store.size() * sizeof(double))
    throw InputError("checkpoint: '" + path + "' has " + std::to_string(bytes) + " bytes, expected " +
                     std::to_string(store.size() * sizeof(double)));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(store.data()), static_cast<std::streamsize>(bytes));
}

json read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("checkpoint: cannot open '" + path + "'");
  json j;
  in >> j;
  return j;
}

void write_manifest(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw InputError("checkpoint: cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

}  // namespace

void save_param_store(const std::string& prefix, const numerics::ParamStore& store) {
  json manifest = {{"format", "ebmflow-params-v1"},
                   {"dtype", "f64le"},
                   {"count", store.size()},
                   {"layout", layout_to_json(store)}};
  write_manifest(prefix + ".json", manifest);
  write_bin(prefix + ".bin", store);
}

numerics::ParamStore load_param_store(const std::string& prefix) {
  json manifest = read_manifest(prefix + ".json");
  if (manifest.at("format").get<std::string>() != "ebmflow-params-v1")
    throw InputError("checkpoint: unknown format in '" + prefix + ".json'");
  numerics::ParamStore store;
  for (const auto& e : manifest.at("layout")) {
    const auto off = store.add(e.at("name").get<std::string>(), e.at("shape").get<std::vector<std::size_t>>());
    if (off != e.at("offset").get<std::size_t>())
      throw InputError("checkpoint: non-contiguous layout in '" + prefix + ".json'");
  }
  if (store.size() != manifest.at("count").get<std::size_t>())
    throw InputError("checkpoint: count does not match layout in '" + prefix + ".json'");
  read_bin(prefix + ".bin", store);
  return store;
}

void save_flow(const std::string& prefix, const flow::CouplingFlow& f) {
  json manifest = {{"format", "ebmflow-flow-v1"},
                   {"dtype", "f64le"},
                   {"count", f.params().size()},
                   {"arch",
                    {{"dim", f.dim()},
                     {"n_layers", f.n_layers()},
                     {"hidden", f.hidden_widths()},
                     {"mask", "alternating-even-odd"},
                     {"base_family", "normal"},
                     {"base_sigma2", f.base().sigma2()}}},
                   {"layout", layout_to_json(f.params())}};
  write_manifest(prefix + ".json", manifest);
  write_bin(prefix + ".bin", f.params());
}

flow::CouplingFlow load_flow(const std::string& prefix) {
  json manifest = read_manifest(prefix + ".json");
  if (manifest.at("format").get<std::string>() != "ebmflow-flow-v1")
    throw InputError("checkpoint: '" + prefix + ".json' is not a flow checkpoint");
  const auto& arch = manifest.at("arch");
  flow::BaseDistribution base(arch.at("dim").get<int>(), arch.at("base_sigma2").get<double>());
  flow::CouplingFlow f = flow::CouplingFlow::create(arch.at("dim").get<int>(), arch.at("n_layers").get<int>(),
                                                    arch.at("hidden").get<std::vector<int>>(), base, 0);
  check_layout(f.params(), manifest);
  read_bin(prefix + ".bin", f.params());
  return f;
}

void save_ebm(const std::string& prefix, const ebm::TiltedEBM& model) {
  json manifest = {{"format", "ebmflow-ebm-v1"},
                   {"dtype", "f64le"},
                   {"count", model.params().size()},
                   {"arch",
                    {{"dim", model.dim()},
                     {"hidden", model.hidden_widths()},
                     {"activation", numerics::activation_name(model.energy_net().activation())},
                     {"tilted", model.tilted()},
                     {"base_family", "normal"},
                     {"base_sigma2", model.base().sigma2()}}},
                   {"layout", layout_to_json(model.params())}};
  write_manifest(prefix + ".json", manifest);
  write_bin(prefix + ".bin", model.params());
}

ebm::TiltedEBM load_ebm(const std::string& prefix) {
  json manifest = read_manifest(prefix + ".json");
  if (manifest.at("format").get<std::string>() != "ebmflow-ebm-v1")
    throw InputError("checkpoint: '" + prefix + ".json' is not an EBM checkpoint");
  const auto& arch = manifest.at("arch");
  const int dim = arch.at("dim").get<int>();
  flow::BaseDistribution base(dim, arch.at("base_sigma2").get<double>());
  ebm::TiltedEBM model = ebm::TiltedEBM::create(
      dim, arch.at("hidden").get<std::vector<int>>(),
      numerics::activation_from_name(arch.at("activation").get<std::string>()), base, 0,
      arch.at("tilted").get<bool>());
  check_layout(model.params(), manifest);
  read_bin(prefix + ".bin", model.params());
  return model;
}

}  // namespace ebmflow::io
