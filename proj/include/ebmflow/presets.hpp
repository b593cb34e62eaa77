#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ebmflow/trainers.hpp"

namespace ebmflow::config {

// Parses a flat run-config JSON document into a TrainConfig. Unknown keys and
// type mismatches raise InputError with the offending field path.
trainers::TrainConfig parse_train_config(const nlohmann::json& j);

nlohmann::json load_json_file(const std::string& path);

// Applies one "dotted.path=value" override to a config document. Values are
// parsed as JSON when possible and fall back to strings.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Resolves a preset file (shared keys + per-algorithm patches under
// "algorithms") into a flat config document for one algorithm.
nlohmann::json resolve_preset(const nlohmann::json& preset, const std::string& algorithm);

// Locates "<id>.json" inside the preset directory.
std::string preset_path(const std::string& preset_dir, const std::string& id);
std::vector<std::string> list_presets(const std::string& preset_dir);

}  // namespace ebmflow::config
