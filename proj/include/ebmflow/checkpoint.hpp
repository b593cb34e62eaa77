#pragma once

#include <string>

#include "ebmflow/coupling_flow.hpp"
#include "ebmflow/param_store.hpp"
#include "ebmflow/tilted_ebm.hpp"

namespace ebmflow::io {

// Checkpoint format: "<prefix>.json" holds the manifest (layout descriptors
// plus, for models, an architecture header) and "<prefix>.bin" the raw
// little-endian float64 parameter array. Round-trips are bit-exact.

void save_param_store(const std::string& prefix, const numerics::ParamStore& store);
numerics::ParamStore load_param_store(const std::string& prefix);

void save_flow(const std::string& prefix, const flow::CouplingFlow& f);
flow::CouplingFlow load_flow(const std::string& prefix);

void save_ebm(const std::string& prefix, const ebm::TiltedEBM& model);
ebm::TiltedEBM load_ebm(const std::string& prefix);

}  // namespace ebmflow::io
