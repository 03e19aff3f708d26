#ifndef HLFIT_CONFIG_HPP
#define HLFIT_CONFIG_HPP

#include <map>
#include <string>

#include "hlfit/model.hpp"

namespace hlfit {

// Model configuration files are flat `key = value` text ('#' comments).
// Unknown keys are errors; all values default to the reference preset, so an
// empty file reproduces the standard simulation setup.
HivModelConfig model_config_from_string(const std::string& text);
HivModelConfig model_config_from_file(const std::string& path);

// Fully-resolved snapshot (every key explicit); parsing it back yields the
// same configuration. Used by run manifests.
std::string model_config_to_string(const HivModelConfig& config);

} // namespace hlfit

#endif
