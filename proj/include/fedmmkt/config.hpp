#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fedmmkt/protocol.hpp"

namespace fedmmkt {

// Parses and fully validates a JSON config. Defaults are applied for
// optional fields; unknown keys are rejected by name; every invariant is
// checked here so a config that parses always runs.
ProtocolConfig parse_config_text(const std::string& text);
ProtocolConfig parse_config(const std::filesystem::path& path);

// Fully-expanded normalized form (all fields explicit, fixed key order).
std::string config_to_json(const ProtocolConfig& cfg);

struct ExperimentPreset {
    std::string name;
    std::string description;
    ProtocolConfig config;
};

// Shipped presets in stable order; every one of them validates.
const std::vector<ExperimentPreset>& presets();
const ExperimentPreset& find_preset(const std::string& name);

}  // namespace fedmmkt
