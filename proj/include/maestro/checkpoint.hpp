#pragma once

#include <string>

#include "maestro/model.hpp"
#include "maestro/train.hpp"

namespace maestro {

/// Checkpoint: format version, config echo, input schema, normalization
/// stats, and the full parameter registry. JSON with shortest round-trip
/// doubles, so save/load is bit-exact.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

/// Flat key-value config file (JSON object, one level; schema columns use
/// dotted "schema.<column>" keys). Unknown keys are errors. Every field has
/// a default, so {} is a valid file.
struct FileConfig {
    ModelConfig model;
    TrainConfig train;
    // column -> modality; any schema.* key in the file replaces the default
    std::map<std::string, Modality> schema = {{"ili", Modality::Surveillance},
                                              {"search", Modality::Trends},
                                              {"temp", Modality::Weather}};
    std::string target_column = "ili";
    MissingPolicy missing = MissingPolicy::ForwardFill;
};

FileConfig load_config_file(const std::string& path);
FileConfig parse_config_json(const std::string& text, const std::string& origin);

/// Full echo of every config value (defaults included), as the flat
/// key-value document the loader accepts.
std::string config_echo_json(const FileConfig& cfg);

} // namespace maestro
