#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>

#include "privleak/experiment.hpp"

namespace privleak {

inline constexpr const char* kDataDirEnv = "PRIVLEAK_DATA_DIR";

/// Builds a config from JSON text merged with `overrides` (RFC 7386 merge
/// patch, so overrides win). Missing fields keep their defaults; an unset
/// data_dir falls back to $PRIVLEAK_DATA_DIR. Throws ConfigError with
/// line/column for malformed JSON and the field name for invalid values.
ExperimentConfig parse_config_text(const std::string& text, const nlohmann::json& overrides = nlohmann::json::object(),
                                   const std::string& origin = "config");

/// Same, reading `path`; an empty path means an empty config object.
ExperimentConfig parse_config(const std::filesystem::path& path,
                              const nlohmann::json& overrides = nlohmann::json::object());

}  // namespace privleak
