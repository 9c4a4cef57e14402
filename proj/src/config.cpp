#include "privleak/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace privleak {

using nlohmann::json;

ExperimentConfig parse_config_text(const std::string& text, const json& overrides, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // e.what() carries "at line L, column C".
    throw ConfigError(origin + ": malformed JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError(origin + ": config must be a JSON object");
  if (!overrides.is_object()) throw ConfigError("overrides must be a JSON object");
  j.merge_patch(overrides);

  ExperimentConfig cfg;
  try {
    from_json(j, cfg);
    if (cfg.data_dir.empty())
      if (const char* env = std::getenv(kDataDirEnv); env && *env) cfg.data_dir = env;
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path, const json& overrides) {
  if (path.empty()) return parse_config_text("{}", overrides, "config");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str(), overrides, path.string());
}

}  // namespace privleak
