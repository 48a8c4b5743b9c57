#pragma once

#include <map>
#include <string>

#include "dmz/trainer.hpp"

namespace dmz::io {

// Flat `key = value` config text, one pair per line, '#' comments. Keys
// mirror TrainConfig field names; list values are comma separated.
std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::map<std::string, std::string> load_kv_file(const std::string& path);

// Applies the pairs on top of cfg; unknown keys are a config error.
void apply_config(train::TrainConfig& cfg,
                  const std::map<std::string, std::string>& kv);

// Full round-trip text of a config, in the same flat format.
std::string config_to_kv_text(const train::TrainConfig& cfg);

}  // namespace dmz::io
