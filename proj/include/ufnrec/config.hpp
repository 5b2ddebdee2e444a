#pragma once

#include <string>
#include <vector>

#include "ufnrec/trainer.hpp"

namespace ufnrec::config {

// Full TrainConfig <-> JSON round trip; unknown keys are rejected.
std::string to_json_string(const trainer::TrainConfig& cfg, int indent = 2);
trainer::TrainConfig from_json_string(const std::string& text);

trainer::TrainConfig load_file(const std::string& path);
void save_file(const trainer::TrainConfig& cfg, const std::string& path);

// Set one field by its flat key (the JSON key, e.g. "alpha", "m",
// "encoder.d_model"). Throws on unknown keys or unparseable values. The CLI
// and experiment presets drive all config deltas through this single path.
void apply_override(trainer::TrainConfig& cfg, const std::string& key, const std::string& value);

const std::vector<std::string>& override_keys();

}  // namespace ufnrec::config
