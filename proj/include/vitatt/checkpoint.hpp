// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "vitatt/model.hpp"

namespace vitatt {

inline constexpr std::string_view kCheckpointMagic = "VITATT-CKPT-1";

// A JSON document: {"format": "VITATT-CKPT-1", "config": {...},
// "parameters": {name: {"shape": [...], "data": [...]}}, "buffers": {...},
// "extra": {...}}. Doubles are written with round-trip precision, so a
// save/load cycle reproduces every weight bit for bit.
struct Checkpoint {
  ModelConfig config;
  VitAttParams params;
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json config_to_json(const ModelConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig config_from_json(const nlohmann::json& j);

std::string serialize_checkpoint(const ModelConfig& config, const VitAttParams& params,
                                 const nlohmann::json& extra = nlohmann::json::object());
Checkpoint parse_checkpoint(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const VitAttParams& params,
                     const nlohmann::json& extra = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vitatt
