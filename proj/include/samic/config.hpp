#pragma once

// Run configuration files. One document with sections named after the config
// structs and keys named after their fields:
//   [net]  [train] [train.losses]  [heatmap]  [segmenter] backend  [data] manifest, benchmark
// Accepted as TOML (.toml) or JSON (anything else).

#include "samic/heatmap.hpp"
#include "samic/net.hpp"
#include "samic/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace samic {

struct RunConfig {
  NetConfig net;
  TrainConfig train;
  HeatmapConfig heatmap;
  std::string segmenter = "mock";
  std::filesystem::path manifest;
  std::string benchmark;
};

nlohmann::json load_config_document(const std::filesystem::path& path);
nlohmann::json parse_toml(const std::string& text);

// Applies a config document over `base`; unknown sections or keys are ConfigErrors.
RunConfig apply_config(const nlohmann::json& doc, RunConfig base = {});
nlohmann::ordered_json to_json(const RunConfig& config);

}  // namespace samic
