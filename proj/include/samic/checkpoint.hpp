#pragma once

// Versioned weight archive: "SAMIC-CKPT-1\n", u64 LE header length, JSON header
// (net config, pyramid level channels, parameter table), then float32 LE data
// in parameter-table order. Byte-identical for identical weights.

#include "samic/net.hpp"

#include <filesystem>
#include <string>

namespace samic {

inline constexpr std::string_view kCheckpointMagic = "SAMIC-CKPT-1\n";

std::string serialize_checkpoint(CorrelationNet<float>& net);
CorrelationNet<float> deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, CorrelationNet<float>& net);
CorrelationNet<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace samic
