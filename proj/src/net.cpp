#include "samic/net.hpp"

#include <set>

namespace samic {

void NetConfig::validate() const {
  if (num_4dconv_layers < 1) throw ConfigError("num_4dconv_layers must be at least 1");
  if (static_cast<std::size_t>(num_4dconv_layers) > encoder_channels.size()) {
    throw ConfigError("encoder_channels lists fewer widths than num_4dconv_layers");
  }
  if (decoder_channels.size() != 2) throw ConfigError("decoder_channels must hold two widths");
  if (group_norm_groups < 1) throw ConfigError("group_norm_groups must be positive");
  for (int i = 0; i < num_4dconv_layers; ++i) {
    if (encoder_channels[static_cast<std::size_t>(i)] % group_norm_groups != 0) {
      throw ConfigError("encoder width not divisible by group_norm_groups");
    }
  }
  if (input_height < 8 || input_width < 8) throw ConfigError("input size too small");
  (void)conv_kind();
}

nn::Conv4dKind NetConfig::conv_kind() const {
  if (conv4d == "center-pivot") return nn::Conv4dKind::CenterPivot;
  if (conv4d == "dense") return nn::Conv4dKind::Dense;
  throw ConfigError("conv4d must be \"center-pivot\" or \"dense\", got \"" + conv4d + "\"");
}

nlohmann::json to_json(const NetConfig& c) {
  return {{"num_4dconv_layers", c.num_4dconv_layers},
          {"group_norm_groups", c.group_norm_groups},
          {"encoder_channels", c.encoder_channels},
          {"decoder_channels", c.decoder_channels},
          {"backbone_id", c.backbone_id},
          {"input_height", c.input_height},
          {"input_width", c.input_width},
          {"conv4d", c.conv4d},
          {"init_seed", c.init_seed}};
}

NetConfig net_config_from_json(const nlohmann::json& j, NetConfig c) {
  static const std::set<std::string> keys = {"num_4dconv_layers", "group_norm_groups", "encoder_channels",
                                             "decoder_channels",  "backbone_id",       "input_height", "input_width",
                                             "conv4d",            "init_seed"};
  for (const auto& [key, value] : j.items()) {
    if (!keys.contains(key)) throw ConfigError("unknown net config key: " + key);
  }
  try {
    c.num_4dconv_layers = j.value("num_4dconv_layers", c.num_4dconv_layers);
    c.group_norm_groups = j.value("group_norm_groups", c.group_norm_groups);
    c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
    c.decoder_channels = j.value("decoder_channels", c.decoder_channels);
    c.backbone_id = j.value("backbone_id", c.backbone_id);
    c.input_height = j.value("input_height", c.input_height);
    c.input_width = j.value("input_width", c.input_width);
    c.conv4d = j.value("conv4d", c.conv4d);
    c.init_seed = j.value("init_seed", c.init_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("net config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<nn::BlockLayerSpec> squeeze_layer_specs(const NetConfig& config, int level, int levels) {
  // Ladders indexed from the coarsest level; finer levels squeeze harder.
  static const std::vector<std::vector<int>> kKernels = {{3, 3, 3, 3}, {5, 3, 3, 3}, {5, 5, 3, 3}};
  static const std::vector<std::vector<int>> kStrides = {{2, 2, 2, 2}, {4, 2, 2, 2}, {4, 4, 2, 2}};
  const std::size_t rung = std::min<std::size_t>(static_cast<std::size_t>(levels - 1 - level), kKernels.size() - 1);
  std::vector<nn::BlockLayerSpec> specs;
  for (int i = 0; i < config.num_4dconv_layers; ++i) {
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(i), kKernels[rung].size() - 1);
    specs.push_back({config.encoder_channels[static_cast<std::size_t>(i)], kKernels[rung][k], kStrides[rung][k]});
  }
  return specs;
}

std::vector<int> level_channels_for(const std::vector<int>& layer_strides) {
  std::vector<int> out;
  for (std::size_t i = 0; i < layer_strides.size(); ++i) {
    if (i == 0 || layer_strides[i] != layer_strides[i - 1]) {
      out.push_back(1);
    } else {
      ++out.back();
    }
  }
  return out;
}

}  // namespace samic
