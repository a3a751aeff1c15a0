#include "samic/backbone.hpp"

namespace samic {

BackboneSpec backbone_spec(const std::string& id) {
  if (id == "tinyres-v1") {
    BackboneSpec spec;
    spec.id = id;
    spec.seed = 0x5a31c0de;
    spec.stem_channels = {16, 32};
    spec.stages = {{64, 4}, {128, 6}, {256, 3}};
    return spec;
  }
  if (id == "tinyres-mini") {
    // Narrow variant for fast unit tests.
    BackboneSpec spec;
    spec.id = id;
    spec.seed = 0x5a31c0de;
    spec.stem_channels = {8, 8};
    spec.stages = {{16, 2}, {16, 2}, {16, 1}};
    return spec;
  }
  throw ConfigError("unknown backbone id: " + id);
}

}  // namespace samic
