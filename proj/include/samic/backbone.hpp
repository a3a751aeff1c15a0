#pragma once

// Frozen convolutional feature extractor. Weights are generated once from the
// backbone id's fixed seed and never receive gradients.

#include "samic/errors.hpp"
#include "samic/image.hpp"
#include "samic/nn/conv.hpp"
#include "samic/nn/layers.hpp"

#include <string>
#include <vector>

namespace samic {

// Intermediate feature maps ordered fine to coarse; each layer is channels x (h*w).
template <typename Scalar>
struct FeaturePyramid {
  std::vector<nn::Volume4<Scalar>> layers;
};

struct BackboneStage {
  int channels = 0;
  int blocks = 0;  // each block contributes one pyramid layer
};

struct BackboneSpec {
  std::string id;
  std::uint64_t seed = 0;
  std::vector<int> stem_channels;  // stride-2 convolutions ahead of the stages
  std::vector<BackboneStage> stages;  // each starts with a stride-2 block
  double residual_scale = 0.5;
  double bias_std = 0.2;
};

// Known ids: "tinyres-v1" (stride {8,16,32} stages with 4/6/3 blocks).
BackboneSpec backbone_spec(const std::string& id);

template <typename Scalar>
class Backbone {
 public:
  explicit Backbone(const std::string& id) : spec_(backbone_spec(id)) {
    int cin = 3;
    for (std::size_t i = 0; i < spec_.stem_channels.size(); ++i) {
      stem_.push_back(make_conv(spec_.id + ".stem" + std::to_string(i), cin, spec_.stem_channels[i], 2));
      cin = spec_.stem_channels[i];
    }
    for (std::size_t s = 0; s < spec_.stages.size(); ++s) {
      std::vector<nn::TapConv4d<Scalar>> convs;
      for (int b = 0; b < spec_.stages[s].blocks; ++b) {
        const std::string name = spec_.id + ".stage" + std::to_string(s) + ".block" + std::to_string(b);
        convs.push_back(make_conv(name, cin, spec_.stages[s].channels, b == 0 ? 2 : 1));
        cin = spec_.stages[s].channels;
      }
      stages_.push_back(std::move(convs));
    }
  }

  [[nodiscard]] const std::string& id() const { return spec_.id; }
  [[nodiscard]] const BackboneSpec& spec() const { return spec_; }

  // Total stride of every pyramid layer, fine to coarse.
  [[nodiscard]] std::vector<int> layer_strides() const {
    std::vector<int> out;
    int stride = 1 << spec_.stem_channels.size();
    for (const auto& stage : spec_.stages) {
      stride *= 2;
      for (int b = 0; b < stage.blocks; ++b) out.push_back(stride);
    }
    return out;
  }

  FeaturePyramid<Scalar> extract(const RgbImage& image, int expected_height, int expected_width) const {
    if (image.height != expected_height || image.width != expected_width) {
      throw DimensionError("backbone input must be " + std::to_string(expected_height) + "x" +
                           std::to_string(expected_width));
    }
    nn::Volume4<Scalar> x(3, nn::Shape4::plane(image.height, image.width));
    x.data = ((image.pixels.template cast<Scalar>().array() - Scalar(0.5)) / Scalar(0.25)).matrix();
    for (const auto& conv : stem_) x = nn::relu(conv.forward(x));
    FeaturePyramid<Scalar> pyramid;
    for (const auto& stage : stages_) {
      nn::Volume4<Scalar> h;
      for (std::size_t b = 0; b < stage.size(); ++b) {
        if (b == 0) {
          h = stage[b].forward(x);
        } else {
          nn::Volume4<Scalar> branch = stage[b].forward(nn::relu(h));
          h.data += static_cast<Scalar>(spec_.residual_scale) * branch.data;
        }
        pyramid.layers.push_back(h);  // taken before the block's final ReLU
      }
      x = nn::relu(h);
    }
    return pyramid;
  }

  // Digest over every backbone weight; equal before and after training.
  [[nodiscard]] std::uint64_t parameter_digest() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const nn::Mat<Scalar>& m) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
      for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(Scalar); ++i) {
        h = (h ^ bytes[i]) * 1099511628211ull;
      }
    };
    for (const auto& c : stem_) {
      mix(c.weight().value);
      mix(c.bias().value);
    }
    for (const auto& stage : stages_) {
      for (const auto& c : stage) {
        mix(c.weight().value);
        mix(c.bias().value);
      }
    }
    return h;
  }

 private:
  nn::TapConv4d<Scalar> make_conv(const std::string& name, int cin, int cout, int stride) const {
    auto conv = nn::make_conv2d<Scalar>(name, cin, cout, 3, stride);
    conv.init(spec_.seed);
    auto rng = nn::param_rng(spec_.seed, name + ".bias");
    std::normal_distribution<double> dist(0.0, spec_.bias_std);
    for (Eigen::Index i = 0; i < conv.bias().value.size(); ++i) {
      conv.bias().value(i) = static_cast<Scalar>(dist(rng));
    }
    return conv;
  }

  BackboneSpec spec_;
  std::vector<nn::TapConv4d<Scalar>> stem_;
  std::vector<std::vector<nn::TapConv4d<Scalar>>> stages_;
};

}  // namespace samic
