#pragma once

#include "samic/nn/conv.hpp"
#include "samic/nn/layers.hpp"

#include <string>
#include <vector>

namespace samic::nn {

struct BlockLayerSpec {
  int out_channels = 0;
  int kernel = 3;
  int context_stride = 1;
};

// Stack of (4-D conv -> group norm -> ReLU) stages. Used for both the squeezing
// blocks (context strides > 1) and the mixing blocks (stride 1).
template <typename Scalar>
class Block4d {
 public:
  struct Cache {
    std::vector<typename Conv4d<Scalar>::Cache> conv;
    std::vector<typename GroupNorm<Scalar>::Cache> norm;
    std::vector<Volume4<Scalar>> activation;
  };

  Block4d() = default;
  Block4d(const std::string& name, Conv4dKind kind, int in_channels, const std::vector<BlockLayerSpec>& layers,
          int groups) {
    int cin = in_channels;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& spec = layers[i];
      const std::string prefix = name + "." + std::to_string(i);
      convs_.emplace_back(prefix + ".conv", kind, cin, spec.out_channels, spec.kernel, spec.context_stride);
      norms_.emplace_back(prefix + ".gn", spec.out_channels, groups);
      cin = spec.out_channels;
    }
  }

  void init(std::uint64_t seed) {
    for (auto& c : convs_) c.init(seed);
  }

  Volume4<Scalar> forward(const Volume4<Scalar>& in, Cache* cache = nullptr) const {
    if (cache != nullptr) {
      cache->conv.assign(convs_.size(), {});
      cache->norm.assign(convs_.size(), {});
      cache->activation.assign(convs_.size(), {});
    }
    Volume4<Scalar> x = in;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      x = convs_[i].forward(x, cache ? &cache->conv[i] : nullptr);
      x = relu(norms_[i].forward(x, cache ? &cache->norm[i] : nullptr));
      if (cache != nullptr) cache->activation[i] = x;
    }
    return x;
  }

  Volume4<Scalar> backward(const Volume4<Scalar>& dout, const Cache& cache) {
    Volume4<Scalar> g = dout;
    for (std::size_t i = convs_.size(); i-- > 0;) {
      g = relu_backward(g, cache.activation[i]);
      g = norms_[i].backward(g, cache.norm[i]);
      g = convs_[i].backward(g, cache.conv[i]);
    }
    return g;
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].for_each_param(fn);
      norms_[i].for_each_param(fn);
    }
  }

  [[nodiscard]] std::size_t depth() const { return convs_.size(); }

 private:
  std::vector<Conv4d<Scalar>> convs_;
  std::vector<GroupNorm<Scalar>> norms_;
};

}  // namespace samic::nn
