#pragma once

// In-context heatmap predictor: hypercorrelation pyramid -> per-level squeezing
// blocks -> top-down mixing -> mean over context axes -> 2-D decoder -> softmax
// foreground channel, max-normalized.

#include "samic/correlation.hpp"
#include "samic/errors.hpp"
#include "samic/losses.hpp"
#include "samic/nn/block.hpp"

#include <json.hpp>

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

namespace samic {

struct NetConfig {
  int num_4dconv_layers = 3;
  int group_norm_groups = 4;
  std::vector<int> encoder_channels = {16, 64, 128, 256};  // width of layer i of every squeezing block
  std::vector<int> decoder_channels = {128, 64};
  std::string backbone_id = "tinyres-v1";
  int input_height = 224;
  int input_width = 224;
  std::string conv4d = "center-pivot";  // or "dense"
  std::uint64_t init_seed = 0;

  void validate() const;
  [[nodiscard]] nn::Conv4dKind conv_kind() const;
  // Width after the squeezing blocks (and of the mixing blocks).
  [[nodiscard]] int code_channels() const {
    return encoder_channels.at(static_cast<std::size_t>(num_4dconv_layers - 1));
  }
};

nlohmann::json to_json(const NetConfig& config);
// Missing keys keep the values of `base`; unknown keys are rejected.
NetConfig net_config_from_json(const nlohmann::json& j, NetConfig base = {});

// Kernel extents and context strides of the squeezing block at pyramid level
// `level` (0 = finest) when the pyramid has `levels` levels.
std::vector<nn::BlockLayerSpec> squeeze_layer_specs(const NetConfig& config, int level, int levels);

template <typename Scalar>
class CorrelationNet {
 public:
  struct Tape {
    std::vector<nn::Shape4> level_shapes;
    std::vector<typename nn::Block4d<Scalar>::Cache> squeeze;
    std::vector<typename nn::Block4d<Scalar>::Cache> mix;  // indexed by the lower level
    std::vector<nn::Shape4> mix_upper_shape;
    nn::Shape4 pooled_from;
    std::vector<typename nn::TapConv4d<Scalar>::Cache> dec;
    std::vector<nn::Volume4<Scalar>> dec_act;
    nn::Shape4 logits_shape;
    Map2<Scalar> foreground;  // the normalized output
    Map2<Scalar> background;  // 1 - sigmoid(l1 - l0)
    Eigen::Index argmax = 0;
  };

  // `level_channels[i]` = number of backbone layers at pyramid level i (fine to coarse).
  CorrelationNet(NetConfig config, std::vector<int> level_channels)
      : config_(std::move(config)), level_channels_(std::move(level_channels)) {
    config_.validate();
    const int levels = static_cast<int>(level_channels_.size());
    if (levels < 1) throw ConfigError("correlation net needs at least one pyramid level");
    const auto kind = config_.conv_kind();
    const int width = config_.code_channels();
    for (int l = 0; l < levels; ++l) {
      squeeze_.emplace_back("squeeze" + std::to_string(l), kind, level_channels_[static_cast<std::size_t>(l)],
                            squeeze_layer_specs(config_, l, levels), config_.group_norm_groups);
    }
    std::vector<nn::BlockLayerSpec> mix_specs(static_cast<std::size_t>(config_.num_4dconv_layers),
                                              nn::BlockLayerSpec{width, 3, 1});
    for (int l = 0; l + 1 < levels; ++l) {
      mix_.emplace_back("mix" + std::to_string(l), kind, width, mix_specs, config_.group_norm_groups);
    }
    const int d0 = config_.decoder_channels.at(0);
    const int d1 = config_.decoder_channels.at(1);
    decoder_.push_back(nn::make_conv2d<Scalar>("decoder.0", width, d0, 3));
    decoder_.push_back(nn::make_conv2d<Scalar>("decoder.1", d0, d1, 3));
    decoder_.push_back(nn::make_conv2d<Scalar>("decoder.2", d1, d1, 3));
    decoder_.push_back(nn::make_conv2d<Scalar>("decoder.3", d1, 2, 3));
    for (auto& b : squeeze_) b.init(config_.init_seed);
    for (auto& b : mix_) b.init(config_.init_seed);
    for (std::size_t i = 0; i < decoder_.size(); ++i) decoder_[i].init(config_.init_seed, i + 1 < decoder_.size() ? 2.0 : 1.0);
  }

  [[nodiscard]] const NetConfig& config() const { return config_; }
  [[nodiscard]] const std::vector<int>& level_channels() const { return level_channels_; }

  // Predicted heatmap (input_height x input_width, max 1). Records a tape when given one.
  Map2<Scalar> forward(const HypercorrelationPyramid<Scalar>& hcp, Tape* tape = nullptr) const {
    const std::size_t levels = squeeze_.size();
    if (hcp.levels.size() != levels) throw DimensionError("hypercorrelation level count does not match the net");
    if (tape != nullptr) {
      tape->level_shapes.clear();
      tape->squeeze.assign(levels, {});
      tape->mix.assign(mix_.size(), {});
      tape->mix_upper_shape.assign(mix_.size(), {});
      tape->dec.assign(decoder_.size(), {});
      tape->dec_act.assign(decoder_.size(), {});
    }
    std::vector<nn::Volume4<Scalar>> squeezed(levels);
    for (std::size_t l = 0; l < levels; ++l) {
      if (tape != nullptr) tape->level_shapes.push_back(hcp.levels[l].shape);
      squeezed[l] = squeeze_[l].forward(hcp.levels[l], tape ? &tape->squeeze[l] : nullptr);
    }
    nn::Volume4<Scalar> top = squeezed[levels - 1];
    for (std::size_t l = levels - 1; l-- > 0;) {
      const nn::Resize4<Scalar> up(top.shape, squeezed[l].shape);
      if (tape != nullptr) tape->mix_upper_shape[l] = top.shape;
      nn::Volume4<Scalar> merged = up.forward(top);
      merged.data += squeezed[l].data;
      top = mix_[l].forward(merged, tape ? &tape->mix[l] : nullptr);
    }
    if (tape != nullptr) tape->pooled_from = top.shape;
    nn::Volume4<Scalar> x = nn::mean_over_context(top);

    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      if (i == 2) x = nn::Resize4<Scalar>(x.shape, nn::Shape4::plane(2 * x.shape.hb, 2 * x.shape.wb)).forward(x);
      x = decoder_[i].forward(x, tape ? &tape->dec[i] : nullptr);
      if (i + 1 < decoder_.size()) x = nn::relu(x);
      if (tape != nullptr) tape->dec_act[i] = x;
    }
    if (tape != nullptr) tape->logits_shape = x.shape;
    const nn::Volume4<Scalar> logits =
        nn::Resize4<Scalar>(x.shape, nn::Shape4::plane(config_.input_height, config_.input_width)).forward(x);
    // Two-way softmax: foreground probability = sigmoid(l1 - l0). Max-normalizing in
    // the log domain, exp(log_sigmoid(d) - max log_sigmoid(d)), cannot underflow to zero.
    Map2<Scalar> logfg(config_.input_height, config_.input_width);
    Map2<Scalar> bg_prob(config_.input_height, config_.input_width);
    for (int y = 0; y < config_.input_height; ++y) {
      for (int xx = 0; xx < config_.input_width; ++xx) {
        const Eigen::Index p = logits.shape.index(0, 0, y, xx);
        const Scalar d = logits.data(1, p) - logits.data(0, p);
        logfg(y, xx) = -softplus(-d);
        bg_prob(y, xx) = Scalar(1) / (Scalar(1) + std::exp(d));
      }
    }
    Eigen::Index r = 0;
    Eigen::Index c = 0;
    const Scalar m = logfg.maxCoeff(&r, &c);
    Map2<Scalar> out = (logfg - m).exp();
    if (tape != nullptr) {
      tape->foreground = out;
      tape->background = bg_prob;
      tape->argmax = r * out.cols() + c;
    }
    return out;
  }

  // Accumulates parameter gradients given d(loss)/d(output heatmap).
  void backward(const Map2<Scalar>& dout, const Tape& tape) {
    const Map2<Scalar>& out = tape.foreground;
    // d out_i / d s_i = out_i, minus sum_j dout_j out_j at the argmax; d s / d d = 1 - sigmoid(d).
    Map2<Scalar> ds = dout * out;
    const Eigen::Index ar = tape.argmax / out.cols();
    const Eigen::Index ac = tape.argmax % out.cols();
    ds(ar, ac) -= (dout * out).sum();
    const nn::Shape4 full = nn::Shape4::plane(config_.input_height, config_.input_width);
    nn::Volume4<Scalar> dlogits(2, full);
    for (int y = 0; y < config_.input_height; ++y) {
      for (int x = 0; x < config_.input_width; ++x) {
        const Scalar g = ds(y, x) * tape.background(y, x);
        const Eigen::Index p = full.index(0, 0, y, x);
        dlogits.data(1, p) = g;
        dlogits.data(0, p) = -g;
      }
    }
    nn::Volume4<Scalar> g = nn::Resize4<Scalar>(tape.logits_shape, full).backward(dlogits);
    for (std::size_t i = decoder_.size(); i-- > 0;) {
      if (i + 1 < decoder_.size()) g = nn::relu_backward(g, tape.dec_act[i]);
      g = decoder_[i].backward(g, tape.dec[i]);
      if (i == 2) {
        const nn::Shape4 small = tape.dec_act[1].shape;
        g = nn::Resize4<Scalar>(small, g.shape).backward(g);
      }
    }
    g = nn::mean_over_context_backward(g, tape.pooled_from);
    const std::size_t levels = squeeze_.size();
    std::vector<nn::Volume4<Scalar>> dsqueezed(levels);
    for (std::size_t l = 0; l + 1 < levels; ++l) {
      // g is the gradient w.r.t. the output of mix_[l]
      const nn::Volume4<Scalar> dmerged = mix_[l].backward(g, tape.mix[l]);
      dsqueezed[l] = dmerged;
      g = nn::Resize4<Scalar>(tape.mix_upper_shape[l], dmerged.shape).backward(dmerged);
    }
    dsqueezed[levels - 1] = g;
    for (std::size_t l = 0; l < levels; ++l) squeeze_[l].backward(dsqueezed[l], tape.squeeze[l]);
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (auto& b : squeeze_) b.for_each_param(fn);
    for (auto& b : mix_) b.for_each_param(fn);
    for (auto& d : decoder_) {
      fn(d.weight());
      fn(d.bias());
    }
  }

  [[nodiscard]] Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    const_cast<CorrelationNet*>(this)->for_each_param([&n](const nn::Param<Scalar>& p) { n += p.size(); });
    return n;
  }

  void zero_grad() {
    for_each_param([](nn::Param<Scalar>& p) { p.grad.setZero(); });
  }

 private:
  static Scalar softplus(Scalar v) { return v > Scalar(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

  NetConfig config_;
  std::vector<int> level_channels_;
  std::vector<nn::Block4d<Scalar>> squeeze_;
  std::vector<nn::Block4d<Scalar>> mix_;
  std::vector<nn::TapConv4d<Scalar>> decoder_;
};

// Number of backbone layers at each distinct resolution, fine to coarse.
std::vector<int> level_channels_for(const std::vector<int>& layer_strides);

}  // namespace samic
