#pragma once

// Episodic training of the correlation net with a frozen backbone, and heatmap
// prediction from one or more in-context samples.

#include "samic/backbone.hpp"
#include "samic/episodes.hpp"
#include "samic/losses.hpp"
#include "samic/net.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace samic {

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 4;
  int max_epochs = 300;
  int patience = 10;
  double subsample_fraction = 0.2;
  std::uint64_t seed = 0;
  int shots = 1;
  LossFlags losses{.skip_degenerate_cc = true};
  bool deterministic = false;
  double min_improvement = 1e-5;  // absolute drop in epoch-mean loss that counts as progress

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// Tracks the best epoch loss; stop() turns true once `patience` epochs pass without improvement.
class EarlyStopper {
 public:
  EarlyStopper(int patience, double min_improvement) : patience_(patience), min_improvement_(min_improvement) {}

  // Records the loss of the next epoch; returns true when it is a new best.
  bool observe(double loss);
  [[nodiscard]] bool stop() const { return epochs_ - 1 - best_epoch_ >= patience_; }
  [[nodiscard]] int best_epoch() const { return best_epoch_; }  // 0-based
  [[nodiscard]] double best_loss() const { return best_; }
  [[nodiscard]] int epochs() const { return epochs_; }

 private:
  int patience_;
  double min_improvement_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = -1;
  int epochs_ = 0;
};

template <typename Scalar>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(CorrelationNet<Scalar>& net) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    net.for_each_param([&](nn::Param<Scalar>& p) {
      auto [it, fresh] = state_.try_emplace(p.name);
      if (fresh) {
        it->second.m = nn::Mat<Scalar>::Zero(p.value.rows(), p.value.cols());
        it->second.v = nn::Mat<Scalar>::Zero(p.value.rows(), p.value.cols());
      }
      auto& s = it->second;
      s.m = Scalar(beta1_) * s.m + Scalar(1 - beta1_) * p.grad;
      s.v = Scalar(beta2_) * s.v + Scalar(1 - beta2_) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= Scalar(lr_ / c1) * s.m.array() / ((s.v.array() / Scalar(c2)).sqrt() + Scalar(eps_));
    });
  }

  [[nodiscard]] int steps() const { return t_; }

 private:
  struct Moments {
    nn::Mat<Scalar> m;
    nn::Mat<Scalar> v;
  };
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::map<std::string, Moments> state_;
};

// Backbone features per item id, computed once.
class PyramidCache {
 public:
  PyramidCache(const Backbone<float>& backbone, int input_height, int input_width)
      : backbone_(backbone), height_(input_height), width_(input_width) {}

  const FeaturePyramid<float>& get(const LoadedItem& item);
  [[nodiscard]] const Backbone<float>& backbone() const { return backbone_; }
  [[nodiscard]] std::size_t size() const { return cache_.size(); }

 private:
  const Backbone<float>& backbone_;
  int height_;
  int width_;
  std::map<std::string, FeaturePyramid<float>> cache_;
};

// Single-shot prediction from precomputed pyramids.
SaliencyHeatmap predict_from_features(const CorrelationNet<float>& net, const FeaturePyramid<float>& context,
                                      const SaliencyHeatmap& context_heatmap, const FeaturePyramid<float>& target);

// Full pipeline for raw images: resize, encode the context prompts, run the net once
// per context sample and average the maps.
SaliencyHeatmap predict_heatmap(const CorrelationNet<float>& net, const Backbone<float>& backbone,
                                std::span<const RgbImage> context_images, std::span<const PromptSet> context_prompts,
                                const RgbImage& target_image, const HeatmapConfig& heatmap = {});

struct TrainOutputs {
  std::filesystem::path log;           // JSON lines; empty disables logging
  std::filesystem::path checkpoint;    // best weights; empty disables saving
  std::filesystem::path snapshot_dir;  // divergence diagnostics
  std::function<void(int epoch, double mean_loss, bool best)> on_epoch;
};

struct TrainResult {
  int epochs_completed = 0;
  int best_epoch = -1;  // 0-based
  double best_loss = 0.0;
  std::vector<double> epoch_losses;
  int steps = 0;
  bool early_stopped = false;
  std::uint64_t backbone_digest_before = 0;
  std::uint64_t backbone_digest_after = 0;
};

// Adam on the epoch-mean total loss over episodes drawn from `pool`; restores and
// saves the best epoch's weights. Throws DivergenceError on a non-finite loss.
TrainResult train(CorrelationNet<float>& net, PyramidCache& cache, const std::vector<LoadedItem>& pool,
                  const TrainConfig& config, const TrainOutputs& outputs = {});

}  // namespace samic
