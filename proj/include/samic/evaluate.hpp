#pragma once

// K-shot evaluation: context heatmaps -> predicted target heatmap -> peaks ->
// segmenter -> mask -> IoU against the ground truth.

#include "samic/episodes.hpp"
#include "samic/metrics.hpp"
#include "samic/segmenter.hpp"
#include "samic/trainer.hpp"

#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace samic {

class HeatmapPredictor {
 public:
  virtual ~HeatmapPredictor() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  // Heatmap at the target's network input size.
  virtual SaliencyHeatmap predict(std::span<const LoadedItem* const> contexts, const LoadedItem& target) = 0;
};

// The trained network, one forward pass per context sample, maps averaged.
class ModelPredictor final : public HeatmapPredictor {
 public:
  ModelPredictor(const CorrelationNet<float>& net, PyramidCache& cache) : net_(net), cache_(cache) {}
  [[nodiscard]] std::string name() const override { return "samic"; }
  SaliencyHeatmap predict(std::span<const LoadedItem* const> contexts, const LoadedItem& target) override;

 private:
  const CorrelationNet<float>& net_;
  PyramidCache& cache_;
};

// Returns the target's own ground-truth heatmap: the pipeline's upper bound.
class OraclePredictor final : public HeatmapPredictor {
 public:
  [[nodiscard]] std::string name() const override { return "oracle"; }
  SaliencyHeatmap predict(std::span<const LoadedItem* const>, const LoadedItem& target) override {
    return target.heatmap;
  }
};

// Uniform noise, max-normalized.
class NoisePredictor final : public HeatmapPredictor {
 public:
  explicit NoisePredictor(std::uint64_t seed) : rng_(seed) {}
  [[nodiscard]] std::string name() const override { return "noise"; }
  SaliencyHeatmap predict(std::span<const LoadedItem* const>, const LoadedItem& target) override;

 private:
  std::mt19937_64 rng_;
};

// Location prior: a Gaussian at the mean prompt position of the context samples.
class LocationPriorPredictor final : public HeatmapPredictor {
 public:
  [[nodiscard]] std::string name() const override { return "location-prior"; }
  SaliencyHeatmap predict(std::span<const LoadedItem* const> contexts, const LoadedItem& target) override;
};

struct EpisodeOutcome {
  std::string target;
  std::vector<std::string> contexts;
  std::string class_name;
  std::vector<PointPrompt> prompts;  // native target coordinates
  bool fallback = false;
  double confidence = 0.0;
  double iou = 0.0;
};

struct KShotResult {
  MetricReport report;
  std::vector<EpisodeOutcome> episodes;
  int fallbacks = 0;
};

// The K context samples of a target: for still images the first K other items of the
// same class after a shuffle seeded by (seed, target id); for video the K preceding frames.
std::vector<std::size_t> context_indices(const std::vector<LoadedItem>& pool, std::size_t target, int shots,
                                         std::uint64_t seed);

// Every item of `pool` that has at least one context sample is evaluated once as a target.
KShotResult evaluate_kshot(HeatmapPredictor& predictor, const std::vector<LoadedItem>& pool, int shots,
                           const Segmenter& segmenter, const HeatmapConfig& heatmap = {}, std::uint64_t seed = 0);

}  // namespace samic
