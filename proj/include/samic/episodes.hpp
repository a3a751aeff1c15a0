#pragma once

// Loaded dataset items, per-class training subsampling and episode sampling.

#include "samic/dataset.hpp"
#include "samic/heatmap.hpp"
#include "samic/image.hpp"
#include "samic/prompts.hpp"

#include <random>
#include <string>
#include <vector>

namespace samic {

// A dataset item decoded for the network: the image at network input size and the
// ground-truth heatmap rendered from its prompts at that size; the mask keeps its native size.
struct LoadedItem {
  DatasetItem meta;
  RgbImage native;
  RgbImage input;
  PromptSet prompts;
  SaliencyHeatmap heatmap;  // at input size
  BinaryMask mask;          // native size
};

// Prompt coordinates mapped between image sizes with half-pixel centres.
PointPrompt rescale_point(const PointPrompt& p, int from_h, int from_w, int to_h, int to_w);
PromptSet rescale_prompts(const PromptSet& prompts, int from_h, int from_w, int to_h, int to_w);

LoadedItem load_item(const DatasetItem& item, int input_height, int input_width, const HeatmapConfig& heatmap = {});
std::vector<LoadedItem> load_items(const std::vector<const DatasetItem*>& items, int input_height, int input_width,
                                   const HeatmapConfig& heatmap = {});

struct Subsample {
  std::vector<DatasetItem> items;            // original order preserved
  std::vector<std::string> skipped_classes;  // classes with no items
};

// Per class, ceil(fraction * n) items picked by a seeded shuffle. `classes` lists the
// classes to draw from; those without items are skipped and reported.
Subsample subsample_training_set(const std::vector<DatasetItem>& items, const std::vector<std::string>& classes,
                                 double fraction, std::uint64_t seed);

struct EpisodeRef {
  std::size_t context = 0;  // indices into the sampler's pool
  std::size_t target = 0;
  friend bool operator==(const EpisodeRef&, const EpisodeRef&) = default;
};

// Draws (context, target) pairs within a class. Video items pair frame t-1 with frame t
// of the same sequence instead. Classes with a single item are skipped.
class EpisodeSampler {
 public:
  explicit EpisodeSampler(const std::vector<DatasetItem>& pool);

  // Uniform over eligible classes, then two distinct items (or one adjacent frame pair).
  EpisodeRef sample(std::mt19937_64& rng) const;
  // One pass: every eligible target once, shuffled, each with a random context.
  std::vector<EpisodeRef> epoch(std::mt19937_64& rng) const;

  [[nodiscard]] const std::vector<std::string>& skipped_classes() const { return skipped_; }
  [[nodiscard]] std::size_t class_count() const { return groups_.size(); }

 private:
  struct Group {
    std::string class_name;
    std::vector<std::size_t> members;  // still-image items
    std::vector<EpisodeRef> pairs;     // video frame pairs
  };
  std::vector<Group> groups_;
  std::vector<std::string> skipped_;
};

}  // namespace samic
