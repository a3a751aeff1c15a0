#include "samic/evaluate.hpp"

#include <algorithm>

namespace samic {

SaliencyHeatmap ModelPredictor::predict(std::span<const LoadedItem* const> contexts, const LoadedItem& target) {
  if (contexts.empty()) throw ArgumentError("model predictor needs at least one context sample");
  const auto& tf = cache_.get(target);
  std::vector<SaliencyHeatmap> maps;
  maps.reserve(contexts.size());
  for (const LoadedItem* c : contexts) maps.push_back(predict_from_features(net_, cache_.get(*c), c->heatmap, tf));
  return average_heatmaps(maps);
}

SaliencyHeatmap NoisePredictor::predict(std::span<const LoadedItem* const>, const LoadedItem& target) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::ArrayXXd grid(target.heatmap.height(), target.heatmap.width());
  for (Eigen::Index i = 0; i < grid.size(); ++i) grid.data()[i] = unit(rng_);
  return SaliencyHeatmap(max_normalized(grid));
}

SaliencyHeatmap LocationPriorPredictor::predict(std::span<const LoadedItem* const> contexts, const LoadedItem& target) {
  if (contexts.empty()) throw ArgumentError("location prior needs at least one context sample");
  double x = 0, y = 0;
  std::size_t n = 0;
  for (const LoadedItem* c : contexts) {
    const auto pts = rescale_prompts(c->prompts, c->native.height, c->native.width, target.heatmap.height(),
                                     target.heatmap.width())
                         .flatten();
    for (const auto& p : pts) x += p.x, y += p.y, ++n;
  }
  const PointPrompt mean{x / n, y / n};
  return encode_prompts(std::span(&mean, 1), target.heatmap.height(), target.heatmap.width());
}

std::vector<std::size_t> context_indices(const std::vector<LoadedItem>& pool, std::size_t target, int shots,
                                         std::uint64_t seed) {
  const DatasetItem& t = pool.at(target).meta;
  std::vector<std::size_t> out;
  if (t.is_video()) {
    std::vector<std::size_t> earlier;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const auto& m = pool[i].meta;
      if (m.class_name == t.class_name && m.sequence == t.sequence && m.frame < t.frame) earlier.push_back(i);
    }
    std::sort(earlier.begin(), earlier.end(), [&](auto a, auto b) { return pool[a].meta.frame > pool[b].meta.frame; });
    for (std::size_t k = 0; k < earlier.size() && static_cast<int>(k) < shots; ++k) out.push_back(earlier[k]);
    return out;
  }
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (i != target && !pool[i].meta.is_video() && pool[i].meta.class_name == t.class_name) others.push_back(i);
  }
  std::uint64_t h = seed ^ 1469598103934665603ull;
  for (const char ch : t.id) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ull;
  std::mt19937_64 rng(h);
  std::shuffle(others.begin(), others.end(), rng);
  if (static_cast<int>(others.size()) > shots) others.resize(static_cast<std::size_t>(shots));
  return others;
}

KShotResult evaluate_kshot(HeatmapPredictor& predictor, const std::vector<LoadedItem>& pool, int shots,
                           const Segmenter& segmenter, const HeatmapConfig& heatmap, std::uint64_t seed) {
  if (shots < 1) throw ArgumentError("shots must be at least 1");
  KShotResult result;
  std::vector<ScoredItem> scored;
  for (std::size_t t = 0; t < pool.size(); ++t) {
    const std::vector<std::size_t> ctx = context_indices(pool, t, shots, seed);
    if (ctx.empty()) continue;
    const LoadedItem& target = pool[t];
    std::vector<const LoadedItem*> contexts;
    for (std::size_t c : ctx) contexts.push_back(&pool[c]);

    const SaliencyHeatmap map = predictor.predict(contexts, target);
    const PeakResult peaks = extract_peaks(map, heatmap);
    PromptSet prompts{target.meta.id, {{}}};
    for (const auto& p : peaks.points) {
      PointPrompt q = rescale_point(p, map.height(), map.width(), target.native.height, target.native.width);
      q.x = std::clamp(q.x, 0.0, target.native.width - 1.0);
      q.y = std::clamp(q.y, 0.0, target.native.height - 1.0);
      prompts.instances[0].push_back(q);
    }
    const SegmentationResult seg = segment_instances(segmenter, target.native, prompts);

    EpisodeOutcome o;
    o.target = target.meta.id;
    for (const auto* c : contexts) o.contexts.push_back(c->meta.id);
    o.class_name = target.meta.class_name;
    o.prompts = prompts.instances[0];
    o.fallback = peaks.fallback;
    o.confidence = seg.confidence;
    o.iou = iou(seg.mask, target.mask);
    result.fallbacks += peaks.fallback ? 1 : 0;
    scored.push_back({o.class_name, o.iou});
    result.episodes.push_back(std::move(o));
  }
  result.report = aggregate(scored);
  result.report.metadata["predictor"] = predictor.name();
  result.report.metadata["shots"] = shots;
  result.report.metadata["episodes"] = result.episodes.size();
  result.report.metadata["fallback_prompts"] = result.fallbacks;
  result.report.metadata["segmenter"] = segmenter.id();
  return result;
}

}  // namespace samic
