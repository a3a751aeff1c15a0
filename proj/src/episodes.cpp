#include "samic/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace samic {

PointPrompt rescale_point(const PointPrompt& p, int from_h, int from_w, int to_h, int to_w) {
  return {(p.x + 0.5) * to_w / from_w - 0.5, (p.y + 0.5) * to_h / from_h - 0.5};
}

PromptSet rescale_prompts(const PromptSet& prompts, int from_h, int from_w, int to_h, int to_w) {
  PromptSet out{prompts.image_id, {}};
  for (const auto& group : prompts.instances) {
    auto& g = out.instances.emplace_back();
    for (const auto& p : group) {
      PointPrompt q = rescale_point(p, from_h, from_w, to_h, to_w);
      q.x = std::clamp(q.x, 0.0, std::nextafter(static_cast<double>(to_w), 0.0));
      q.y = std::clamp(q.y, 0.0, std::nextafter(static_cast<double>(to_h), 0.0));
      g.push_back(q);
    }
  }
  return out;
}

LoadedItem load_item(const DatasetItem& item, int input_height, int input_width, const HeatmapConfig& heatmap) {
  LoadedItem out;
  out.meta = item;
  out.native = read_png_rgb(item.image);
  out.input = (out.native.height == input_height && out.native.width == input_width)
                  ? out.native
                  : resize_bilinear(out.native, input_height, input_width);
  const PromptRecord record = prompt_record_from_json(nlohmann::json::parse(read_file(item.prompts)));
  out.prompts = record.prompts;
  if (out.prompts.empty()) throw ArgumentError(item.id + ": prompt file holds no points");
  out.mask = read_png_mask(item.mask);
  if (out.mask.rows() != out.native.height || out.mask.cols() != out.native.width) {
    throw DimensionError(item.id + ": mask size differs from the image");
  }
  const PromptSet scaled =
      rescale_prompts(out.prompts, out.native.height, out.native.width, input_height, input_width);
  const auto points = scaled.flatten();
  out.heatmap = encode_prompts(points, input_height, input_width, heatmap);
  return out;
}

std::vector<LoadedItem> load_items(const std::vector<const DatasetItem*>& items, int input_height, int input_width,
                                   const HeatmapConfig& heatmap) {
  std::vector<LoadedItem> out;
  out.reserve(items.size());
  for (const auto* item : items) out.push_back(load_item(*item, input_height, input_width, heatmap));
  return out;
}

Subsample subsample_training_set(const std::vector<DatasetItem>& items, const std::vector<std::string>& classes,
                                 double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("subsample fraction must lie in (0, 1]");
  Subsample out;
  std::vector<bool> keep(items.size(), false);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].class_name == classes[c]) members.push_back(i);
    }
    if (members.empty()) {
      out.skipped_classes.push_back(classes[c]);
      continue;
    }
    // One stream per class so adding a class does not perturb the others.
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ull * (c + 1)));
    std::shuffle(members.begin(), members.end(), rng);
    const auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(members.size()) - 1e-9));
    for (std::size_t k = 0; k < take; ++k) keep[members[k]] = true;
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (keep[i]) out.items.push_back(items[i]);
  }
  return out;
}

EpisodeSampler::EpisodeSampler(const std::vector<DatasetItem>& pool) {
  std::map<std::string, Group> by_class;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!by_class.contains(pool[i].class_name)) order.push_back(pool[i].class_name);
    auto& g = by_class[pool[i].class_name];
    g.class_name = pool[i].class_name;
    if (!pool[i].is_video()) g.members.push_back(i);
  }
  // Video frames: consecutive frames of a sequence in frame order.
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> sequences;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].is_video()) sequences[{pool[i].class_name, pool[i].sequence}].push_back(i);
  }
  for (auto& [key, frames] : sequences) {
    std::sort(frames.begin(), frames.end(), [&](std::size_t a, std::size_t b) { return pool[a].frame < pool[b].frame; });
    for (std::size_t k = 1; k < frames.size(); ++k) by_class[key.first].pairs.push_back({frames[k - 1], frames[k]});
  }
  for (const auto& name : order) {
    Group& g = by_class[name];
    if (g.members.size() < 2) g.members.clear();
    if (g.members.empty() && g.pairs.empty()) {
      skipped_.push_back(name);
      continue;
    }
    groups_.push_back(std::move(g));
  }
}

EpisodeRef EpisodeSampler::sample(std::mt19937_64& rng) const {
  if (groups_.empty()) throw ArgumentError("no class has two or more items to form an episode");
  const Group& g = groups_[std::uniform_int_distribution<std::size_t>(0, groups_.size() - 1)(rng)];
  const std::size_t still_pairs = g.members.size() * (g.members.size() > 1 ? g.members.size() - 1 : 0);
  const std::size_t total = still_pairs + g.pairs.size();
  const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
  if (pick >= still_pairs) return g.pairs[pick - still_pairs];
  const std::size_t n = g.members.size();
  const std::size_t t = pick / (n - 1);
  std::size_t c = pick % (n - 1);
  if (c >= t) ++c;
  return {g.members[c], g.members[t]};
}

std::vector<EpisodeRef> EpisodeSampler::epoch(std::mt19937_64& rng) const {
  std::vector<EpisodeRef> out;
  for (const auto& g : groups_) {
    for (std::size_t t = 0; t < g.members.size(); ++t) {
      std::size_t c = std::uniform_int_distribution<std::size_t>(0, g.members.size() - 2)(rng);
      if (c >= t) ++c;
      out.push_back({g.members[c], g.members[t]});
    }
    out.insert(out.end(), g.pairs.begin(), g.pairs.end());
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace samic
