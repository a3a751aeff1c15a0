#include "samic/trainer.hpp"

#include "samic/checkpoint.hpp"
#include "samic/correlation.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>

namespace samic {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw ConfigError("subsample_fraction must lie in (0, 1]");
  }
  if (shots < 1) throw ConfigError("shots must be at least 1");
  if (min_improvement < 0.0) throw ConfigError("min_improvement must be non-negative");
  losses.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"subsample_fraction", c.subsample_fraction},
          {"seed", c.seed},
          {"shots", c.shots},
          {"deterministic", c.deterministic},
          {"min_improvement", c.min_improvement},
          {"losses",
           {{"kld", c.losses.kld},
            {"cc", c.losses.cc},
            {"nss", c.losses.nss},
            {"kld_sum_normalized", c.losses.kld_sum_normalized},
            {"skip_degenerate_cc", c.losses.skip_degenerate_cc}}}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  static const std::set<std::string> keys = {"lr",    "batch_size",    "max_epochs",      "patience", "subsample_fraction",
                                             "seed",  "shots",         "deterministic",   "min_improvement", "losses"};
  for (const auto& [key, value] : j.items()) {
    if (!keys.contains(key)) throw ConfigError("unknown train config key: " + key);
  }
  try {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.subsample_fraction = j.value("subsample_fraction", c.subsample_fraction);
    c.seed = j.value("seed", c.seed);
    c.shots = j.value("shots", c.shots);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.min_improvement = j.value("min_improvement", c.min_improvement);
    if (j.contains("losses")) {
      const auto& l = j["losses"];
      for (const auto& [key, value] : l.items()) {
        if (key != "kld" && key != "cc" && key != "nss" && key != "kld_sum_normalized" && key != "skip_degenerate_cc") {
          throw ConfigError("unknown losses key: " + key);
        }
      }
      c.losses.kld = l.value("kld", c.losses.kld);
      c.losses.cc = l.value("cc", c.losses.cc);
      c.losses.nss = l.value("nss", c.losses.nss);
      c.losses.kld_sum_normalized = l.value("kld_sum_normalized", c.losses.kld_sum_normalized);
      c.losses.skip_degenerate_cc = l.value("skip_degenerate_cc", c.losses.skip_degenerate_cc);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

bool EarlyStopper::observe(double loss) {
  const bool improved = loss < best_ - min_improvement_;
  if (improved) {
    best_ = loss;
    best_epoch_ = epochs_;
  }
  ++epochs_;
  return improved;
}

const FeaturePyramid<float>& PyramidCache::get(const LoadedItem& item) {
  auto it = cache_.find(item.meta.id);
  if (it == cache_.end()) it = cache_.emplace(item.meta.id, backbone_.extract(item.input, height_, width_)).first;
  return it->second;
}

SaliencyHeatmap predict_from_features(const CorrelationNet<float>& net, const FeaturePyramid<float>& context,
                                      const SaliencyHeatmap& context_heatmap, const FeaturePyramid<float>& target) {
  const auto hcp = build_hypercorrelation(mask_features(context, context_heatmap), target);
  const Map2<float> out = net.forward(hcp);
  return SaliencyHeatmap(out.cast<double>().min(1.0).max(0.0));
}

SaliencyHeatmap predict_heatmap(const CorrelationNet<float>& net, const Backbone<float>& backbone,
                                std::span<const RgbImage> context_images, std::span<const PromptSet> context_prompts,
                                const RgbImage& target_image, const HeatmapConfig& heatmap) {
  if (context_images.empty()) throw ArgumentError("predict_heatmap: at least one context sample is required");
  if (context_images.size() != context_prompts.size()) {
    throw ArgumentError("predict_heatmap: every context image needs a prompt set");
  }
  const int h = net.config().input_height;
  const int w = net.config().input_width;
  auto fit = [&](const RgbImage& img) {
    return img.height == h && img.width == w ? img : resize_bilinear(img, h, w);
  };
  const auto target = backbone.extract(fit(target_image), h, w);
  std::vector<SaliencyHeatmap> maps;
  for (std::size_t k = 0; k < context_images.size(); ++k) {
    const RgbImage& img = context_images[k];
    const auto points = rescale_prompts(context_prompts[k], img.height, img.width, h, w).flatten();
    const SaliencyHeatmap g = encode_prompts(points, h, w, heatmap);
    maps.push_back(predict_from_features(net, backbone.extract(fit(img), h, w), g, target));
  }
  return average_heatmaps(maps);
}

namespace {

using Snapshot = std::vector<nn::Mat<float>>;

Snapshot snapshot(CorrelationNet<float>& net) {
  Snapshot out;
  net.for_each_param([&](const nn::Param<float>& p) { out.push_back(p.value); });
  return out;
}

void restore(CorrelationNet<float>& net, const Snapshot& s) {
  std::size_t i = 0;
  net.for_each_param([&](nn::Param<float>& p) { p.value = s[i++]; });
}

}  // namespace

TrainResult train(CorrelationNet<float>& net, PyramidCache& cache, const std::vector<LoadedItem>& pool,
                  const TrainConfig& config, const TrainOutputs& outputs) {
  config.validate();
  std::vector<DatasetItem> metas;
  metas.reserve(pool.size());
  for (const auto& item : pool) metas.push_back(item.meta);
  const EpisodeSampler sampler(metas);

  std::ofstream log;
  if (!outputs.log.empty()) {
    log.open(outputs.log, std::ios::trunc);
    if (!log) throw StorageError("cannot open training log " + outputs.log.string());
  }

  TrainResult result;
  result.backbone_digest_before = cache.backbone().parameter_digest();
  Adam<float> adam(config.lr);
  EarlyStopper stopper(config.patience, config.min_improvement);
  std::mt19937_64 rng(config.seed);
  Snapshot best;
  CorrelationNet<float>::Tape tape;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const std::vector<EpisodeRef> episodes = sampler.epoch(rng);
    if (episodes.empty()) throw ArgumentError("training pool yields no episodes");
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < episodes.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(episodes.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto scale = static_cast<float>(1.0 / static_cast<double>(end - start));
      net.zero_grad();
      LossBreakdown batch{};
      for (std::size_t e = start; e < end; ++e) {
        const LoadedItem& ctx = pool[episodes[e].context];
        const LoadedItem& tgt = pool[episodes[e].target];
        const auto hcp = build_hypercorrelation(mask_features(cache.get(ctx), ctx.heatmap), cache.get(tgt));
        const Map2<float> pred = net.forward(hcp, &tape);
        const auto loss = total_loss_grad(tgt.heatmap.grid, pred, config.losses);
        const LossBreakdown& b = loss.breakdown;
        if (!std::isfinite(b.total) || !loss.grad.isFinite().all()) {
          if (!outputs.snapshot_dir.empty()) {
            std::filesystem::create_directories(outputs.snapshot_dir);
            const nlohmann::json diag{{"epoch", epoch},        {"step", result.steps},   {"context", ctx.meta.id},
                                      {"target", tgt.meta.id}, {"kld", b.kld},           {"cc", b.cc},
                                      {"nss", b.nss},          {"total", b.total},       {"pred_max", pred.maxCoeff()},
                                      {"pred_min", pred.minCoeff()}};
            write_file_atomic(outputs.snapshot_dir / "divergence.json", diag.dump(2) + "\n");
          }
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                std::to_string(result.steps) + " (target " + tgt.meta.id + ")");
        }
        net.backward(loss.grad * scale, tape);
        batch.kld += b.kld / (end - start);
        batch.cc += b.cc / (end - start);
        batch.nss += b.nss / (end - start);
        batch.total += b.total / (end - start);
        epoch_total += b.total;
      }
      adam.step(net);
      ++result.steps;
      if (log) {
        log << nlohmann::json{{"step", result.steps}, {"epoch", epoch},    {"kld", batch.kld},
                              {"cc", batch.cc},       {"nss", batch.nss}, {"total", batch.total}}
                   .dump()
            << "\n";
      }
    }
    const double mean = epoch_total / static_cast<double>(episodes.size());
    result.epoch_losses.push_back(mean);
    const bool improved = stopper.observe(mean);
    if (improved) {
      best = snapshot(net);
      if (!outputs.checkpoint.empty()) save_checkpoint(outputs.checkpoint, net);
    }
    if (log) {
      log << nlohmann::json{{"epoch", epoch}, {"mean_total", mean}, {"best", improved}, {"episodes", episodes.size()}}
                 .dump()
          << "\n";
      log.flush();
    }
    if (outputs.on_epoch) outputs.on_epoch(epoch, mean, improved);
    ++result.epochs_completed;
    if (stopper.stop()) {
      result.early_stopped = true;
      break;
    }
  }
  if (!best.empty()) restore(net, best);
  result.best_epoch = stopper.best_epoch();
  result.best_loss = stopper.best_loss();
  result.backbone_digest_after = cache.backbone().parameter_digest();
  return result;
}

}  // namespace samic
