#include "samic/checkpoint.hpp"
#include "samic/errors.hpp"
#include "samic/evaluate.hpp"
#include "samic/trainer.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

using namespace samic;

namespace {

NetConfig tiny_net(int size) {
  NetConfig cfg;
  cfg.num_4dconv_layers = 1;
  cfg.input_height = size;
  cfg.input_width = size;
  return cfg;
}

// Items of one synthetic class, loaded at `size`.
std::vector<LoadedItem> class_pool(const std::string& split, int count, int size) {
  const DatasetIndex& idx = testing::small_synthetic();
  std::vector<const DatasetItem*> picked;
  std::string cls;
  for (const auto* it : idx.items_in(split)) {
    if (cls.empty()) cls = it->class_name;
    if (it->class_name == cls && static_cast<int>(picked.size()) < count) picked.push_back(it);
  }
  return load_items(picked, size, size);
}

std::pair<int, int> argmax(const Eigen::ArrayXXd& g) {
  Eigen::Index r = 0;
  Eigen::Index c = 0;
  g.maxCoeff(&r, &c);
  return {static_cast<int>(c), static_cast<int>(r)};
}

}  // namespace

TEST_CASE("early stopping fires exactly `patience` epochs after the best") {
  EarlyStopper s(3, 1e-5);
  CHECK(s.observe(1.0));
  CHECK(s.observe(0.5));
  CHECK_FALSE(s.observe(0.5));
  CHECK_FALSE(s.stop());
  CHECK_FALSE(s.observe(0.6));
  CHECK_FALSE(s.stop());
  CHECK_FALSE(s.observe(0.499999));  // below min_improvement
  CHECK(s.stop());
  CHECK(s.best_epoch() == 1);
  CHECK(s.best_loss() == 0.5);
  CHECK(s.epochs() == 5);
}

TEST_CASE("early stopping over a long plateau") {
  for (int patience : {1, 4, 10}) {
    EarlyStopper s(patience, 0.0);
    int epoch = 0;
    for (; epoch < 7; ++epoch) s.observe(10.0 - epoch);
    while (!s.stop()) {
      s.observe(5.0);
      ++epoch;
    }
    CHECK(epoch - 1 - s.best_epoch() == patience);
  }
}

TEST_CASE("Adam matches the hand-computed update for two steps") {
  const Backbone<float> backbone("tinyres-v1");
  CorrelationNet<float> net(tiny_net(32), level_channels_for(backbone.layer_strides()));
  const double lr = 0.01;
  const double b1 = 0.9;
  const double b2 = 0.999;
  const double eps = 1e-8;
  Adam<float> adam(lr, b1, b2, eps);
  std::map<std::string, nn::Mat<float>> w0;
  const std::vector<float> g1v{0.3f, -2.0f};
  const std::vector<float> g2v{-0.1f, 0.5f};
  auto fill = [&](const std::vector<float>& gv) {
    net.for_each_param([&](nn::Param<float>& p) {
      for (Eigen::Index i = 0; i < p.grad.size(); ++i) p.grad.data()[i] = gv[static_cast<std::size_t>(i % 2)];
    });
  };
  net.for_each_param([&](nn::Param<float>& p) { w0[p.name] = p.value; });
  fill(g1v);
  adam.step(net);
  fill(g2v);
  adam.step(net);
  CHECK(adam.steps() == 2);
  double worst = 0.0;
  for (int k = 0; k < 2; ++k) {
    const double g1 = g1v[k];
    const double g2 = g2v[k];
    const double m1 = (1 - b1) * g1;
    const double v1 = (1 - b2) * g1 * g1;
    const double s1 = lr * (m1 / (1 - b1)) / (std::sqrt(v1 / (1 - b2)) + eps);
    const double m2 = b1 * m1 + (1 - b1) * g2;
    const double v2 = b2 * v1 + (1 - b2) * g2 * g2;
    const double s2 = lr * (m2 / (1 - b1 * b1)) / (std::sqrt(v2 / (1 - b2 * b2)) + eps);
    net.for_each_param([&](nn::Param<float>& p) {
      if (p.value.size() <= k) return;
      const double expected = w0[p.name].data()[k] - s1 - s2;
      worst = std::max(worst, std::abs(p.value.data()[k] - expected));
    });
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("train config round-trips through JSON and rejects unknown keys") {
  TrainConfig c;
  c.lr = 3e-4;
  c.max_epochs = 7;
  c.losses.kld_sum_normalized = true;
  c.losses.nss = false;
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(back.lr == c.lr);
  CHECK(back.max_epochs == 7);
  CHECK(back.losses.kld_sum_normalized);
  CHECK_FALSE(back.losses.nss);
  CHECK_THROWS_AS(train_config_from_json({{"learning_rate", 1.0}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"losses", {{"ssim", true}}}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"losses", {{"kld", false}, {"cc", false}, {"nss", false}}}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"batch_size", 0}}), ConfigError);
  CHECK(train_config_from_json({{"patience", 4}}, c).max_epochs == 7);
}

TEST_CASE("training overfits a single class pair and leaves the backbone untouched") {
  const int size = 64;
  const auto pool = class_pool("train", 2, size);
  const Backbone<float> backbone("tinyres-v1");
  CorrelationNet<float> net(tiny_net(size), level_channels_for(backbone.layer_strides()));
  PyramidCache cache(backbone, size, size);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.max_epochs = 80;
  cfg.patience = 80;
  cfg.batch_size = 2;
  cfg.losses.kld_sum_normalized = true;
  testing::TempDir dir;
  TrainOutputs out;
  out.log = dir / "train.jsonl";
  out.checkpoint = dir / "best.ckpt";
  const TrainResult r = train(net, cache, pool, cfg, out);
  CHECK(r.epochs_completed == 80);
  CHECK(r.epoch_losses.back() < r.epoch_losses.front());
  CHECK(r.backbone_digest_before == r.backbone_digest_after);
  CHECK(r.backbone_digest_after == Backbone<float>("tinyres-v1").parameter_digest());
  CHECK(std::filesystem::exists(out.checkpoint));
  CHECK(read_file(out.log).find("\"mean_total\"") != std::string::npos);

  for (int t = 0; t < 2; ++t) {
    const auto pred = predict_from_features(net, cache.get(pool[1 - t]), pool[1 - t].heatmap, cache.get(pool[t]));
    const auto [px, py] = argmax(pred.grid);
    const auto [gx, gy] = argmax(pool[t].heatmap.grid);
    CHECK(std::hypot(px - gx, py - gy) <= 3.0);
  }
  // The restored weights are the best epoch's, which the checkpoint also holds.
  CHECK(serialize_checkpoint(net) == read_file(out.checkpoint));
}

TEST_CASE("200 Adam steps on one episode cut the total loss below 10% of its start") {
  const int size = 64;
  const auto pool = class_pool("train", 2, size);
  const Backbone<float> backbone("tinyres-v1");
  CorrelationNet<float> net(tiny_net(size), level_channels_for(backbone.layer_strides()));
  PyramidCache cache(backbone, size, size);
  const auto hcp = build_hypercorrelation(mask_features(cache.get(pool[0]), pool[0].heatmap), cache.get(pool[1]));
  const LossFlags flags{.kld_sum_normalized = true};
  Adam<float> adam(1e-3);
  CorrelationNet<float>::Tape tape;
  double first = 0.0;
  double last = 0.0;
  for (int step = 0; step < 200; ++step) {
    net.zero_grad();
    const auto loss = total_loss_grad(pool[1].heatmap.grid, net.forward(hcp, &tape), flags);
    if (step == 0) first = loss.breakdown.total;
    last = loss.breakdown.total;
    net.backward(loss.grad, tape);
    adam.step(net);
  }
  MESSAGE("total loss " << first << " -> " << last);
  CHECK(last < 0.1 * first);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const int size = 32;
  const auto pool = class_pool("train", 3, size);
  const Backbone<float> backbone("tinyres-v1");
  auto run = [&] {
    CorrelationNet<float> net(tiny_net(size), level_channels_for(backbone.layer_strides()));
    PyramidCache cache(backbone, size, size);
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.seed = 5;
    const TrainResult r = train(net, cache, pool, cfg);
    return std::pair{r.epoch_losses, serialize_checkpoint(net)};
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("a non-finite loss raises DivergenceError with a diagnostic snapshot") {
  const int size = 32;
  auto pool = class_pool("train", 2, size);
  pool[0].heatmap.grid(3, 3) = std::numeric_limits<double>::quiet_NaN();
  const Backbone<float> backbone("tinyres-v1");
  CorrelationNet<float> net(tiny_net(size), level_channels_for(backbone.layer_strides()));
  PyramidCache cache(backbone, size, size);
  testing::TempDir dir;
  TrainOutputs out;
  out.snapshot_dir = dir / "snap";
  TrainConfig cfg;
  cfg.max_epochs = 2;
  CHECK_THROWS_AS(train(net, cache, pool, cfg, out), DivergenceError);
  const auto diag = nlohmann::json::parse(read_file(dir / "snap/divergence.json"));
  // The poisoned item spoils its own episodes as target and as context.
  CHECK((diag["target"] == pool[0].meta.id || diag["context"] == pool[0].meta.id));
  CHECK(diag["epoch"] == 0);
}

TEST_CASE("a pool without two items of a class yields no episodes") {
  auto pool = class_pool("train", 1, 32);
  const Backbone<float> backbone("tinyres-v1");
  CorrelationNet<float> net(tiny_net(32), level_channels_for(backbone.layer_strides()));
  PyramidCache cache(backbone, 32, 32);
  CHECK_THROWS_AS(train(net, cache, pool, TrainConfig{}), ArgumentError);
}

TEST_CASE("the oracle predictor is exact") {
  const DatasetIndex& idx = testing::small_synthetic();
  const auto pool = load_items(idx.items_in("test"), 64, 64);
  const MockSegmenter mock;
  OraclePredictor oracle;
  CHECK(evaluate_kshot(oracle, pool, 1, mock).report.mean == 1.0);
  CHECK(evaluate_kshot(oracle, pool, 5, mock).report.mean == 1.0);
  CHECK_THROWS_AS(evaluate_kshot(oracle, pool, 0, mock), ArgumentError);
}

TEST_CASE("noise does not beat the location prior (one-sided Welch test)") {
  // Needs the full-size test fold: on a handful of small images the prior's single
  // prompt can miss every object while scattered noise peaks occasionally hit one.
  testing::TempDir dir;
  const DatasetIndex idx = generate_synthetic_dataset(dir / "ds", SyntheticConfig{});
  const auto pool = load_items(idx.items_in("test"), 224, 224);
  const MockSegmenter mock;
  auto stats = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, ss / static_cast<double>(v.size() - 1)};
  };
  for (int shots : {1, 5}) {
    LocationPriorPredictor prior;
    std::vector<double> prior_iou;
    for (const auto& e : evaluate_kshot(prior, pool, shots, mock).episodes) prior_iou.push_back(e.iou);
    std::vector<double> noise_iou;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      NoisePredictor noise(seed);
      for (const auto& e : evaluate_kshot(noise, pool, shots, mock).episodes) noise_iou.push_back(e.iou);
    }
    const auto [mp, vp] = stats(prior_iou);
    const auto [mn, vn] = stats(noise_iou);
    const double se = std::sqrt(vp / static_cast<double>(prior_iou.size()) + vn / static_cast<double>(noise_iou.size()));
    const double t = (mn - mp) / se;
    MESSAGE("K=" << shots << ": noise " << mn << ", location prior " << mp << ", t " << t);
    CHECK(t < 1.645);
  }
}

TEST_CASE("k-shot evaluation records one outcome per target with its contexts") {
  const DatasetIndex& idx = testing::small_synthetic();
  const auto pool = load_items(idx.items_in("test"), 64, 64);
  const MockSegmenter mock;
  OraclePredictor oracle;
  const KShotResult r = evaluate_kshot(oracle, pool, 3, mock);
  CHECK(r.episodes.size() == pool.size());
  for (const auto& e : r.episodes) {
    CHECK(e.contexts.size() == 3);
    CHECK(e.iou == 1.0);
    CHECK_FALSE(e.fallback);
  }
  CHECK(r.fallbacks == 0);
}
