#include "samic/heatmap.hpp"
#include "samic/interp.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace samic;

TEST_CASE("single prompt peaks at 1 on its pixel") {
  const std::vector<PointPrompt> p{{112, 112}};
  const auto g = encode_prompts(p, 224, 224);
  CHECK(g.at(112, 112) == 1.0);
  CHECK(g.grid.maxCoeff() == 1.0);
  CHECK(g.satisfies_invariants());
}

TEST_CASE("four pixels off the prompt the formula gives exp(-(4/224)^2 / 2 sigma^2)") {
  const std::vector<PointPrompt> p{{112, 112}};
  const auto g = encode_prompts(p, 224, 224);
  const double expected = std::exp(-std::pow(4.0 / 224.0, 2) / (2.0 * 0.02 * 0.02));
  CHECK(expected == doctest::Approx(0.6714).epsilon(1e-4));
  CHECK(g.at(116, 112) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("distant prompts both reach the normalized maximum") {
  const std::vector<PointPrompt> p{{56, 56}, {168, 168}};
  const auto g = encode_prompts(p, 224, 224);
  CHECK(g.at(56, 56) >= 0.999);
  CHECK(g.at(168, 168) >= 0.999);
}

TEST_CASE("encoding matches the direct formula everywhere") {
  std::mt19937_64 rng(5);
  const auto pts = testing::separated_points(rng, 3, 30, 80);
  HeatmapConfig cfg;
  cfg.sigma = 0.05;
  const auto g = encode_prompts(pts, 60, 80, cfg);
  double m = 0.0;
  for (int y = 0; y < 60; ++y)
    for (int x = 0; x < 80; ++x) m = std::max(m, testing::gaussian_sum(pts, x, y, 60, 80, 0.05));
  for (int y = 0; y < 60; ++y) {
    for (int x = 0; x < 80; ++x) {
      REQUIRE(g.at(x, y) == doctest::Approx(testing::gaussian_sum(pts, x, y, 60, 80, 0.05) / m).epsilon(1e-12));
    }
  }
}

TEST_CASE("encoding is invariant to the order of the points") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto pts = testing::separated_points(rng, 5, 10, 100);
    const auto a = encode_prompts(pts, 100, 100);
    std::shuffle(pts.begin(), pts.end(), rng);
    const auto b = encode_prompts(pts, 100, 100);
    CHECK(((a.grid - b.grid).abs().maxCoeff()) < 1e-12);
  }
}

TEST_CASE("integer shifts of the prompts shift the grid") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pts = testing::separated_points(rng, 3, 25, 128, 30);
    std::vector<PointPrompt> moved = pts;
    for (auto& p : moved) {
      p.x += 7;
      p.y -= 4;
    }
    const auto a = encode_prompts(pts, 128, 128);
    const auto b = encode_prompts(moved, 128, 128);
    // Compare away from the border the shift pushes content across.
    for (int y = 20; y < 100; ++y)
      for (int x = 20; x < 100; ++x) REQUIRE(b.at(x + 7, y - 4) == doctest::Approx(a.at(x, y)).epsilon(1e-9));
  }
}

TEST_CASE("encode rejects empty and out-of-image prompts") {
  const std::vector<PointPrompt> none;
  CHECK_THROWS_AS(encode_prompts(none, 10, 10), ArgumentError);
  const std::vector<PointPrompt> outside{{10.0, 3.0}};
  CHECK_THROWS_AS(encode_prompts(outside, 10, 10), ArgumentError);
  const std::vector<PointPrompt> inside{{3.0, 3.0}};
  HeatmapConfig bad;
  bad.sigma = 0.0;
  CHECK_THROWS_AS(encode_prompts(inside, 10, 10, bad), ConfigError);
  bad = {};
  bad.tau = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.connectivity = 6;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("two encoded prompts come back within a pixel") {
  const std::vector<PointPrompt> p{{56, 56}, {168, 168}};
  const auto r = extract_peaks(encode_prompts(p, 224, 224));
  REQUIRE(r.points.size() == 2);
  CHECK_FALSE(r.fallback);
  CHECK(std::hypot(r.points[0].x - 56, r.points[0].y - 56) <= 1.0);
  CHECK(std::hypot(r.points[1].x - 168, r.points[1].y - 168) <= 1.0);
}

TEST_CASE("uniform block has its geometric centre as centroid") {
  Eigen::ArrayXXd grid = Eigen::ArrayXXd::Zero(64, 64);
  grid.block(20, 40, 10, 10) = 1.0;
  const auto r = extract_peaks(SaliencyHeatmap(grid));
  REQUIRE(r.points.size() == 1);
  CHECK(r.points[0].x == 44.5);
  CHECK(r.points[0].y == 24.5);
}

TEST_CASE("all-zero map falls back to the first pixel") {
  const auto r = extract_peaks(SaliencyHeatmap(Eigen::ArrayXXd::Zero(8, 8)));
  REQUIRE(r.points.size() == 1);
  CHECK(r.fallback);
  CHECK(r.points[0] == PointPrompt{0, 0});
}

TEST_CASE("sub-threshold map falls back to its argmax") {
  Eigen::ArrayXXd grid = Eigen::ArrayXXd::Constant(6, 9, 0.1);
  grid(4, 7) = 0.3;
  const auto r = extract_peaks(SaliencyHeatmap(grid));
  CHECK(r.fallback);
  CHECK(r.points[0] == PointPrompt{7, 4});
}

TEST_CASE("connected components match a flood-fill oracle") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> side(1, 40);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int connectivity : {4, 8}) {
    HeatmapConfig cfg;
    cfg.connectivity = connectivity;
    for (int trial = 0; trial < 60; ++trial) {
      const int h = side(rng);
      const int w = side(rng);
      const double density = unit(rng);
      Eigen::ArrayXXd grid(h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) grid(y, x) = unit(rng) < density ? 1.0 : 0.0;
      const auto oracle = testing::brute_force_components(grid, cfg.tau, connectivity);
      const auto r = extract_peaks(SaliencyHeatmap(grid), cfg);
      if (oracle.empty()) {
        CHECK(r.fallback);
        continue;
      }
      REQUIRE(r.points.size() == oracle.size());
      for (std::size_t i = 0; i < oracle.size(); ++i) {
        CHECK(std::abs(r.points[i].x - oracle[i].cx) <= 1e-9);
        CHECK(std::abs(r.points[i].y - oracle[i].cy) <= 1e-9);
      }
    }
  }
}

TEST_CASE("diagonal neighbours merge only under 8-connectivity") {
  Eigen::ArrayXXd grid = Eigen::ArrayXXd::Zero(4, 4);
  grid(0, 0) = 1.0;
  grid(1, 1) = 1.0;
  HeatmapConfig four;
  four.connectivity = 4;
  CHECK(extract_peaks(SaliencyHeatmap(grid)).points.size() == 1);
  CHECK(extract_peaks(SaliencyHeatmap(grid), four).points.size() == 2);
}

TEST_CASE("averaging one map returns it unchanged") {
  const std::vector<PointPrompt> p{{10, 20}};
  const std::vector<SaliencyHeatmap> maps{encode_prompts(p, 40, 50)};
  CHECK((average_heatmaps(maps).grid == maps[0].grid).all());
}

TEST_CASE("averaging identical maps is idempotent") {
  const std::vector<PointPrompt> p{{10, 20}, {30, 5}};
  const auto g = encode_prompts(p, 40, 50);
  const std::vector<SaliencyHeatmap> maps{g, g, g};
  CHECK(((average_heatmaps(maps).grid - g.grid).abs().maxCoeff()) < 1e-15);
}

TEST_CASE("disjoint peaks average to 0.5 and renormalize to 1") {
  const std::vector<PointPrompt> a{{20, 20}};
  const std::vector<PointPrompt> b{{80, 80}};
  const auto ga = encode_prompts(a, 100, 100);
  const auto gb = encode_prompts(b, 100, 100);
  const Eigen::ArrayXXd raw = (ga.grid + gb.grid) / 2.0;
  CHECK(raw(20, 20) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(raw(80, 80) == doctest::Approx(0.5).epsilon(1e-6));
  const std::vector<SaliencyHeatmap> maps{ga, gb};
  const auto avg = average_heatmaps(maps);
  CHECK(avg.at(20, 20) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(avg.at(80, 80) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(avg.satisfies_invariants());
}

TEST_CASE("averaging random maps keeps the heatmap invariants") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<SaliencyHeatmap> maps;
    for (int k = 0; k < 1 + trial % 4; ++k) {
      Eigen::ArrayXXd g = Eigen::ArrayXXd::NullaryExpr(12, 9, [&] { return unit(rng); });
      maps.emplace_back(max_normalized(g));
    }
    CHECK(average_heatmaps(maps).satisfies_invariants());
  }
  std::vector<SaliencyHeatmap> mismatched{SaliencyHeatmap(Eigen::ArrayXXd::Ones(3, 3)),
                                          SaliencyHeatmap(Eigen::ArrayXXd::Ones(3, 4))};
  CHECK_THROWS_AS(average_heatmaps(mismatched), DimensionError);
}

TEST_CASE("16-bit PNG stores round(65535 g)") {
  testing::TempDir dir;
  const std::vector<PointPrompt> p{{30, 12}};
  const auto g = encode_prompts(p, 40, 64);
  write_heatmap_png(dir / "h.png", g);
  const Gray16 plane = read_png_gray16(dir / "h.png");
  REQUIRE(plane.rows() == 40);
  REQUIRE(plane.cols() == 64);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 64; ++x) REQUIRE(plane(y, x) == std::lround(65535.0 * g.at(x, y)));
  CHECK(plane(12, 30) == 65535);
  const auto back = read_heatmap_png(dir / "h.png");
  CHECK(((back.grid - g.grid).abs().maxCoeff()) <= 0.5 / 65535.0 + 1e-12);
}

TEST_CASE("raw float32 heatmap codec round-trips float-representable grids") {
  Eigen::ArrayXXd g(3, 5);
  g << 0, 0.25, 0.5, 0.75, 1, 0.125, 0.375, 0.625, 0.875, 0.0625, 1, 1, 0, 0, 0.5;
  const std::string bytes = encode_heatmap_raw(SaliencyHeatmap(g));
  CHECK(bytes.size() == 8 + 4 * 15);
  CHECK((decode_heatmap_raw(bytes).grid == g).all());
  CHECK_THROWS_AS(decode_heatmap_raw(bytes.substr(0, 20)), StorageError);
}

TEST_CASE("bilinear upsampling uses half-pixel centres") {
  Eigen::ArrayXXd g(2, 2);
  g << 0, 1, 0, 1;
  const Eigen::ArrayXXd up = resize_bilinear(g, 4, 4);
  // Output column x samples source coordinate (x + 0.5) / 2 - 0.5, clamped to [0, 1].
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const double src = std::clamp((x + 0.5) * 2.0 / 4.0 - 0.5, 0.0, 1.0);
      CHECK(up(y, x) == doctest::Approx(src).epsilon(1e-15));
    }
  }
  CHECK(up(0, 1) == doctest::Approx(0.25));
  CHECK(up(0, 2) == doctest::Approx(0.75));
}

TEST_CASE("resizing a constant grid keeps the constant") {
  const Eigen::ArrayXXd c = Eigen::ArrayXXd::Constant(5, 7, 0.3);
  for (auto [h, w] : {std::pair{2, 3}, std::pair{11, 4}, std::pair{5, 7}}) {
    const Eigen::ArrayXXd r = resize_bilinear(c, h, w);
    CHECK(((r - 0.3).abs().maxCoeff()) < 1e-15);
  }
}
