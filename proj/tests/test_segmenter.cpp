#include "samic/codec.hpp"
#include "samic/errors.hpp"
#include "samic/segmenter.hpp"

#include "support.hpp"

#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

using namespace samic;

namespace {

// 40x60 grey canvas with a red square (5..14) and a blue bar (30..49 x 20..29).
RgbImage scene() {
  RgbImage img(40, 60);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 60; ++x) img.at(x, y) = Eigen::Vector3f(0.5f, 0.5f, 0.5f);
  for (int y = 5; y < 15; ++y)
    for (int x = 5; x < 15; ++x) img.at(x, y) = Eigen::Vector3f(1.0f, 0.0f, 0.0f);
  for (int y = 20; y < 30; ++y)
    for (int x = 30; x < 50; ++x) img.at(x, y) = Eigen::Vector3f(0.0f, 0.0f, 1.0f);
  return img;
}

std::vector<PointPrompt> pts(std::initializer_list<PointPrompt> l) { return l; }

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    if (value) ::setenv(name, value, 1);
    else ::unsetenv(name);
  }
  ~ScopedEnv() {
    if (old_) ::setenv(name_, old_->c_str(), 1);
    else ::unsetenv(name_);
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

}  // namespace

TEST_CASE("mock confidence follows 1.01(1 - e^-n) over regions, x0.1 on background") {
  const MockSegmenter mock;
  const RgbImage img = scene();
  const auto one = segment(mock, img, pts({{7, 7}}));
  CHECK(one.confidence == doctest::Approx(1.01 * (1.0 - std::exp(-1.0))));
  CHECK(one.mask.cast<int>().sum() == 100);
  const auto four = segment(mock, img, pts({{6, 6}, {8, 9}, {12, 13}, {10.7, 5.2}}));
  CHECK(four.confidence == doctest::Approx(0.9915).epsilon(1e-4));
  const auto two_regions = segment(mock, img, pts({{7, 7}, {35, 25}}));
  CHECK(two_regions.confidence == doctest::Approx(1.01 * (1.0 - std::exp(-2.0)) / 2.0));
  CHECK(two_regions.mask.cast<int>().sum() == 300);
  const auto bg = segment(mock, img, pts({{0.5, 39.5}}));
  CHECK(bg.confidence == doctest::Approx(0.1 * 1.01 * (1.0 - std::exp(-1.0))));
  CHECK(bg.mask.cast<int>().sum() == 40 * 60 - 300);
}

TEST_CASE("confidence rises with points on one region") {
  double prev = 0.0;
  for (std::size_t n = 1; n <= 8; ++n) {
    const double c = MockSegmenter::confidence_for(n, 1, false);
    CHECK(c > prev);
    prev = c;
  }
  CHECK(prev <= 1.01);
}

TEST_CASE("flood fill is 4-connected and respects the colour tolerance") {
  RgbImage img(5, 5);
  img.at(1, 1) = Eigen::Vector3f(1, 1, 1);
  img.at(2, 2) = Eigen::Vector3f(1, 1, 1);  // diagonal neighbour only
  img.at(1, 2) = Eigen::Vector3f(1.0f - 0.9f / 255.0f, 1, 1);
  const BinaryMask m = flood_region(img, 1, 1);
  CHECK(m(1, 1) == 1);
  CHECK(m(2, 1) == 1);
  CHECK(m(2, 2) == 1);  // reached through (1,2), within 1/255
  RgbImage far = img;
  far.at(1, 2) = Eigen::Vector3f(1.0f - 2.0f / 255.0f, 1, 1);
  const BinaryMask f = flood_region(far, 1, 1);
  CHECK(f.cast<int>().sum() == 1);
}

TEST_CASE("segment validates prompts") {
  const MockSegmenter mock;
  const RgbImage img = scene();
  CHECK_THROWS_AS(segment(mock, img, {}), ArgumentError);
  CHECK_THROWS_AS(segment(mock, img, pts({{60.0, 3}})), ArgumentError);
  CHECK_THROWS_AS(segment(mock, img, pts({{3, -0.1}})), ArgumentError);
  CHECK_NOTHROW(segment(mock, img, pts({{59.99, 39.99}})));
}

TEST_CASE("multi-instance: union of masks, minimum of confidences") {
  const MockSegmenter mock;
  const RgbImage img = scene();
  PromptSet s{"x", {{{7, 7}, {9, 9}, {11, 11}}, {{40, 25}}, {}}};
  const auto r = segment_instances(mock, img, s);
  const auto a = segment(mock, img, s.instances[0]);
  const auto b = segment(mock, img, s.instances[1]);
  CHECK((r.mask == a.mask.max(b.mask)).all());
  CHECK(r.confidence == doctest::Approx(std::min(a.confidence, b.confidence)));
  CHECK(r.prompts.size() == 4);
  CHECK_THROWS_AS(segment_instances(mock, img, PromptSet{"x", {{}}}), ArgumentError);
}

TEST_CASE("mock embedding holds patch means and standard deviations") {
  const MockSegmenter mock;
  const RgbImage img = scene();
  const ImageEmbedding e = mock.embed(img);
  CHECK(e.channels == 6);
  CHECK(e.height == 5);
  CHECK(e.width == 8);
  // Patch (1,1) covers x,y in 8..15: red block on 8..14, grey on the 15th row/column.
  const double red_frac = 49.0 / 64.0;
  const Eigen::Index col = 1 * 8 + 1;
  CHECK(e.grid(0, col) == doctest::Approx(red_frac + 0.5 * (1 - red_frac)).epsilon(1e-5));
  const double mean = red_frac + 0.5 * (1 - red_frac);
  const double sd = std::sqrt(red_frac * (1 - mean) * (1 - mean) + (1 - red_frac) * (0.5 - mean) * (0.5 - mean));
  CHECK(e.grid(3, col) == doctest::Approx(sd).epsilon(1e-4));
  CHECK(e.grid(3, 4 * 8 + 7) == doctest::Approx(0.0));
  // Trailing patch is partial: 60 = 7*8 + 4 columns.
  CHECK(e.grid(0, 7) == doctest::Approx(0.5));
}

TEST_CASE("content hash depends on pixels and shape only") {
  RgbImage a = scene();
  RgbImage b = scene();
  CHECK(image_content_hash(a) == image_content_hash(b));
  CHECK(image_content_hash(a).size() == 64);
  b.at(0, 0)(1) = 0.6f;
  CHECK(image_content_hash(a) != image_content_hash(b));
  RgbImage c(60, 40);
  RgbImage d(40, 60);
  CHECK(image_content_hash(c) != image_content_hash(d));
}

TEST_CASE("embedding cache computes once and reloads identical values") {
  testing::TempDir dir;
  const MockSegmenter mock;
  EmbeddingCache cache(dir.path());
  const RgbImage img = scene();
  const ImageEmbedding first = cache.embed_image(mock, img);
  CHECK(cache.computations() == 1);
  CHECK(cache.contains(first.image_hash, "mock"));
  const ImageEmbedding second = cache.embed_image(mock, img);
  CHECK(cache.computations() == 1);
  CHECK(cache.hits() == 1);
  CHECK(second.grid == first.grid);
  CHECK(second.producer == "mock");
  EmbeddingCache reopened(dir.path());
  CHECK(reopened.embed_image(mock, img).grid == first.grid);
  CHECK(reopened.computations() == 0);
  const auto sidecar = nlohmann::json::parse(read_file(dir / (first.image_hash + "-mock.json")));
  CHECK(sidecar["shape"] == nlohmann::json::array({6, 5, 8}));
}

TEST_CASE("concurrent cache readers see complete entries") {
  testing::TempDir dir;
  const MockSegmenter mock;
  EmbeddingCache cache(dir.path());
  const RgbImage img = scene();
  const Eigen::MatrixXf expected = mock.embed(img).grid;
  std::vector<std::thread> threads;
  std::atomic<int> mismatches{0};
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 20; ++i) {
        if (cache.embed_image(mock, img).grid != expected) ++mismatches;
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(mismatches == 0);
  CHECK(cache.hits() + cache.computations() == 80);
}

TEST_CASE("a truncated cache entry is reported") {
  testing::TempDir dir;
  const MockSegmenter mock;
  EmbeddingCache cache(dir.path());
  const RgbImage img = scene();
  const auto e = cache.embed_image(mock, img);
  std::ofstream(dir / (e.image_hash + "-mock.f32"), std::ios::trunc) << "abc";
  CHECK_THROWS_AS(cache.embed_image(mock, img), StorageError);
}

TEST_CASE("k-means separates well-separated groups") {
  ImageEmbedding e;
  e.channels = 2;
  e.height = 4;
  e.width = 6;
  e.grid.resize(2, 24);
  std::mt19937_64 rng(4);
  std::normal_distribution<float> jitter(0.0f, 0.01f);
  for (int p = 0; p < 24; ++p) {
    const int g = p % 3;
    e.grid(0, p) = static_cast<float>(g * 10) + jitter(rng);
    e.grid(1, p) = static_cast<float>(g == 1 ? 5 : 0) + jitter(rng);
  }
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const ClusterResult r = cluster_embedding(e, 3, seed);
    std::set<std::pair<int, int>> pairs;
    for (int p = 0; p < 24; ++p) pairs.insert({p % 3, r.assignment[p]});
    CHECK(pairs.size() == 3);
    CHECK(r.iterations <= 100);
  }
  CHECK(cluster_embedding(e, 3, 7).assignment == cluster_embedding(e, 3, 7).assignment);
  CHECK_THROWS_AS(cluster_embedding(e, 0, 0), ArgumentError);
  CHECK_THROWS_AS(cluster_embedding(e, 25, 0), ArgumentError);
  e.grid.setConstant(1.0f);
  CHECK_THROWS_AS(cluster_embedding(e, 2, 0), DegenerateError);
  CHECK(cluster_embedding(e, 1, 0).assignment == std::vector<int>(24, 0));
}

TEST_CASE("backend selection honours the environment") {
  {
    ScopedEnv sel("SAMIC_SEGMENTER", nullptr);
    CHECK(make_segmenter("mock")->id() == "mock");
    CHECK_THROWS_AS(make_segmenter("sam9"), ConfigError);
  }
  {
    ScopedEnv sel("SAMIC_SEGMENTER", "external");
    ScopedEnv url("SAMIC_EXTERNAL_SEGMENTER_URL", nullptr);
    CHECK_THROWS_AS(make_segmenter("mock"), BackendUnavailable);
  }
  {
    ScopedEnv sel("SAMIC_SEGMENTER", nullptr);
    ScopedEnv url("SAMIC_EXTERNAL_SEGMENTER_URL", "http://127.0.0.1:9");
    const auto ext = make_segmenter("external");
    CHECK(ext->id() == "external");
    CHECK_THROWS_AS(segment(*ext, scene(), pts({{1, 1}})), BackendUnavailable);
  }
}

TEST_CASE("external backend speaks the plug-in protocol") {
  httplib::Server server;
  // A fake service: a low-scoring full mask and the 10x10 block at the origin.
  server.Post("/segment", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    const int h = body["image"]["height"];
    const int w = body["image"]["width"];
    const std::string rgb = base64_decode(body["image"]["rgb8"].get<std::string>());
    if (rgb.size() != static_cast<std::size_t>(h * w * 3) || body["points"].size() != 2) {
      res.status = 400;
      return;
    }
    BinaryMask full = BinaryMask::Ones(h, w);
    BinaryMask block = BinaryMask::Zero(h, w);
    block.block(0, 0, 10, 10) = 1;
    auto png = [](const BinaryMask& m) {
      const auto bytes = encode_png_mask(m);
      return base64_encode(std::string(bytes.begin(), bytes.end()));
    };
    nlohmann::json out{{"masks", {{{"png", png(full)}, {"score", 0.2}}, {{"png", png(block)}, {"score", 0.8}}}}};
    res.set_content(out.dump(), "application/json");
  });
  server.Post("/embed", [](const httplib::Request&, httplib::Response& res) {
    std::string raw;
    for (int i = 0; i < 4; ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(i) * 0.5f);
      for (int b = 0; b < 4; ++b) raw.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
    res.set_content(nlohmann::json{{"channels", 1}, {"height", 2}, {"width", 2}, {"data", base64_encode(raw)}}.dump(),
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const ExternalSegmenter ext("http://127.0.0.1:" + std::to_string(port));
  const auto r = segment(ext, scene(), pts({{3, 3}, {4, 4}}));
  CHECK(r.confidence == doctest::Approx(0.8));
  CHECK(r.mask.cast<int>().sum() == 100);
  const auto e = ext.embed(scene());
  CHECK(e.grid.cols() == 4);
  CHECK(e.grid(0, 3) == doctest::Approx(1.5f));
  CHECK_THROWS_AS(segment(ext, scene(), pts({{3, 3}})), BackendUnavailable);

  server.stop();
  t.join();
}
