#pragma once

#include "samic/annotation.hpp"
#include "samic/image.hpp"
#include "samic/segmenter.hpp"

#include "support.hpp"

#include <condition_variable>
#include <mutex>

namespace testing {

// Grey canvas with one flat square of the given colour at (x0, y0).
inline std::filesystem::path write_scene(const std::filesystem::path& path, Eigen::Vector3f colour, int x0, int y0,
                                         int side = 12, int h = 48, int w = 64) {
  samic::RgbImage img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(x, y) = Eigen::Vector3f(0.4f, 0.4f, 0.4f);
  for (int y = y0; y < y0 + side; ++y)
    for (int x = x0; x < x0 + side; ++x) img.at(x, y) = colour;
  std::filesystem::create_directories(path.parent_path());
  samic::write_png_rgb(path, img);
  return path;
}

// Mock segmenter whose embed() waits until open() is called; lets tests hold an image in the
// not-ready state.
class GatedSegmenter final : public samic::Segmenter {
 public:
  [[nodiscard]] std::string id() const override { return "gated"; }
  [[nodiscard]] std::vector<samic::SegmentationResult> segment_candidates(
      const samic::RgbImage& image, std::span<const samic::PointPrompt> points) const override {
    return mock_.segment_candidates(image, points);
  }
  [[nodiscard]] samic::ImageEmbedding embed(const samic::RgbImage& image) const override {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return open_; });
    return mock_.embed(image);
  }
  void open() {
    {
      std::lock_guard lock(m_);
      open_ = true;
    }
    cv_.notify_all();
  }

 private:
  samic::MockSegmenter mock_;
  mutable std::mutex m_;
  mutable std::condition_variable cv_;
  bool open_ = false;
};

struct ServiceFixture {
  TempDir dir{"samic-annot"};
  std::shared_ptr<samic::EmbeddingCache> cache = std::make_shared<samic::EmbeddingCache>(dir / "cache");
  std::vector<std::filesystem::path> images = {
      write_scene(dir / "in/red.png", {1.0f, 0.0f, 0.0f}, 8, 10),
      write_scene(dir / "in/green.png", {0.0f, 1.0f, 0.0f}, 30, 20),
      write_scene(dir / "in/blue.png", {0.0f, 0.0f, 1.0f}, 44, 4),
  };
};

}  // namespace testing
