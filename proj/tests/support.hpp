#pragma once

#include "samic/dataset.hpp"
#include "samic/heatmap.hpp"

#include <Eigen/Core>

#include <atomic>
#include <cmath>
#include <chrono>
#include <deque>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "samic") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Direct evaluation of the prompt heatmap formula at one pixel, before normalization.
inline double gaussian_sum(const std::vector<samic::PointPrompt>& pts, int x, int y, int h, int w, double sigma) {
  double s = 0.0;
  for (const auto& p : pts) {
    const double dx = (x - p.x) / w;
    const double dy = (y - p.y) / h;
    s += std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
  }
  return s;
}

struct Component {
  double cx = 0.0;
  double cy = 0.0;
  int area = 0;
};

// Breadth-first flood labeling; components ordered by their raster-first pixel.
inline std::vector<Component> brute_force_components(const Eigen::ArrayXXd& grid, double tau, int connectivity) {
  const int h = static_cast<int>(grid.rows());
  const int w = static_cast<int>(grid.cols());
  std::vector<int> label(static_cast<std::size_t>(h * w), -1);
  std::vector<Component> out;
  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      if (grid(y0, x0) < tau || label[static_cast<std::size_t>(y0 * w + x0)] >= 0) continue;
      const int id = static_cast<int>(out.size());
      double sx = 0.0;
      double sy = 0.0;
      int area = 0;
      std::deque<std::pair<int, int>> queue{{x0, y0}};
      label[static_cast<std::size_t>(y0 * w + x0)] = id;
      while (!queue.empty()) {
        const auto [x, y] = queue.front();
        queue.pop_front();
        sx += x;
        sy += y;
        ++area;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dx == 0 && dy == 0) || (connectivity == 4 && dx != 0 && dy != 0)) continue;
            const int nx = x + dx;
            const int ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            auto& l = label[static_cast<std::size_t>(ny * w + nx)];
            if (l >= 0 || grid(ny, nx) < tau) continue;
            l = id;
            queue.emplace_back(nx, ny);
          }
        }
      }
      out.push_back({sx / area, sy / area, area});
    }
  }
  return out;
}

// Random prompt set: k points at least `sep` px apart, kept `margin` px from the border.
inline std::vector<samic::PointPrompt> separated_points(std::mt19937_64& rng, int k, double sep, int size,
                                                        double margin = 0.0) {
  std::uniform_real_distribution<double> coord(margin, size - 1 - margin);
  for (;;) {
    std::vector<samic::PointPrompt> pts;
    int attempts = 0;
    while (static_cast<int>(pts.size()) < k && attempts < 2000) {
      ++attempts;
      const samic::PointPrompt p{coord(rng), coord(rng)};
      bool ok = true;
      for (const auto& q : pts) ok = ok && std::hypot(p.x - q.x, p.y - q.y) >= sep;
      if (ok) pts.push_back(p);
    }
    if (static_cast<int>(pts.size()) == k) return pts;
  }
}

// Small synthetic benchmark written once per process into a temp directory.
inline const samic::DatasetIndex& small_synthetic(int size = 64) {
  static TempDir dir("samic-synth");
  static std::map<int, samic::DatasetIndex> cache;
  auto it = cache.find(size);
  if (it == cache.end()) {
    samic::SyntheticConfig cfg;
    cfg.classes = 4;
    cfg.images_per_class = 5;
    cfg.height = size;
    cfg.width = size;
    cfg.folds = 2;
    cfg.seed = 11;
    it = cache.emplace(size, samic::generate_synthetic_dataset(dir / ("s" + std::to_string(size)), cfg)).first;
  }
  return it->second;
}

}  // namespace testing
