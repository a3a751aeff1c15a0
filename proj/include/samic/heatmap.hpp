#pragma once

#include "samic/image.hpp"
#include "samic/prompts.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <vector>

namespace samic {

struct HeatmapConfig {
  double sigma = 0.02;  // Gaussian width in normalized image coordinates
  double tau = 0.5;     // binarization threshold for peak extraction
  int connectivity = 8;

  void validate() const;
};

// H x W grid in [0,1]; max entry is 1 unless the map is identically zero.
// Rows index y, columns index x.
struct SaliencyHeatmap {
  Eigen::ArrayXXd grid;

  SaliencyHeatmap() = default;
  explicit SaliencyHeatmap(Eigen::ArrayXXd g) : grid(std::move(g)) {}

  [[nodiscard]] int height() const { return static_cast<int>(grid.rows()); }
  [[nodiscard]] int width() const { return static_cast<int>(grid.cols()); }
  [[nodiscard]] double at(int x, int y) const { return grid(y, x); }
  // True when every entry lies in [0,1] and the max is 1 (or the map is zero).
  [[nodiscard]] bool satisfies_invariants(double tol = 1e-12) const;
};

// Gaussian sum over the prompts, evaluated at integer pixel centres and divided by its max.
SaliencyHeatmap encode_prompts(std::span<const PointPrompt> points, int height, int width,
                               const HeatmapConfig& config = {});

struct PeakResult {
  std::vector<PointPrompt> points;
  bool fallback = false;  // no pixel reached tau; points holds the global argmax
};

// Binarize at tau, label connected components and return each component's centroid
// (sub-pixel) in raster order of the component's first pixel.
PeakResult extract_peaks(const SaliencyHeatmap& heatmap, const HeatmapConfig& config = {});

// Element-wise mean of same-sized maps, re-normalized to max 1.
SaliencyHeatmap average_heatmaps(std::span<const SaliencyHeatmap> maps);

// Divides by the max entry; zero maps are returned unchanged.
template <typename Derived>
auto max_normalized(const Eigen::ArrayBase<Derived>& grid) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = grid.maxCoeff();
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> out = grid;
  if (m > Scalar(0)) out /= m;
  return out;
}

// 16-bit PNG codec, value = round(65535 * g).
Gray16 to_gray16(const SaliencyHeatmap& heatmap);
SaliencyHeatmap from_gray16(const Gray16& plane);
void write_heatmap_png(const std::filesystem::path& path, const SaliencyHeatmap& heatmap);
SaliencyHeatmap read_heatmap_png(const std::filesystem::path& path);

// Raw little-endian float32 grid behind an 8-byte header (u32 H, u32 W).
std::string encode_heatmap_raw(const SaliencyHeatmap& heatmap);
SaliencyHeatmap decode_heatmap_raw(const std::string& bytes);

}  // namespace samic
