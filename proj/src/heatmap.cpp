#include "samic/heatmap.hpp"

#include "samic/errors.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

namespace samic {

void HeatmapConfig::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("heatmap sigma must be positive");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("heatmap tau must lie in (0,1)");
  if (connectivity != 4 && connectivity != 8) throw ConfigError("connectivity must be 4 or 8");
}

bool SaliencyHeatmap::satisfies_invariants(double tol) const {
  if (grid.size() == 0) return false;
  if ((grid < -tol).any() || (grid > 1.0 + tol).any()) return false;
  const double m = grid.maxCoeff();
  return m == 0.0 || std::abs(m - 1.0) <= tol;
}

SaliencyHeatmap encode_prompts(std::span<const PointPrompt> points, int height, int width,
                               const HeatmapConfig& config) {
  config.validate();
  if (points.empty()) throw ArgumentError("encode_prompts: empty prompt list");
  if (height < 1 || width < 1) throw DimensionError("encode_prompts: image size must be positive");
  const double inv = 1.0 / (2.0 * config.sigma * config.sigma);
  Eigen::ArrayXXd grid = Eigen::ArrayXXd::Zero(height, width);
  Eigen::ArrayXd gx(width);
  Eigen::ArrayXd gy(height);
  for (const auto& p : points) {
    if (p.x < 0.0 || p.y < 0.0 || p.x >= width || p.y >= height) {
      throw ArgumentError("encode_prompts: point outside the image");
    }
    // The exponent separates into a row factor and a column factor.
    for (int x = 0; x < width; ++x) {
      const double d = (x - p.x) / width;
      gx(x) = std::exp(-d * d * inv);
    }
    for (int y = 0; y < height; ++y) {
      const double d = (y - p.y) / height;
      gy(y) = std::exp(-d * d * inv);
    }
    grid.matrix().noalias() += gy.matrix() * gx.matrix().transpose();
  }
  return SaliencyHeatmap(max_normalized(grid));
}

namespace {

int find_root(std::vector<int>& parent, int i) {
  while (parent[static_cast<std::size_t>(i)] != i) {
    parent[static_cast<std::size_t>(i)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
    i = parent[static_cast<std::size_t>(i)];
  }
  return i;
}

void unite(std::vector<int>& parent, int a, int b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  // Keep the raster-earlier pixel as root so roots identify first pixels.
  if (a < b) {
    parent[static_cast<std::size_t>(b)] = a;
  } else if (b < a) {
    parent[static_cast<std::size_t>(a)] = b;
  }
}

}  // namespace

PeakResult extract_peaks(const SaliencyHeatmap& heatmap, const HeatmapConfig& config) {
  config.validate();
  const int h = heatmap.height();
  const int w = heatmap.width();
  if (h == 0 || w == 0) throw DimensionError("extract_peaks: empty heatmap");

  // Single raster pass with union-find over already-visited neighbours.
  const int n = h * w;
  std::vector<int> parent(static_cast<std::size_t>(n), -1);
  auto on = [&](int x, int y) { return heatmap.grid(y, x) >= config.tau; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!on(x, y)) continue;
      const int i = y * w + x;
      parent[static_cast<std::size_t>(i)] = i;
      if (x > 0 && on(x - 1, y)) unite(parent, i, i - 1);
      if (y > 0) {
        if (on(x, y - 1)) unite(parent, i, i - w);
        if (config.connectivity == 8) {
          if (x > 0 && on(x - 1, y - 1)) unite(parent, i, i - w - 1);
          if (x + 1 < w && on(x + 1, y - 1)) unite(parent, i, i - w + 1);
        }
      }
    }
  }

  // Moments per root; roots are the raster-first pixel of each component.
  struct Moments {
    double mx = 0.0, my = 0.0, area = 0.0;
  };
  std::vector<int> slot(static_cast<std::size_t>(n), -1);
  std::vector<Moments> moments;
  for (int i = 0; i < n; ++i) {
    if (parent[static_cast<std::size_t>(i)] < 0) continue;
    const int r = find_root(parent, i);
    if (slot[static_cast<std::size_t>(r)] < 0) {
      slot[static_cast<std::size_t>(r)] = static_cast<int>(moments.size());
      moments.emplace_back();
    }
    auto& m = moments[static_cast<std::size_t>(slot[static_cast<std::size_t>(r)])];
    m.mx += i % w;
    m.my += i / w;
    m.area += 1.0;
  }

  PeakResult result;
  if (moments.empty()) {
    Eigen::Index best = 0;
    double best_v = -1.0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (heatmap.grid(y, x) > best_v) {
          best_v = heatmap.grid(y, x);
          best = y * w + x;
        }
      }
    }
    result.points.push_back({static_cast<double>(best % w), static_cast<double>(best / w)});
    result.fallback = true;
    return result;
  }
  for (const auto& m : moments) result.points.push_back({m.mx / m.area, m.my / m.area});
  return result;
}

SaliencyHeatmap average_heatmaps(std::span<const SaliencyHeatmap> maps) {
  if (maps.empty()) throw ArgumentError("average_heatmaps: empty list");
  if (maps.size() == 1) return maps.front();
  Eigen::ArrayXXd sum = maps.front().grid;
  for (std::size_t k = 1; k < maps.size(); ++k) {
    if (maps[k].grid.rows() != sum.rows() || maps[k].grid.cols() != sum.cols()) {
      throw DimensionError("average_heatmaps: shape mismatch");
    }
    sum += maps[k].grid;
  }
  sum /= static_cast<double>(maps.size());
  return SaliencyHeatmap(max_normalized(sum));
}

Gray16 to_gray16(const SaliencyHeatmap& heatmap) {
  return (heatmap.grid.cwiseMax(0.0).cwiseMin(1.0) * 65535.0).round().cast<std::uint16_t>();
}

SaliencyHeatmap from_gray16(const Gray16& plane) {
  return SaliencyHeatmap(plane.cast<double>() / 65535.0);
}

void write_heatmap_png(const std::filesystem::path& path, const SaliencyHeatmap& heatmap) {
  write_png_gray16(path, to_gray16(heatmap));
}

SaliencyHeatmap read_heatmap_png(const std::filesystem::path& path) {
  return from_gray16(read_png_gray16(path));
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + b])) << (8 * b);
  return v;
}

}  // namespace

std::string encode_heatmap_raw(const SaliencyHeatmap& heatmap) {
  std::string out;
  out.reserve(8 + static_cast<std::size_t>(heatmap.grid.size()) * 4);
  put_u32(out, static_cast<std::uint32_t>(heatmap.height()));
  put_u32(out, static_cast<std::uint32_t>(heatmap.width()));
  for (int y = 0; y < heatmap.height(); ++y) {
    for (int x = 0; x < heatmap.width(); ++x) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(heatmap.grid(y, x))));
    }
  }
  return out;
}

SaliencyHeatmap decode_heatmap_raw(const std::string& bytes) {
  if (bytes.size() < 8) throw StorageError("raw heatmap: truncated header");
  const std::uint32_t h = get_u32(bytes, 0);
  const std::uint32_t w = get_u32(bytes, 4);
  if (bytes.size() != 8 + static_cast<std::size_t>(h) * w * 4) throw StorageError("raw heatmap: size mismatch");
  Eigen::ArrayXXd grid(h, w);
  std::size_t off = 8;
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x, off += 4) grid(y, x) = std::bit_cast<float>(get_u32(bytes, off));
  }
  return SaliencyHeatmap(std::move(grid));
}

}  // namespace samic
