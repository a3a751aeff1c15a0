#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace samic {

// RGB image with channel values in [0,1]. Column p = y * width + x holds the
// (r,g,b) triple of pixel (x,y).
struct RgbImage {
  int height = 0;
  int width = 0;
  Eigen::Matrix<float, 3, Eigen::Dynamic> pixels;

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), pixels(3, static_cast<Eigen::Index>(h) * w) {
    pixels.setZero();
  }

  [[nodiscard]] Eigen::Index index(int x, int y) const {
    return static_cast<Eigen::Index>(y) * width + x;
  }
  [[nodiscard]] auto at(int x, int y) const { return pixels.col(index(x, y)); }
  auto at(int x, int y) { return pixels.col(index(x, y)); }
  [[nodiscard]] bool contains(double x, double y) const {
    return x >= 0.0 && y >= 0.0 && x < width && y < height;
  }
};

// Binary mask, rows = image rows. Entries are 0 or 1.
using BinaryMask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// 16-bit single channel plane, rows = image rows.
using Gray16 = Eigen::Array<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic>;

RgbImage read_png_rgb(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);
std::vector<std::uint8_t> encode_png_rgb(const RgbImage& image);

// Masks are stored as 8-bit PNG with values 0/255.
BinaryMask read_png_mask(const std::filesystem::path& path);
void write_png_mask(const std::filesystem::path& path, const BinaryMask& mask);
std::vector<std::uint8_t> encode_png_mask(const BinaryMask& mask);
BinaryMask decode_png_mask(std::span<const std::uint8_t> bytes);

Gray16 read_png_gray16(const std::filesystem::path& path);
void write_png_gray16(const std::filesystem::path& path, const Gray16& plane);

// Bilinear resize with half-pixel centers (align-corners off).
RgbImage resize_bilinear(const RgbImage& image, int height, int width);

// Writes `bytes` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::string read_file(const std::filesystem::path& path);

std::string libpng_version();

}  // namespace samic
