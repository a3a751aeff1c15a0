#include "samic/image.hpp"

#include "samic/errors.hpp"
#include "samic/interp.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <system_error>

namespace samic {
namespace {

[[noreturn]] void png_fail(png_structp, png_const_charp message) { throw StorageError(message); }
void png_warn(png_structp, png_const_charp) {}

// Decoded 8- or 16-bit rows, after expanding palettes/low bit depths.
struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;  // row-major, big-endian samples for 16-bit
  [[nodiscard]] int sample(int x, int y, int c) const {
    const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
    const std::size_t off =
        static_cast<std::size_t>(y) * stride + (static_cast<std::size_t>(x) * channels + c) * (bit_depth / 8);
    if (bit_depth == 16) return (bytes[off] << 8) | bytes[off + 1];
    return bytes[off];
  }
};

struct MemoryReader {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

void read_cb(png_structp png, png_bytep out, png_size_t len) {
  auto* src = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (src->pos + len > src->size) png_error(png, "truncated PNG data");
  std::memcpy(out, src->data + src->pos, len);
  src->pos += len;
}

DecodedPng decode_png(std::span<const std::uint8_t> bytes, const std::string& what) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw StorageError("not a PNG file: " + what);
  MemoryReader reader{bytes.data(), bytes.size(), 8};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  DecodedPng out;
  try {
    png_set_read_fn(png, &reader, read_cb);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_read_update_info(png, info);
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    out.bytes.resize(rowbytes * static_cast<std::size_t>(out.height));
    std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = out.bytes.data() + rowbytes * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* sink = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  sink->insert(sink->end(), data, data + len);
}
void flush_cb(png_structp) {}

// Encodes packed rows; `bit_depth` 8 or 16 (16-bit samples given big-endian).
std::vector<std::uint8_t> encode_png(int width, int height, int color_type, int bit_depth,
                                     const std::vector<std::uint8_t>& packed) {
  std::vector<std::uint8_t> sink;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &sink, write_cb, flush_cb);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t rowbytes = packed.size() / static_cast<std::size_t>(height);
    for (int y = 0; y < height; ++y) {
      png_write_row(png, const_cast<png_bytep>(packed.data() + rowbytes * y));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return sink;
}

DecodedPng decode_png(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  return decode_png({reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()}, path.string());
}

BinaryMask mask_from(const DecodedPng& png) {
  BinaryMask mask(png.height, png.width);
  const int half = png.bit_depth == 16 ? 32768 : 128;
  for (int y = 0; y < png.height; ++y) {
    for (int x = 0; x < png.width; ++x) mask(y, x) = png.sample(x, y, 0) >= half ? 1 : 0;
  }
  return mask;
}

}  // namespace

RgbImage read_png_rgb(const std::filesystem::path& path) {
  const DecodedPng png = decode_png(path);
  RgbImage img(png.height, png.width);
  const float maxv = png.bit_depth == 16 ? 65535.0f : 255.0f;
  for (int y = 0; y < png.height; ++y) {
    for (int x = 0; x < png.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src = png.channels >= 3 ? c : 0;
        img.at(x, y)(c) = static_cast<float>(png.sample(x, y, src)) / maxv;
      }
    }
  }
  return img;
}

std::vector<std::uint8_t> encode_png_rgb(const RgbImage& image) {
  std::vector<std::uint8_t> packed(static_cast<std::size_t>(image.width) * image.height * 3);
  for (Eigen::Index p = 0; p < image.pixels.cols(); ++p) {
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(image.pixels(c, p), 0.0f, 1.0f);
      packed[static_cast<std::size_t>(p) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  return encode_png(image.width, image.height, PNG_COLOR_TYPE_RGB, 8, packed);
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) {
  write_file_atomic(path, encode_png_rgb(image));
}

BinaryMask read_png_mask(const std::filesystem::path& path) { return mask_from(decode_png(path)); }

BinaryMask decode_png_mask(std::span<const std::uint8_t> bytes) { return mask_from(decode_png(bytes, "<memory>")); }

std::vector<std::uint8_t> encode_png_mask(const BinaryMask& mask) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  std::vector<std::uint8_t> packed(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) packed[static_cast<std::size_t>(y) * w + x] = mask(y, x) ? 255 : 0;
  }
  return encode_png(w, h, PNG_COLOR_TYPE_GRAY, 8, packed);
}

void write_png_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  write_file_atomic(path, encode_png_mask(mask));
}

Gray16 read_png_gray16(const std::filesystem::path& path) {
  const DecodedPng png = decode_png(path);
  if (png.bit_depth != 16) throw StorageError("expected a 16-bit PNG: " + path.string());
  Gray16 plane(png.height, png.width);
  for (int y = 0; y < png.height; ++y) {
    for (int x = 0; x < png.width; ++x) plane(y, x) = static_cast<std::uint16_t>(png.sample(x, y, 0));
  }
  return plane;
}

void write_png_gray16(const std::filesystem::path& path, const Gray16& plane) {
  const int h = static_cast<int>(plane.rows());
  const int w = static_cast<int>(plane.cols());
  std::vector<std::uint8_t> packed(static_cast<std::size_t>(h) * w * 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t off = (static_cast<std::size_t>(y) * w + x) * 2;
      packed[off] = static_cast<std::uint8_t>(plane(y, x) >> 8);
      packed[off + 1] = static_cast<std::uint8_t>(plane(y, x) & 0xff);
    }
  }
  write_file_atomic(path, encode_png(w, h, PNG_COLOR_TYPE_GRAY, 16, packed));
}

RgbImage resize_bilinear(const RgbImage& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  RgbImage out(height, width);
  for (int c = 0; c < 3; ++c) {
    Eigen::ArrayXXf plane(image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) plane(y, x) = image.at(x, y)(c);
    }
    const Eigen::ArrayXXf resized = resize_bilinear(plane, height, width);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) out.at(x, y)(c) = resized(y, x);
    }
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw StorageError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw StorageError("cannot publish " + path.string());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string libpng_version() { return png_get_libpng_ver(nullptr); }

}  // namespace samic
