#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace samic::nn {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Spatial extent of a 4-D correlation volume. Axes (ya, xa) index context
// positions, (yb, xb) index target positions. A 2-D feature map is a volume
// with a 1x1 context extent.
struct Shape4 {
  int ha = 1;
  int wa = 1;
  int hb = 1;
  int wb = 1;

  [[nodiscard]] Eigen::Index positions() const {
    return static_cast<Eigen::Index>(ha) * wa * hb * wb;
  }
  [[nodiscard]] Eigen::Index index(int ya, int xa, int yb, int xb) const {
    return ((static_cast<Eigen::Index>(ya) * wa + xa) * hb + yb) * wb + xb;
  }
  [[nodiscard]] std::array<int, 4> dims() const { return {ha, wa, hb, wb}; }
  static Shape4 from_dims(const std::array<int, 4>& d) { return {d[0], d[1], d[2], d[3]}; }
  static Shape4 plane(int h, int w) { return {1, 1, h, w}; }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

// Multi-channel volume stored channels x positions (column = channel vector at one position).
template <typename Scalar>
struct Volume4 {
  Mat<Scalar> data;
  Shape4 shape;

  Volume4() = default;
  Volume4(int channels, Shape4 s) : data(Mat<Scalar>::Zero(channels, s.positions())), shape(s) {}
  Volume4(Mat<Scalar> d, Shape4 s) : data(std::move(d)), shape(s) {}

  [[nodiscard]] int channels() const { return static_cast<int>(data.rows()); }
  Scalar& operator()(int c, int ya, int xa, int yb, int xb) { return data(c, shape.index(ya, xa, yb, xb)); }
  Scalar operator()(int c, int ya, int xa, int yb, int xb) const { return data(c, shape.index(ya, xa, yb, xb)); }
};

// Learnable tensor with its gradient accumulator.
template <typename Scalar>
struct Param {
  std::string name;
  Mat<Scalar> value;
  Mat<Scalar> grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat<Scalar>::Zero(rows, cols)), grad(Mat<Scalar>::Zero(rows, cols)) {}
  [[nodiscard]] Eigen::Index size() const { return value.size(); }
};

// Deterministic per-tensor stream: the same (seed, name) always yields the same values.
inline std::mt19937_64 param_rng(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ull ^ seed;
  for (unsigned char c : name) h = (h ^ c) * 1099511628211ull;
  return std::mt19937_64(h);
}

// Normal(0, sqrt(gain / fan_in)) initialisation.
template <typename Scalar>
void init_fan_in(Param<Scalar>& p, std::uint64_t seed, Eigen::Index fan_in, double gain = 2.0) {
  auto rng = param_rng(seed, p.name);
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
  for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = static_cast<Scalar>(dist(rng));
  }
}

}  // namespace samic::nn
