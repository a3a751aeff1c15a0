#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

namespace samic {

// One output sample of 1-D linear interpolation: out = (1-frac)*in[lo] + frac*in[hi].
struct LerpTap {
  int lo = 0;
  int hi = 0;
  double frac = 0.0;
};

// Half-pixel-centred sampling grid (align-corners off, clamped at the border):
// src = (dst + 0.5) * in/out - 0.5. Used for every resize and upsample in the project.
inline std::vector<LerpTap> lerp_taps(int in_size, int out_size) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out_size));
  const double scale = static_cast<double>(in_size) / out_size;
  for (int d = 0; d < out_size; ++d) {
    double src = std::max(0.0, (d + 0.5) * scale - 0.5);
    int lo = std::min(static_cast<int>(std::floor(src)), in_size - 1);
    int hi = std::min(lo + 1, in_size - 1);
    taps[static_cast<std::size_t>(d)] = {lo, hi, hi == lo ? 0.0 : src - lo};
  }
  return taps;
}

// Resize a 2-D array (rows = y) bilinearly.
template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> resize_bilinear(
    const Eigen::ArrayBase<Derived>& grid, int out_rows, int out_cols) {
  using Scalar = typename Derived::Scalar;
  const auto ty = lerp_taps(static_cast<int>(grid.rows()), out_rows);
  const auto tx = lerp_taps(static_cast<int>(grid.cols()), out_cols);
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(out_rows, out_cols);
  for (int y = 0; y < out_rows; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_cols; ++x) {
      const auto& b = tx[static_cast<std::size_t>(x)];
      const Scalar fy = static_cast<Scalar>(a.frac);
      const Scalar fx = static_cast<Scalar>(b.frac);
      const Scalar top = (1 - fx) * grid(a.lo, b.lo) + fx * grid(a.lo, b.hi);
      const Scalar bottom = (1 - fx) * grid(a.hi, b.lo) + fx * grid(a.hi, b.hi);
      out(y, x) = (1 - fy) * top + fy * bottom;
    }
  }
  return out;
}

}  // namespace samic
