#pragma once

// Direct nested-loop versions of the 4-D operators, written against plain arrays.

#include "samic/nn/conv.hpp"

#include <cmath>
#include <map>
#include <random>
#include <tuple>
#include <vector>

namespace testing {

// Kernel bank indexed [co][ci][a][b][c][d], offsets -r..r on each axis.
struct Kernel4 {
  int cout = 0;
  int cin = 0;
  int k = 1;
  std::vector<double> w;
  std::vector<double> bias;

  Kernel4(int co, int ci, int extent) : cout(co), cin(ci), k(extent) {
    w.assign(static_cast<std::size_t>(co * ci) * k * k * k * k, 0.0);
    bias.assign(static_cast<std::size_t>(co), 0.0);
  }
  double& at(int co, int ci, int a, int b, int c, int d) {
    const int r = k / 2;
    return w[((((static_cast<std::size_t>(co) * cin + ci) * k + a + r) * k + b + r) * k + c + r) * k + d + r];
  }
  [[nodiscard]] double at(int co, int ci, int a, int b, int c, int d) const {
    return const_cast<Kernel4*>(this)->at(co, ci, a, b, c, d);
  }
};

// Same-padded strided cross-correlation over the four spatial axes.
inline samic::nn::Volume4<double> conv4d_reference(const samic::nn::Volume4<double>& in, const Kernel4& kern,
                                                   const std::array<int, 4>& stride) {
  const auto& s = in.shape;
  const int r = kern.k / 2;
  const samic::nn::Shape4 os{(s.ha + stride[0] - 1) / stride[0], (s.wa + stride[1] - 1) / stride[1],
                             (s.hb + stride[2] - 1) / stride[2], (s.wb + stride[3] - 1) / stride[3]};
  samic::nn::Volume4<double> out(kern.cout, os);
  for (int co = 0; co < kern.cout; ++co)
    for (int p = 0; p < os.ha; ++p)
      for (int q = 0; q < os.wa; ++q)
        for (int u = 0; u < os.hb; ++u)
          for (int v = 0; v < os.wb; ++v) {
            double acc = kern.bias[static_cast<std::size_t>(co)];
            for (int ci = 0; ci < kern.cin; ++ci)
              for (int a = -r; a <= r; ++a)
                for (int b = -r; b <= r; ++b)
                  for (int c = -r; c <= r; ++c)
                    for (int d = -r; d <= r; ++d) {
                      const int y0 = p * stride[0] + a;
                      const int x0 = q * stride[1] + b;
                      const int y1 = u * stride[2] + c;
                      const int x1 = v * stride[3] + d;
                      if (y0 < 0 || y0 >= s.ha || x0 < 0 || x0 >= s.wa || y1 < 0 || y1 >= s.hb || x1 < 0 ||
                          x1 >= s.wb)
                        continue;
                      acc += kern.at(co, ci, a, b, c, d) * in(ci, y0, x0, y1, x1);
                    }
            out(co, p, q, u, v) = acc;
          }
  return out;
}

// Copies the kernel entries a tap-based layer uses into its weight matrix.
inline void load_kernel(samic::nn::TapConv4d<double>& layer, const Kernel4& kern) {
  const auto& taps = layer.taps();
  for (int co = 0; co < kern.cout; ++co) {
    for (std::size_t t = 0; t < taps.size(); ++t) {
      for (int ci = 0; ci < kern.cin; ++ci) {
        layer.weight().value(co, static_cast<Eigen::Index>(t) * kern.cin + ci) =
            kern.at(co, ci, taps[t].da, taps[t].ea, taps[t].db, taps[t].eb);
      }
    }
    layer.bias().value(co, 0) = kern.bias[static_cast<std::size_t>(co)];
  }
}

// ReLU(cosine) between every context and target position, from explicit loops.
inline double cosine_relu(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (std::sqrt(na) < 1e-8 || std::sqrt(nb) < 1e-8) return 0.0;
  return std::max(0.0, dot / (std::sqrt(na) * std::sqrt(nb)));
}

}  // namespace testing
