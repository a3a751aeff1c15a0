#pragma once

// Convolution over 4-D volumes restricted to an explicit list of kernel taps.
// A dense 4-D kernel uses all k^4 taps, a 2-D convolution over either axis pair
// uses the k^2 taps of one plane, and the centre-pivot convolution is the sum of
// the two plane convolutions. Every variant is lowered to im2col + one GEMM.

#include "samic/errors.hpp"
#include "samic/nn/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace samic::nn {

// Kernel tap as an offset from the kernel centre on (ya, xa, yb, xb).
struct Tap4 {
  int da = 0;
  int ea = 0;
  int db = 0;
  int eb = 0;
};

inline void require_odd(int k) {
  if (k < 1 || k % 2 == 0) throw ConfigError("kernel extent must be odd, got " + std::to_string(k));
}

inline std::vector<Tap4> dense_taps(int k) {
  require_odd(k);
  const int r = k / 2;
  std::vector<Tap4> taps;
  for (int a = -r; a <= r; ++a)
    for (int b = -r; b <= r; ++b)
      for (int c = -r; c <= r; ++c)
        for (int d = -r; d <= r; ++d) taps.push_back({a, b, c, d});
  return taps;
}

// k x k taps on the context plane (target offsets zero).
inline std::vector<Tap4> context_plane_taps(int k) {
  require_odd(k);
  const int r = k / 2;
  std::vector<Tap4> taps;
  for (int a = -r; a <= r; ++a)
    for (int b = -r; b <= r; ++b) taps.push_back({a, b, 0, 0});
  return taps;
}

// k x k taps on the target plane (context offsets zero).
inline std::vector<Tap4> target_plane_taps(int k) {
  require_odd(k);
  const int r = k / 2;
  std::vector<Tap4> taps;
  for (int c = -r; c <= r; ++c)
    for (int d = -r; d <= r; ++d) taps.push_back({0, 0, c, d});
  return taps;
}

inline int strided_extent(int in, int stride) { return (in + stride - 1) / stride; }

// Gather table for one (input shape, taps, stride) triple. Taps that fall outside
// the input for every output position are dropped.
struct ConvPlan {
  Shape4 in;
  Shape4 out;
  std::vector<int> used;             // indices into the layer's tap list
  std::vector<Eigen::Index> source;  // out.positions() x used.size(), -1 = padding

  ConvPlan() = default;
  ConvPlan(const Shape4& input, const std::vector<Tap4>& taps, const std::array<int, 4>& stride) : in(input) {
    const auto id = in.dims();
    std::array<int, 4> od{};
    for (int i = 0; i < 4; ++i) od[i] = strided_extent(id[i], stride[i]);
    out = Shape4::from_dims(od);
    auto axis_ok = [&](int axis, int off) {
      for (int o = 0; o < od[axis]; ++o) {
        const int src = o * stride[axis] + off;
        if (src >= 0 && src < id[axis]) return true;
      }
      return false;
    };
    for (std::size_t t = 0; t < taps.size(); ++t) {
      const Tap4& tp = taps[t];
      if (axis_ok(0, tp.da) && axis_ok(1, tp.ea) && axis_ok(2, tp.db) && axis_ok(3, tp.eb)) {
        used.push_back(static_cast<int>(t));
      }
    }
    const std::size_t nu = used.size();
    source.assign(static_cast<std::size_t>(out.positions()) * nu, -1);
    std::size_t k = 0;
    for (int ya = 0; ya < od[0]; ++ya)
      for (int xa = 0; xa < od[1]; ++xa)
        for (int yb = 0; yb < od[2]; ++yb)
          for (int xb = 0; xb < od[3]; ++xb)
            for (std::size_t u = 0; u < nu; ++u, ++k) {
              const Tap4& tp = taps[static_cast<std::size_t>(used[u])];
              const int a = ya * stride[0] + tp.da;
              const int b = xa * stride[1] + tp.ea;
              const int c = yb * stride[2] + tp.db;
              const int d = xb * stride[3] + tp.eb;
              if (a >= 0 && a < id[0] && b >= 0 && b < id[1] && c >= 0 && c < id[2] && d >= 0 && d < id[3]) {
                source[k] = in.index(a, b, c, d);
              }
            }
  }
};

template <typename Scalar>
class TapConv4d {
 public:
  struct Cache {
    ConvPlan plan;
    Mat<Scalar> cols;
  };

  TapConv4d() = default;
  TapConv4d(std::string name, int in_channels, int out_channels, std::vector<Tap4> taps, std::array<int, 4> stride)
      : taps_(std::move(taps)),
        stride_(stride),
        cin_(in_channels),
        cout_(out_channels),
        weight_(name + ".weight", out_channels, static_cast<Eigen::Index>(taps_.size()) * in_channels),
        bias_(name + ".bias", out_channels, 1) {
    for (int s : stride_) {
      if (s < 1) throw ConfigError("stride must be positive");
    }
  }

  void init(std::uint64_t seed, double gain = 2.0) {
    init_fan_in(weight_, seed, weight_.value.cols(), gain);
    bias_.value.setZero();
  }

  Volume4<Scalar> forward(const Volume4<Scalar>& in, Cache* cache = nullptr) const {
    if (in.channels() != cin_) throw DimensionError(weight_.name + ": input channel mismatch");
    ConvPlan plan(in.shape, taps_, stride_);
    Mat<Scalar> cols = im2col(in, plan);
    Volume4<Scalar> out;
    out.shape = plan.out;
    out.data.noalias() = gathered_weight(plan) * cols;
    out.data.colwise() += bias_.value.col(0);
    if (cache != nullptr) {
      *cache = Cache{std::move(plan), std::move(cols)};
    }
    return out;
  }

  // Accumulates parameter gradients and returns d(loss)/d(input).
  Volume4<Scalar> backward(const Volume4<Scalar>& dout, const Cache& cache) {
    const ConvPlan& plan = cache.plan;
    const Eigen::Index nu = static_cast<Eigen::Index>(plan.used.size());
    const Mat<Scalar> dw = dout.data * cache.cols.transpose();
    for (Eigen::Index u = 0; u < nu; ++u) {
      weight_.grad.middleCols(static_cast<Eigen::Index>(plan.used[static_cast<std::size_t>(u)]) * cin_, cin_) +=
          dw.middleCols(u * cin_, cin_);
    }
    bias_.grad.col(0) += dout.data.rowwise().sum();
    const Mat<Scalar> dcols = gathered_weight(plan).transpose() * dout.data;
    Volume4<Scalar> din(cin_, plan.in);
    std::size_t k = 0;
    for (Eigen::Index p = 0; p < plan.out.positions(); ++p) {
      for (Eigen::Index u = 0; u < nu; ++u, ++k) {
        const Eigen::Index src = plan.source[k];
        if (src >= 0) din.data.col(src) += dcols.col(p).segment(u * cin_, cin_);
      }
    }
    return din;
  }

  Param<Scalar>& weight() { return weight_; }
  Param<Scalar>& bias() { return bias_; }
  const Param<Scalar>& weight() const { return weight_; }
  const Param<Scalar>& bias() const { return bias_; }
  [[nodiscard]] const std::vector<Tap4>& taps() const { return taps_; }
  [[nodiscard]] const std::array<int, 4>& stride() const { return stride_; }
  [[nodiscard]] int in_channels() const { return cin_; }
  [[nodiscard]] int out_channels() const { return cout_; }

 private:
  Mat<Scalar> im2col(const Volume4<Scalar>& in, const ConvPlan& plan) const {
    const Eigen::Index nu = static_cast<Eigen::Index>(plan.used.size());
    Mat<Scalar> cols = Mat<Scalar>::Zero(nu * cin_, plan.out.positions());
    std::size_t k = 0;
    for (Eigen::Index p = 0; p < plan.out.positions(); ++p) {
      for (Eigen::Index u = 0; u < nu; ++u, ++k) {
        const Eigen::Index src = plan.source[k];
        if (src >= 0) cols.col(p).segment(u * cin_, cin_) = in.data.col(src);
      }
    }
    return cols;
  }

  Mat<Scalar> gathered_weight(const ConvPlan& plan) const {
    if (plan.used.size() == taps_.size()) return weight_.value;
    Mat<Scalar> w(cout_, static_cast<Eigen::Index>(plan.used.size()) * cin_);
    for (std::size_t u = 0; u < plan.used.size(); ++u) {
      w.middleCols(static_cast<Eigen::Index>(u) * cin_, cin_) =
          weight_.value.middleCols(static_cast<Eigen::Index>(plan.used[u]) * cin_, cin_);
    }
    return w;
  }

  std::vector<Tap4> taps_;
  std::array<int, 4> stride_{1, 1, 1, 1};
  int cin_ = 0;
  int cout_ = 0;
  Param<Scalar> weight_;
  Param<Scalar> bias_;
};

enum class Conv4dKind { CenterPivot, Dense };

// 4-D convolution with same padding and a stride on the context axes only.
// Centre-pivot: sum of a k x k convolution over the context plane and one over
// the target plane. Dense: all k^4 taps.
template <typename Scalar>
class Conv4d {
 public:
  struct Cache {
    typename TapConv4d<Scalar>::Cache first;
    typename TapConv4d<Scalar>::Cache second;
  };

  Conv4d() = default;
  Conv4d(const std::string& name, Conv4dKind kind, int cin, int cout, int kernel, int context_stride)
      : kind_(kind) {
    require_odd(kernel);
    const std::array<int, 4> stride{context_stride, context_stride, 1, 1};
    if (kind == Conv4dKind::Dense) {
      first_ = TapConv4d<Scalar>(name, cin, cout, dense_taps(kernel), stride);
    } else {
      first_ = TapConv4d<Scalar>(name + ".ctx", cin, cout, context_plane_taps(kernel), stride);
      second_ = TapConv4d<Scalar>(name + ".tgt", cin, cout, target_plane_taps(kernel), stride);
    }
  }

  void init(std::uint64_t seed) {
    // Two summed branches each get half the variance.
    first_.init(seed, kind_ == Conv4dKind::Dense ? 2.0 : 1.0);
    if (kind_ == Conv4dKind::CenterPivot) second_.init(seed, 1.0);
  }

  Volume4<Scalar> forward(const Volume4<Scalar>& in, Cache* cache = nullptr) const {
    Volume4<Scalar> out = first_.forward(in, cache ? &cache->first : nullptr);
    if (kind_ == Conv4dKind::CenterPivot) {
      out.data += second_.forward(in, cache ? &cache->second : nullptr).data;
    }
    return out;
  }

  Volume4<Scalar> backward(const Volume4<Scalar>& dout, const Cache& cache) {
    Volume4<Scalar> din = first_.backward(dout, cache.first);
    if (kind_ == Conv4dKind::CenterPivot) din.data += second_.backward(dout, cache.second).data;
    return din;
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    fn(first_.weight());
    fn(first_.bias());
    if (kind_ == Conv4dKind::CenterPivot) {
      fn(second_.weight());
      fn(second_.bias());
    }
  }

  [[nodiscard]] Conv4dKind kind() const { return kind_; }
  TapConv4d<Scalar>& first() { return first_; }
  TapConv4d<Scalar>& second() { return second_; }

 private:
  Conv4dKind kind_ = Conv4dKind::CenterPivot;
  TapConv4d<Scalar> first_;
  TapConv4d<Scalar> second_;
};

// 2-D convolution over the target plane of a volume with a 1x1 context extent.
template <typename Scalar>
TapConv4d<Scalar> make_conv2d(const std::string& name, int cin, int cout, int kernel, int stride = 1) {
  return TapConv4d<Scalar>(name, cin, cout, target_plane_taps(kernel), {1, 1, stride, stride});
}

}  // namespace samic::nn
