#pragma once

#include "samic/errors.hpp"
#include "samic/interp.hpp"
#include "samic/nn/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace samic::nn {

// Group normalisation over (channels in group) x (all positions), per-channel affine.
template <typename Scalar>
class GroupNorm {
 public:
  struct Cache {
    Mat<Scalar> normalized;
    std::vector<double> inv_std;
  };

  GroupNorm() = default;
  GroupNorm(const std::string& name, int channels, int groups)
      : groups_(groups), gamma_(name + ".gamma", channels, 1), beta_(name + ".beta", channels, 1) {
    if (groups < 1 || channels % groups != 0) {
      throw ConfigError(name + ": " + std::to_string(channels) + " channels not divisible into " +
                        std::to_string(groups) + " groups");
    }
    gamma_.value.setOnes();
  }

  Volume4<Scalar> forward(const Volume4<Scalar>& in, Cache* cache = nullptr) const {
    const Eigen::Index cg = in.data.rows() / groups_;
    Mat<Scalar> xhat(in.data.rows(), in.data.cols());
    std::vector<double> inv_std(static_cast<std::size_t>(groups_));
    for (int g = 0; g < groups_; ++g) {
      const auto block = in.data.middleRows(g * cg, cg);
      const double n = static_cast<double>(block.size());
      const double mean = block.template cast<double>().sum() / n;
      const double var = (block.template cast<double>().array() - mean).square().sum() / n;
      const double is = 1.0 / std::sqrt(var + kEps);
      inv_std[static_cast<std::size_t>(g)] = is;
      xhat.middleRows(g * cg, cg) =
          ((block.template cast<double>().array() - mean) * is).matrix().template cast<Scalar>();
    }
    Volume4<Scalar> out(xhat, in.shape);
    out.data.array().colwise() *= gamma_.value.col(0).array();
    out.data.colwise() += beta_.value.col(0);
    if (cache != nullptr) *cache = Cache{std::move(xhat), std::move(inv_std)};
    return out;
  }

  Volume4<Scalar> backward(const Volume4<Scalar>& dout, const Cache& cache) {
    const Mat<Scalar>& xhat = cache.normalized;
    gamma_.grad.col(0) += (dout.data.array() * xhat.array()).rowwise().sum().matrix();
    beta_.grad.col(0) += dout.data.rowwise().sum();
    Mat<Scalar> dxhat = dout.data;
    dxhat.array().colwise() *= gamma_.value.col(0).array();
    const Eigen::Index cg = xhat.rows() / groups_;
    Volume4<Scalar> din(static_cast<int>(xhat.rows()), dout.shape);
    for (int g = 0; g < groups_; ++g) {
      const auto dx = dxhat.middleRows(g * cg, cg).template cast<double>().array();
      const auto xh = xhat.middleRows(g * cg, cg).template cast<double>().array();
      const double n = static_cast<double>(dx.size());
      const double mean_dx = dx.sum() / n;
      const double mean_dx_xh = (dx * xh).sum() / n;
      din.data.middleRows(g * cg, cg) =
          ((dx - mean_dx - xh * mean_dx_xh) * cache.inv_std[static_cast<std::size_t>(g)])
              .matrix()
              .template cast<Scalar>();
    }
    return din;
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    fn(gamma_);
    fn(beta_);
  }

  [[nodiscard]] int groups() const { return groups_; }

  static constexpr double kEps = 1e-5;

 private:
  int groups_ = 1;
  Param<Scalar> gamma_;
  Param<Scalar> beta_;
};

template <typename Scalar>
Volume4<Scalar> relu(const Volume4<Scalar>& in) {
  return Volume4<Scalar>(in.data.cwiseMax(Scalar(0)), in.shape);
}

// Gradient of ReLU given its output.
template <typename Scalar>
Volume4<Scalar> relu_backward(const Volume4<Scalar>& dout, const Volume4<Scalar>& out) {
  return Volume4<Scalar>((out.data.array() > Scalar(0)).select(dout.data, Scalar(0)).matrix(), dout.shape);
}

// Bilinear resize of both axis pairs (half-pixel centres). Identity on matching pairs.
template <typename Scalar>
class Resize4 {
 public:
  Resize4(const Shape4& in, const Shape4& out) : in_(in), out_(out) {
    ta_y_ = lerp_taps(in.ha, out.ha);
    ta_x_ = lerp_taps(in.wa, out.wa);
    tb_y_ = lerp_taps(in.hb, out.hb);
    tb_x_ = lerp_taps(in.wb, out.wb);
  }

  Volume4<Scalar> forward(const Volume4<Scalar>& v) const {
    if (in_ == out_) return v;
    Volume4<Scalar> out(v.channels(), out_);
    visit([&](Eigen::Index dst, Eigen::Index src, double w) {
      out.data.col(dst) += static_cast<Scalar>(w) * v.data.col(src);
    });
    return out;
  }

  Volume4<Scalar> backward(const Volume4<Scalar>& dout) const {
    if (in_ == out_) return dout;
    Volume4<Scalar> din(dout.channels(), in_);
    visit([&](Eigen::Index dst, Eigen::Index src, double w) {
      din.data.col(src) += static_cast<Scalar>(w) * dout.data.col(dst);
    });
    return din;
  }

 private:
  // Calls fn(dst, src, weight) for each of the up to 16 interpolation contributions.
  template <typename Fn>
  void visit(Fn&& fn) const {
    for (int ya = 0; ya < out_.ha; ++ya)
      for (int xa = 0; xa < out_.wa; ++xa)
        for (int yb = 0; yb < out_.hb; ++yb)
          for (int xb = 0; xb < out_.wb; ++xb) {
            const Eigen::Index dst = out_.index(ya, xa, yb, xb);
            const LerpTap* t[4] = {&ta_y_[ya], &ta_x_[xa], &tb_y_[yb], &tb_x_[xb]};
            for (int corner = 0; corner < 16; ++corner) {
              double w = 1.0;
              int idx[4];
              for (int axis = 0; axis < 4; ++axis) {
                const bool hi = (corner >> axis) & 1;
                w *= hi ? t[axis]->frac : 1.0 - t[axis]->frac;
                idx[axis] = hi ? t[axis]->hi : t[axis]->lo;
              }
              if (w != 0.0) fn(dst, in_.index(idx[0], idx[1], idx[2], idx[3]), w);
            }
          }
  }

  Shape4 in_;
  Shape4 out_;
  std::vector<LerpTap> ta_y_, ta_x_, tb_y_, tb_x_;
};

// Mean over the context axes; the result has a 1x1 context extent.
template <typename Scalar>
Volume4<Scalar> mean_over_context(const Volume4<Scalar>& v) {
  const Shape4 out_shape = Shape4::plane(v.shape.hb, v.shape.wb);
  const Eigen::Index plane = out_shape.positions();
  const Eigen::Index count = static_cast<Eigen::Index>(v.shape.ha) * v.shape.wa;
  Volume4<Scalar> out(v.channels(), out_shape);
  for (Eigen::Index a = 0; a < count; ++a) out.data += v.data.middleCols(a * plane, plane);
  out.data /= static_cast<Scalar>(count);
  return out;
}

template <typename Scalar>
Volume4<Scalar> mean_over_context_backward(const Volume4<Scalar>& dout, const Shape4& in_shape) {
  const Eigen::Index plane = dout.shape.positions();
  const Eigen::Index count = static_cast<Eigen::Index>(in_shape.ha) * in_shape.wa;
  Volume4<Scalar> din(dout.channels(), in_shape);
  for (Eigen::Index a = 0; a < count; ++a) din.data.middleCols(a * plane, plane) = dout.data / static_cast<Scalar>(count);
  return din;
}

}  // namespace samic::nn
