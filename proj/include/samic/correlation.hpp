#pragma once

#include "samic/backbone.hpp"
#include "samic/heatmap.hpp"
#include "samic/interp.hpp"
#include "samic/nn/tensor.hpp"

#include <vector>

namespace samic {

// Per-resolution 4-D volumes, fine to coarse. Channel i of a level is the
// correlation of the i-th backbone layer at that resolution.
template <typename Scalar>
struct HypercorrelationPyramid {
  std::vector<nn::Volume4<Scalar>> levels;
};

inline constexpr double kZeroNormGuard = 1e-8;

// Multiplies every layer by the heatmap resized (bilinear, half-pixel) to its grid.
template <typename Scalar>
FeaturePyramid<Scalar> mask_features(const FeaturePyramid<Scalar>& pyramid, const SaliencyHeatmap& heatmap) {
  FeaturePyramid<Scalar> out = pyramid;
  for (auto& layer : out.layers) {
    const Eigen::ArrayXXd mask = resize_bilinear(heatmap.grid, layer.shape.hb, layer.shape.wb);
    for (int y = 0; y < layer.shape.hb; ++y) {
      for (int x = 0; x < layer.shape.wb; ++x) {
        layer.data.col(layer.shape.index(0, 0, y, x)) *= static_cast<Scalar>(mask(y, x));
      }
    }
  }
  return out;
}

namespace detail {

template <typename Scalar>
nn::Mat<Scalar> unit_columns(const nn::Mat<Scalar>& features) {
  nn::Mat<Scalar> out = features;
  for (Eigen::Index p = 0; p < out.cols(); ++p) {
    const double norm = out.col(p).template cast<double>().norm();
    if (norm < kZeroNormGuard) {
      out.col(p).setZero();
    } else {
      out.col(p) /= static_cast<Scalar>(norm);
    }
  }
  return out;
}

}  // namespace detail

// ReLU(cosine similarity) between every context position and every target position,
// with layers of equal spatial size stacked as channels.
template <typename Scalar>
HypercorrelationPyramid<Scalar> build_hypercorrelation(const FeaturePyramid<Scalar>& context,
                                                       const FeaturePyramid<Scalar>& target) {
  if (context.layers.size() != target.layers.size()) throw DimensionError("pyramids are not level-aligned");
  HypercorrelationPyramid<Scalar> out;
  std::size_t i = 0;
  while (i < context.layers.size()) {
    const nn::Shape4 cs = context.layers[i].shape;
    const nn::Shape4 ts = target.layers[i].shape;
    std::size_t j = i;
    while (j < context.layers.size() && context.layers[j].shape == cs) ++j;
    const nn::Shape4 vol_shape{cs.hb, cs.wb, ts.hb, ts.wb};
    nn::Volume4<Scalar> level(static_cast<int>(j - i), vol_shape);
    for (std::size_t l = i; l < j; ++l) {
      if (!(target.layers[l].shape == ts) || context.layers[l].channels() != target.layers[l].channels()) {
        throw DimensionError("context and target layers differ in shape");
      }
      const nn::Mat<Scalar> fc = detail::unit_columns(context.layers[l].data);
      const nn::Mat<Scalar> ft = detail::unit_columns(target.layers[l].data);
      // (target x context) column-major flattens to context-major, target-minor order.
      nn::Mat<Scalar> sim = (ft.transpose() * fc).cwiseMax(Scalar(0));
      level.data.row(static_cast<Eigen::Index>(l - i)) =
          Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(sim.data(), sim.size());
    }
    out.levels.push_back(std::move(level));
    i = j;
  }
  return out;
}

}  // namespace samic
