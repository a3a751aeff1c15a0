#pragma once

// Saliency training objective: KL divergence, one minus Pearson CC, and NSS
// against the fixation map, plus their sum. All statistics use the population
// standard deviation. Internals accumulate in double whatever the scalar type.

#include "samic/errors.hpp"

#include <Eigen/Core>

#include <cmath>
#include <string>

namespace samic {

inline constexpr double kKldEpsilon = 1e-6;
inline constexpr double kNssSigmaGuard = 1e-6;
inline constexpr double kFixationThreshold = 0.5;

template <typename Scalar>
using Map2 = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Loss value together with d(loss)/d(pred).
template <typename Scalar>
struct LossGrad {
  double value = 0.0;
  Map2<Scalar> grad;
};

namespace detail {

template <typename A, typename B>
void require_same_shape(const Eigen::ArrayBase<A>& a, const Eigen::ArrayBase<B>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError(std::string(what) + ": shape mismatch");
}

inline double population_sd(const Map2<double>& centred) {
  return std::sqrt(centred.square().sum() / static_cast<double>(centred.size()));
}

}  // namespace detail

// F(x,y) = 1 iff G(x,y) >= 0.5.
template <typename Derived>
Map2<typename Derived::Scalar> fixation_map(const Eigen::ArrayBase<Derived>& gt) {
  using Scalar = typename Derived::Scalar;
  return (gt >= Scalar(kFixationThreshold)).template cast<Scalar>();
}

// sum_i G_i log(eps + G_i / (P_i + eps)), on the maps as given (not sum-normalized).
template <typename DG, typename DP>
LossGrad<typename DP::Scalar> kld_loss_grad(const Eigen::ArrayBase<DG>& gt, const Eigen::ArrayBase<DP>& pred) {
  using Scalar = typename DP::Scalar;
  detail::require_same_shape(gt, pred, "kld_loss");
  const Map2<double> g = gt.template cast<double>();
  const Map2<double> p = pred.template cast<double>();
  const Map2<double> q = p + kKldEpsilon;
  const Map2<double> inner = kKldEpsilon + g / q;
  LossGrad<Scalar> out;
  out.value = (g * inner.log()).sum();
  out.grad = (-(g * g) / (inner * q.square())).template cast<Scalar>();
  return out;
}

// Variant that first rescales both maps to unit sum. Off by default.
template <typename DG, typename DP>
LossGrad<typename DP::Scalar> kld_sum_normalized_loss_grad(const Eigen::ArrayBase<DG>& gt,
                                                           const Eigen::ArrayBase<DP>& pred) {
  using Scalar = typename DP::Scalar;
  detail::require_same_shape(gt, pred, "kld_loss");
  const Map2<double> g = gt.template cast<double>();
  const Map2<double> p = pred.template cast<double>();
  const double gs = g.sum();
  const double ps = p.sum();
  if (gs <= 0.0 || ps <= 0.0) throw DegenerateError("kld_loss: map sums to zero");
  const Map2<double> gn = g / gs;
  const Map2<double> pn = p / ps;
  const auto inner_grad = kld_loss_grad(gn, pn);
  const double dot = (inner_grad.grad * pn).sum();
  LossGrad<Scalar> out;
  out.value = inner_grad.value;
  out.grad = ((inner_grad.grad - dot) / ps).template cast<Scalar>();
  return out;
}

template <typename DG, typename DP>
double kld_loss(const Eigen::ArrayBase<DG>& gt, const Eigen::ArrayBase<DP>& pred) {
  return kld_loss_grad(gt, pred).value;
}

// 1 - CC(pred, gt). Throws DegenerateError when either map is constant.
template <typename DG, typename DP>
LossGrad<typename DP::Scalar> cc_loss_grad(const Eigen::ArrayBase<DG>& gt, const Eigen::ArrayBase<DP>& pred) {
  using Scalar = typename DP::Scalar;
  detail::require_same_shape(gt, pred, "cc_loss");
  const Map2<double> g = gt.template cast<double>();
  const Map2<double> p = pred.template cast<double>();
  const Map2<double> gc = g - g.mean();
  const Map2<double> pc = p - p.mean();
  const double sgg = gc.square().sum();
  const double spp = pc.square().sum();
  const double n = static_cast<double>(g.size());
  const auto flat = [n](double ss, double mean) { return ss / n <= 1e-14 * (1.0 + mean * mean); };
  if (flat(sgg, g.mean()) || flat(spp, p.mean())) throw DegenerateError("cc_loss: zero-variance map");
  const double denom = std::sqrt(sgg * spp);
  const double cc = (gc * pc).sum() / denom;
  LossGrad<Scalar> out;
  out.value = 1.0 - cc;
  out.grad = (-(gc / denom - cc * pc / spp)).template cast<Scalar>();
  return out;
}

template <typename DG, typename DP>
double cc_loss(const Eigen::ArrayBase<DG>& gt, const Eigen::ArrayBase<DP>& pred) {
  return cc_loss_grad(gt, pred).value;
}

// (1/N) sum_i (zscore(G)_i - zscore(P)_i) * F_i with F the fixation map of G and
// N = sum F. Both standard deviations carry a +1e-6 guard.
template <typename DP, typename DG>
LossGrad<typename DP::Scalar> nss_loss_grad(const Eigen::ArrayBase<DP>& pred, const Eigen::ArrayBase<DG>& gt) {
  using Scalar = typename DP::Scalar;
  detail::require_same_shape(gt, pred, "nss_loss");
  const Map2<double> g = gt.template cast<double>();
  const Map2<double> p = pred.template cast<double>();
  const Map2<double> f = fixation_map(g);
  const double fixations = f.sum();
  if (fixations < 1.0) throw DegenerateError("nss_loss: ground truth has no fixations");
  const double n = static_cast<double>(g.size());
  const Map2<double> gc = g - g.mean();
  const Map2<double> pc = p - p.mean();
  const double sg = detail::population_sd(gc);
  const double sp = detail::population_sd(pc);
  const double zg = (gc * f).sum() / (sg + kNssSigmaGuard);
  const double a = (pc * f).sum();
  LossGrad<Scalar> out;
  out.value = (zg - a / (sp + kNssSigmaGuard)) / fixations;
  Map2<double> grad = (f - fixations / n) / (sp + kNssSigmaGuard);
  if (sp > 0.0) grad -= a * pc / (n * sp * (sp + kNssSigmaGuard) * (sp + kNssSigmaGuard));
  out.grad = (-grad / fixations).template cast<Scalar>();
  return out;
}

template <typename DP, typename DG>
double nss_loss(const Eigen::ArrayBase<DP>& pred, const Eigen::ArrayBase<DG>& gt) {
  return nss_loss_grad(pred, gt).value;
}

// Which terms enter the total. At least one must be enabled.
struct LossFlags {
  bool kld = true;
  bool cc = true;
  bool nss = true;
  bool kld_sum_normalized = false;
  // When set, a constant prediction drops the CC term (recorded as 0) instead of throwing.
  bool skip_degenerate_cc = false;

  void validate() const {
    if (!kld && !cc && !nss) throw ConfigError("loss flags: every term is disabled");
  }
};

struct LossBreakdown {
  double kld = 0.0;
  double cc = 0.0;
  double nss = 0.0;
  double total = 0.0;
  bool cc_skipped = false;
  LossFlags flags;
};

template <typename Scalar>
struct TotalLoss {
  LossBreakdown breakdown;
  Map2<Scalar> grad;
};

// Sum of the enabled terms and its gradient with respect to pred.
template <typename DG, typename DP>
TotalLoss<typename DP::Scalar> total_loss_grad(const Eigen::ArrayBase<DG>& gt, const Eigen::ArrayBase<DP>& pred,
                                               const LossFlags& flags = {}) {
  using Scalar = typename DP::Scalar;
  flags.validate();
  TotalLoss<Scalar> out;
  out.breakdown.flags = flags;
  out.grad = Map2<Scalar>::Zero(pred.rows(), pred.cols());
  if (flags.kld) {
    const auto t = flags.kld_sum_normalized ? kld_sum_normalized_loss_grad(gt, pred) : kld_loss_grad(gt, pred);
    out.breakdown.kld = t.value;
    out.grad += t.grad;
  }
  if (flags.cc) {
    try {
      const auto t = cc_loss_grad(gt, pred);
      out.breakdown.cc = t.value;
      out.grad += t.grad;
    } catch (const DegenerateError&) {
      if (!flags.skip_degenerate_cc) throw;
      out.breakdown.cc_skipped = true;
    }
  }
  if (flags.nss) {
    const auto t = nss_loss_grad(pred, gt);
    out.breakdown.nss = t.value;
    out.grad += t.grad;
  }
  out.breakdown.total = out.breakdown.kld + out.breakdown.cc + out.breakdown.nss;
  return out;
}

template <typename DG, typename DP>
LossBreakdown total_loss(const Eigen::ArrayBase<DG>& gt, const Eigen::ArrayBase<DP>& pred, const LossFlags& flags = {}) {
  return total_loss_grad(gt, pred, flags).breakdown;
}

}  // namespace samic
