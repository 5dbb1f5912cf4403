#pragma once

#include <array>

#include "idnanet/dense_nest.hpp"

namespace idna {

/// Five 1×H×W logit maps: X_pred^1..4 from terminals (0,5), (1,4), (2,3), (3,2) and
/// X_pred^5 fused from those four. Inference uses preds[0] only.
template <typename S>
struct PredictionSet {
  std::array<Var<S>, 5> preds;

  const Var<S>& operator[](std::size_t i) const { return preds[i]; }
  const Var<S>& inference() const { return preds[0]; }
};

template <typename S>
class FusionHead {
 public:
  FusionHead() = default;
  /// `width` is the unified channel count (C0 at desk scale, 96 at full scale).
  FusionHead(ParameterSet<S>& params, const std::string& path, const std::array<Index, 4>& row_channels, Index width,
             Rng& rng);

  /// F'' = bilinear_resize(conv1×1(terminal), H, W) with `width` channels.
  Var<S> unify(const Var<S>& terminal, Index row, Index height, Index width) const;
  /// 1×1 conv width → 1, no activation.
  Var<S> project(const Var<S>& unified, Index row) const;
  /// X_pred^5 = conv1×1(concat(X_pred^1..4)), 4 → 1.
  Var<S> fuse(const std::array<Var<S>, 4>& preds) const;

  PredictionSet<S> forward(const FeatureGrid<S>& grid, Index height, Index width) const;

  /// Initial per-pixel target probability of every branch; X_pred^5 starts as the branch mean.
  static constexpr double kTargetPrior = 0.01;

  std::array<Conv2d<S>, 4> unify_convs;
  std::array<Conv2d<S>, 4> project_convs;
  Conv2d<S> fuse_conv;
};

}  // namespace idna
