#pragma once

#include "idnanet/layers.hpp"

namespace idna {

enum class UpsampleMode { bilinear, nearest };
enum class DownsampleMode { max_pool, avg_pool };

/// Nearest-neighbour upsampling of [C,H,W] by an integer factor.
template <typename S>
Var<S> upsample_nearest(const Var<S>& x, Index factor);

/// Resolution-changing glue between grid rows: resample by 2^|Δrow| then a linear 1×1
/// channel map. No nonlinearity.
template <typename S>
class UpProjection {
 public:
  UpProjection() = default;
  UpProjection(ParameterSet<S>& params, const std::string& path, Index in_channels, Index out_channels, Index factor,
               UpsampleMode mode, Rng& rng);

  Var<S> operator()(const Var<S>& x) const;

  Index factor() const { return factor_; }

 private:
  Conv2d<S> channel_map_;
  Index factor_ = 2;
  UpsampleMode mode_ = UpsampleMode::bilinear;
};

template <typename S>
class DownProjection {
 public:
  DownProjection() = default;
  DownProjection(ParameterSet<S>& params, const std::string& path, Index in_channels, Index out_channels,
                 DownsampleMode mode, Rng& rng);

  /// Halves H and W then maps channels.
  Var<S> operator()(const Var<S>& x) const;

 private:
  Conv2d<S> channel_map_;
  DownsampleMode mode_ = DownsampleMode::max_pool;
};

}  // namespace idna
