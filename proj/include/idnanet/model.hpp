#pragma once

#include <cstdint>

#include "idnanet/backbone.hpp"
#include "idnanet/fusion_head.hpp"

namespace idna {

struct ModelConfig {
  BackboneConfig backbone;
  std::array<bool, 4> ab_mask{true, true, true, true};
  Index acmix_heads = 4;
  FuseMode acmix_fuse = FuseMode::concat;
  bool acmix_relu = false;
  Index rcb_reduction = 4;
  Index norm_groups = 16;  ///< 0 disables the grid group norms
  AlignmentConfig align;
  Index head_width = 0;  ///< 0 means "same as the backbone embed width"

  GridConfig grid_config() const;
  Index unified_width() const { return head_width > 0 ? head_width : backbone.embed_dim; }
};

/// Backbone → dense nest → fusion head. Parameters live in one registry whose paths are
/// prefixed "backbone.", "grid." and "head.".
template <typename S>
class IdnaNet {
 public:
  IdnaNet(const ModelConfig& cfg, std::uint64_t seed);

  IdnaNet(const IdnaNet&) = delete;
  IdnaNet& operator=(const IdnaNet&) = delete;

  /// image:[3,H,W] in [0,1] → five 1×H×W logit maps.
  PredictionSet<S> forward(const Var<S>& image) const;
  FeatureGrid<S> features(const Var<S>& image) const;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<S>& parameters() { return params_; }
  const ParameterSet<S>& parameters() const { return params_; }
  const SwinBackbone<S>& backbone() const { return backbone_; }
  const DenseNest<S>& nest() const { return nest_; }
  const FusionHead<S>& head() const { return head_; }

 private:
  ModelConfig cfg_;
  ParameterSet<S> params_;
  SwinBackbone<S> backbone_;
  DenseNest<S> nest_;
  FusionHead<S> head_;
};

}  // namespace idna
