#include "idnanet/model.hpp"

namespace idna {

GridConfig ModelConfig::grid_config() const {
  GridConfig g;
  for (Index i = 0; i < 4; ++i) g.channels[static_cast<std::size_t>(i)] = backbone.stage_channels(i);
  g.ab_mask = ab_mask;
  g.acmix_heads = acmix_heads;
  g.acmix_fuse = acmix_fuse;
  g.acmix_relu = acmix_relu;
  g.rcb_reduction = rcb_reduction;
  g.norm_groups = norm_groups;
  g.align = align;
  return g;
}

namespace {

template <typename S>
SwinBackbone<S> make_backbone(ParameterSet<S>& params, const ModelConfig& cfg, Rng& rng) {
  return SwinBackbone<S>(params, "backbone", cfg.backbone, rng);
}

}  // namespace

template <typename S>
IdnaNet<S>::IdnaNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  backbone_ = make_backbone(params_, cfg_, rng);
  const GridConfig grid = cfg_.grid_config();
  nest_ = DenseNest<S>(params_, "grid", grid, rng);
  head_ = FusionHead<S>(params_, "head", grid.channels, cfg_.unified_width(), rng);
}

template <typename S>
FeatureGrid<S> IdnaNet<S>::features(const Var<S>& image) const {
  return nest_.forward_grid(backbone_.extract_pyramid(image));
}

template <typename S>
PredictionSet<S> IdnaNet<S>::forward(const Var<S>& image) const {
  return head_.forward(features(image), image.dim(1), image.dim(2));
}

template class IdnaNet<float>;
template class IdnaNet<double>;

}  // namespace idna
