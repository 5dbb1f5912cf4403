#include "idnanet/fusion_head.hpp"

#include <cmath>

namespace idna {

template <typename S>
FusionHead<S>::FusionHead(ParameterSet<S>& params, const std::string& path, const std::array<Index, 4>& row_channels,
                          Index width, Rng& rng) {
  for (std::size_t r = 0; r < 4; ++r) {
    const std::string p = path + ".branch" + std::to_string(r + 1);
    unify_convs[r] = Conv2d<S>(params, p + ".unify", row_channels[r], width, 1, rng);
    project_convs[r] = Conv2d<S>(params, p + ".project", width, 1, 1, rng);
    // bias = logit(kTargetPrior)
    project_convs[r].bias.mutable_value().data.setConstant(static_cast<S>(std::log(kTargetPrior / (1 - kTargetPrior))));
  }
  fuse_conv = Conv2d<S>(params, path + ".fuse", 4, 1, 1, rng);
  fuse_conv.weight.mutable_value().data.setConstant(S(0.25));
  fuse_conv.bias.mutable_value().data.setZero();
}

template <typename S>
Var<S> FusionHead<S>::unify(const Var<S>& terminal, Index row, Index height, Index width) const {
  return resize_bilinear(unify_convs.at(static_cast<std::size_t>(row))(terminal), height, width);
}

template <typename S>
Var<S> FusionHead<S>::project(const Var<S>& unified, Index row) const {
  return project_convs.at(static_cast<std::size_t>(row))(unified);
}

template <typename S>
Var<S> FusionHead<S>::fuse(const std::array<Var<S>, 4>& preds) const {
  return fuse_conv(concat(std::vector<Var<S>>(preds.begin(), preds.end())));
}

template <typename S>
PredictionSet<S> FusionHead<S>::forward(const FeatureGrid<S>& grid, Index height, Index width) const {
  const auto terminals = grid.terminals();
  std::array<Var<S>, 4> branch;
  for (std::size_t r = 0; r < 4; ++r) {
    const auto row = static_cast<Index>(r);
    branch[r] = project(unify(terminals[r], row, height, width), row);
  }
  PredictionSet<S> out;
  for (std::size_t r = 0; r < 4; ++r) out.preds[r] = branch[r];
  out.preds[4] = fuse(branch);
  return out;
}

template class FusionHead<float>;
template class FusionHead<double>;

}  // namespace idna
