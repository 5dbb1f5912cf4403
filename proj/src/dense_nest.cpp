#include "idnanet/dense_nest.hpp"

namespace idna {

// ---- resampling glue ------------------------------------------------------------

template <typename S>
Var<S> upsample_nearest(const Var<S>& x, Index factor) {
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index oh = h * factor, ow = w * factor;
  std::vector<Index> index(static_cast<std::size_t>(c * oh * ow));
  std::size_t i = 0;
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx) index[i++] = (ch * h + y / factor) * w + xx / factor;
  return gather(x, index, {c, oh, ow});
}

template <typename S>
UpProjection<S>::UpProjection(ParameterSet<S>& params, const std::string& path, Index in_channels, Index out_channels,
                              Index factor, UpsampleMode mode, Rng& rng)
    : channel_map_(params, path + ".conv", in_channels, out_channels, 1, rng), factor_(factor), mode_(mode) {}

template <typename S>
Var<S> UpProjection<S>::operator()(const Var<S>& x) const {
  Var<S> big = mode_ == UpsampleMode::bilinear ? resize_bilinear(x, x.dim(1) * factor_, x.dim(2) * factor_)
                                               : upsample_nearest(x, factor_);
  return channel_map_(big);
}

template <typename S>
DownProjection<S>::DownProjection(ParameterSet<S>& params, const std::string& path, Index in_channels,
                                  Index out_channels, DownsampleMode mode, Rng& rng)
    : channel_map_(params, path + ".conv", in_channels, out_channels, 1, rng), mode_(mode) {}

template <typename S>
Var<S> DownProjection<S>::operator()(const Var<S>& x) const {
  if (x.dim(1) % 2 || x.dim(2) % 2) throw InputShapeError("downsample needs even spatial size");
  // Half-pixel bilinear at exactly 1/2 scale averages each 2×2 block.
  Var<S> small = mode_ == DownsampleMode::max_pool ? max_pool2(x) : resize_bilinear(x, x.dim(1) / 2, x.dim(2) / 2);
  return channel_map_(small);
}

// ---- grid -----------------------------------------------------------------------

std::string to_string(const NodeId& id) {
  return "(" + std::to_string(id.row) + "," + std::to_string(id.col) + ")";
}

std::vector<NodeWiring> grid_wiring(const std::array<bool, 4>& ab_mask) {
  std::vector<NodeWiring> order;
  for (Index j = 1; j <= 5; ++j)
    for (Index i = 0; i < kGridRows; ++i) {
      if (!node_exists(i, j)) continue;
      NodeWiring w;
      w.node = {i, j};
      w.same_row_prev = {i, j - 1};
      if (node_exists(i - 1, j)) w.shallower = NodeId{i - 1, j};
      if (node_exists(i + 1, j - 1)) w.deeper = NodeId{i + 1, j - 1};
      w.acmix = j == 1 && ab_mask[static_cast<std::size_t>(i)];
      order.push_back(w);
    }
  return order;
}

template <typename S>
FeatureGrid<S>::FeatureGrid(std::array<Index, 4> channels, std::array<Index, 4> heights, std::array<Index, 4> widths)
    : channels_(channels), heights_(heights), widths_(widths) {}

template <typename S>
Shape FeatureGrid<S>::row_shape(Index row) const {
  const auto r = static_cast<std::size_t>(row);
  return {channels_.at(r), heights_.at(r), widths_.at(r)};
}

template <typename S>
void FeatureGrid<S>::set(NodeId id, Var<S> map) {
  if (!node_exists(id.row, id.col)) throw InvariantError("grid has no node " + to_string(id));
  const Shape expected = row_shape(id.row);
  if (map.shape() != expected)
    throw InvariantError("node " + to_string(id) + " produced " + idna::to_string(map.shape()) + ", expected " +
                         idna::to_string(expected));
  nodes_[id] = std::move(map);
}

template <typename S>
const Var<S>& FeatureGrid<S>::at(NodeId id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw InvariantError("node " + to_string(id) + " has not been computed");
  return it->second;
}

template <typename S>
std::array<Var<S>, 4> FeatureGrid<S>::terminals() const {
  std::array<Var<S>, 4> out;
  const auto ids = terminal_nodes();
  for (std::size_t t = 0; t < 4; ++t) out[t] = at(ids[t]);
  return out;
}

template <typename S>
DenseNest<S>::DenseNest(ParameterSet<S>& params, const std::string& path, const GridConfig& cfg, Rng& rng)
    : cfg_(cfg), wiring_(grid_wiring(cfg.ab_mask)) {
  for (const auto& w : wiring_) {
    const Index i = w.node.row;
    const std::string node_path = path + ".node_" + std::to_string(i) + "_" + std::to_string(w.node.col);
    const Index c = cfg.channels[static_cast<std::size_t>(i)];
    const Index shallow_c = w.shallower ? cfg.channels[static_cast<std::size_t>(i - 1)] : 0;
    const Index deep_c = w.deeper ? cfg.channels[static_cast<std::size_t>(i + 1)] : 0;
    merges_.emplace(w.node, NodeMerge<S>(params, node_path + ".merge", c, shallow_c, deep_c, cfg.align, rng, cfg.norm_groups));
    if (w.acmix)
      acmix_.emplace(w.node, Acmix<S>(params, node_path + ".acmix", c, cfg.acmix_heads, cfg.acmix_fuse, cfg.acmix_relu, rng));
    else
      rcbs_.emplace(w.node, ResidualCbam<S>(params, node_path + ".rcb", c, rng, cfg.rcb_reduction, cfg.norm_groups));
  }
}

template <typename S>
FeatureGrid<S> DenseNest<S>::forward_grid(const std::array<Var<S>, 4>& column0) const {
  std::array<Index, 4> heights{}, widths{};
  for (std::size_t i = 0; i < 4; ++i) {
    heights[i] = column0[i].dim(1);
    widths[i] = column0[i].dim(2);
  }
  FeatureGrid<S> grid(cfg_.channels, heights, widths);
  for (Index i = 0; i < kGridRows; ++i) grid.set({i, 0}, column0[static_cast<std::size_t>(i)]);

  for (const auto& w : wiring_) {
    NodeInputs<S> in;
    in.same_row_prev = grid.at(w.same_row_prev);
    if (w.shallower) in.shallower = grid.at(*w.shallower);
    if (w.deeper) in.deeper = grid.at(*w.deeper);
    const Var<S> merged = merges_.at(w.node)(in);
    grid.set(w.node, w.acmix ? acmix_.at(w.node)(merged) : rcb(merged, rcbs_.at(w.node)));
  }
  return grid;
}

template Var<float> upsample_nearest(const Var<float>&, Index);
template Var<double> upsample_nearest(const Var<double>&, Index);
template class UpProjection<float>;
template class UpProjection<double>;
template class DownProjection<float>;
template class DownProjection<double>;
template class FeatureGrid<float>;
template class FeatureGrid<double>;
template class DenseNest<float>;
template class DenseNest<double>;

}  // namespace idna
