#pragma once

#include <array>
#include <compare>
#include <map>
#include <optional>
#include <vector>

#include "idnanet/attention_blocks.hpp"

namespace idna {

constexpr Index kGridRows = 4;

struct NodeId {
  Index row = 0;
  Index col = 0;
  auto operator<=>(const NodeId&) const = default;
};

std::string to_string(const NodeId& id);

/// Node (i,j) exists iff 0 ≤ i ≤ 3 and 0 ≤ j ≤ 5 − i.
constexpr bool node_exists(Index row, Index col) { return row >= 0 && row < kGridRows && col >= 0 && col <= 5 - row; }

/// (0,5), (1,4), (2,3), (3,2).
constexpr std::array<NodeId, 4> terminal_nodes() { return {NodeId{0, 5}, NodeId{1, 4}, NodeId{2, 3}, NodeId{3, 2}}; }

/// Operands feeding one computed node (column ≥ 1).
struct NodeWiring {
  NodeId node;
  NodeId same_row_prev;
  std::optional<NodeId> shallower;
  std::optional<NodeId> deeper;
  bool acmix = false;
};

/// Computed nodes in evaluation order: columns ascending, rows ascending within a column.
std::vector<NodeWiring> grid_wiring(const std::array<bool, 4>& ab_mask);

struct GridConfig {
  std::array<Index, 4> channels{16, 32, 64, 128};
  std::array<bool, 4> ab_mask{true, true, true, true};
  Index acmix_heads = 4;
  FuseMode acmix_fuse = FuseMode::concat;
  bool acmix_relu = false;
  Index rcb_reduction = 4;
  Index norm_groups = 0;  ///< group norm after each merge and in each RCB body; 0 disables it
  AlignmentConfig align;
};

/// Node table F^(i,j) with the row shape contract enforced on insertion.
template <typename S>
class FeatureGrid {
 public:
  FeatureGrid() = default;
  FeatureGrid(std::array<Index, 4> channels, std::array<Index, 4> heights, std::array<Index, 4> widths);

  /// Throws InvariantError naming the node when the map violates its row's shape.
  void set(NodeId id, Var<S> map);
  bool has(NodeId id) const { return nodes_.count(id) > 0; }
  const Var<S>& at(NodeId id) const;
  std::size_t node_count() const { return nodes_.size(); }
  const std::map<NodeId, Var<S>>& nodes() const { return nodes_; }

  /// Terminal maps in head order; throws InvariantError when one is missing.
  std::array<Var<S>, 4> terminals() const;

  Shape row_shape(Index row) const;

 private:
  std::array<Index, 4> channels_{};
  std::array<Index, 4> heights_{};
  std::array<Index, 4> widths_{};
  std::map<NodeId, Var<S>> nodes_;
};

/// KEEP: identity on shape and values.
template <typename S>
Var<S> keep(const Var<S>& f) {
  return f;
}

/// UP: moves a map from `source_row` to a shallower `target_row` (bilinear resample by the
/// resolution ratio, then 1×1 channel map). Same-row targets pass through unchanged.
template <typename S>
Var<S> up(const Var<S>& f, Index source_row, Index target_row, const UpProjection<S>& projection) {
  if (target_row > source_row) throw UsageError("up: target row is deeper than the source row");
  if (target_row == source_row) return keep(f);
  if (projection.factor() != (Index{1} << (source_row - target_row)))
    throw UsageError("up: projection factor does not match the row distance");
  return projection(f);
}

template <typename S>
class DenseNest {
 public:
  DenseNest() = default;
  DenseNest(ParameterSet<S>& params, const std::string& path, const GridConfig& cfg, Rng& rng);

  /// Fills every node from the encoder column; node (i,1) uses ACmix when ab_mask[i],
  /// all other computed nodes use an RCB over the merged operands.
  FeatureGrid<S> forward_grid(const std::array<Var<S>, 4>& column0) const;

  const GridConfig& config() const { return cfg_; }
  const std::vector<NodeWiring>& wiring() const { return wiring_; }

 private:
  GridConfig cfg_;
  std::vector<NodeWiring> wiring_;
  std::map<NodeId, NodeMerge<S>> merges_;
  std::map<NodeId, Acmix<S>> acmix_;
  std::map<NodeId, ResidualCbam<S>> rcbs_;
};

}  // namespace idna
