#pragma once

#include <array>
#include <vector>

#include "idnanet/layers.hpp"

namespace idna {

enum class NormPlacement { pre, post };

/// Hierarchical windowed-transformer encoder geometry. Defaults are the desk-scale
/// configuration; `full_scale()` gives the 96-wide variant.
struct BackboneConfig {
  Index embed_dim = 16;
  std::array<Index, 4> depths{1, 1, 1, 1};
  std::array<Index, 4> heads{1, 2, 4, 8};
  Index window = 2;
  Index patch = 4;
  Index mlp_ratio = 4;
  Index cpb_hidden = 64;
  NormPlacement norm = NormPlacement::pre;

  static BackboneConfig full_scale();

  Index stage_channels(Index stage) const { return embed_dim << stage; }
  /// Throws InputShapeError for indivisible inputs, ConfigError for windows or head
  /// counts that do not fit the stage geometry.
  void validate(Index height, Index width) const;
};

/// Tokens of one stage laid out as an [h·w, C] matrix in row-major spatial order.
template <typename S>
struct TokenGrid {
  Var<S> tokens;
  Index height = 0;
  Index width = 0;
  Index stage = 0;

  Index channels() const { return tokens.dim(1); }
  /// [C,h,w] feature map view of the tokens.
  Var<S> to_map() const;
};

/// sign(d)·log2(1+|d|)/log2(ws) for an offset d within a window of size ws.
double log_spaced_offset(Index offset, Index window);

/// Relative coordinates for every token pair (a,b) of a ws×ws window, shape [A·A, 2]
/// with columns (Δy, Δx) of a − b.
template <typename S>
Tensor<S> log_spaced_coords(Index window);

/// bias[h,a,b] = out(relu(hidden(coords[a,b])))[h], shape [heads, A, A].
template <typename S>
Var<S> continuous_position_bias(const Tensor<S>& coords, const Linear<S>& hidden, const Linear<S>& out, Index window);

/// Single-group scaled cosine attention; logit_scale holds one log-domain scale per head
/// and bias is [heads, n, n] (undefined for none).
template <typename S>
Var<S> scaled_cosine_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, const Var<S>& logit_scale,
                               const Var<S>& bias);

/// Token permutation mapping partitioned position r to source token index: the grid is
/// rolled by −shift on both axes and cut into ws×ws windows, windows in row-major order.
std::vector<Index> window_partition_index(Index height, Index width, Index window, Index shift);
std::vector<Index> invert_permutation(const std::vector<Index>& perm);

/// Additive mask [windows, A, A]: −100 between tokens that came from different regions
/// of the rolled grid, 0 otherwise.
template <typename S>
Tensor<S> shifted_window_mask(Index height, Index width, Index window, Index shift);

/// Reorders rows of a token matrix [N,C] by `perm` (out row r = in row perm[r]).
template <typename S>
Var<S> permute_rows(const Var<S>& tokens, const std::vector<Index>& perm);

template <typename S>
class PatchEmbed {
 public:
  PatchEmbed() = default;
  PatchEmbed(ParameterSet<S>& params, const std::string& path, Index patch, Index embed_dim, Rng& rng);

  /// image:[3,H,W] → stage-0 tokens of size H/patch × W/patch.
  TokenGrid<S> operator()(const Var<S>& image) const;

 private:
  Conv2d<S> proj_;
  LayerNorm<S> norm_;
  Index patch_ = 4;
};

template <typename S>
class PatchMerging {
 public:
  PatchMerging() = default;
  PatchMerging(ParameterSet<S>& params, const std::string& path, Index channels, Rng& rng);

  /// Groups 2×2 neighborhoods (4C) and maps them to 2C; h and w must be even.
  TokenGrid<S> operator()(const TokenGrid<S>& grid) const;

 private:
  Linear<S> reduction_;
  LayerNorm<S> norm_;
};

template <typename S>
class WindowAttention {
 public:
  WindowAttention() = default;
  WindowAttention(ParameterSet<S>& params, const std::string& path, Index channels, Index heads, Index window,
                  Index cpb_hidden, Rng& rng);

  /// windows:[nW·A, C] partitioned tokens.
  Var<S> operator()(const Var<S>& windows, Index window_count, const std::optional<Tensor<S>>& mask) const;

  Var<S> position_bias() const { return continuous_position_bias(coords_, cpb_hidden_, cpb_out_, window_); }

  Var<S> logit_scale;  // [heads]

 private:
  Linear<S> qkv_;
  Linear<S> proj_;
  Linear<S> cpb_hidden_;
  Linear<S> cpb_out_;
  Tensor<S> coords_;
  Index heads_ = 1;
  Index window_ = 1;
};

template <typename S>
class SwinBlock {
 public:
  SwinBlock() = default;
  SwinBlock(ParameterSet<S>& params, const std::string& path, Index channels, Index heads, Index window, bool shifted,
            const BackboneConfig& cfg, Rng& rng);

  TokenGrid<S> operator()(const TokenGrid<S>& grid) const;

  /// ws/2 for shifted blocks, 0 when unshifted or when one window covers the grid.
  Index shift_for(Index height, Index width) const;

 private:
  LayerNorm<S> norm1_;
  LayerNorm<S> norm2_;
  WindowAttention<S> attn_;
  Linear<S> fc1_;
  Linear<S> fc2_;
  Index window_ = 1;
  bool shifted_ = false;
  NormPlacement placement_ = NormPlacement::pre;
};

template <typename S>
class SwinBackbone {
 public:
  SwinBackbone() = default;
  /// Blocks alternate plain and shifted windows, counted across all stages.
  SwinBackbone(ParameterSet<S>& params, const std::string& path, const BackboneConfig& cfg, Rng& rng);

  /// Encoder column F^(i,0), i = 0..3: [C0·2^i, H/p/2^i, W/p/2^i] for patch p.
  std::array<Var<S>, 4> extract_pyramid(const Var<S>& image) const;

  const BackboneConfig& config() const { return cfg_; }
  /// Shift each block applies for a square input of the given size, stage-major.
  std::vector<Index> block_shifts(Index input_size) const;

 private:
  BackboneConfig cfg_;
  PatchEmbed<S> embed_;
  std::array<std::vector<SwinBlock<S>>, 4> stages_;
  std::array<PatchMerging<S>, 3> merges_;
  std::array<LayerNorm<S>, 4> out_norms_;
};

}  // namespace idna
