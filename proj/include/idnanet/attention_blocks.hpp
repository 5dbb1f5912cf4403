#pragma once

#include "idnanet/resample.hpp"

namespace idna {

enum class FuseMode { concat, add };

/// Operands of a grid node (i,j): F^(i,j−1), F^(i−1,j) and F^(i+1,j−1), unaligned.
/// Absent operands are undefined Vars.
template <typename S>
struct NodeInputs {
  Var<S> same_row_prev;
  Var<S> shallower;
  Var<S> deeper;
};

struct AlignmentConfig {
  DownsampleMode down = DownsampleMode::max_pool;
  UpsampleMode up = UpsampleMode::bilinear;
};

/// M_C: aligns the present operands to row i (C_i × h_i × w_i), concatenates them in
/// (shallower, same-row, deeper) order and fuses with a 1×1 conv back to C_i, followed by
/// a group norm when norm_groups > 0.
template <typename S>
class NodeMerge {
 public:
  NodeMerge() = default;
  /// Zero channel counts mark operands this node never receives.
  NodeMerge(ParameterSet<S>& params, const std::string& path, Index channels, Index shallower_channels,
            Index deeper_channels, const AlignmentConfig& align, Rng& rng, Index norm_groups = 0);

  Var<S> operator()(const NodeInputs<S>& inputs) const;

  Index operand_count() const { return 1 + has_shallower_ + has_deeper_; }
  const Conv2d<S>& fuse() const { return fuse_; }

 private:
  DownProjection<S> down_;
  UpProjection<S> up_;
  Conv2d<S> fuse_;
  GroupNorm<S> norm_;
  Index channels_ = 0;
  bool has_shallower_ = false;
  bool has_deeper_ = false;
};

/// Residual CBAM block: y = x + SpatialAttn(ChannelAttn(relu(conv3×3(x)))). With
/// norm_groups > 0 the body is relu(group_norm(conv3×3(x))).
template <typename S>
class ResidualCbam {
 public:
  ResidualCbam() = default;
  ResidualCbam(ParameterSet<S>& params, const std::string& path, Index channels, Rng& rng, Index reduction = 4,
               Index norm_groups = 0);

  Var<S> operator()(const Var<S>& x) const;

  /// sigmoid(mlp(avgpool(x)) + mlp(maxpool(x))), shape [C].
  Var<S> channel_attention(const Var<S>& x) const;
  /// sigmoid(conv7×7([mean_c(x), max_c(x)])), shape [1,H,W].
  Var<S> spatial_attention(const Var<S>& x) const;

  Conv2d<S> body;
  GroupNorm<S> body_norm;  // undefined when norm_groups = 0
  Linear<S> mlp_hidden;
  Linear<S> mlp_out;
  Conv2d<S> spatial;
};

/// ACmix node processor: shared 1×1 q/k/v projections feed a convolution path (shift
/// aggregation) and a global self-attention path whose results are fused.
template <typename S>
class Acmix {
 public:
  struct Projections {
    Var<S> q, k, v;  // [C,H,W] each
  };

  Acmix() = default;
  Acmix(ParameterSet<S>& params, const std::string& path, Index channels, Index heads, FuseMode fuse,
        bool output_relu, Rng& rng);

  Projections project(const Var<S>& f) const;
  Var<S> conv_path(const Projections& p) const;
  Var<S> attention_path(const Projections& p) const;

  /// A_C(f) and A_T(f).
  Var<S> a_c(const Var<S>& f) const { return conv_path(project(f)); }
  Var<S> a_t(const Var<S>& f) const { return attention_path(project(f)); }

  /// Fusion of the two path outputs (concat + 1×1 conv, or sum).
  Var<S> fuse(const Var<S>& conv_out, const Var<S>& attn_out) const;

  Var<S> operator()(const Var<S>& f) const;

  Index heads() const { return heads_; }

  Conv2d<S> qkv;       // C → 3C
  Var<S> shift_mix;    // [9,3]
  Var<S> shift_kernel; // [C,9]
  Conv2d<S> fusion;    // 2C → C, concat mode only

 private:
  Index channels_ = 0;
  Index heads_ = 1;
  FuseMode fuse_mode_ = FuseMode::concat;
  bool output_relu_ = false;
};

/// RCB applied to the merged operands, as used at columns ≥ 2.
template <typename S>
Var<S> rcb(const Var<S>& x, const ResidualCbam<S>& block) {
  return block(x);
}

/// F^(i,j) = fuse(A_C(M_C(inputs)), A_T(M_C(inputs))).
template <typename S>
Var<S> acmix_block(const NodeInputs<S>& inputs, const NodeMerge<S>& merge, const Acmix<S>& block) {
  return block(merge(inputs));
}

}  // namespace idna
