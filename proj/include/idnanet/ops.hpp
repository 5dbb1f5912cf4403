#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "idnanet/autograd.hpp"

// Differentiable tensor operations. Feature maps are C×H×W (no batch axis); token
// sets are N×C row-major matrices. Every op records its own backward closure.

namespace idna {

// ---- element-wise -------------------------------------------------------------

template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> scale(const Var<S>& a, S factor);
template <typename S> Var<S> relu(const Var<S>& a);
template <typename S> Var<S> gelu(const Var<S>& a);
template <typename S> Var<S> sigmoid(const Var<S>& a);

template <typename S> Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }
template <typename S> Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }
template <typename S> Var<S> operator*(const Var<S>& a, const Var<S>& b) { return mul(a, b); }

/// Sum of all elements, returned as a 1-element tensor.
template <typename S> Var<S> sum(const Var<S>& a);

// ---- shape / layout -----------------------------------------------------------

template <typename S> Var<S> reshape(const Var<S>& a, Shape shape);
/// Swaps the two axes of a rank-2 view [rows, size/rows] and returns [cols, rows].
template <typename S> Var<S> transpose(const Var<S>& a, Index rows);
/// Concatenation along axis 0; trailing dimensions must agree.
template <typename S> Var<S> concat(const std::vector<Var<S>>& parts);
/// Rows [begin, begin+count) of axis 0.
template <typename S> Var<S> slice(const Var<S>& a, Index begin, Index count);
/// Columns [begin, begin+count) of a rank-2 tensor.
template <typename S> Var<S> slice_cols(const Var<S>& a, Index begin, Index count);
/// out.flat[i] = a.flat[index[i]], or zero where index[i] < 0.
template <typename S> Var<S> gather(const Var<S>& a, const std::vector<Index>& index, Shape out_shape);

// ---- linear maps --------------------------------------------------------------

/// [n,k]·[k,m].
template <typename S> Var<S> matmul(const Var<S>& a, const Var<S>& b);
/// x:[N,in], weight:[out,in], optional bias:[out] → [N,out].
template <typename S> Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);
/// x:[C,H,W], weight:[O,C,k,k], optional bias:[O].
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, Index stride, Index padding);

// ---- normalization / pooling / resampling -------------------------------------

/// Normalizes every row of x:[N,C] over C.
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5));
/// Normalizes x:[C,H,W] over each of `groups` contiguous channel groups (all positions),
/// then applies the per-channel affine gamma, beta:[C].
template <typename S>
Var<S> group_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, Index groups, S eps = S(1e-5));
/// 2×2 stride-2 max pooling over [C,H,W]; H and W must be even.
template <typename S> Var<S> max_pool2(const Var<S>& x);
/// [C,H,W] → [C].
template <typename S> Var<S> global_avg_pool(const Var<S>& x);
template <typename S> Var<S> global_max_pool(const Var<S>& x);
/// [C,H,W] → [1,H,W] mean / max across channels.
template <typename S> Var<S> channel_mean(const Var<S>& x);
template <typename S> Var<S> channel_max(const Var<S>& x);
/// x:[C,H,W] scaled per channel by gate:[C].
template <typename S> Var<S> channel_gate(const Var<S>& x, const Var<S>& gate);
/// x:[C,H,W] scaled per position by gate:[1,H,W].
template <typename S> Var<S> spatial_gate(const Var<S>& x, const Var<S>& gate);

/// Row-stochastic bilinear interpolation matrix with half-pixel centers
/// (align_corners = false), shape [out, in].
template <typename S> MatrixR<S> bilinear_matrix(Index in, Index out);
/// Bilinear resize of [C,H,W] to [C,out_h,out_w].
template <typename S> Var<S> resize_bilinear(const Var<S>& x, Index out_h, Index out_w);

// ---- attention ----------------------------------------------------------------

template <typename S>
struct AttentionOptions {
  Index groups = 1;  ///< independent token groups (windows), stacked along rows
  Index heads = 1;   ///< heads split the channel axis evenly
  bool cosine = false;
  Var<S> logit_scale;  ///< [heads], log-domain; cosine mode only
  Var<S> bias;         ///< optional [heads, A, A]
  std::optional<Tensor<S>> mask;  ///< optional additive constant [groups, A, A]
  S eps = S(1e-6);
  S max_logit_scale = S(std::log(100.0));
};

/// Multi-head attention over q,k,v:[groups·A, heads·d]. Dot mode uses q·k/√d; cosine
/// mode uses cos(q,k)·exp(min(scale, max_logit_scale)) with denominator
/// max(‖q‖‖k‖, eps). Bias and mask are added before the row softmax.
template <typename S>
Var<S> attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, const AttentionOptions<S>& options);

/// Softmax weights [groups, heads, A, A] that attention() would use (no tape).
template <typename S>
Tensor<S> attention_weights(const Var<S>& q, const Var<S>& k, const AttentionOptions<S>& options);

/// Convolution-path recombination used by ACmix. q,k,v:[C,H,W]; mix:[9,3] maps the three
/// projected groups onto the nine 3×3 shifts; kernel:[C,9] weighs each shift per channel.
/// out[c,y,x] = Σ_s kernel[c,s] · Σ_g mix[s,g]·P_g[c, y+dy_s, x+dx_s] (zero outside).
template <typename S>
Var<S> shift_aggregate(const Var<S>& q, const Var<S>& k, const Var<S>& v, const Var<S>& mix, const Var<S>& kernel);

}  // namespace idna
