#include "idnanet/backbone.hpp"

#include <cmath>

namespace idna {

BackboneConfig BackboneConfig::full_scale() {
  BackboneConfig cfg;
  cfg.embed_dim = 96;
  cfg.depths = {2, 2, 6, 2};
  cfg.heads = {3, 6, 12, 24};
  cfg.window = 8;
  return cfg;
}

void BackboneConfig::validate(Index height, Index width) const {
  const Index stride = patch * 8;
  if (height <= 0 || width <= 0 || height % stride || width % stride)
    throw InputShapeError("input " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible by " + std::to_string(stride));
  if (embed_dim < 1 || window < 1 || mlp_ratio < 1 || cpb_hidden < 1)
    throw ConfigError("backbone sizes must be positive");
  for (Index s = 0; s < 4; ++s) {
    const Index h = height / patch >> s, w = width / patch >> s;
    if (h % window || w % window)
      throw ConfigError("window " + std::to_string(window) + " does not divide stage " + std::to_string(s) +
                        " resolution " + std::to_string(h) + "x" + std::to_string(w));
    if (heads[static_cast<std::size_t>(s)] < 1 || stage_channels(s) % heads[static_cast<std::size_t>(s)])
      throw ConfigError("stage " + std::to_string(s) + " head count does not divide its channels");
    if (depths[static_cast<std::size_t>(s)] < 0) throw ConfigError("negative stage depth");
  }
}

template <typename S>
Var<S> TokenGrid<S>::to_map() const {
  return reshape(transpose(tokens, height * width), {channels(), height, width});
}

double log_spaced_offset(Index offset, Index window) {
  if (window <= 1 || offset == 0) return 0.0;
  const double mag = std::log2(1.0 + std::abs(static_cast<double>(offset))) / std::log2(static_cast<double>(window));
  return offset < 0 ? -mag : mag;
}

template <typename S>
Tensor<S> log_spaced_coords(Index window) {
  const Index area = window * window;
  Tensor<S> coords({area * area, 2});
  auto m = coords.matrix(area * area, 2);
  for (Index a = 0; a < area; ++a)
    for (Index b = 0; b < area; ++b) {
      m(a * area + b, 0) = static_cast<S>(log_spaced_offset(a / window - b / window, window));
      m(a * area + b, 1) = static_cast<S>(log_spaced_offset(a % window - b % window, window));
    }
  return coords;
}

template <typename S>
Var<S> continuous_position_bias(const Tensor<S>& coords, const Linear<S>& hidden, const Linear<S>& out, Index window) {
  const Index area = window * window;
  Var<S> table = out(relu(hidden(Var<S>(coords))));  // [A·A, heads]
  const Index heads = table.dim(1);
  return reshape(transpose(table, area * area), {heads, area, area});
}

template <typename S>
Var<S> scaled_cosine_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, const Var<S>& logit_scale,
                               const Var<S>& bias) {
  if (q.dim(0) == 0) return Var<S>(Tensor<S>(q.shape()));
  AttentionOptions<S> opt;
  opt.cosine = true;
  opt.heads = logit_scale.size();
  opt.logit_scale = logit_scale;
  opt.bias = bias;
  return attention(q, k, v, opt);
}

std::vector<Index> window_partition_index(Index height, Index width, Index window, Index shift) {
  if (height % window || width % window) throw ConfigError("window does not divide the token grid");
  const Index wins_x = width / window;
  std::vector<Index> perm(static_cast<std::size_t>(height * width));
  std::size_t r = 0;
  for (Index wy = 0; wy < height / window; ++wy)
    for (Index wx = 0; wx < wins_x; ++wx)
      for (Index iy = 0; iy < window; ++iy)
        for (Index ix = 0; ix < window; ++ix) {
          const Index y = (wy * window + iy + shift) % height;
          const Index x = (wx * window + ix + shift) % width;
          perm[r++] = y * width + x;
        }
  return perm;
}

std::vector<Index> invert_permutation(const std::vector<Index>& perm) {
  std::vector<Index> inv(perm.size(), -1);
  for (std::size_t r = 0; r < perm.size(); ++r) {
    const auto t = static_cast<std::size_t>(perm[r]);
    if (t >= perm.size() || inv[t] != -1) throw InvariantError("not a permutation");
    inv[t] = static_cast<Index>(r);
  }
  return inv;
}

template <typename S>
Tensor<S> shifted_window_mask(Index height, Index width, Index window, Index shift) {
  // Region labels in the rolled frame: three bands per axis split at −ws and −shift.
  auto band = [&](Index pos, Index extent) -> Index {
    if (pos < extent - window) return 0;
    if (pos < extent - shift) return 1;
    return 2;
  };
  const Index area = window * window;
  const Index wins_x = width / window, wins = (height / window) * wins_x;
  Tensor<S> mask({wins, area, area});
  for (Index wi = 0; wi < wins; ++wi) {
    const Index wy = wi / wins_x, wx = wi % wins_x;
    std::vector<Index> label(static_cast<std::size_t>(area));
    for (Index a = 0; a < area; ++a)
      label[static_cast<std::size_t>(a)] = band(wy * window + a / window, height) * 3 + band(wx * window + a % window, width);
    for (Index a = 0; a < area; ++a)
      for (Index b = 0; b < area; ++b)
        if (label[static_cast<std::size_t>(a)] != label[static_cast<std::size_t>(b)])
          mask.data((wi * area + a) * area + b) = S(-100);
  }
  return mask;
}

template <typename S>
Var<S> permute_rows(const Var<S>& tokens, const std::vector<Index>& perm) {
  const Index n = tokens.dim(0), c = tokens.dim(1);
  if (static_cast<Index>(perm.size()) != n) throw InvariantError("permutation size does not match token count");
  std::vector<Index> index(static_cast<std::size_t>(n * c));
  for (Index r = 0; r < n; ++r)
    for (Index ch = 0; ch < c; ++ch) index[static_cast<std::size_t>(r * c + ch)] = perm[static_cast<std::size_t>(r)] * c + ch;
  return gather(tokens, index, {n, c});
}

// ---- layers -------------------------------------------------------------------

template <typename S>
PatchEmbed<S>::PatchEmbed(ParameterSet<S>& params, const std::string& path, Index patch, Index embed_dim, Rng& rng)
    : proj_(params, path + ".proj", 3, embed_dim, patch, rng, patch, 0),
      norm_(params, path + ".norm", embed_dim),
      patch_(patch) {}

template <typename S>
TokenGrid<S> PatchEmbed<S>::operator()(const Var<S>& image) const {
  if (image.shape().size() != 3 || image.dim(0) != 3)
    throw InputShapeError("patch_embed expects a 3xHxW image, got " + to_string(image.shape()));
  const Index h = image.dim(1), w = image.dim(2);
  if (h % patch_ || w % patch_ || h == 0 || w == 0)
    throw InputShapeError("image " + to_string(image.shape()) + " is not divisible by the patch size");
  Var<S> map = proj_(image);  // [C0, h/p, w/p]
  const Index gh = h / patch_, gw = w / patch_;
  TokenGrid<S> grid;
  grid.tokens = norm_(transpose(map, map.dim(0)));
  grid.height = gh;
  grid.width = gw;
  grid.stage = 0;
  return grid;
}

template <typename S>
PatchMerging<S>::PatchMerging(ParameterSet<S>& params, const std::string& path, Index channels, Rng& rng)
    : reduction_(params, path + ".reduction", 4 * channels, 2 * channels, rng, false),
      norm_(params, path + ".norm", 2 * channels) {}

template <typename S>
TokenGrid<S> PatchMerging<S>::operator()(const TokenGrid<S>& grid) const {
  if (grid.height % 2 || grid.width % 2)
    throw InputShapeError("patch merging needs an even token grid, got " + std::to_string(grid.height) + "x" +
                          std::to_string(grid.width));
  const Index c = grid.channels(), oh = grid.height / 2, ow = grid.width / 2;
  // Neighbor order (0,0), (1,0), (0,1), (1,1) as (dy,dx).
  static constexpr Index kDy[4] = {0, 1, 0, 1};
  static constexpr Index kDx[4] = {0, 0, 1, 1};
  std::vector<Index> index(static_cast<std::size_t>(oh * ow * 4 * c));
  std::size_t i = 0;
  for (Index y = 0; y < oh; ++y)
    for (Index x = 0; x < ow; ++x)
      for (Index j = 0; j < 4; ++j) {
        const Index src = (2 * y + kDy[j]) * grid.width + 2 * x + kDx[j];
        for (Index ch = 0; ch < c; ++ch) index[i++] = src * c + ch;
      }
  TokenGrid<S> out;
  out.tokens = norm_(reduction_(gather(grid.tokens, index, {oh * ow, 4 * c})));
  out.height = oh;
  out.width = ow;
  out.stage = grid.stage + 1;
  return out;
}

template <typename S>
WindowAttention<S>::WindowAttention(ParameterSet<S>& params, const std::string& path, Index channels, Index heads,
                                    Index window, Index cpb_hidden, Rng& rng)
    : qkv_(params, path + ".qkv", channels, 3 * channels, rng),
      proj_(params, path + ".proj", channels, channels, rng),
      cpb_hidden_(params, path + ".cpb.hidden", 2, cpb_hidden, rng),
      cpb_out_(params, path + ".cpb.out", cpb_hidden, heads, rng, false),
      coords_(log_spaced_coords<S>(window)),
      heads_(heads),
      window_(window) {
  logit_scale = params.create(path + ".logit_scale", Tensor<S>::filled({heads}, static_cast<S>(std::log(10.0))));
}

template <typename S>
Var<S> WindowAttention<S>::operator()(const Var<S>& windows, Index window_count,
                                      const std::optional<Tensor<S>>& mask) const {
  const Index c = windows.dim(1);
  Var<S> qkv = qkv_(windows);
  AttentionOptions<S> opt;
  opt.groups = window_count;
  opt.heads = heads_;
  opt.cosine = true;
  opt.logit_scale = logit_scale;
  opt.bias = position_bias();
  opt.mask = mask;
  Var<S> mixed = attention(slice_cols(qkv, 0, c), slice_cols(qkv, c, c), slice_cols(qkv, 2 * c, c), opt);
  return proj_(mixed);
}

template <typename S>
SwinBlock<S>::SwinBlock(ParameterSet<S>& params, const std::string& path, Index channels, Index heads, Index window,
                        bool shifted, const BackboneConfig& cfg, Rng& rng)
    : norm1_(params, path + ".norm1", channels),
      norm2_(params, path + ".norm2", channels),
      attn_(params, path + ".attn", channels, heads, window, cfg.cpb_hidden, rng),
      fc1_(params, path + ".mlp.fc1", channels, cfg.mlp_ratio * channels, rng),
      fc2_(params, path + ".mlp.fc2", cfg.mlp_ratio * channels, channels, rng),
      window_(window),
      shifted_(shifted),
      placement_(cfg.norm) {}

template <typename S>
Index SwinBlock<S>::shift_for(Index height, Index width) const {
  if (!shifted_ || height <= window_ || width <= window_) return 0;
  return window_ / 2;
}

template <typename S>
TokenGrid<S> SwinBlock<S>::operator()(const TokenGrid<S>& grid) const {
  const Index h = grid.height, w = grid.width;
  const Index shift = shift_for(h, w);
  const auto perm = window_partition_index(h, w, window_, shift);
  const auto inverse = invert_permutation(perm);
  const Index count = (h / window_) * (w / window_);
  std::optional<Tensor<S>> mask;
  if (shift > 0) mask = shifted_window_mask<S>(h, w, window_, shift);

  auto attend = [&](const Var<S>& x) { return permute_rows(attn_(permute_rows(x, perm), count, mask), inverse); };
  auto mlp = [&](const Var<S>& x) { return fc2_(gelu(fc1_(x))); };

  Var<S> x = grid.tokens;
  if (placement_ == NormPlacement::pre) {
    x = x + attend(norm1_(x));
    x = x + mlp(norm2_(x));
  } else {
    x = x + norm1_(attend(x));
    x = x + norm2_(mlp(x));
  }
  TokenGrid<S> out = grid;
  out.tokens = x;
  return out;
}

template <typename S>
SwinBackbone<S>::SwinBackbone(ParameterSet<S>& params, const std::string& path, const BackboneConfig& cfg, Rng& rng)
    : cfg_(cfg), embed_(params, path + ".patch_embed", cfg.patch, cfg.embed_dim, rng) {
  Index block_counter = 0;
  for (Index s = 0; s < 4; ++s) {
    const auto su = static_cast<std::size_t>(s);
    const Index c = cfg.stage_channels(s);
    if (s > 0) merges_[su - 1] = PatchMerging<S>(params, path + ".merge" + std::to_string(s), cfg.stage_channels(s - 1), rng);
    for (Index b = 0; b < cfg.depths[su]; ++b, ++block_counter)
      stages_[su].emplace_back(params, path + ".stage" + std::to_string(s) + ".block" + std::to_string(b), c,
                               cfg.heads[su], cfg.window, block_counter % 2 == 1, cfg, rng);
    out_norms_[su] = LayerNorm<S>(params, path + ".out_norm" + std::to_string(s), c);
  }
}

template <typename S>
std::array<Var<S>, 4> SwinBackbone<S>::extract_pyramid(const Var<S>& image) const {
  if (image.shape().size() != 3 || image.dim(0) != 3)
    throw InputShapeError("expected a 3xHxW image, got " + to_string(image.shape()));
  cfg_.validate(image.dim(1), image.dim(2));
  std::array<Var<S>, 4> pyramid;
  TokenGrid<S> grid = embed_(image);
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) grid = merges_[s - 1](grid);
    for (const auto& block : stages_[s]) grid = block(grid);
    TokenGrid<S> normed = grid;
    normed.tokens = out_norms_[s](grid.tokens);
    pyramid[s] = normed.to_map();
  }
  return pyramid;
}

template <typename S>
std::vector<Index> SwinBackbone<S>::block_shifts(Index input_size) const {
  std::vector<Index> shifts;
  for (Index s = 0; s < 4; ++s) {
    const Index res = input_size / cfg_.patch >> s;
    for (const auto& block : stages_[static_cast<std::size_t>(s)]) shifts.push_back(block.shift_for(res, res));
  }
  return shifts;
}

#define IDNA_INSTANTIATE_BACKBONE(S)                                                                             \
  template struct TokenGrid<S>;                                                                                 \
  template Tensor<S> log_spaced_coords<S>(Index);                                                               \
  template Var<S> continuous_position_bias(const Tensor<S>&, const Linear<S>&, const Linear<S>&, Index);        \
  template Var<S> scaled_cosine_attention(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&,           \
                                          const Var<S>&);                                                       \
  template Tensor<S> shifted_window_mask<S>(Index, Index, Index, Index);                                        \
  template Var<S> permute_rows(const Var<S>&, const std::vector<Index>&);                                       \
  template class PatchEmbed<S>;                                                                                 \
  template class PatchMerging<S>;                                                                               \
  template class WindowAttention<S>;                                                                            \
  template class SwinBlock<S>;                                                                                  \
  template class SwinBackbone<S>;

IDNA_INSTANTIATE_BACKBONE(float)
IDNA_INSTANTIATE_BACKBONE(double)

}  // namespace idna
