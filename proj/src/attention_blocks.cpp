#include "idnanet/attention_blocks.hpp"

namespace idna {

template <typename S>
NodeMerge<S>::NodeMerge(ParameterSet<S>& params, const std::string& path, Index channels, Index shallower_channels,
                        Index deeper_channels, const AlignmentConfig& align, Rng& rng, Index norm_groups)
    : channels_(channels), has_shallower_(shallower_channels > 0), has_deeper_(deeper_channels > 0) {
  if (has_shallower_) down_ = DownProjection<S>(params, path + ".down", shallower_channels, channels, align.down, rng);
  if (has_deeper_) up_ = UpProjection<S>(params, path + ".up", deeper_channels, channels, 2, align.up, rng);
  fuse_ = Conv2d<S>(params, path + ".fuse", operand_count() * channels, channels, 1, rng);
  if (norm_groups > 0) norm_ = GroupNorm<S>(params, path + ".norm", channels, norm_groups);
}

template <typename S>
Var<S> NodeMerge<S>::operator()(const NodeInputs<S>& inputs) const {
  if (!inputs.same_row_prev.defined()) throw UsageError("node merge: same-row operand is required");
  if (inputs.shallower.defined() != has_shallower_ || inputs.deeper.defined() != has_deeper_)
    throw UsageError("node merge: operands do not match the node's wiring");
  std::vector<Var<S>> parts;
  if (has_shallower_) parts.push_back(down_(inputs.shallower));
  parts.push_back(inputs.same_row_prev);
  if (has_deeper_) parts.push_back(up_(inputs.deeper));
  const Shape& ref = inputs.same_row_prev.shape();
  for (const auto& p : parts)
    if (p.shape() != ref)
      throw InvariantError("node merge: aligned operand " + to_string(p.shape()) + " does not match " + to_string(ref));
  if (ref[0] != channels_) throw InvariantError("node merge: same-row operand has " + std::to_string(ref[0]) + " channels");
  Var<S> out = fuse_(parts.size() == 1 ? parts.front() : concat(parts));
  return norm_.defined() ? norm_(out) : out;
}

template <typename S>
ResidualCbam<S>::ResidualCbam(ParameterSet<S>& params, const std::string& path, Index channels, Rng& rng,
                              Index reduction, Index norm_groups)
    : body(params, path + ".conv", channels, channels, 3, rng),
      mlp_hidden(params, path + ".ca.fc1", channels, std::max<Index>(1, channels / reduction), rng, false),
      mlp_out(params, path + ".ca.fc2", std::max<Index>(1, channels / reduction), channels, rng, false),
      spatial(params, path + ".sa.conv", 2, 1, 7, rng, 1, 3, false) {
  if (norm_groups > 0) body_norm = GroupNorm<S>(params, path + ".norm", channels, norm_groups);
}

template <typename S>
Var<S> ResidualCbam<S>::channel_attention(const Var<S>& x) const {
  const Index c = x.dim(0);
  auto mlp = [&](const Var<S>& v) { return mlp_out(relu(mlp_hidden(reshape(v, {1, c})))); };
  return reshape(sigmoid(mlp(global_avg_pool(x)) + mlp(global_max_pool(x))), {c});
}

template <typename S>
Var<S> ResidualCbam<S>::spatial_attention(const Var<S>& x) const {
  return sigmoid(spatial(concat(std::vector<Var<S>>{channel_mean(x), channel_max(x)})));
}

template <typename S>
Var<S> ResidualCbam<S>::operator()(const Var<S>& x) const {
  Var<S> y = body(x);
  y = relu(body_norm.defined() ? body_norm(y) : y);
  y = channel_gate(y, channel_attention(y));
  y = spatial_gate(y, spatial_attention(y));
  return x + y;
}

template <typename S>
Acmix<S>::Acmix(ParameterSet<S>& params, const std::string& path, Index channels, Index heads, FuseMode fuse,
                bool output_relu, Rng& rng)
    : qkv(params, path + ".qkv", channels, 3 * channels, 1, rng),
      channels_(channels),
      heads_(heads),
      fuse_mode_(fuse),
      output_relu_(output_relu) {
  if (heads < 1 || channels % heads) throw ConfigError("ACmix head count must divide " + std::to_string(channels));
  shift_mix = params.create(path + ".shift_mix", fan_in_uniform<S>({9, 3}, 3, rng));
  // Every shift starts with unit weight, i.e. the plain shift kernel.
  shift_kernel = params.create(path + ".shift_kernel", Tensor<S>::filled({channels, 9}, S(1)));
  if (fuse == FuseMode::concat) fusion = Conv2d<S>(params, path + ".fusion", 2 * channels, channels, 1, rng);
}

template <typename S>
typename Acmix<S>::Projections Acmix<S>::project(const Var<S>& f) const {
  if (f.shape().size() != 3 || f.dim(0) != channels_)
    throw InputShapeError("ACmix expects " + std::to_string(channels_) + " channels, got " + to_string(f.shape()));
  Var<S> p = qkv(f);
  return {slice(p, 0, channels_), slice(p, channels_, channels_), slice(p, 2 * channels_, channels_)};
}

template <typename S>
Var<S> Acmix<S>::conv_path(const Projections& p) const {
  return shift_aggregate(p.q, p.k, p.v, shift_mix, shift_kernel);
}

template <typename S>
Var<S> Acmix<S>::attention_path(const Projections& p) const {
  const Index c = p.q.dim(0), h = p.q.dim(1), w = p.q.dim(2);
  AttentionOptions<S> opt;
  opt.heads = heads_;
  Var<S> out = attention(transpose(p.q, c), transpose(p.k, c), transpose(p.v, c), opt);  // [HW, C]
  return reshape(transpose(out, h * w), {c, h, w});
}

template <typename S>
Var<S> Acmix<S>::fuse(const Var<S>& conv_out, const Var<S>& attn_out) const {
  Var<S> y = fuse_mode_ == FuseMode::concat ? fusion(concat(std::vector<Var<S>>{conv_out, attn_out}))
                                            : conv_out + attn_out;
  return output_relu_ ? relu(y) : y;
}

template <typename S>
Var<S> Acmix<S>::operator()(const Var<S>& f) const {
  const Projections p = project(f);
  return fuse(conv_path(p), attention_path(p));
}

template class NodeMerge<float>;
template class NodeMerge<double>;
template class ResidualCbam<float>;
template class ResidualCbam<double>;
template class Acmix<float>;
template class Acmix<double>;

}  // namespace idna
