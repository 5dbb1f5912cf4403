#pragma once

#include <random>
#include <string>
#include <vector>

#include "idnanet/ops.hpp"

namespace idna {

using Rng = std::mt19937_64;

template <typename S>
struct NamedParameter {
  std::string name;
  Var<S> var;
};

/// Ordered registry of trainable tensors keyed by canonical module path
/// (e.g. "grid.node_1_2.rcb.conv.weight"). Registration order is stable, which keeps
/// initialization and checkpoints deterministic.
template <typename S>
class ParameterSet {
 public:
  Var<S> create(const std::string& name, Tensor<S> init);

  const std::vector<NamedParameter<S>>& entries() const { return entries_; }
  /// Undefined Var when absent.
  Var<S> find(const std::string& name) const;
  void zero_grad();
  Index scalar_count() const;

 private:
  std::vector<NamedParameter<S>> entries_;
};

/// U(−1/√fan_in, 1/√fan_in), the usual default for linear and conv layers.
template <typename S>
Tensor<S> fan_in_uniform(Shape shape, Index fan_in, Rng& rng);

template <typename S>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet<S>& params, const std::string& path, Index in, Index out, Rng& rng, bool with_bias = true);

  /// x:[N,in] → [N,out].
  Var<S> operator()(const Var<S>& x) const { return linear(x, weight, bias); }

  Var<S> weight;  // [out,in]
  Var<S> bias;    // [out] or undefined
};

template <typename S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterSet<S>& params, const std::string& path, Index in, Index out, Index kernel, Rng& rng,
         Index stride = 1, Index padding = -1, bool with_bias = true);

  Var<S> operator()(const Var<S>& x) const { return conv2d(x, weight, bias, stride_, padding_); }

  Index in_channels() const { return weight.dim(1); }
  Index out_channels() const { return weight.dim(0); }

  Var<S> weight;  // [out,in,k,k]
  Var<S> bias;

 private:
  Index stride_ = 1;
  Index padding_ = 0;
};

/// Row-wise layer normalization over the channel axis of a token matrix.
template <typename S>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet<S>& params, const std::string& path, Index channels, S eps = S(1e-5));

  Var<S> operator()(const Var<S>& x) const { return layer_norm(x, gamma, beta, eps_); }

  Var<S> gamma;
  Var<S> beta;

 private:
  S eps_ = S(1e-5);
};

/// Per-sample group normalization of a [C,H,W] map with a per-channel affine.
template <typename S>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(ParameterSet<S>& params, const std::string& path, Index channels, Index groups, S eps = S(1e-5));

  Var<S> operator()(const Var<S>& x) const { return group_norm(x, gamma, beta, groups_, eps_); }
  bool defined() const { return gamma.defined(); }

  Var<S> gamma;
  Var<S> beta;

 private:
  Index groups_ = 1;
  S eps_ = S(1e-5);
};

}  // namespace idna
