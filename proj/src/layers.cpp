#include "idnanet/layers.hpp"

#include <algorithm>

namespace idna {

template <typename S>
Var<S> ParameterSet<S>::create(const std::string& name, Tensor<S> init) {
  if (find(name).defined()) throw InvariantError("duplicate parameter name: " + name);
  Var<S> var(std::move(init), true);
  entries_.push_back({name, var});
  return var;
}

template <typename S>
Var<S> ParameterSet<S>::find(const std::string& name) const {
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
  return it == entries_.end() ? Var<S>() : it->var;
}

template <typename S>
void ParameterSet<S>::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

template <typename S>
Index ParameterSet<S>::scalar_count() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.var.size();
  return n;
}

template <typename S>
Tensor<S> fan_in_uniform(Shape shape, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.data(i) = static_cast<S>(dist(rng));
  return t;
}

template <typename S>
Linear<S>::Linear(ParameterSet<S>& params, const std::string& path, Index in, Index out, Rng& rng, bool with_bias) {
  weight = params.create(path + ".weight", fan_in_uniform<S>({out, in}, in, rng));
  if (with_bias) bias = params.create(path + ".bias", fan_in_uniform<S>({out}, in, rng));
}

template <typename S>
Conv2d<S>::Conv2d(ParameterSet<S>& params, const std::string& path, Index in, Index out, Index kernel, Rng& rng,
                  Index stride, Index padding, bool with_bias)
    : stride_(stride), padding_(padding < 0 ? kernel / 2 : padding) {
  const Index fan_in = in * kernel * kernel;
  weight = params.create(path + ".weight", fan_in_uniform<S>({out, in, kernel, kernel}, fan_in, rng));
  if (with_bias) bias = params.create(path + ".bias", fan_in_uniform<S>({out}, fan_in, rng));
}

template <typename S>
LayerNorm<S>::LayerNorm(ParameterSet<S>& params, const std::string& path, Index channels, S eps) : eps_(eps) {
  gamma = params.create(path + ".gamma", Tensor<S>::filled({channels}, S(1)));
  beta = params.create(path + ".beta", Tensor<S>({channels}));
}

template <typename S>
GroupNorm<S>::GroupNorm(ParameterSet<S>& params, const std::string& path, Index channels, Index groups, S eps)
    : groups_(groups), eps_(eps) {
  if (groups < 1 || channels % groups) throw ConfigError("norm groups must divide " + std::to_string(channels));
  gamma = params.create(path + ".gamma", Tensor<S>::filled({channels}, S(1)));
  beta = params.create(path + ".beta", Tensor<S>({channels}));
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template Tensor<float> fan_in_uniform<float>(Shape, Index, Rng&);
template Tensor<double> fan_in_uniform<double>(Shape, Index, Rng&);
template class Linear<float>;
template class Linear<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class GroupNorm<float>;
template class GroupNorm<double>;

}  // namespace idna
