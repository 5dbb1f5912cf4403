#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "idnanet/tensor.hpp"

namespace idna {

/// Whether ops record the backward tape on this thread. Inference under NoGradGuard
/// touches parameters read-only, so concurrent callers are safe.
inline thread_local bool grad_mode_enabled = true;

class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_enabled) { grad_mode_enabled = false; }
  ~NoGradGuard() { grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  using Array = ArrayX<Scalar>;

  Tensor<Scalar> value;
  Array grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Array&)> backward;

  Array& grad_buffer() {
    if (grad.size() == 0) grad = Array::Zero(value.size());
    return grad;
  }
};

/// Handle to a value on the autograd tape. Copies share the underlying node, so a
/// parameter held by several modules is one parameter.
template <typename Scalar_>
class Var {
 public:
  using Scalar = Scalar_;
  using NodeT = Node<Scalar>;
  using Array = ArrayX<Scalar>;

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false) : node_(std::make_shared<NodeT>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  Index dim(Index i) const { return node_->value.dim(i); }
  Index size() const { return node_->value.size(); }
  const Array& data() const { return node_->value.data; }
  Scalar item() const { return node_->value.data(0); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Gradient accumulated by backward(); zeros when nothing has flowed here yet.
  Array grad() const { return node_->grad.size() ? node_->grad : Array::Zero(size()); }
  void zero_grad() { node_->grad.resize(0); }

  const std::shared_ptr<NodeT>& node() const { return node_; }

  /// Adds `g` into this node's gradient if it participates in the tape.
  template <typename Derived>
  void accumulate(const Eigen::ArrayBase<Derived>& g) const {
    if (requires_grad()) node_->grad_buffer() += g;
  }

 private:
  std::shared_ptr<NodeT> node_;
};

/// Builds an op result. The backward closure receives the output gradient and
/// accumulates into whichever inputs require it; it is dropped when no input does.
template <typename Scalar, typename Backward>
Var<Scalar> make_result(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs, Backward&& backward) {
  Var<Scalar> out(std::move(value));
  if (!grad_mode_enabled) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto& in : inputs)
    if (in.requires_grad()) node.parents.push_back(in.node());
  node.backward = std::forward<Backward>(backward);
  return out;
}

template <typename Scalar, typename Backward>
Var<Scalar> make_result(Tensor<Scalar> value, const std::vector<Var<Scalar>>& inputs, Backward&& backward) {
  Var<Scalar> out(std::move(value));
  if (!grad_mode_enabled) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto& in : inputs)
    if (in.requires_grad()) node.parents.push_back(in.node());
  node.backward = std::forward<Backward>(backward);
  return out;
}

/// Reverse-mode sweep from a scalar root. Interior nodes release their closures and
/// gradients afterwards; leaf gradients accumulate across calls until zero_grad().
template <typename Scalar>
void backward(const Var<Scalar>& root);

/// Same as backward(root) with an explicit seed gradient of root's shape.
template <typename Scalar>
void backward(const Var<Scalar>& root, const ArrayX<Scalar>& seed);

}  // namespace idna
