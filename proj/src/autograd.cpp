#include "idnanet/autograd.hpp"

#include <unordered_set>

namespace idna {

template <typename Scalar>
void backward(const Var<Scalar>& root, const ArrayX<Scalar>& seed) {
  using NodeT = Node<Scalar>;
  if (!root.requires_grad()) return;
  if (seed.size() != root.size()) throw UsageError("backward seed size does not match root");

  // Iterative post-order DFS gives a topological order with parents first.
  // Owning references: releasing a node's parents must not free nodes still queued.
  std::vector<std::shared_ptr<NodeT>> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<std::shared_ptr<NodeT>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      std::shared_ptr<NodeT> parent = node->parents[next++];
      if (visited.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer() += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = it->get();
    if (!node->backward) continue;
    if (node->grad.size() != 0) node->backward(node->grad);
    node->backward = nullptr;
    node->parents.clear();
    node->grad.resize(0);
  }
}

template <typename Scalar>
void backward(const Var<Scalar>& root) {
  backward(root, ArrayX<Scalar>(ArrayX<Scalar>::Ones(root.size())));
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);
template void backward<float>(const Var<float>&, const ArrayX<float>&);
template void backward<double>(const Var<double>&, const ArrayX<double>&);

}  // namespace idna
