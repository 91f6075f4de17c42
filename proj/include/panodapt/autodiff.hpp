#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "panodapt/tensor.hpp"

namespace panodapt::nn {

// Define-by-run reverse-mode autodiff. Each op allocates a fresh Node; the
// backward closure reads this node's grad and accumulates into parents.
// Nodes that no gradient can reach carry no closure, so inference-only
// forward passes (teacher, pseudo-labels) pay nothing for graph building.
template <class T>
struct Node {
  Tensor<T> val;
  Tensor<T> grad;  // allocated lazily; unallocated means zero
  bool needs_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;

  bool has_grad() const { return !grad.empty(); }

  Tensor<T>& grad_ref() {
    if (grad.empty()) grad = Tensor<T>(val.c, val.h, val.w);
    return grad;
  }

  void zero_grad() {
    if (!grad.empty()) grad.zero();
  }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> make_leaf(Tensor<T> val, bool needs_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->val = std::move(val);
  n->needs_grad = needs_grad;
  return n;
}

template <class T>
Var<T> make_input(const Tensor<T>& val) {
  return make_leaf(val, false);
}

// Result node; keeps parents/closure only when a grad path exists.
template <class T>
Var<T> make_node(Tensor<T> val, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->val = std::move(val);
  bool ng = false;
  for (const auto& p : parents)
    if (p && p->needs_grad) ng = true;
  if (ng) {
    n->needs_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

// Cuts the graph: value copy, no history.
template <class T>
Var<T> detach(const Var<T>& x) {
  return make_leaf(Tensor<T>(x->val), false);
}

template <class T>
T scalar_value(const Var<T>& x) {
  return x->val.v[0];
}

// Reverse pass from a scalar root. Seeds d(root)/d(root) = 1 and runs
// backprop closures in reverse topological order.
template <class T>
void backward(const Var<T>& root) {
  if (!root->needs_grad) return;
  assert(root->val.numel() == 1);

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    bool descended = false;
    while (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p && p->needs_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
        descended = true;
        break;
      }
    }
    if (descended) continue;
    order.push_back(n);
    stack.pop_back();
  }

  root->grad_ref().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop && n->has_grad()) n->backprop(*n);
  }
}

}  // namespace panodapt::nn
