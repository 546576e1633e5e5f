#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "dct/tensor.hpp"

namespace dct::ag {

// Define-by-run reverse-mode tape. Every op allocates a Node whose backward
// closure scatters the node's gradient into its parents. Releasing the root
// frees all intermediates; parameters survive because their owner keeps the
// shared_ptr.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool grad_set = false;   // grad tensor allocated and initialized
  bool needs_grad = false; // on the path from some parameter
  bool is_param = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  int64_t seq = 0;

  Tensor<T>& grad_ref() {
    if (!grad_set) {
      grad = Tensor<T>::zeros(value.shape());
      grad_set = true;
    }
    return grad;
  }

  void accumulate(const Tensor<T>& g) {
    if (!grad_set) {
      grad = g;
      grad_set = true;
    } else {
      grad.add_(g);
    }
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

namespace detail {
inline int64_t next_seq() {
  static thread_local int64_t counter = 0;
  return ++counter;
}
}  // namespace detail

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->seq = detail::next_seq();
  return n;
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
  auto n = constant(std::move(value));
  n->needs_grad = true;
  n->is_param = true;
  return n;
}

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) n->needs_grad = n->needs_grad || p->needs_grad;
  if (n->needs_grad) n->backward = std::move(backward);
  n->seq = detail::next_seq();
  return n;
}

// Backpropagate from a scalar root.
template <typename T>
void backward(const Var<T>& root) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward() root must be a scalar, got " + shape_str(root->value.shape()));
  if (!root->needs_grad) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.get()};
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->needs_grad) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });

  root->accumulate(Tensor<T>::full(root->value.shape(), T{1}));
  for (Node<T>* n : order)
    if (n->backward && n->grad_set) n->backward(*n);
}

}  // namespace dct::ag
