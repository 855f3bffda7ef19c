#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "acnet/error.hpp"

namespace acnet {

/// NCHW extent of a dense tensor.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

template <class T>
struct Node;

template <class T>
using BackwardFn = std::function<void(Node<T>&)>;

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  BackwardFn<T> backward;

  std::span<T> ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense 4-D tensor handle with an optional gradient slot.
///
/// Copies share storage (like a smart pointer). Operators never mutate their
/// inputs; they allocate a fresh node and, when any input requires a gradient,
/// record a backward closure so that `backward()` on a scalar result can
/// propagate gradients to every leaf reachable from it.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
    node_->shape = shape;
    node_->data.assign(shape.numel(), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
    if (values.size() != shape.numel()) {
      detail::reject("Tensor", "value count " + std::to_string(values.size()) +
                                   " does not match shape " + shape.str());
    }
    node_->shape = shape;
    node_->data = std::move(values);
  }

  static Tensor zeros(Shape s) { return Tensor(s, T(0)); }
  static Tensor ones(Shape s) { return Tensor(s, T(1)); }
  static Tensor full(Shape s, T v) { return Tensor(s, v); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<T> grad() { return node_->ensure_grad(); }
  std::span<const T> grad() const { return node_->ensure_grad(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& s = node_->shape;
    return ((n * s.c + c) * s.h + h) * s.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return node_->data[offset(n, c, h, w)];
  }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return node_->data[offset(n, c, h, w)];
  }

  T item() const {
    if (numel() != 1) detail::reject("Tensor::item", "tensor has " + std::to_string(numel()) + " elements");
    return node_->data[0];
  }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  /// Copy of the values with no graph attached.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  /// Reverse-mode sweep from this scalar. Gradients accumulate into every
  /// reachable tensor that requires them.
  void backward() const {
    if (numel() != 1) detail::reject("Tensor::backward", "output must be a scalar, got " + shape().str());
    if (!node_->requires_grad) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node<T>* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    node_->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* node = *it;
      if (node->backward && !node->grad.empty()) node->backward(*node);
    }
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

/// Builds an operator result. The backward closure is only attached when at
/// least one input takes part in differentiation.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::initializer_list<const Tensor<T>*> inputs,
                      BackwardFn<T> backward) {
  Tensor<T> out(shape, std::move(values));
  bool any = false;
  for (const Tensor<T>* in : inputs) any = any || (in && in->defined() && in->requires_grad());
  if (any) {
    Node<T>* node = out.node();
    node->requires_grad = true;
    for (const Tensor<T>* in : inputs) {
      if (in && in->defined() && in->requires_grad()) node->parents.push_back(in->node_ptr());
    }
    node->backward = std::move(backward);
  }
  return out;
}

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const std::vector<Tensor<T>>& inputs,
                      BackwardFn<T> backward) {
  Tensor<T> out(shape, std::move(values));
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  if (any) {
    Node<T>* node = out.node();
    node->requires_grad = true;
    for (const Tensor<T>& in : inputs) {
      if (in.requires_grad()) node->parents.push_back(in.node_ptr());
    }
    node->backward = std::move(backward);
  }
  return out;
}

/// Gradient buffer of `t` if it participates in differentiation, else empty.
template <class T>
std::span<T> grad_sink(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return {};
  return t.node()->ensure_grad();
}

}  // namespace detail
}  // namespace acnet
