#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A tensor is a cheap handle to a shared node. Every differentiable op
// records its inputs and a backward closure on the result node, so the graph
// (the "tape") exists only as long as the handles that reach it. Each forward
// pass therefore builds a fresh tape, and a value detached from one pass
// carries no history into the next.

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fvpy/error.hpp"

namespace fvpy {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(std::span<const T>)> backward;
};

inline thread_local bool grad_mode_enabled = true;

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_enabled; }

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_to_string(shape));
    }
    for (auto d : shape) {
      if (d < 0) throw ShapeError("negative dimension in shape " + shape_to_string(shape));
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return BasicTensor(std::move(node));
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return from_data(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return from_data(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t dim(int axis) const {
    const int r = rank();
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw ShapeError("axis out of range for shape " + shape_to_string(shape()));
    return node_->shape[static_cast<std::size_t>(a)];
  }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const T> data() const { return node_->data; }
  // Direct write access, for initializers and optimizer steps only.
  std::span<T> mutable_data() { return node_->data; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
    return node_->data[0];
  }
  std::vector<T> to_vector() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  // Gradient storage, allocated as zeros on first access.
  std::span<T> grad_buffer() const {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
    return node_->grad;
  }
  void zero_grad() const { node_->grad.clear(); }

  // Same values, no history, no gradient requirement.
  BasicTensor detach() const { return from_data(shape(), node_->data, false); }

  // Reverse-mode sweep from a single-element tensor, seeded with 1.
  void backward() const;

  const detail::Node<T>* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

 private:
  explicit BasicTensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

  template <typename U>
  friend BasicTensor<U> make_result(Shape, std::vector<U>, const std::vector<BasicTensor<U>>&,
                                    std::function<void(std::span<const U>)>);

  std::shared_ptr<detail::Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Builds the output of an op. When recording is enabled and any input needs
// a gradient, the result keeps the inputs alive and will call `backward` with
// its own gradient during the reverse sweep. `backward` is expected to add
// into the grad_buffer() of each input that requires_grad().
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<BasicTensor<T>>& inputs,
                           std::function<void(std::span<const T>)> backward) {
  auto out = BasicTensor<T>::from_data(std::move(shape), std::move(data), false);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(inputs.size());
  for (const auto& in : inputs) out.node_->parents.push_back(in.node());
  out.node_->backward = std::move(backward);
  return out;
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) throw ShapeError("backward() requires a single-element tensor");
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node<T>*> order;
  std::unordered_set<const detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (node_->grad.empty()) node_->grad.assign(1, T(0));
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
  }
}

}  // namespace fvpy
