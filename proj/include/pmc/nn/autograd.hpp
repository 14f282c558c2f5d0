#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "pmc/nn/tensor.hpp"

namespace pmc::nn {

template <typename T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads value.grad of this node and accumulates into the inputs' grads.
  std::function<void()> backward_fn;
};

// Handle to a node of the reverse-mode tape. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::vector<T>& grad() const { return node_->value.grad; }
  T item() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var<T>(std::move(node));
}

// Wraps a freshly computed value. When recording is on and any input requires
// a gradient, `make_backward(out_node)` is called to build the closure.
template <typename T, typename Inputs, typename MakeBackward>
Var<T> record_range(Tensor<T> value, const Inputs& inputs, MakeBackward&& make_backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    for (const auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward_fn = make_backward(node.get());
  }
  return Var<T>(std::move(node));
}

template <typename T, typename MakeBackward>
Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, MakeBackward&& make_backward) {
  return record_range(std::move(value), inputs, std::forward<MakeBackward>(make_backward));
}

// Accumulates d(root)/d(x) into every reachable x with requires_grad.
// root must hold a single element.
template <typename T>
void backward(const Var<T>& root);

template <typename T>
T Var<T>::item() const {
  if (node_->value.size() != 1) {
    throw DimensionError("item() on tensor of shape " + to_string(node_->value.shape));
  }
  return node_->value.data[0];
}

}  // namespace pmc::nn
