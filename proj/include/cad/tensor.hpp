// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cad {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  out += ")";
  return out;
}

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

namespace detail {

/// One vertex of the reverse-mode graph. `backprop` reads this node's grad
/// and accumulates into the parents' grads; it is empty for leaves and for
/// nodes that do not require gradients.
template <typename Scalar>
struct Node {
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;  // same length as value once allocated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Scalar(0));
  }
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share the underlying node, so a
/// Tensor behaves like a reference into the autodiff graph; use clone() for
/// an independent value copy.
template <typename Scalar>
class Tensor {
 public:
  using Node = detail::Node<Scalar>;
  using NodePtr = std::shared_ptr<Node>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<Scalar> data,
                     bool requires_grad = false) {
    check(numel(shape) == static_cast<Index>(data.size()),
          "tensor: shape " + shape_str(shape) + " expects " +
              std::to_string(numel(shape)) + " values, got " +
              std::to_string(data.size()));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<Scalar> data(static_cast<std::size_t>(numel(shape)), Scalar(0));
    return from(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor full(Shape shape, Scalar v) {
    std::vector<Scalar> data(static_cast<std::size_t>(numel(shape)), v);
    return from(std::move(shape), std::move(data));
  }

  static Tensor scalar(Scalar v) { return from({}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const NodePtr& node() const { return node_; }

  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  Index size() const { return static_cast<Index>(node_->value.size()); }

  const std::vector<Scalar>& values() const { return node_->value; }
  std::vector<Scalar>& values_mut() { return node_->value; }
  const Scalar* data() const { return node_->value.data(); }
  Scalar* data_mut() { return node_->value.data(); }

  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<Scalar>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), Scalar(0));
  }

  Scalar item() const {
    check(size() == 1, "item: tensor " + shape_str(shape()) + " is not scalar");
    return node_->value[0];
  }

  /// Deep value copy detached from the graph.
  Tensor clone(bool requires_grad = false) const {
    return from(node_->shape, node_->value, requires_grad);
  }

  bool all_finite() const {
    for (Scalar v : node_->value) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

 private:
  NodePtr node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace cad
