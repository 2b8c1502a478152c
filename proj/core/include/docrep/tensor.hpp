#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace docrep {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array. Rank is whatever the shape says; most of the
/// model uses rank 2 (rows x cols) and the vision stack rank 3 (C x H x W).
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> values);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }
  std::int64_t rows() const { return shape.at(0); }
  std::int64_t cols() const { return shape.size() > 1 ? shape[1] : 1; }

  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
  T& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
  const T& at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols() + c)]; }

  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }
};

/// One node of the reverse-mode tape. A node owns its value and, when it
/// requires a gradient, an accumulator of the same size. `backward_fn`
/// reads `grad` and adds into the grads of `inputs`.
template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::function<void()> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.data.size()) grad.assign(value.data.size(), T(0));
  }
};

/// Handle to a tape node. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  std::int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  /// Gradient accumulator; empty until a backward pass reaches this node.
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Scalar read for rank-0/size-1 tensors.
  T item() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Whether ops on the current thread record backward closures.
bool grad_enabled();

/// Disables tape recording for its lifetime (evaluation forwards).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds a result node whose gradient requirement follows its inputs.
/// `make_backward` is only invoked when some input requires a gradient, so
/// evaluation-mode forwards never allocate closures.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   const std::function<std::function<void()>(Node<T>*)>& make_backward);

/// Runs reverse accumulation from a scalar. Parameter gradients accumulate
/// across calls until explicitly zeroed.
template <typename T>
void backward(const Var<T>& root, T seed = T(1));

}  // namespace docrep
