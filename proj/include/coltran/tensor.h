#pragma once

// Dense row-major tensors with dynamic reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations on tensors that
// require gradients record their inputs and a backward closure on the result
// node; the recorded graph lives exactly as long as the tensors that
// reference it, so dropping the loss after an optimizer step clears the tape.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace coltran {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents that need it.
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T{0});
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);
  static Tensor scalar(T value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Negative axes count from the end.
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t numel() const;

  std::span<const T> data() const;
  /// In-place access for initialization and optimizer updates only.
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
  /// Intermediate gradients are reset first, so repeated calls accumulate
  /// into leaves exactly once per call.
  void backward() const;

  /// Same values, no graph history, no grad requirement.
  Tensor detach() const;

  const NodePtr& node() const { return node_; }
  static Tensor from_node(NodePtr node);

 private:
  NodePtr node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace coltran
