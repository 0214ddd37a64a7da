#include "coltran/tensor.h"

#include <numeric>
#include <sstream>
#include <unordered_set>

#include "coltran/errors.h"

namespace coltran {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->data = std::move(values);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{1}, std::vector<T>{value});
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::ptrdiff_t axis) const {
  const auto& s = shape();
  const auto r = static_cast<std::ptrdiff_t>(s.size());
  const auto a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[static_cast<std::size_t>(a)];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return shape_numel(shape());
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  if (!node_) throw ContractError("use of an undefined tensor");
  if (node_->backward) throw ContractError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = value;
  return *this;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && node_->grad.size() == node_->data.size();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename T>
void Tensor<T>::backward() const {
  if (!node_) throw ContractError("backward() on an undefined tensor");
  if (node_->data.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(node_->shape));
  }
  if (!node_->requires_grad) return;

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodeT* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (NodeT* n : order) {
    if (n->backward) n->grad.assign(n->data.size(), T{0});
  }
  node_->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), node_->data);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace coltran
