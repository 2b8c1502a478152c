#include "docrep/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace docrep {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape));
}

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
T Var<T>::item() const {
  if (node_->value.numel() != 1) throw std::logic_error("item() on non-scalar " + shape_str(shape()));
  return node_->value.data[0];
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   const std::function<std::function<void()>(Node<T>*)>& make_backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool any = false;
  if (g_grad_enabled)
    for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.ptr());
    node->backward_fn = make_backward(node.get());
  }
  return Var<T>(std::move(node));
}

template <typename T>
void backward(const Var<T>& root, T seed) {
  if (!root.requires_grad()) return;
  // Iterative post-order DFS; the reversed order is a valid topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward_fn && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  Node<T>* r = root.node();
  r->ensure_grad();
  for (auto& g : r->grad) g += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn();
  }
  // Interior gradients are no longer needed; leaves keep theirs.
  for (Node<T>* n : order)
    if (n->backward_fn) std::vector<T>().swap(n->grad);
}

template struct Tensor<float>;
template struct Tensor<double>;
template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, std::vector<Var<float>>,
                                const std::function<std::function<void()>(Node<float>*)>&);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>,
                                 const std::function<std::function<void()>(Node<double>*)>&);
template void backward(const Var<float>&, float);
template void backward(const Var<double>&, double);

}  // namespace docrep
