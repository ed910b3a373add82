#include "samda/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "samda/errors.hpp"

namespace samda {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_to_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename S>
Tensor<S> Tensor<S>::zeros(Shape shape) {
  return full(std::move(shape), S(0));
}

template <typename S>
Tensor<S> Tensor<S>::full(Shape shape, S value) {
  const auto n = shape_numel(shape);
  auto node = std::make_shared<detail::Node<S>>();
  node->shape = std::move(shape);
  node->value.assign(static_cast<std::size_t>(n), value);
  return Tensor(std::move(node));
}

template <typename S>
Tensor<S> Tensor<S>::from(Shape shape, std::vector<S> values) {
  const auto n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("shape " + shape_to_string(shape) + " needs " + std::to_string(n) +
                         " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node<S>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

template <typename S>
Tensor<S> Tensor<S>::scalar(S value) {
  return from({1}, {value});
}

template <typename S>
std::int64_t Tensor<S>::dim(std::int64_t axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename S>
S Tensor<S>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->value[0];
}

template <typename S>
void Tensor<S>::set_requires_grad(bool on) {
  if (node_->backward) throw ContractError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

template <typename S>
void Tensor<S>::zero_grad() {
  node_->grad.assign(node_->value.size(), S(0));
}

template <typename S>
void Tensor<S>::clear_grad() {
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

template <typename S>
Tensor<S> Tensor<S>::detach() const {
  return from(node_->shape, node_->value);
}

template <typename S>
Tensor<S> Tensor<S>::make(Shape shape, std::vector<S> value, std::vector<Tensor> inputs,
                          std::function<void(detail::Node<S>&)> backward) {
  auto node = std::make_shared<detail::Node<S>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& t : inputs) node->inputs.push_back(t.node_);
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

template <typename S>
void Tensor<S>::backward() const {
  if (!node_ || numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (node_ ? shape_to_string(shape()) : std::string("<undefined>")));
  }
  if (!node_->requires_grad) {
    throw ContractError("backward() on a value that was not produced by recorded operations");
  }

  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<detail::Node<S>*> order;
  std::unordered_set<detail::Node<S>*> seen;
  std::vector<std::pair<detail::Node<S>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      auto* child = n->inputs[next++].get();
      if (child->requires_grad && child->backward && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (auto* n : order) {
    if (!n->backward) continue;
    n->inputs.clear();
    n->backward = nullptr;
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace samda
