#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace samda {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Gradient recording is on by default; NoGradGuard switches it off for the
// current thread so inference builds no tape.
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;
  bool requires_grad = false;
  // Tape edge: inputs and the rule that pushes this->grad into them.
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<S>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    return grad;
  }
};

}  // namespace detail

// Dense row-major array with an optional gradient record.
//
// Copies are shallow: two Tensor handles may refer to the same storage, which
// is how modules and the parameter registry share weights. Values produced by
// an operation are never modified afterwards; only leaves (parameters) are
// updated in place by the optimizer or checkpoint loader.
template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using NodePtr = std::shared_ptr<detail::Node<S>>;

  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, S value);
  static Tensor from(Shape shape, std::vector<S> values);
  static Tensor scalar(S value);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const S> data() const { return node_->value; }
  // Mutable access for leaves only (optimizer, initialisation, loading).
  std::span<S> mutable_data() { return node_->value; }
  S item() const;
  S operator[](std::int64_t i) const { return node_->value[static_cast<std::size_t>(i)]; }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on);

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  std::span<const S> grad() const { return node_->grad; }
  std::span<S> mutable_grad() { return node_->ensure_grad(); }
  // Sets the grad buffer to zeros, allocating it if needed.
  void zero_grad();
  // Releases the grad buffer.
  void clear_grad();

  // Value copy with no history.
  Tensor detach() const;

  // Reverse pass from a scalar. Gradients accumulate into leaf grad buffers
  // across calls until zero_grad(); the recorded graph is released afterwards.
  void backward() const;

  const NodePtr& node() const noexcept { return node_; }

  // Builds an operation result. History is recorded only when gradients are
  // enabled and at least one input requires them.
  static Tensor make(Shape shape, std::vector<S> value, std::vector<Tensor> inputs,
                     std::function<void(detail::Node<S>&)> backward);

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  NodePtr node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace samda
