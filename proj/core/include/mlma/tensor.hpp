#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mlma {

enum class DType { kFloat32, kFloat64 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensors hold float or double");
  return std::is_same_v<T, float> ? DType::kFloat32 : DType::kFloat64;
}

std::string to_string(DType dtype);

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t seq = 0;  // creation order; inputs always carry a smaller value
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
  }
};

std::uint64_t next_sequence_number();

}  // namespace detail

// Disables recording of backward rules on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Row-major n-dimensional array. Copies share the underlying node; results of
// ops that involve a tensor with requires_grad() keep a link to their inputs so
// backward() can walk the recorded graph.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->data.size(); }
  constexpr DType dtype() const { return dtype_of<T>(); }

  std::span<const T> data() const { return node_->data; }
  // Writable view for leaves (initialization, optimizer updates, tests).
  std::span<T> mutable_data();
  T item() const;
  T at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value);
  bool is_leaf() const { return node_->inputs.empty(); }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad();
  void zero_grad();

  // Fresh leaf with a copy of the data and no history.
  Tensor detach() const;
  // Differentiable reshape to an equal-sized shape.
  Tensor reshape(Shape shape) const;

  const char* op_name() const { return node_->op; }
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& x) {
  std::vector<To> out(x.data().begin(), x.data().end());
  return Tensor<To>(x.shape(), std::move(out));
}

// Topologically ordered list of the ops reachable from a root tensor.
template <typename T>
class Tape {
 public:
  explicit Tape(const Tensor<T>& root);

  std::size_t size() const { return ops_.size(); }
  std::span<detail::Node<T>* const> ops() const { return ops_; }
  // Seeds the root gradient with 1 and runs every backward rule once in
  // reverse topological order.
  void run_backward();

 private:
  std::shared_ptr<detail::Node<T>> root_;
  std::vector<detail::Node<T>*> ops_;
};

// Populates grad() for every leaf reachable from a scalar loss. Gradients
// accumulate across calls until zero_grad().
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

// Builds an op result. The backward rule is kept only when grad recording is
// enabled and some input requires grad.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_rule);

}  // namespace detail

}  // namespace mlma
