#include "mlma/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "mlma/error.hpp"

namespace mlma {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::string to_string(DType dtype) {
  return dtype == DType::kFloat32 ? "float32" : "float64";
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace detail {
std::uint64_t next_sequence_number() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + to_string(shape) + " holds " +
                         std::to_string(numel(shape)) + " elements but " +
                         std::to_string(data.size()) + " values were given");
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
  node_->seq = detail::next_sequence_number();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T{0}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> data(numel(shape), value);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) {
    throw ContractError("item() on tensor of shape " + to_string(shape()));
  }
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::size_t row, std::size_t col) const {
  if (rank() != 2 || row >= dim(0) || col >= dim(1)) {
    throw DimensionError("at(" + std::to_string(row) + "," + std::to_string(col) +
                         ") on shape " + to_string(shape()));
  }
  return node_->data[row * dim(1) + col];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  if (!is_leaf()) throw ContractError("requires_grad can only be set on leaves");
  node_->requires_grad = value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape shape) const {
  if (numel(shape) != size()) {
    throw DimensionError("cannot reshape " + to_string(this->shape()) + " to " +
                         to_string(shape));
  }
  return detail::make_result<T>("reshape", std::move(shape), node_->data, {*this},
                                [](detail::Node<T>& self) {
                                  auto& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  in.ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                    in.grad[i] += self.grad[i];
                                });
}

template <typename T>
Tape<T>::Tape(const Tensor<T>& root) : root_(root.node()) {
  std::vector<detail::Node<T>*> stack{root_.get()};
  std::unordered_set<detail::Node<T>*> seen{root_.get()};
  while (!stack.empty()) {
    auto* node = stack.back();
    stack.pop_back();
    if (!node->requires_grad || node->inputs.empty()) continue;
    ops_.push_back(node);
    for (auto& in : node->inputs) {
      if (seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  // Inputs are always created before their consumers.
  std::sort(ops_.begin(), ops_.end(),
            [](const auto* a, const auto* b) { return a->seq < b->seq; });
}

template <typename T>
void Tape<T>::run_backward() {
  root_->ensure_grad();
  for (auto& g : root_->grad) g += T{1};
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    auto* node = *it;
    if (node->grad.empty() || !node->backward) continue;
    node->backward(*node);
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that is not connected to any leaf requiring grad");
  }
  Tape<T>(loss).run_backward();
}

namespace detail {

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_rule) {
#ifndef NDEBUG
  bool finite_inputs = true;
  for (const auto& in : inputs) {
    for (auto v : in.data()) finite_inputs = finite_inputs && std::isfinite(v);
  }
  if (finite_inputs) {
    for (auto v : data) {
      if (!std::isfinite(v)) {
        throw DomainError(std::string("non-finite output from op '") + op +
                          "' given finite inputs");
      }
    }
  }
#endif
  Tensor<T> out(std::move(shape), std::move(data), false);
  auto& node = *out.node();
  node.op = op;
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (auto& in : inputs) node.inputs.push_back(in.node());
  node.backward = std::move(backward_rule);
  return out;
}

template Tensor<float> make_result<float>(const char*, Shape, std::vector<float>,
                                          std::vector<Tensor<float>>,
                                          std::function<void(Node<float>&)>);
template Tensor<double> make_result<double>(const char*, Shape, std::vector<double>,
                                            std::vector<Tensor<double>>,
                                            std::function<void(Node<double>&)>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace mlma
