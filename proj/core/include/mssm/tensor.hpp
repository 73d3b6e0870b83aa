#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mssm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

// One vertex of the autodiff graph. Leaves have no backward function.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

/// Grad-mode switch for the current thread. While a guard is alive, op
/// results never record parents, so inference builds no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS, so repeated training steps do not page-fault on fresh memory. No-op
/// outside glibc. Safe to call more than once.
void tune_allocator();

/// Dense row-major tensor handle. Copies share storage and graph position;
/// use clone() or detach() for an independent buffer.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const {
    if (!node_) undefined_error();
    return node_->shape;
  }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const { return node_->data.size(); }
  // Convenience accessors for matrices.
  std::size_t rows() const {
    if (rank() != 2) not_matrix_error();
    return node_->shape[0];
  }
  std::size_t cols() const {
    if (rank() != 2) not_matrix_error();
    return node_->shape[1];
  }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& storage() { return node_->data; }

  bool has_grad() const { return defined() && !node_->grad.empty(); }
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad();

  // Unchecked; the tensor must be a matrix.
  T& operator()(std::size_t i, std::size_t j) { return node_->data[i * node_->shape[1] + j]; }
  T operator()(std::size_t i, std::size_t j) const { return node_->data[i * node_->shape[1] + j]; }
  T& operator[](std::size_t i) { return node_->data[i]; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T item() const;

  bool requires_grad() const { return defined() && node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  /// Same values, fresh storage, no graph.
  Tensor detach() const;
  Tensor clone() const { return detach(); }
  /// Same storage, new shape with equal element count. Participates in the
  /// graph (the gradient is reshaped back).
  Tensor reshape(Shape shape) const;

  const char* op_name() const { return node_->op; }
  detail::Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node<T>>& node_ptr() const noexcept { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node<T>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  [[noreturn]] void undefined_error() const;
  [[noreturn]] void not_matrix_error() const;

  std::shared_ptr<detail::Node<T>> node_;
};

/// Builds an op output. If grad mode is on and any input requires grad,
/// the result records `inputs` as parents and keeps `backward`; otherwise
/// the closure is dropped and the result is a plain constant.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> backward);

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(detail::Node<T>&)> backward);

/// Reverse topological record of the graph below a root. Each reachable
/// node that requires grad appears exactly once.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  std::size_t size() const noexcept { return order_.size(); }
  /// Nodes in topological order (inputs before outputs).
  std::span<detail::Node<T>* const> nodes() const noexcept { return order_; }

  /// Runs backward functions from the root towards the leaves. Intermediate
  /// closures are released after use.
  void replay_backward();

 private:
  std::vector<detail::Node<T>*> order_;
  std::shared_ptr<detail::Node<T>> root_;
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// requires_grad leaf reachable from `loss`.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace mssm
