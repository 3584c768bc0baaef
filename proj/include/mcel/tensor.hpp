#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto an immutable node of the computation graph.
// Values never change after construction, with one exception: leaf tensors
// that require gradients (parameters) may be updated in place by optimizers
// through mutable_values(). Gradient buffers are the only other mutable state.
// A graph must be driven from a single thread.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mcel/aligned.hpp"

namespace mcel {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  /// Extent of a rank-2 tensor; rank-1 tensors count as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// In-place access for parameter updates. Only valid on leaves.
  std::span<double> mutable_values();

  /// New leaf holding a copy of the values, disconnected from any graph.
  Tensor detach(bool requires_grad = false) const;

  const char* op_name() const;

  // Construction hook for graph operations (see tensor.cpp and the ops in
  // other modules). `backward` receives the output node; it must accumulate
  // into parents that require gradients and must not touch anything else.
  using BackwardFn = std::function<void(detail::Node& self)>;
  static Tensor from_op(const char* op, Shape shape, std::vector<double> values,
                        std::vector<Tensor> parents, BackwardFn backward);

  detail::Node& node() const;

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct Node {
  const char* op = "leaf";
  Shape shape;
  AlignedBuffer value;
  AlignedBuffer grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  Tensor::BackwardFn backward;

  AlignedBuffer& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Runs reverse-mode differentiation from a scalar root. Leaf gradients
/// accumulate across calls until zero_grad(); interior buffers are reset.
void backward(const Tensor& root);

// ---- operations -----------------------------------------------------------

/// [M×K]·[K×N] -> [M×N].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Fully connected map: x[B×in]·wᵀ + b with w[out×in], b[out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double c);
/// Adds b[N] to every row of a[M×N].
Tensor add_rowwise(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);

/// Softmax over the last axis (a vector, or every row of a matrix).
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);

}  // namespace mcel
