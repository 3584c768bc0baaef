#include "mcel/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <type_traits>
#include <unordered_set>
#include <utility>

#include <Eigen/Core>

#include "mcel/errors.hpp"

namespace mcel {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMat = Eigen::Map<const RowMajor>;
using Mat = Eigen::Map<RowMajor>;

// Row-major view of any contiguous buffer; const buffers give read-only views.
template <typename Buffer>
auto as_matrix(Buffer& v, std::size_t rows, std::size_t cols) {
  const auto r = static_cast<Eigen::Index>(rows), c = static_cast<Eigen::Index>(cols);
  if constexpr (std::is_const_v<Buffer>) {
    return ConstMat(v.data(), r, c);
  } else {
    return Mat(v.data(), r, c);
  }
}

void require_finite(const char* op, std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

detail::Node& parent(detail::Node& self, std::size_t i) { return *self.parents[i]; }

template <typename F>
Tensor unary_map(const char* op, const Tensor& x, F&& f, std::function<double(double, double)> dfdx) {
  const auto xs = x.values();
  std::vector<double> out(xs.size());
  std::transform(xs.begin(), xs.end(), out.begin(), f);
  return Tensor::from_op(op, x.shape(), std::move(out), {x}, [dfdx = std::move(dfdx)](detail::Node& self) {
    auto& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not hold " + std::to_string(values.size()) +
                         " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value.assign(values.begin(), values.end());
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

detail::Node& Tensor::node() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }
std::size_t Tensor::size() const { return node().value.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.size() == 1) return 1;
  if (s.size() != 2) throw DimensionError("rows() needs rank 1 or 2, got " + shape_string(s));
  return s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() == 1) return s[0];
  if (s.size() != 2) throw DimensionError("cols() needs rank 1 or 2, got " + shape_string(s));
  return s[1];
}

std::span<const double> Tensor::values() const { return node().value; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node().value[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= size()) throw ContractError("index out of range");
  return node().value[i];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2 || r >= shape()[0] || c >= shape()[1]) throw ContractError("index out of range");
  return node().value[r * shape()[1] + c];
}

bool Tensor::requires_grad() const { return node().requires_grad; }
bool Tensor::is_leaf() const { return node().parents.empty() && !node().backward; }
bool Tensor::has_grad() const { return node().grad.size() == node().value.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient; call backward() first");
  return node().grad;
}

void Tensor::zero_grad() {
  auto& n = node();
  if (has_grad()) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) throw ContractError("mutable_values() is only allowed on leaf tensors");
  return node().value;
}

Tensor Tensor::detach(bool requires_grad) const {
  return Tensor(shape(), std::vector<double>(node().value.begin(), node().value.end()), requires_grad);
}

const char* Tensor::op_name() const { return node().op; }

Tensor Tensor::from_op(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                       BackwardFn backward) {
  require_finite(op, values);
  Tensor out(std::move(shape), std::move(values), false);
  const bool needs = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
  out.node_->op = op;
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->backward = std::move(backward);
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
  }
  return out;
}

void backward(const Tensor& root) {
  if (root.size() != 1) throw ContractError("backward() needs a scalar root, got " + shape_string(root.shape()));
  auto& root_node = root.node();
  if (!root_node.requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root_node, 0}};
  seen.insert(&root_node);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (n->backward) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
  root_node.ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
  }
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions of " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " disagree");
  }
  std::vector<double> out(m * n);
  as_matrix(out, m, n).noalias() = as_matrix(a.node().value, m, k) * as_matrix(b.node().value, k, n);
  return Tensor::from_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    const auto dc = as_matrix(self.grad, m, n);
    if (pa.requires_grad) as_matrix(pa.ensure_grad(), m, k).noalias() += dc * as_matrix(pb.value, k, n).transpose();
    if (pb.requires_grad) as_matrix(pb.ensure_grad(), k, n).noalias() += as_matrix(pa.value, m, k).transpose() * dc;
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix("transpose", a);
  const auto m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  as_matrix(out, n, m) = as_matrix(a.node().value, m, n).transpose();
  return Tensor::from_op("transpose", {n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    auto& p = parent(self, 0);
    if (p.requires_grad) as_matrix(p.ensure_grad(), m, n) += as_matrix(self.grad, n, m).transpose();
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_matrix("linear", x);
  require_matrix("linear", w);
  const auto batch = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
  if (w.shape()[1] != in) {
    throw DimensionError("linear: input width " + std::to_string(in) + " does not match weights " +
                         shape_string(w.shape()));
  }
  if (b.shape() != Shape{out_dim}) {
    throw DimensionError("linear: bias " + shape_string(b.shape()) + " does not match " + std::to_string(out_dim) +
                         " outputs");
  }
  std::vector<double> out(batch * out_dim);
  auto y = as_matrix(out, batch, out_dim);
  y.noalias() = as_matrix(x.node().value, batch, in) * as_matrix(w.node().value, out_dim, in).transpose();
  const auto bias = Eigen::Map<const Eigen::RowVectorXd>(b.node().value.data(), static_cast<Eigen::Index>(out_dim));
  y.rowwise() += bias;
  return Tensor::from_op("linear", {batch, out_dim}, std::move(out), {x, w, b},
                         [batch, in, out_dim](detail::Node& self) {
                           auto& px = parent(self, 0);
                           auto& pw = parent(self, 1);
                           auto& pb = parent(self, 2);
                           const auto dy = as_matrix(self.grad, batch, out_dim);
                           if (px.requires_grad) {
                             as_matrix(px.ensure_grad(), batch, in).noalias() +=
                                 dy * as_matrix(pw.value, out_dim, in);
                           }
                           if (pw.requires_grad) {
                             as_matrix(pw.ensure_grad(), out_dim, in).noalias() +=
                                 dy.transpose() * as_matrix(px.value, batch, in);
                           }
                           if (pb.requires_grad) {
                             auto& g = pb.ensure_grad();
                             Eigen::Map<Eigen::RowVectorXd>(g.data(), static_cast<Eigen::Index>(out_dim)) +=
                                 dy.colwise().sum();
                           }
                         });
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return Tensor::from_op("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = parent(self, k);
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return Tensor::from_op("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = parent(self, k);
      if (!p.requires_grad) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return Tensor::from_op("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_map("scale", a, [factor](double x) { return x * factor; },
                   [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_map("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor add_rowwise(const Tensor& a, const Tensor& b) {
  require_matrix("add_rowwise", a);
  const auto m = a.shape()[0], n = a.shape()[1];
  if (b.shape() != Shape{n}) {
    throw DimensionError("add_rowwise: " + shape_string(b.shape()) + " cannot broadcast over " +
                         shape_string(a.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += b.values()[c];
  return Tensor::from_op("add_rowwise", a.shape(), std::move(out), {a, b}, [m, n](detail::Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary_map("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                   [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary_map("tanh", x, [](double v) { return std::tanh(v); },
                   [](double, double out) { return 1.0 - out * out; });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::from_op("sum", {}, {s}, {a}, [](detail::Node& self) {
    auto& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (auto& g : p.ensure_grad()) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

// ---- softmax family -----------------------------------------------------------

namespace {

// Row-wise log-softmax via max subtraction; returns (log_probs, rows, cols).
std::vector<double> log_softmax_rows(std::span<const double> v, std::size_t rows, std::size_t cols) {
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
  }
  return out;
}

void require_logits(const char* op, const Tensor& t) {
  if (t.rank() != 1 && t.rank() != 2) throw DimensionError(std::string(op) + ": expected vector or matrix");
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  require_logits("softmax", logits);
  const auto rows = logits.rows(), cols = logits.cols();
  auto out = log_softmax_rows(logits.values(), rows, cols);
  for (auto& v : out) v = std::exp(v);
  return Tensor::from_op("softmax", logits.shape(), std::move(out), {logits}, [rows, cols](detail::Node& self) {
    auto& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double inner = 0.0;
      for (std::size_t c = 0; c < cols; ++c) inner += self.grad[r * cols + c] * self.value[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const auto i = r * cols + c;
        g[i] += self.value[i] * (self.grad[i] - inner);
      }
    }
  });
}

Tensor log_softmax(const Tensor& logits) {
  require_logits("log_softmax", logits);
  const auto rows = logits.rows(), cols = logits.cols();
  auto out = log_softmax_rows(logits.values(), rows, cols);
  return Tensor::from_op("log_softmax", logits.shape(), std::move(out), {logits}, [rows, cols](detail::Node& self) {
    auto& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += self.grad[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const auto i = r * cols + c;
        g[i] += self.grad[i] - std::exp(self.value[i]) * total;
      }
    }
  });
}

}  // namespace mcel
