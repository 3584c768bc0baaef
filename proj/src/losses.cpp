#include "mcel/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mcel/errors.hpp"

namespace mcel {

namespace {

void require_logits(const char* op, const Tensor& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 1 && logits.rank() != 2) {
    throw DimensionError(std::string(op) + ": logits must be a vector or matrix, got " +
                         shape_string(logits.shape()));
  }
  if (logits.cols() < 2) throw DimensionError(std::string(op) + ": needs at least two classes");
  if (targets.size() != logits.rows()) {
    throw ContractError(std::string(op) + ": " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(logits.rows()) + " logit rows");
  }
  for (auto t : targets) {
    if (t >= logits.cols()) {
      throw ContractError(std::string(op) + ": invalid target index " + std::to_string(t) + " for " +
                          std::to_string(logits.cols()) + " classes");
    }
  }
}

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::cel: return "cel";
    case LossKind::celm: return "celm";
    case LossKind::mcel: return "mcel";
    case LossKind::hinge: return "hinge";
  }
  return "unknown";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "cel") return LossKind::cel;
  if (name == "celm") return LossKind::celm;
  if (name == "mcel") return LossKind::mcel;
  if (name == "hinge") return LossKind::hinge;
  throw ContractError("unknown loss '" + name + "' (expected cel, celm, mcel or hinge)");
}

void LossSpec::validate() const {
  if (!(margin >= 0.0) || !std::isfinite(margin)) throw ContractError("loss margin must be a non-negative number");
  if (!(bound > 0.0) || !std::isfinite(bound)) throw ContractError("loss bound L must be positive");
}

std::vector<std::string> LossSpec::warnings() const {
  std::vector<std::string> out;
  if (kind == LossKind::mcel && rls(margin, bound) > 1.0) {
    std::ostringstream os;
    os << "relative logit separation m/(2L) = " << rls(margin, bound)
       << " exceeds 1; the margin cannot be met inside [-L, L]";
    out.push_back(os.str());
  }
  if (kind == LossKind::hinge) out.emplace_back("hinge is the multiclass sum variant, not a reference formulation");
  return out;
}

// ---- cross-entropy ------------------------------------------------------------

Tensor cel(const Tensor& logits, std::span<const std::size_t> targets) {
  require_logits("cel", logits, targets);
  const auto rows = logits.rows(), cols = logits.cols();
  const auto v = logits.values();
  std::vector<double> probs(v.size());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
    const double lse = mx + std::log(s);
    total += lse - row[targets[r]];
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(row[c] - lse);
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  std::vector<std::size_t> t(targets.begin(), targets.end());
  return Tensor::from_op("cel", {}, {total * inv_rows}, {logits},
                         [probs = std::move(probs), t = std::move(t), rows, cols, inv_rows](detail::Node& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& g = p.ensure_grad();
                           const double up = self.grad[0] * inv_rows;
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t c = 0; c < cols; ++c) {
                               const auto i = r * cols + c;
                               g[i] += up * (probs[i] - (c == t[r] ? 1.0 : 0.0));
                             }
                           }
                         });
}

Tensor cel(const Tensor& logits, std::size_t target) { return cel(logits, std::span<const std::size_t>(&target, 1)); }

Tensor celm(const Tensor& logits, std::span<const std::size_t> targets, double m) {
  if (!(m >= 0.0)) throw ContractError("celm: margin must be non-negative");
  return cel(apply_margin(logits, targets, m), targets);
}

Tensor celm(const Tensor& logits, std::size_t target, double m) {
  return celm(logits, std::span<const std::size_t>(&target, 1), m);
}

// ---- margin machinery ---------------------------------------------------------

Tensor tanh_clamp(const Tensor& logits, double bound) {
  if (!(bound > 0.0)) throw ContractError("tanh_clamp: bound L must be positive");
  const auto in = logits.values();
  std::vector<double> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), [bound](double z) { return bound * std::tanh(z / bound); });
  return Tensor::from_op("tanh_clamp", logits.shape(), std::move(out), {logits}, [bound](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double t = self.value[i] / bound;
      g[i] += self.grad[i] * (1.0 - t * t);
    }
  });
}

double rls(double m, double bound) {
  if (!(bound > 0.0)) throw ContractError("rls: bound L must be positive");
  if (!(m >= 0.0)) throw ContractError("rls: margin must be non-negative");
  return m / (2.0 * bound);
}

Tensor apply_margin(const Tensor& logits, std::span<const std::size_t> targets, double m) {
  require_logits("apply_margin", logits, targets);
  const auto cols = logits.cols();
  std::vector<double> out(logits.values().begin(), logits.values().end());
  for (std::size_t r = 0; r < targets.size(); ++r) out[r * cols + targets[r]] -= m;
  return Tensor::from_op("apply_margin", logits.shape(), std::move(out), {logits}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor apply_margin(const Tensor& logits, std::size_t target, double m) {
  return apply_margin(logits, std::span<const std::size_t>(&target, 1), m);
}

Tensor mcel(const Tensor& logits, std::span<const std::size_t> targets, double m, double bound) {
  if (!(m >= 0.0)) throw ContractError("mcel: margin must be non-negative");
  return cel(apply_margin(tanh_clamp(logits, bound), targets, m), targets);
}

Tensor mcel(const Tensor& logits, std::size_t target, double m, double bound) {
  return mcel(logits, std::span<const std::size_t>(&target, 1), m, bound);
}

// ---- hinge ---------------------------------------------------------------------

Tensor hinge_multiclass(const Tensor& logits, std::span<const std::size_t> targets, double margin) {
  require_logits("hinge_multiclass", logits, targets);
  const auto rows = logits.rows(), cols = logits.cols();
  const auto v = logits.values();
  std::vector<char> active(v.size(), 0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto t = targets[r];
    const double yt = v[r * cols + t];
    for (std::size_t c = 0; c < cols; ++c) {
      if (c == t) continue;
      const double slack = margin - (yt - v[r * cols + c]);
      if (slack > 0.0) {
        total += slack;
        active[r * cols + c] = 1;
      }
    }
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  std::vector<std::size_t> t(targets.begin(), targets.end());
  return Tensor::from_op("hinge", {}, {total * inv_rows}, {logits},
                         [active = std::move(active), t = std::move(t), rows, cols, inv_rows](detail::Node& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& g = p.ensure_grad();
                           const double up = self.grad[0] * inv_rows;
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t c = 0; c < cols; ++c) {
                               if (!active[r * cols + c]) continue;
                               g[r * cols + c] += up;
                               g[r * cols + t[r]] -= up;
                             }
                           }
                         });
}

Tensor hinge_multiclass(const Tensor& logits, std::size_t target, double margin) {
  return hinge_multiclass(logits, std::span<const std::size_t>(&target, 1), margin);
}

Tensor compute_loss(const LossSpec& spec, const Tensor& logits, std::span<const std::size_t> targets) {
  switch (spec.kind) {
    case LossKind::cel: return cel(logits, targets);
    case LossKind::celm: return celm(logits, targets, spec.margin);
    case LossKind::mcel: return mcel(logits, targets, spec.margin, spec.bound);
    case LossKind::hinge: return hinge_multiclass(logits, targets, spec.margin);
  }
  throw ContractError("unknown loss kind");
}

}  // namespace mcel
