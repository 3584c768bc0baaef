#pragma once

// Classification losses on logits.
//
// Every loss accepts either a single logit vector [K] with one target, or a
// batch [B×K] with B targets, and reduces a batch by the arithmetic mean.
// All softmax/log compositions go through log-sum-exp so margins of a few
// hundred logit units stay finite.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mcel/tensor.hpp"

namespace mcel {

enum class LossKind { cel, celm, mcel, hinge };

std::string to_string(LossKind kind);
/// Accepts "cel", "celm", "mcel", "hinge". Throws ContractError otherwise.
LossKind parse_loss_kind(const std::string& name);

struct LossSpec {
  LossKind kind = LossKind::cel;
  double margin = 0.0;  // m for celm/mcel, the hinge margin for hinge
  double bound = 100.0; // L, the tanh saturation bound of mcel

  /// Throws ContractError on negative margin or non-positive bound.
  void validate() const;
  /// Human-readable warnings (e.g. relative logit separation above 1).
  std::vector<std::string> warnings() const;
};

/// Cross-entropy: -log softmax(logits)[target].
Tensor cel(const Tensor& logits, std::size_t target);
Tensor cel(const Tensor& logits, std::span<const std::size_t> targets);

/// Cross-entropy with m subtracted from the target logit. Shift invariant,
/// so a network can satisfy it by moving all logits together.
Tensor celm(const Tensor& logits, std::size_t target, double m);
Tensor celm(const Tensor& logits, std::span<const std::size_t> targets, double m);

/// L * tanh(z / L), elementwise.
Tensor tanh_clamp(const Tensor& logits, double bound);

/// Relative logit separation m / (2L).
double rls(double m, double bound);

/// Subtracts m from the target entry (per row); everything else passes through.
Tensor apply_margin(const Tensor& logits, std::size_t target, double m);
Tensor apply_margin(const Tensor& logits, std::span<const std::size_t> targets, double m);

/// Margin cross-entropy: cel(apply_margin(tanh_clamp(logits, L), target, m), target).
Tensor mcel(const Tensor& logits, std::size_t target, double m, double bound);
Tensor mcel(const Tensor& logits, std::span<const std::size_t> targets, double m, double bound);

/// Multiclass hinge, summed over competitors: Σ_{j≠i} max(0, margin − (y_i − y_j)).
/// Stand-in baseline for margin-style hinge objectives.
Tensor hinge_multiclass(const Tensor& logits, std::size_t target, double margin = 1.0);
Tensor hinge_multiclass(const Tensor& logits, std::span<const std::size_t> targets, double margin = 1.0);

/// Dispatches on spec.kind.
Tensor compute_loss(const LossSpec& spec, const Tensor& logits, std::span<const std::size_t> targets);

}  // namespace mcel
