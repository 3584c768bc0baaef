#pragma once

#include <functional>
#include <span>

#include "mcel/tensor.hpp"

namespace mcel {

/// Compares reverse-mode gradients of `f` with central differences.
///
/// `f` must build a fresh scalar graph from the current parameter values on
/// every call. Each parameter coordinate is perturbed by ±eps in place and
/// restored afterwards. Returns the largest relative error
/// |a − n| / max(|a|, |n|, 1e-4) over all coordinates.
/// Throws ContractError unless eps is in (0, 1e-2], and NumericError when any
/// evaluation is non-finite.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps = 1e-5);

}  // namespace mcel
