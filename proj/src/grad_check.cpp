#include "mcel/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mcel/errors.hpp"

namespace mcel {

namespace {

// Below this magnitude a gradient entry is compared in absolute terms; the
// central difference cannot resolve smaller values against the roundoff of f.
constexpr double kRelativeFloor = 1e-4;

double evaluate(const std::function<Tensor()>& f) {
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: objective is not finite");
  return v;
}

}  // namespace

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ContractError("grad_check: eps must lie in (0, 1e-2]");

  for (auto& p : params) {
    if (!p.requires_grad()) throw ContractError("grad_check: parameter does not require gradients");
    p.zero_grad();
  }
  const Tensor root = f();
  backward(root);

  double worst = 0.0;
  for (auto& p : params) {
    const std::vector<double> analytic = p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                                      : std::vector<double>(p.size(), 0.0);
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double up = evaluate(f);
      values[i] = original - eps;
      const double down = evaluate(f);
      values[i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), kRelativeFloor});
      const double err = std::abs(analytic[i] - numeric) / scale;
      if (!std::isfinite(err)) throw NumericError("grad_check: non-finite gradient");
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace mcel
