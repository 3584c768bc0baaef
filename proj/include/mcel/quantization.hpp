#pragma once

// Uniform n-bit quantization with unsigned offset-binary codes.
//
//   code  = round((clamp(v) - v_min) * (2^n - 1) / (v_max - v_min))
//   value = v_min + code * delta,   delta = (v_max - v_min) / (2^n - 1)
//
// Flipping bit i of a code moves the value by exactly 2^i levels, so a single
// flip never leaves [v_min, v_max] and costs at most 2^(n-1) * delta.

#include <cstdint>
#include <span>
#include <vector>

#include "mcel/tensor.hpp"

namespace mcel {

using Code = std::uint32_t;

class QuantScheme {
 public:
  /// Throws ContractError unless bits is 1, 2, 4 or 8 and v_min < v_max.
  QuantScheme(int bits, double v_min, double v_max);

  int bits() const noexcept { return bits_; }
  double v_min() const noexcept { return v_min_; }
  double v_max() const noexcept { return v_max_; }
  double delta() const noexcept { return delta_; }
  std::uint32_t levels() const noexcept { return 1U << bits_; }
  Code max_code() const noexcept { return levels() - 1; }

  bool operator==(const QuantScheme&) const = default;

 private:
  int bits_;
  double v_min_;
  double v_max_;
  double delta_;
};

bool valid_bit_width(int bits) noexcept;

Code quantize(double v, const QuantScheme& s);
/// Throws EncodingError for codes >= 2^n.
double dequantize(Code c, const QuantScheme& s);

/// Symmetric max-abs range for a weight tensor; never narrower than ±1e-8.
QuantScheme range_from_tensor(std::span<const double> w, int bits);
QuantScheme range_from_tensor(const Tensor& w, int bits);

struct CodeTensor {
  Shape shape;
  std::vector<Code> codes;
  QuantScheme scheme;
};

CodeTensor encode(std::span<const double> values, const Shape& shape, const QuantScheme& s);
std::vector<double> decode(const CodeTensor& ct);

/// Sign encoding for binarized weights: +1 -> code 1, -1 -> code 0, sign(0) = +1.
CodeTensor encode_signs(std::span<const double> values, const Shape& shape);
/// The 1-bit scheme used by encode_signs ([-1, 1], two levels).
QuantScheme sign_scheme();

/// QAT forward: dequantize(quantize(w)). Straight-through backward, gated to
/// the scheme's range (zero gradient where w lies outside [v_min, v_max]).
Tensor fake_quantize(const Tensor& w, const QuantScheme& s);

/// sign(w) with sign(0) = +1. Hard-tanh straight-through backward: the
/// gradient passes where |w| <= 1 and is zero elsewhere.
Tensor binarize(const Tensor& w);

/// +1 where z > 0, -1 elsewhere. Backward passes the gradient where |z| <= 1.
/// Used for binary activations against a threshold (z = scaled s - t).
Tensor step_sign(const Tensor& z);

}  // namespace mcel
