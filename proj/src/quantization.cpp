#include "mcel/quantization.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mcel/errors.hpp"

namespace mcel {

bool valid_bit_width(int bits) noexcept { return bits == 1 || bits == 2 || bits == 4 || bits == 8; }

QuantScheme::QuantScheme(int bits, double v_min, double v_max) : bits_(bits), v_min_(v_min), v_max_(v_max) {
  if (!valid_bit_width(bits)) throw ContractError("bit width must be 1, 2, 4 or 8, got " + std::to_string(bits));
  if (!(std::isfinite(v_min) && std::isfinite(v_max) && v_min < v_max)) {
    throw ContractError("quantization range needs finite v_min < v_max");
  }
  delta_ = (v_max - v_min) / static_cast<double>(max_code());
}

Code quantize(double v, const QuantScheme& s) {
  const double clamped = std::clamp(v, s.v_min(), s.v_max());
  // Argument is non-negative, so std::round's half-away-from-zero is half-up here.
  const double scaled = (clamped - s.v_min()) * static_cast<double>(s.max_code()) / (s.v_max() - s.v_min());
  const auto code = static_cast<Code>(std::round(scaled));
  return std::min(code, s.max_code());
}

double dequantize(Code c, const QuantScheme& s) {
  if (c > s.max_code()) {
    throw EncodingError("code " + std::to_string(c) + " outside " + std::to_string(s.bits()) + "-bit code set");
  }
  if (c == s.max_code()) return s.v_max();
  return s.v_min() + static_cast<double>(c) * s.delta();
}

QuantScheme range_from_tensor(std::span<const double> w, int bits) {
  if (w.empty()) throw ContractError("range_from_tensor: empty tensor");
  double mx = 0.0;
  for (double v : w) mx = std::max(mx, std::abs(v));
  mx = std::max(mx, 1e-8);
  return QuantScheme(bits, -mx, mx);
}

QuantScheme range_from_tensor(const Tensor& w, int bits) { return range_from_tensor(w.values(), bits); }

CodeTensor encode(std::span<const double> values, const Shape& shape, const QuantScheme& s) {
  if (shape_size(shape) != values.size()) throw DimensionError("encode: shape does not match value count");
  CodeTensor ct{shape, std::vector<Code>(values.size()), s};
  std::transform(values.begin(), values.end(), ct.codes.begin(), [&](double v) { return quantize(v, s); });
  return ct;
}

std::vector<double> decode(const CodeTensor& ct) {
  std::vector<double> out(ct.codes.size());
  std::transform(ct.codes.begin(), ct.codes.end(), out.begin(), [&](Code c) { return dequantize(c, ct.scheme); });
  return out;
}

QuantScheme sign_scheme() { return QuantScheme(1, -1.0, 1.0); }

CodeTensor encode_signs(std::span<const double> values, const Shape& shape) {
  if (shape_size(shape) != values.size()) throw DimensionError("encode_signs: shape does not match value count");
  CodeTensor ct{shape, std::vector<Code>(values.size()), sign_scheme()};
  std::transform(values.begin(), values.end(), ct.codes.begin(), [](double v) { return v >= 0.0 ? 1U : 0U; });
  return ct;
}

Tensor fake_quantize(const Tensor& w, const QuantScheme& s) {
  const auto in = w.values();
  std::vector<double> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), [&](double v) { return dequantize(quantize(v, s), s); });
  const double lo = s.v_min(), hi = s.v_max();
  return Tensor::from_op("fake_quantize", w.shape(), std::move(out), {w}, [lo, hi](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (p.value[i] >= lo && p.value[i] <= hi) g[i] += self.grad[i];
    }
  });
}

namespace {

Tensor sign_op(const char* name, const Tensor& x, bool zero_is_positive) {
  const auto in = x.values();
  std::vector<double> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), [&](double v) {
    return (v > 0.0 || (zero_is_positive && v == 0.0)) ? 1.0 : -1.0;
  });
  return Tensor::from_op(name, x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (std::abs(p.value[i]) <= 1.0) g[i] += self.grad[i];
    }
  });
}

}  // namespace

Tensor binarize(const Tensor& w) { return sign_op("binarize", w, true); }

Tensor step_sign(const Tensor& z) { return sign_op("step_sign", z, false); }

}  // namespace mcel
