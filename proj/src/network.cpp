#include "mcel/network.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "mcel/errors.hpp"
#include "mcel/metrics.hpp"
#include "mcel/rng.hpp"

namespace mcel {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <typename... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

std::size_t layer_in(const Layer& l) {
  return std::visit([](const auto& x) { return x.in_features(); }, l);
}
std::size_t layer_out(const Layer& l) {
  return std::visit([](const auto& x) { return x.out_features(); }, l);
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

// ---- model structure -------------------------------------------------------------

std::size_t Model::input_width() const {
  if (layers.empty()) throw ContractError("model has no layers");
  return layer_in(layers.front());
}

std::size_t Model::output_width() const {
  if (layers.empty()) throw ContractError("model has no layers");
  return layer_out(layers.back());
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

std::vector<NamedParam> Model::parameters() const {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto prefix = "layer" + std::to_string(i);
    std::visit(overloaded{
                   [&](const QuantFcLayer& l) {
                     out.push_back({prefix + ".weight", l.weight});
                     out.push_back({prefix + ".bias", l.bias});
                   },
                   [&](const BinFcLayer& l) {
                     out.push_back({prefix + ".weight", l.weight});
                     out.push_back({prefix + ".threshold", l.threshold});
                   },
               },
               layers[i]);
  }
  return out;
}

void Model::validate() const {
  if (layers.empty()) throw DimensionError("model has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    std::visit(overloaded{
                   [&](const QuantFcLayer& l) {
                     if (l.weight.rank() != 2 || l.bias.shape() != Shape{l.out_features()})
                       throw DimensionError("layer " + std::to_string(i) + ": bias does not match weights");
                     const int expected = bits == 1 ? kBinaryOutputBits : bits;
                     if (l.bits != expected) {
                       throw ContractError("layer " + std::to_string(i) + ": bit width differs");
                     }
                   },
                   [&](const BinFcLayer& l) {
                     if (l.weight.rank() != 2 || l.threshold.shape() != Shape{l.out_features()})
                       throw DimensionError("layer " + std::to_string(i) + ": threshold count does not match neurons");
                   },
               },
               layers[i]);
    if (i > 0 && layer_in(layers[i]) != layer_out(layers[i - 1])) {
      throw DimensionError("layer " + std::to_string(i) + " expects " + std::to_string(layer_in(layers[i])) +
                           " inputs but receives " + std::to_string(layer_out(layers[i - 1])));
    }
  }
  if (!(logit_scale > 0.0) || !std::isfinite(logit_scale)) throw ContractError("logit scale must be positive");
}

std::string architecture_string(std::span<const std::size_t> dims) {
  std::ostringstream os;
  os << "FC-MLP" << (dims.empty() ? 0 : dims.size() - 1) << ':';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "-" : "") << dims[i];
  return os.str();
}

std::vector<std::size_t> parse_architecture(std::string_view arch) {
  const auto colon = arch.find(':');
  if (arch.substr(0, 6) != "FC-MLP" || colon == std::string_view::npos) {
    throw ContractError("malformed architecture string '" + std::string(arch) + "'");
  }
  std::size_t declared = 0;
  const auto count = arch.substr(6, colon - 6);
  if (std::from_chars(count.data(), count.data() + count.size(), declared).ec != std::errc{}) {
    throw ContractError("malformed layer count in '" + std::string(arch) + "'");
  }
  std::vector<std::size_t> dims;
  auto rest = arch.substr(colon + 1);
  while (!rest.empty()) {
    const auto dash = rest.find('-');
    const auto tok = rest.substr(0, dash);
    std::size_t d = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), d);
    if (ec != std::errc{} || ptr != tok.data() + tok.size() || d == 0) {
      throw ContractError("malformed dimension in '" + std::string(arch) + "'");
    }
    dims.push_back(d);
    if (dash == std::string_view::npos) break;
    rest = rest.substr(dash + 1);
  }
  if (dims.size() < 2 || dims.size() - 1 != declared) {
    throw ContractError("layer count does not match dimensions in '" + std::string(arch) + "'");
  }
  return dims;
}

std::size_t parameter_count_for(std::span<const std::size_t> dims) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) n += dims[i] * dims[i + 1] + dims[i + 1];
  return n;
}

Model make_mlp(std::size_t inputs, std::span<const std::size_t> hidden, std::size_t classes, int bits,
               std::uint64_t seed, double logit_scale) {
  if (!valid_bit_width(bits)) throw ContractError("bit width must be 1, 2, 4 or 8");
  if (inputs == 0 || classes < 2) throw ContractError("model needs inputs and at least two classes");
  std::vector<std::size_t> dims{inputs};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(classes);

  Model m;
  m.bits = bits;
  m.seed = seed;
  m.logit_scale = logit_scale;
  m.architecture = architecture_string(dims);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const auto in = dims[i], out = dims[i + 1];
    const bool last = i + 2 == dims.size();
    Rng rng(derive_seed(seed, 0x1a7e, i));
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    if (bits == 1 && !last) {
      m.layers.emplace_back(BinFcLayer{uniform_tensor({out, in}, bound, rng), Tensor::zeros({out}, true), true});
    } else {
      auto w = uniform_tensor({out, in}, bound, rng);
      auto b = uniform_tensor({out}, bound, rng);
      m.layers.emplace_back(
          QuantFcLayer{std::move(w), std::move(b), bits == 1 ? kBinaryOutputBits : bits,
                     last ? Activation::none : Activation::relu});
    }
  }
  m.validate();
  return m;
}

Model make_fc_mlp3(std::size_t inputs, std::size_t classes, int bits, std::uint64_t seed, double logit_scale) {
  const std::size_t hidden[] = {256, 128};
  return make_mlp(inputs, hidden, classes, bits, seed, logit_scale);
}

// ---- autograd forward ------------------------------------------------------------

Tensor binarize_inputs(const Tensor& x) {
  std::vector<double> v(x.values().begin(), x.values().end());
  for (auto& e : v) e = e >= 0.5 ? 1.0 : -1.0;
  return Tensor(x.shape(), std::move(v));
}

Tensor qfc_forward(const QuantFcLayer& layer, const Tensor& x) {
  const auto y = linear(x, fake_quantize(layer.weight, layer.scheme()), layer.bias);
  return layer.activation == Activation::relu ? relu(y) : y;
}

Tensor bin_fc_train_forward(const BinFcLayer& layer, const Tensor& a) {
  const auto s = matmul(a, transpose(binarize(layer.weight)));
  const auto centered = add_rowwise(s, scale(layer.threshold, -1.0));
  if (!layer.binary_output) return centered;
  // The sign only depends on s - t; the 1/sqrt(fan_in) factor widens the
  // straight-through window to the typical spread of s.
  return step_sign(scale(centered, 1.0 / std::sqrt(static_cast<double>(layer.in_features()))));
}

Tensor model_forward(const Model& m, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != m.input_width()) {
    throw DimensionError("model expects inputs of width " + std::to_string(m.input_width()) + ", got " +
                         shape_string(x.shape()));
  }
  Tensor h = m.binarized() ? binarize_inputs(x) : x;
  for (const auto& layer : m.layers) {
    h = std::visit(overloaded{
                       [&](const QuantFcLayer& l) { return qfc_forward(l, h); },
                       [&](const BinFcLayer& l) { return bin_fc_train_forward(l, h); },
                   },
                   layer);
  }
  return m.logit_scale == 1.0 ? h : scale(h, m.logit_scale);
}

// ---- binary arithmetic -------------------------------------------------------------

namespace {

PackedSigns make_packed(std::size_t rows, std::size_t cols) {
  PackedSigns p;
  p.rows = rows;
  p.bits = cols;
  p.words = (cols + 63) / 64;
  p.data.assign(rows * p.words, 0);
  return p;
}

}  // namespace

PackedSigns pack_signs(std::span<const double> values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw DimensionError("pack_signs: value count does not match shape");
  auto p = make_packed(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = values[r * cols + c];
      if (v == 1.0) {
        p.data[r * p.words + c / 64] |= std::uint64_t{1} << (c % 64);
      } else if (v != -1.0) {
        throw ContractError("binarized layer input must be ±1");
      }
    }
  }
  return p;
}

PackedSigns pack_codes(std::span<const Code> codes, std::size_t rows, std::size_t cols) {
  if (codes.size() != rows * cols) throw DimensionError("pack_codes: code count does not match shape");
  auto p = make_packed(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const Code code = codes[r * cols + c];
      if (code > 1) throw EncodingError("binary weight code must be 0 or 1");
      if (code) p.data[r * p.words + c / 64] |= std::uint64_t{1} << (c % 64);
    }
  }
  return p;
}

std::int64_t xnor_popcount_dot(std::span<const std::uint64_t> w, std::span<const std::uint64_t> a,
                               std::size_t bits) {
  if (w.size() != a.size() || w.size() * 64 < bits) throw DimensionError("xnor_popcount_dot: operand widths differ");
  std::int64_t pop = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    std::uint64_t x = ~(w[i] ^ a[i]);
    const std::size_t used = std::min<std::size_t>(64, bits - i * 64);
    if (used < 64) x &= (std::uint64_t{1} << used) - 1;
    pop += std::popcount(x);
  }
  return 2 * pop - static_cast<std::int64_t>(bits);
}

std::vector<std::int64_t> bin_fc_preactivation(const BinFcLayer& layer, const Tensor& a) {
  if (a.rank() != 2 || a.cols() != layer.in_features()) {
    throw DimensionError("binarized layer expects width " + std::to_string(layer.in_features()));
  }
  const auto in = layer.in_features(), out = layer.out_features();
  const auto acts = pack_signs(a.values(), a.rows(), in);
  const auto w = encode_signs(layer.weight.values(), layer.weight.shape());
  const auto weights = pack_codes(w.codes, out, in);
  std::vector<std::int64_t> s(a.rows() * out);
  for (std::size_t b = 0; b < a.rows(); ++b)
    for (std::size_t j = 0; j < out; ++j) s[b * out + j] = xnor_popcount_dot(weights.row(j), acts.row(b), in);
  return s;
}

Tensor bin_fc_forward(const BinFcLayer& layer, const Tensor& a) {
  const auto s = bin_fc_preactivation(layer, a);
  const auto out = layer.out_features();
  const auto t = layer.threshold.values();
  std::vector<double> y(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) y[i] = static_cast<double>(s[i]) > t[i % out] ? 1.0 : -1.0;
  return Tensor({a.rows(), out}, std::move(y));
}

// ---- frozen inference ----------------------------------------------------------------

std::vector<CodeTensor> weight_codes(const Model& m) {
  std::vector<CodeTensor> out;
  out.reserve(m.layers.size());
  for (const auto& layer : m.layers) {
    std::visit(overloaded{
                   [&](const QuantFcLayer& l) { out.push_back(encode(l.weight.values(), l.weight.shape(), l.scheme())); },
                   [&](const BinFcLayer& l) { out.push_back(encode_signs(l.weight.values(), l.weight.shape())); },
               },
               layer);
  }
  return out;
}

FrozenModel freeze(const Model& m, std::span<const CodeTensor> codes) {
  m.validate();
  if (codes.size() != m.layers.size()) throw DimensionError("freeze: one code tensor per layer required");
  FrozenModel f;
  f.logit_scale = m.logit_scale;
  f.binarized_inputs = m.binarized();
  f.input_width = m.input_width();
  f.output_width = m.output_width();
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& ct = codes[i];
    std::visit(overloaded{
                   [&](const QuantFcLayer& l) {
                     if (ct.shape != l.weight.shape()) throw DimensionError("freeze: code shape mismatch");
                     const auto w = decode(ct);
                     f.layers.emplace_back(FrozenDense{l.in_features(), l.out_features(), {w.begin(), w.end()},
                                                       {l.bias.values().begin(), l.bias.values().end()},
                                                       l.activation});
                   },
                   [&](const BinFcLayer& l) {
                     if (ct.shape != l.weight.shape()) throw DimensionError("freeze: code shape mismatch");
                     f.layers.emplace_back(FrozenBinary{l.in_features(), l.out_features(),
                                                        pack_codes(ct.codes, l.out_features(), l.in_features()),
                                                        {l.threshold.values().begin(), l.threshold.values().end()},
                                                        l.binary_output});
                   },
               },
               m.layers[i]);
  }
  return f;
}

FrozenModel freeze(const Model& m) {
  const auto codes = weight_codes(m);
  return freeze(m, codes);
}

std::vector<double> FrozenModel::forward(std::span<const double> x, std::size_t rows) const {
  if (x.size() != rows * input_width) throw DimensionError("frozen forward: input size does not match width");
  AlignedBuffer h(x.begin(), x.end());
  if (binarized_inputs) {
    for (auto& v : h) v = v >= 0.5 ? 1.0 : -1.0;
  }
  for (const auto& layer : layers) {
    h = std::visit(
        overloaded{
            [&](const FrozenDense& l) {
              AlignedBuffer y(rows * l.out);
              Eigen::Map<RowMajor> ym(y.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(l.out));
              const Eigen::Map<const RowMajor> xm(h.data(), static_cast<Eigen::Index>(rows),
                                                  static_cast<Eigen::Index>(l.in));
              const Eigen::Map<const RowMajor> wm(l.weight.data(), static_cast<Eigen::Index>(l.out),
                                                  static_cast<Eigen::Index>(l.in));
              ym.noalias() = xm * wm.transpose();
              ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(l.bias.data(), static_cast<Eigen::Index>(l.out));
              if (l.activation == Activation::relu) {
                for (auto& v : y) v = v > 0.0 ? v : 0.0;
              }
              return y;
            },
            [&](const FrozenBinary& l) {
              const auto acts = pack_signs(h, rows, l.in);
              AlignedBuffer y(rows * l.out);
              for (std::size_t b = 0; b < rows; ++b) {
                for (std::size_t j = 0; j < l.out; ++j) {
                  const auto s = static_cast<double>(xnor_popcount_dot(l.weight.row(j), acts.row(b), l.in));
                  y[b * l.out + j] = l.binary_output ? (s > l.threshold[j] ? 1.0 : -1.0) : s - l.threshold[j];
                }
              }
              return y;
            },
        },
        layer);
  }
  if (logit_scale != 1.0) {
    for (auto& v : h) v *= logit_scale;
  }
  return {h.begin(), h.end()};
}

Tensor FrozenModel::forward(const Tensor& x) const {
  if (x.rank() != 2) throw DimensionError("frozen forward expects a matrix");
  return Tensor({x.rows(), output_width}, forward(x.values(), x.rows()));
}

std::size_t predict(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("predict: empty logits");
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

// ---- Adam -----------------------------------------------------------------------------

void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state, double lr,
               const AdamConfig& cfg, std::string_view name) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter and gradient sizes differ");
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericError("non-finite gradient for " + std::string(name));
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

Adam::Adam(std::vector<NamedParam> params, AdamConfig cfg)
    : params_(std::move(params)), moments_(params_.size()), cfg_(cfg) {}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.tensor.has_grad()) continue;
    adam_step(p.tensor.mutable_values(), p.tensor.grad(), moments_[i], lr, cfg_, p.name);
  }
}

// ---- schedule and training loop ---------------------------------------------------------

double step_lr(double base_lr, std::size_t epoch, std::size_t step_size, double gamma) {
  if (step_size == 0) throw ContractError("step_lr: step size must be positive");
  return base_lr * std::pow(gamma, static_cast<double>(epoch / step_size));
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ContractError("epochs must be positive");
  if (batch_size == 0) throw ContractError("batch size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("learning rate must be non-negative");
  if (step_size == 0) throw ContractError("step size must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ContractError("gamma must lie in (0, 1]");
}

namespace {

void clip_binary_latents(Model& m) {
  for (auto& layer : m.layers) {
    if (auto* l = std::get_if<BinFcLayer>(&layer)) {
      for (auto& w : l->weight.mutable_values()) w = std::clamp(w, -1.0, 1.0);
    }
  }
}

}  // namespace

EpochStats train_epoch(Model& m, const Dataset& data, const TrainConfig& cfg, const LossSpec& loss, Adam& opt,
                       std::size_t epoch) {
  cfg.validate();
  loss.validate();
  if (data.size() == 0) throw ContractError("train_epoch: empty dataset");
  if (data.dim() != m.input_width()) throw DimensionError("train_epoch: dataset width does not match model");
  if (data.num_classes != m.output_width()) throw DimensionError("train_epoch: class count does not match model");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, 0x5407f1e, epoch));
  rng.shuffle(order);

  const double lr = step_lr(cfg.lr, epoch, cfg.step_size, cfg.gamma);
  const auto dim = data.dim();
  const auto k = m.output_width();
  double loss_sum = 0.0, margin_sum = 0.0;
  std::size_t correct = 0;

  for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
    const auto count = std::min(cfg.batch_size, order.size() - first);
    std::vector<double> x(count * dim);
    std::vector<std::size_t> y(count);
    for (std::size_t b = 0; b < count; ++b) {
      const auto idx = order[first + b];
      const auto src = data.row(idx);
      std::copy(src.begin(), src.end(), x.begin() + static_cast<std::ptrdiff_t>(b * dim));
      y[b] = data.labels[idx];
    }
    const Tensor logits = model_forward(m, Tensor({count, dim}, std::move(x)));
    const Tensor objective = compute_loss(loss, logits, y);

    const auto lv = logits.values();
    for (std::size_t b = 0; b < count; ++b) {
      const auto row = lv.subspan(b * k, k);
      margin_sum += top2_margin(row);
      correct += predict(row) == y[b] ? 1 : 0;
    }
    loss_sum += objective.item() * static_cast<double>(count);

    opt.zero_grad();
    backward(objective);
    opt.step(lr);
    if (m.binarized()) clip_binary_latents(m);
  }

  const auto n = static_cast<double>(data.size());
  return EpochStats{epoch, loss_sum / n, static_cast<double>(correct) / n, margin_sum / n, lr};
}

std::vector<EpochStats> train(Model& m, const Dataset& data, const TrainConfig& cfg, const LossSpec& loss,
                              const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  loss.validate();
  Adam opt(m.parameters());
  std::vector<EpochStats> log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    try {
      log.push_back(train_epoch(m, data, cfg, loss, opt, epoch));
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (on_epoch) on_epoch(log.back());
  }
  return log;
}

}  // namespace mcel
