#pragma once

// Fully connected quantized and binarized networks, Adam, and the training loop.
//
// A Model holds latent real-valued parameters and is trained through the
// autograd graph (model_forward). Evaluation runs on a FrozenModel: weights
// are quantized to codes, optionally perturbed, and decoded into a
// forward-only copy. Binarized layers evaluate with XNOR/popcount.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mcel/dataset.hpp"
#include "mcel/losses.hpp"
#include "mcel/quantization.hpp"
#include "mcel/tensor.hpp"

namespace mcel {

enum class Activation { relu, none };

/// Dense layer with fake-quantized weights and a full-precision bias.
struct QuantFcLayer {
  Tensor weight;  // [out×in], latent reals
  Tensor bias;    // [out]
  int bits = 8;
  Activation activation = Activation::relu;

  std::size_t in_features() const { return weight.shape()[1]; }
  std::size_t out_features() const { return weight.shape()[0]; }
  /// Scheme used for the current latent weights (symmetric max-abs range).
  QuantScheme scheme() const { return range_from_tensor(weight, bits); }
};

/// Binarized layer: ±1 weights against ±1 inputs. Hidden layers emit
/// +1 where s > t and -1 elsewhere; the output layer emits s - t as logits.
struct BinFcLayer {
  Tensor weight;     // [out×in], latent reals; sign gives the binary weight
  Tensor threshold;  // [out]
  bool binary_output = true;

  std::size_t in_features() const { return weight.shape()[1]; }
  std::size_t out_features() const { return weight.shape()[0]; }
};

using Layer = std::variant<QuantFcLayer, BinFcLayer>;

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct Model {
  std::vector<Layer> layers;
  double logit_scale = 1.0;
  int bits = 8;
  std::string architecture;
  std::uint64_t seed = 0;

  bool binarized() const { return bits == 1; }
  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t parameter_count() const;
  std::vector<NamedParam> parameters() const;
  /// Throws DimensionError if consecutive layers do not chain.
  void validate() const;
};

/// "FC-MLP<layers>:<d0>-<d1>-...".
std::string architecture_string(std::span<const std::size_t> dims);
/// Inverse of architecture_string. Throws ContractError on malformed input.
std::vector<std::size_t> parse_architecture(std::string_view arch);
/// Weights plus biases/thresholds of a fully connected stack.
std::size_t parameter_count_for(std::span<const std::size_t> dims);

/// Weight width of the real-valued output layer of a binarized model.
inline constexpr int kBinaryOutputBits = 8;

/// In -> hidden... -> classes. bits = 1 builds the binarized variant: ±1
/// hidden layers with thresholds, then a dense output layer over the ±1
/// activations stored at kBinaryOutputBits.
/// Weights and biases start uniform in ±1/sqrt(fan_in); thresholds start at 0.
Model make_mlp(std::size_t inputs, std::span<const std::size_t> hidden, std::size_t classes, int bits,
               std::uint64_t seed, double logit_scale = 1.0);
/// The desk-scale FC-MLP3: In -> 256 -> 128 -> classes.
Model make_fc_mlp3(std::size_t inputs, std::size_t classes, int bits, std::uint64_t seed, double logit_scale = 1.0);

/// Maps [0, 1] inputs to ±1 (x >= 0.5 -> +1) for the binarized first layer.
Tensor binarize_inputs(const Tensor& x);

/// Autograd forward used for training: activation(x · fake_quantize(W)ᵀ + b).
Tensor qfc_forward(const QuantFcLayer& layer, const Tensor& x);
/// Autograd forward of a binarized layer (dense ±1 product with STE).
Tensor bin_fc_train_forward(const BinFcLayer& layer, const Tensor& a);
/// Raw logits times the model's logit scale. Margins and clamping belong to the losses.
Tensor model_forward(const Model& m, const Tensor& x);

// ---- binary arithmetic -------------------------------------------------------

/// ±1 values packed row-wise, bit 1 meaning +1. Tail bits of each row are zero.
struct PackedSigns {
  std::size_t rows = 0;
  std::size_t bits = 0;   // values per row
  std::size_t words = 0;  // 64-bit words per row
  std::vector<std::uint64_t> data;

  std::span<const std::uint64_t> row(std::size_t r) const { return {data.data() + r * words, words}; }
};

/// Throws ContractError if any value is not exactly ±1.
PackedSigns pack_signs(std::span<const double> values, std::size_t rows, std::size_t cols);
PackedSigns pack_codes(std::span<const Code> codes, std::size_t rows, std::size_t cols);

/// 2 · popcount(XNOR(w, a)) − bits over one packed row pair.
std::int64_t xnor_popcount_dot(std::span<const std::uint64_t> w, std::span<const std::uint64_t> a, std::size_t bits);

/// Pre-activations s [B×out] of a binarized layer computed with XNOR/popcount.
std::vector<std::int64_t> bin_fc_preactivation(const BinFcLayer& layer, const Tensor& a);
/// Eq.-10 style inference: +1 where s > t else -1. Input must be ±1.
Tensor bin_fc_forward(const BinFcLayer& layer, const Tensor& a);

// ---- frozen inference ----------------------------------------------------------

struct FrozenDense {
  std::size_t in = 0, out = 0;
  AlignedBuffer weight;  // [out×in], decoded codes
  AlignedBuffer bias;
  Activation activation = Activation::relu;
};

struct FrozenBinary {
  std::size_t in = 0, out = 0;
  PackedSigns weight;
  std::vector<double> threshold;
  bool binary_output = true;
};

/// Forward-only model over decoded (possibly bit-flipped) weights.
struct FrozenModel {
  std::vector<std::variant<FrozenDense, FrozenBinary>> layers;
  double logit_scale = 1.0;
  bool binarized_inputs = false;
  std::size_t input_width = 0;
  std::size_t output_width = 0;

  /// Logits [rows×K] for rows of `x` (row-major, rows × input_width).
  std::vector<double> forward(std::span<const double> x, std::size_t rows) const;
  Tensor forward(const Tensor& x) const;
};

/// Weight codes of every layer in order: n-bit codes under the layer's
/// max-abs scheme, or sign codes for binarized layers.
std::vector<CodeTensor> weight_codes(const Model& m);
/// Builds the inference copy from (possibly perturbed) codes. Biases and
/// thresholds come from the model unchanged.
FrozenModel freeze(const Model& m, std::span<const CodeTensor> codes);
FrozenModel freeze(const Model& m);

/// Index of the largest logit; ties go to the lowest index.
std::size_t predict(std::span<const double> logits);

// ---- optimization --------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update in place. Throws NumericError naming the
/// parameter when a gradient is not finite.
void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state, double lr,
               const AdamConfig& cfg = {}, std::string_view name = "parameter");

class Adam {
 public:
  explicit Adam(std::vector<NamedParam> params, AdamConfig cfg = {});

  void zero_grad();
  /// Applies one update to every parameter that received a gradient.
  void step(double lr);
  const std::vector<AdamMoments>& moments() const { return moments_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<AdamMoments> moments_;
  AdamConfig cfg_;
};

/// base_lr · gamma^floor(epoch / step_size).
double step_lr(double base_lr, std::size_t epoch, std::size_t step_size, double gamma);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::size_t step_size = 10;
  double gamma = 0.5;
  std::uint64_t seed = 0;

  /// Throws ContractError unless everything is positive and gamma is in (0, 1].
  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double mlm = 0.0;  // mean top-2 margin of the epoch's training forward passes
  double lr = 0.0;
};

/// One pass over `data` in a seeded shuffled order.
EpochStats train_epoch(Model& m, const Dataset& data, const TrainConfig& cfg, const LossSpec& loss, Adam& opt,
                       std::size_t epoch);

/// cfg.epochs passes with the step schedule. NumericError messages gain the epoch.
std::vector<EpochStats> train(Model& m, const Dataset& data, const TrainConfig& cfg, const LossSpec& loss,
                              const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace mcel
