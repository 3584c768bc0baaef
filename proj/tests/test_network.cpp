#include <gtest/gtest.h>

#include <cmath>

#include "mcel/data_io.hpp"
#include "mcel/errors.hpp"
#include "mcel/network.hpp"
#include "test_util.hpp"

namespace mcel {
namespace {

using testing::naive_matmul;
using testing::random_tensor;
using testing::to_vector;

std::vector<double> random_signs(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.bernoulli(0.5) ? 1.0 : -1.0;
  return v;
}

Model single_layer(std::vector<double> w, std::size_t out, std::size_t in, int bits, double logit_scale) {
  Model m;
  m.bits = bits;
  m.logit_scale = logit_scale;
  const std::size_t dims[] = {in, out};
  m.architecture = architecture_string(dims);
  m.layers.emplace_back(QuantFcLayer{Tensor({out, in}, std::move(w), true), Tensor::zeros({out}, true), bits,
                                     Activation::none});
  m.validate();
  return m;
}

// ---- layers ----------------------------------------------------------------------------

TEST(QuantFc, ZeroInputZeroBiasGivesZeros) {
  Rng rng(1);
  QuantFcLayer l{random_tensor({3, 4}, rng), Tensor::zeros({3}), 4, Activation::relu};
  const auto y = qfc_forward(l, Tensor::zeros({2, 4}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(QuantFc, GridWeightsGiveExactProduct) {
  // 2-bit grid over [-1, 1] is {-1, -1/3, 1/3, 1}.
  const std::vector<double> w{1, -1.0 / 3.0, 1.0 / 3.0, 1};
  QuantFcLayer l{Tensor({2, 2}, w), Tensor::zeros({2}), 2, Activation::none};
  const auto x = Tensor::matrix(2, 2, {1, 2, -3, 0.5});
  const auto y = qfc_forward(l, x);
  const std::vector<double> wt{w[0], w[2], w[1], w[3]};
  const auto ref = naive_matmul(to_vector(x), wt, 2, 2, 2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.values()[i], ref[i], 1e-15);
}

TEST(QuantFc, MatchesExplicitlyDequantizedCodes) {
  Rng rng(2);
  for (int bits : {2, 4, 8}) {
    QuantFcLayer l{random_tensor({5, 7}, rng), random_tensor({5}, rng), bits, Activation::relu};
    const auto x = random_tensor({3, 7}, rng);
    const auto codes = encode(l.weight.values(), l.weight.shape(), l.scheme());
    const auto wq = decode(codes);
    std::vector<double> wt(7 * 5);
    for (std::size_t o = 0; o < 5; ++o)
      for (std::size_t i = 0; i < 7; ++i) wt[i * 5 + o] = wq[o * 7 + i];
    auto ref = naive_matmul(to_vector(x), wt, 3, 7, 5);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t o = 0; o < 5; ++o) ref[r * 5 + o] = std::max(0.0, ref[r * 5 + o] + l.bias.at(o));
    const auto y = qfc_forward(l, x);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.values()[i], ref[i], 1e-14);
  }
}

TEST(QuantFc, DimensionMismatch) {
  QuantFcLayer l{Tensor::zeros({3, 4}), Tensor::zeros({3}), 4, Activation::relu};
  EXPECT_THROW(qfc_forward(l, Tensor::zeros({2, 5})), DimensionError);
}

// ---- binary arithmetic ----------------------------------------------------------------

TEST(BinFc, FullAgreementOverEightBits) {
  Rng rng(3);
  const auto a = random_signs(8, rng);
  BinFcLayer l{Tensor({1, 8}, a), Tensor::zeros({1}), true};
  const auto s = bin_fc_preactivation(l, Tensor({1, 8}, a));
  EXPECT_EQ(s[0], 8);
}

TEST(BinFc, OneDisagreementCostsTwo) {
  Rng rng(4);
  const auto a = random_signs(8, rng);
  auto w = a;
  w[5] = -w[5];
  BinFcLayer l{Tensor({1, 8}, w), Tensor::zeros({1}), true};
  EXPECT_EQ(bin_fc_preactivation(l, Tensor({1, 8}, a))[0], 6);
}

TEST(BinFc, PopcountEqualsDenseDot) {
  Rng rng(5);
  for (std::size_t n : {1u, 16u, 63u, 64u, 65u, 200u}) {
    for (int rep = 0; rep < 50; ++rep) {
      const auto w = random_signs(n, rng);
      const auto a = random_signs(n, rng);
      BinFcLayer l{Tensor({1, n}, w), Tensor::zeros({1}), true};
      std::int64_t dense = 0;
      for (std::size_t i = 0; i < n; ++i) dense += static_cast<std::int64_t>(w[i] * a[i]);
      EXPECT_EQ(bin_fc_preactivation(l, Tensor({1, n}, a))[0], dense) << "n=" << n;
    }
  }
}

TEST(BinFc, LatentWeightsUseTheirSign) {
  // Latent reals binarize by sign with sign(0) = +1.
  BinFcLayer l{Tensor::matrix(1, 3, {-0.2, 0.0, 0.7}), Tensor::zeros({1}), true};
  EXPECT_EQ(bin_fc_preactivation(l, Tensor::matrix(1, 3, {1, 1, 1}))[0], 1);
}

TEST(BinFc, ThresholdDecidesOutput) {
  BinFcLayer l{Tensor::matrix(2, 4, {1, 1, 1, 1, 1, 1, 1, 1}), Tensor::vector({2.0, 4.0}), true};
  // s = 4 for both neurons: 4 > 2 gives +1, 4 > 4 does not.
  const auto y = bin_fc_forward(l, Tensor::matrix(1, 4, {1, 1, 1, 1}));
  EXPECT_EQ(to_vector(y), (std::vector<double>{1, -1}));
}

TEST(BinFc, RejectsNonBinaryInput) {
  BinFcLayer l{Tensor::matrix(1, 2, {1, -1}), Tensor::zeros({1}), true};
  EXPECT_THROW(bin_fc_forward(l, Tensor::matrix(1, 2, {1, 0.5})), ContractError);
  EXPECT_THROW(pack_signs(std::vector<double>{1, 0}, 1, 2), ContractError);
}

TEST(BinFc, TrainingForwardMatchesPopcountPath) {
  Rng rng(6);
  BinFcLayer l{random_tensor({9, 70}, rng), random_tensor({9}, rng, -5, 5), true};
  const auto a = Tensor({4, 70}, random_signs(4 * 70, rng));
  EXPECT_EQ(to_vector(bin_fc_train_forward(l, a)), to_vector(bin_fc_forward(l, a)));
}

TEST(Packing, TailBitsStayZero) {
  const auto p = pack_signs(std::vector<double>(70, 1.0), 1, 70);
  EXPECT_EQ(p.words, 2u);
  EXPECT_EQ(p.data[1], (std::uint64_t{1} << 6) - 1);
}

// ---- model ---------------------------------------------------------------------------

TEST(Model, ArchitectureStringRoundTrip) {
  const std::vector<std::size_t> dims{784, 256, 128, 10};
  const auto s = architecture_string(dims);
  EXPECT_EQ(s, "FC-MLP3:784-256-128-10");
  EXPECT_EQ(parse_architecture(s), dims);
  EXPECT_THROW(parse_architecture("MLP:1-2"), ContractError);
  EXPECT_THROW(parse_architecture("FC-MLP2:4-3"), ContractError);
  EXPECT_EQ(parameter_count_for(dims), 784u * 256 + 256 + 256 * 128 + 128 + 128 * 10 + 10);
}

TEST(Model, FcMlp3Layout) {
  for (int bits : {1, 2, 4, 8}) {
    const auto m = make_fc_mlp3(784, 10, bits, 3);
    EXPECT_EQ(m.layers.size(), 3u);
    EXPECT_EQ(m.input_width(), 784u);
    EXPECT_EQ(m.output_width(), 10u);
    EXPECT_EQ(m.parameter_count(), parameter_count_for(parse_architecture(m.architecture)));
    // Output layer is always a dense layer without activation.
    const auto* out = std::get_if<QuantFcLayer>(&m.layers.back());
    ASSERT_NE(out, nullptr);
    EXPECT_EQ(out->activation, Activation::none);
    EXPECT_EQ(std::holds_alternative<BinFcLayer>(m.layers.front()), bits == 1);
  }
}

TEST(Model, ValidateRejectsBrokenChain) {
  auto m = make_fc_mlp3(16, 4, 4, 1);
  std::get<QuantFcLayer>(m.layers[1]).weight = Tensor::zeros({128, 100}, true);
  EXPECT_THROW(m.validate(), DimensionError);
}

TEST(Model, BnnThresholdsStartAtZero) {
  const auto m = make_fc_mlp3(16, 4, 1, 1);
  for (double t : std::get<BinFcLayer>(m.layers[0]).threshold.values()) EXPECT_EQ(t, 0.0);
}

TEST(ModelForward, IdentityLayerScalesInput) {
  // Zero is not a level of a symmetric 2^n grid, so the off-diagonal entries
  // land on ±delta/2; the identity holds up to that quantization error.
  const double scale = 2.5;
  const auto m = single_layer({1, 0, 0, 1}, 2, 2, 8, scale);
  const auto x = Tensor::matrix(3, 2, {0.5, -1, 2, 0.25, -0.75, 3});
  const auto y = model_forward(m, x);
  const double half_step = QuantScheme(8, -1, 1).delta() / 2;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      const double other = std::abs(x.at(r, 1 - c));
      EXPECT_NEAR(y.at(r, c), scale * x.at(r, c), scale * half_step * other + 1e-15);
    }
}

TEST(ModelForward, RowsAreIndependent) {
  Rng rng(7);
  const auto m = make_fc_mlp3(6, 3, 4, 11);
  const auto x = random_tensor({5, 6}, rng, 0, 1);
  const auto y = model_forward(m, x);
  // Reversing the batch reverses the logit rows. The GEMM kernel may sum a
  // row in a different lane order depending on its position, hence ulps.
  std::vector<double> rev;
  for (std::size_t r = 5; r-- > 0;)
    for (std::size_t c = 0; c < 6; ++c) rev.push_back(x.at(r, c));
  const auto yr = model_forward(m, Tensor({5, 6}, rev));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(yr.at(4 - r, c), y.at(r, c), 1e-14);
}

TEST(ModelForward, Deterministic) {
  Rng rng(8);
  const auto x = random_tensor({4, 6}, rng, 0, 1);
  for (int bits : {1, 4}) {
    const auto a = make_fc_mlp3(6, 3, bits, 5);
    const auto b = make_fc_mlp3(6, 3, bits, 5);
    EXPECT_EQ(to_vector(model_forward(a, x)), to_vector(model_forward(b, x)));
    EXPECT_EQ(to_vector(model_forward(a, x)), to_vector(model_forward(a, x)));
  }
}

TEST(ModelForward, WidthMismatch) {
  const auto m = make_fc_mlp3(6, 3, 4, 5);
  EXPECT_THROW(model_forward(m, Tensor::zeros({2, 7})), DimensionError);
}

TEST(Frozen, MatchesTrainingForward) {
  Rng rng(9);
  const auto x = random_tensor({8, 12}, rng, 0, 1);
  for (int bits : {1, 2, 4, 8}) {
    const auto m = make_fc_mlp3(12, 5, bits, 17, 3.0);
    const auto a = model_forward(m, x);
    const auto b = freeze(m).forward(x);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-12) << bits;
  }
}

TEST(Frozen, CodesDescribeEveryWeight) {
  const auto m = make_fc_mlp3(12, 5, 1, 2);
  const auto codes = weight_codes(m);
  ASSERT_EQ(codes.size(), 3u);
  EXPECT_EQ(codes[0].scheme.bits(), 1);
  EXPECT_EQ(codes[1].scheme.bits(), 1);
  EXPECT_EQ(codes[2].scheme.bits(), kBinaryOutputBits);
  EXPECT_EQ(codes[0].codes.size(), 256u * 12);
}

// ---- predict ---------------------------------------------------------------------------

TEST(Predict, Argmax) {
  const std::vector<double> z{2.5, 1.5, 0.9, 1.1, 1.2};
  EXPECT_EQ(predict(z), 0u);
  EXPECT_EQ(predict(std::vector<double>{1, 1}), 0u);
  EXPECT_EQ(predict(std::vector<double>{0, 3, 3}), 1u);
}

TEST(Predict, ShiftInvariant) {
  Rng rng(10);
  for (int rep = 0; rep < 200; ++rep) {
    auto z = testing::uniform_values(7, rng, -5, 5);
    const auto p = predict(z);
    const double c = rng.uniform(-100, 100);
    for (auto& v : z) v += c;
    EXPECT_EQ(predict(z), p);
  }
}

// ---- Adam ------------------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesEverythingAlone) {
  std::vector<double> p{0.5, -1.0};
  const std::vector<double> g{0.0, 0.0};
  AdamMoments st;
  adam_step(p, g, st, 1e-3);
  EXPECT_EQ(p, (std::vector<double>{0.5, -1.0}));
  EXPECT_EQ(st.m, (std::vector<double>{0, 0}));
  EXPECT_EQ(st.v, (std::vector<double>{0, 0}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{1.0, 1.0, 1.0};
  const std::vector<double> g{0.5, -2.0, 1e-3};
  AdamMoments st;
  adam_step(p, g, st, 1e-3);
  // Bias-corrected first step: lr * g / (|g| + eps).
  for (std::size_t i = 0; i < 3; ++i) {
    const double expect = 1e-3 * std::abs(g[i]) / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(std::abs(p[i] - 1.0), expect, 1e-15);
  }
  EXPECT_LT(p[0], 1.0);
  EXPECT_GT(p[1], 1.0);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  std::vector<double> p{1.0};
  const std::vector<double> g{std::nan("")};
  AdamMoments st;
  try {
    adam_step(p, g, st, 1e-3, {}, "layer2.bias");
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer2.bias"), std::string::npos);
  }
}

TEST(Adam, IdenticalRunsIdenticalTrajectories) {
  const auto run = [] {
    std::vector<double> p{0.3, -0.7};
    AdamMoments st;
    for (int t = 0; t < 100; ++t) {
      const std::vector<double> g{2 * p[0] - 1, std::sin(p[1])};
      adam_step(p, g, st, 1e-2);
    }
    return p;
  };
  EXPECT_EQ(run(), run());
}

// ---- schedule ------------------------------------------------------------------------

TEST(StepLr, TableValues) {
  EXPECT_EQ(step_lr(1e-3, 0, 10, 0.5), 1e-3);
  EXPECT_EQ(step_lr(1e-3, 9, 10, 0.5), 1e-3);
  EXPECT_EQ(step_lr(1e-3, 10, 10, 0.5), 5e-4);
  EXPECT_EQ(step_lr(1e-3, 99, 10, 0.5), 1e-3 / 512);
  EXPECT_EQ(step_lr(1e-3, 5, 5, 0.25), 2.5e-4);
  for (std::size_t e = 0; e < 50; ++e) EXPECT_EQ(step_lr(1e-3, e, 10, 1.0), 1e-3);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gamma = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c.gamma = 1.5;
  EXPECT_THROW(c.validate(), ContractError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ContractError);
}

// ---- training ----------------------------------------------------------------------------

TEST(Train, ZeroLearningRateKeepsWeights) {
  const auto data = synthetic_blobs(2, 50, 4, 0.5, 1);
  auto m = make_fc_mlp3(4, 2, 4, 3);
  std::vector<std::vector<double>> before;
  for (const auto& p : m.parameters()) before.push_back(to_vector(p.tensor));
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.lr = 0.0;
  const auto log = train(m, data, cfg, LossSpec{});
  ASSERT_EQ(log.size(), 2u);
  EXPECT_GT(log[0].loss, 0.0);
  EXPECT_GT(log[0].mlm, 0.0);
  const auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(to_vector(params[i].tensor), before[i]);
}

TEST(Train, SeparableBlobsAreLearned) {
  const auto data = synthetic_blobs(2, 200, 8, 0.3, 4);
  for (int bits : {1, 4}) {
    auto m = make_fc_mlp3(8, 2, bits, 6);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 32;
    cfg.seed = 2;
    const auto log = train(m, data, cfg, LossSpec{});
    EXPECT_GE(log.back().accuracy, 0.95) << "bits " << bits;
  }
}

TEST(Train, SameSeedSameStats) {
  const auto data = synthetic_blobs(3, 60, 6, 0.8, 9);
  const auto run = [&] {
    auto m = make_fc_mlp3(6, 3, 2, 12);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 20;
    cfg.seed = 5;
    const auto log = train(m, data, cfg, LossSpec{LossKind::mcel, 8, 100});
    std::vector<double> out;
    for (const auto& e : log) out.insert(out.end(), {e.loss, e.accuracy, e.mlm, e.lr});
    for (const auto& p : m.parameters()) {
      const auto v = to_vector(p.tensor);
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, EpochStatsUseSchedule) {
  const auto data = synthetic_blobs(2, 20, 3, 0.5, 1);
  auto m = make_fc_mlp3(3, 2, 8, 3);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.step_size = 2;
  cfg.gamma = 0.5;
  const auto log = train(m, data, cfg, LossSpec{});
  EXPECT_EQ(log[0].lr, 1e-3);
  EXPECT_EQ(log[2].lr, 5e-4);
  EXPECT_EQ(log[4].lr, 2.5e-4);
}

TEST(Train, ShapeMismatchRejected) {
  const auto data = synthetic_blobs(2, 20, 3, 0.5, 1);
  auto m = make_fc_mlp3(4, 2, 8, 3);
  EXPECT_THROW(train(m, data, TrainConfig{}, LossSpec{}), DimensionError);
}

}  // namespace
}  // namespace mcel
