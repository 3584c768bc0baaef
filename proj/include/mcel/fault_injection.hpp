#pragma once

// Symmetric, independent bit flips in stored weight codes and the BER sweep.
//
// Every (master seed, BER index, trial index) triple owns its own generator,
// so a trial's flip pattern is fixed no matter how trials are scheduled.
// Only weights are perturbed; biases and thresholds stay exact, and no
// injection happens anywhere in training.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mcel/dataset.hpp"
#include "mcel/network.hpp"
#include "mcel/quantization.hpp"
#include "mcel/rng.hpp"

namespace mcel {

struct ErrorModel {
  double ber = 0.0;  // per-bit flip probability, same for 0->1 and 1->0

  /// Throws ContractError unless 0 <= ber <= 1.
  void validate() const;
};

/// Generator for one (BER, trial) cell of a sweep.
Rng trial_stream(std::uint64_t master_seed, std::size_t ber_index, std::size_t trial_index);

/// Copy of `codes` with each of the n bits of every code flipped with probability p.
CodeTensor flip_bits(const CodeTensor& codes, double p, Rng& rng);

/// Flips one bit of one code in place. Throws ContractError when out of range.
void flip_bit(CodeTensor& codes, std::size_t index, int bit);

/// |dequantize(c XOR 2^bit) − dequantize(c)|, which equals 2^bit · delta.
double single_flip_delta(Code c, int bit, const QuantScheme& s);

/// Quantize -> flip at rate p -> decode into an inference copy of `m`.
FrozenModel perturb_model(const Model& m, double p, Rng& rng);

struct SweepRow {
  double ber = 0.0;
  std::size_t trial = 0;
  double accuracy = 0.0;
  double mean_margin = 0.0;
};

struct BerSweepResult {
  std::vector<SweepRow> rows;  // ordered by (ber index, trial)
  std::uint64_t master_seed = 0;
  std::string architecture;
  int bits = 0;

  /// Mean accuracy over the trials of each distinct BER, in row order.
  std::vector<std::pair<double, double>> mean_accuracy_by_ber() const;
};

std::vector<double> default_ber_grid();
inline constexpr std::size_t kDefaultTrials = 20;

/// Runs `trials` perturbed evaluations per BER. threads = 0 picks the
/// hardware concurrency; the result is identical for any thread count.
BerSweepResult ber_sweep(const Model& m, const Dataset& eval, std::span<const double> bers, std::size_t trials,
                         std::uint64_t master_seed, unsigned threads = 0);

}  // namespace mcel
