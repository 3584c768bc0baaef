#include "mcel/fault_injection.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "mcel/errors.hpp"
#include "mcel/metrics.hpp"

namespace mcel {

void ErrorModel::validate() const {
  if (!(ber >= 0.0 && ber <= 1.0)) throw ContractError("bit error rate must lie in [0, 1]");
}

Rng trial_stream(std::uint64_t master_seed, std::size_t ber_index, std::size_t trial_index) {
  return Rng(derive_seed(master_seed, ber_index, trial_index));
}

CodeTensor flip_bits(const CodeTensor& codes, double p, Rng& rng) {
  ErrorModel{p}.validate();
  CodeTensor out = codes;
  if (p == 0.0) return out;
  const int bits = codes.scheme.bits();
  for (auto& c : out.codes) {
    Code mask = 0;
    for (int i = 0; i < bits; ++i) {
      if (rng.bernoulli(p)) mask |= Code{1} << i;
    }
    c ^= mask;
  }
  return out;
}

void flip_bit(CodeTensor& codes, std::size_t index, int bit) {
  if (index >= codes.codes.size()) throw ContractError("flip_bit: code index out of range");
  if (bit < 0 || bit >= codes.scheme.bits()) throw ContractError("flip_bit: bit position out of range");
  codes.codes[index] ^= Code{1} << bit;
}

double single_flip_delta(Code c, int bit, const QuantScheme& s) {
  if (bit < 0 || bit >= s.bits()) throw ContractError("single_flip_delta: bit position out of range");
  return std::abs(dequantize(c ^ (Code{1} << bit), s) - dequantize(c, s));
}

FrozenModel perturb_model(const Model& m, double p, Rng& rng) {
  auto codes = weight_codes(m);
  for (auto& ct : codes) ct = flip_bits(ct, p, rng);
  return freeze(m, codes);
}

std::vector<std::pair<double, double>> BerSweepResult::mean_accuracy_by_ber() const {
  std::vector<std::pair<double, double>> out;
  std::vector<std::size_t> counts;
  for (const auto& r : rows) {
    if (out.empty() || out.back().first != r.ber) {
      out.emplace_back(r.ber, 0.0);
      counts.push_back(0);
    }
    out.back().second += r.accuracy;
    ++counts.back();
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].second /= static_cast<double>(counts[i]);
  return out;
}

std::vector<double> default_ber_grid() { return {0.0, 0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1}; }

BerSweepResult ber_sweep(const Model& m, const Dataset& eval, std::span<const double> bers, std::size_t trials,
                         std::uint64_t master_seed, unsigned threads) {
  if (trials == 0) throw ContractError("ber_sweep: trials must be at least 1");
  for (double p : bers) ErrorModel{p}.validate();
  m.validate();

  BerSweepResult result;
  result.master_seed = master_seed;
  result.architecture = m.architecture;
  result.bits = m.bits;
  result.rows.resize(bers.size() * trials);

  const auto clean_codes = weight_codes(m);
  const std::size_t cells = result.rows.size();
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (std::size_t cell = next++; cell < cells; cell = next++) {
      const auto bi = cell / trials, trial = cell % trials;
      try {
        auto rng = trial_stream(master_seed, bi, trial);
        std::vector<CodeTensor> codes;
        codes.reserve(clean_codes.size());
        for (const auto& ct : clean_codes) codes.push_back(flip_bits(ct, bers[bi], rng));
        const auto summary = evaluate(freeze(m, codes), eval);
        result.rows[cell] = SweepRow{bers[bi], trial, summary.accuracy, summary.mean_margin};
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << "ber " << bers[bi] << " trial " << trial << ": " << e.what();
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::make_exception_ptr(NumericError(os.str()));
        next = cells;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = cells;
      }
    }
  };

  unsigned n = threads ? threads : std::max(1U, std::thread::hardware_concurrency());
  n = static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(cells, 1)));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return result;
}

}  // namespace mcel
