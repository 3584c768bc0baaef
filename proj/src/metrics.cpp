#include "mcel/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "mcel/errors.hpp"

namespace mcel {

namespace {

constexpr std::size_t kEvalChunk = 1000;

void check_labels(const FrozenModel& model, const Dataset& data) {
  if (data.size() == 0) throw ContractError("evaluation needs a non-empty dataset");
  if (data.dim() != model.input_width) throw DimensionError("dataset width does not match model");
  for (auto y : data.labels) {
    if (y >= model.output_width) throw ContractError("label " + std::to_string(y) + " out of range");
  }
}

// Calls fn(sample index, logits row) for every sample, evaluating in chunks.
template <typename Fn>
void for_each_logits(const FrozenModel& model, const Dataset& data, Fn&& fn) {
  const auto k = model.output_width;
  for (std::size_t first = 0; first < data.size(); first += kEvalChunk) {
    const auto count = std::min(kEvalChunk, data.size() - first);
    const auto x = data.inputs.values().subspan(first * data.dim(), count * data.dim());
    const auto logits = model.forward(x, count);
    for (std::size_t b = 0; b < count; ++b) fn(first + b, std::span<const double>(logits).subspan(b * k, k));
  }
}

}  // namespace

double top2_margin(std::span<const double> logits) {
  if (logits.size() < 2) throw DimensionError("top2_margin needs at least two logits");
  double best = -INFINITY, second = -INFINITY;
  for (double v : logits) {
    if (v > best) {
      second = best;
      best = v;
    } else if (v > second) {
      second = v;
    }
  }
  return best - second;
}

std::vector<double> class_margins(std::span<const double> logits) {
  if (logits.size() < 2) throw DimensionError("class_margins needs at least two logits");
  const auto top = predict(logits);
  std::vector<double> out;
  out.reserve(logits.size() - 1);
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (k != top) out.push_back(logits[top] - logits[k]);
  }
  return out;
}

double mlm(std::span<const MarginRecord> records) {
  if (records.empty()) throw ContractError("mlm of an empty record list");
  double s = 0.0;
  for (const auto& r : records) s += r.margin;
  return s / static_cast<double>(records.size());
}

double neuron_margin(double preactivation, double threshold) { return std::abs(preactivation - threshold); }

std::vector<MarginRecord> margin_records(const FrozenModel& model, const Dataset& data, bool with_class_margins) {
  check_labels(model, data);
  std::vector<MarginRecord> out(data.size());
  for_each_logits(model, data, [&](std::size_t i, std::span<const double> row) {
    out[i].sample = i;
    out[i].predicted = predict(row);
    out[i].margin = top2_margin(row);
    if (with_class_margins) out[i].class_margins = class_margins(row);
  });
  return out;
}

EvalSummary evaluate(const FrozenModel& model, const Dataset& data) {
  check_labels(model, data);
  std::size_t correct = 0;
  double margins = 0.0;
  for_each_logits(model, data, [&](std::size_t i, std::span<const double> row) {
    correct += predict(row) == data.labels[i] ? 1 : 0;
    margins += top2_margin(row);
  });
  const auto n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, margins / n};
}

double accuracy(const FrozenModel& model, const Dataset& data) { return evaluate(model, data).accuracy; }

double accuracy(const Model& model, const Dataset& data) { return accuracy(freeze(model), data); }

}  // namespace mcel
