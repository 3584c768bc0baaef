#pragma once

// Output-layer margins and accuracy. All margins are measured on the logits
// a model emits (after its logit scale), never on clamped or margin-shifted
// values.

#include <cstddef>
#include <span>
#include <vector>

#include "mcel/dataset.hpp"
#include "mcel/network.hpp"

namespace mcel {

/// Largest minus second-largest logit. 0 on ties. Throws DimensionError for K < 2.
double top2_margin(std::span<const double> logits);

/// logit[argmax] − logit[k] for every k ≠ argmax, in class order.
std::vector<double> class_margins(std::span<const double> logits);

struct MarginRecord {
  std::size_t sample = 0;
  std::size_t predicted = 0;
  double margin = 0.0;
  std::vector<double> class_margins;  // empty unless requested
};

/// Mean logit margin. Throws ContractError on an empty list.
double mlm(std::span<const MarginRecord> records);

/// |s − t| for a binarized neuron.
double neuron_margin(double preactivation, double threshold);

std::vector<MarginRecord> margin_records(const FrozenModel& model, const Dataset& data,
                                         bool with_class_margins = false);

struct EvalSummary {
  double accuracy = 0.0;
  double mean_margin = 0.0;
};

/// Accuracy and mean top-2 margin in one pass over `data`.
EvalSummary evaluate(const FrozenModel& model, const Dataset& data);

double accuracy(const FrozenModel& model, const Dataset& data);
double accuracy(const Model& model, const Dataset& data);

}  // namespace mcel
