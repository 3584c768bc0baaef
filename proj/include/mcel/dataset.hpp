#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mcel/tensor.hpp"

namespace mcel {

/// Labelled samples: inputs [N×D] in [0, 1], one class index per row.
struct Dataset {
  Tensor inputs;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.cols(); }
  std::span<const double> row(std::size_t i) const { return inputs.values().subspan(i * dim(), dim()); }

  /// Throws ContractError if the invariants (row count, label range, finite inputs) fail.
  void validate() const;

  /// Rows [first, first + count) as a new dataset.
  Dataset slice(std::size_t first, std::size_t count) const;
};

}  // namespace mcel
