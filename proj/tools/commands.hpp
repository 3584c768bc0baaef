#pragma once

// Subcommands of the mcel executable. Each returns a process exit code and
// writes human-readable progress to `out`.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcel/dataset.hpp"
#include "mcel/losses.hpp"

namespace mcel::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Stable output names under --out.
inline constexpr const char* kModelFile = "model.bin";
inline constexpr const char* kTrainLogFile = "train_log.csv";
inline constexpr const char* kSweepFile = "ber_sweep.csv";
inline constexpr const char* kPlotScriptFile = "plot_ber.py";
inline constexpr const char* kMarginsFile = "margins.csv";
inline constexpr const char* kMarginsSummaryFile = "margins_summary.txt";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string command;
  std::string dataset = "fashion";  // fashion | blobs
  int bits = 4;                     // 1 selects the binarized network
  LossKind loss = LossKind::cel;
  std::optional<double> margin;  // defaults to 1 for hinge, 0 otherwise
  double bound = 100.0;
  double logit_scale = 1.0;
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::size_t step_size = 10;
  double gamma = 0.5;
  std::uint64_t seed = 0;
  std::vector<double> bers;  // empty -> default grid
  std::size_t trials = 20;
  unsigned threads = 0;
  std::filesystem::path out = ".";
  std::filesystem::path model;  // eval-ber, margins

  // blobs
  std::size_t blob_classes = 4;
  std::size_t blob_per_class = 250;
  std::size_t blob_dims = 16;
  double blob_spread = 0.8;
  std::uint64_t data_seed = 2024;

  // flip-demo; unset code/bit runs every combination
  std::optional<std::uint32_t> flip_code;
  std::optional<int> flip_bit;

  LossSpec loss_spec() const;
  /// Throws UsageError on invalid combinations.
  void validate() const;
};

/// Train or test split of the selected dataset. Fashion reads MCEL_DATA_DIR.
Dataset load_dataset(const RunConfig& cfg, bool train);
/// File names, sizes and upstream checksums the fashion loader expects.
std::string fashion_manifest(const std::filesystem::path& dir);

int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_eval_ber(const RunConfig& cfg, std::ostream& out);
int cmd_margins(const RunConfig& cfg, std::ostream& out);
int cmd_flip_demo(const RunConfig& cfg, std::ostream& out);

/// Parses argv and dispatches. Usage errors return 2, runtime failures 1.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace mcel::cli
