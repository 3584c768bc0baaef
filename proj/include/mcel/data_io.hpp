#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mcel/dataset.hpp"
#include "mcel/fault_injection.hpp"
#include "mcel/metrics.hpp"
#include "mcel/network.hpp"

namespace mcel {

// ---- datasets -----------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parses an IDX image/label file pair. Pixels are scaled by 1/255 and each
/// image is flattened row-major. Throws FormatError (bad_magic, truncated,
/// count_mismatch) or IoError when a file cannot be opened.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t num_classes = 10);

enum class Split { train, test };

/// FashionMNIST from `dir` using the canonical file names
/// (train-images-idx3-ubyte, t10k-labels-idx1-ubyte, ...).
Dataset load_fashion(const std::filesystem::path& dir, Split split);
std::vector<std::filesystem::path> fashion_files(const std::filesystem::path& dir);

/// K Gaussian clusters around scaled one-hot centers (a regular simplex when
/// dims >= classes; evenly spaced on a circle in the first two axes
/// otherwise), min-max scaled into [0, 1]. Samples are interleaved by class.
Dataset synthetic_blobs(std::size_t classes, std::size_t per_class, std::size_t dims, double spread,
                        std::uint64_t seed);

// ---- model files ---------------------------------------------------------------

inline constexpr char kModelMagic[8] = {'M', 'C', 'E', 'L', 'Q', 'N', 'N', '1'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Little-endian binary image of a model: magic, version, payload length,
/// payload, FNV-1a checksum of the payload.
std::vector<std::uint8_t> serialize_model(const Model& m);
/// Throws FormatError (bad_magic, version_mismatch, corrupt_length, checksum).
Model deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

// ---- CSV -------------------------------------------------------------------------

/// Six significant digits, shortest form.
std::string format_decimal(double v);

void write_results_csv(const BerSweepResult& result, const std::filesystem::path& path);
void write_results_csv(std::span<const EpochStats> log, const std::filesystem::path& path);
void write_margins_csv(std::span<const MarginRecord> records, std::span<const std::size_t> labels,
                       const std::filesystem::path& path);

std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);
std::vector<EpochStats> read_training_log_csv(const std::filesystem::path& path);

/// Writes a matplotlib script that plots mean accuracy against BER (log
/// axis) with one curve per CSV. CSV paths are embedded as absolute paths;
/// the figure lands next to the script as accuracy_vs_ber.png.
/// Throws IoError if a CSV does not exist. Returns the script text.
std::string emit_plot_script(std::span<const std::filesystem::path> csvs, const std::filesystem::path& output);

}  // namespace mcel
