#include "mcel/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "mcel/errors.hpp"
#include "mcel/rng.hpp"

namespace mcel {

namespace fs = std::filesystem;

// ---- Dataset ------------------------------------------------------------------------

void Dataset::validate() const {
  if (!inputs.defined()) throw ContractError("dataset has no inputs");
  if (inputs.rank() != 2 || inputs.rows() != labels.size()) {
    throw ContractError("dataset: " + std::to_string(labels.size()) + " labels for inputs " +
                        shape_string(inputs.shape()));
  }
  for (auto y : labels) {
    if (y >= num_classes) throw ContractError("dataset: label " + std::to_string(y) + " out of range");
  }
  for (double v : inputs.values()) {
    if (!std::isfinite(v)) throw ContractError("dataset: non-finite input");
  }
}

Dataset Dataset::slice(std::size_t first, std::size_t count) const {
  if (first + count > size() || count == 0) throw ContractError("dataset slice out of range");
  const auto v = inputs.values().subspan(first * dim(), count * dim());
  return Dataset{Tensor({count, dim()}, {v.begin(), v.end()}),
                 {labels.begin() + static_cast<std::ptrdiff_t>(first),
                  labels.begin() + static_cast<std::ptrdiff_t>(first + count)},
                 num_classes,
                 name};
}

// ---- IDX -------------------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace

Dataset load_idx(const fs::path& images, const fs::path& labels, std::size_t num_classes) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);

  if (img.size() < 4 || read_be32(img, 0) != kIdxImageMagic) {
    throw FormatError(FormatError::Kind::bad_magic, images.string() + ": not an IDX image file");
  }
  if (lab.size() < 4 || read_be32(lab, 0) != kIdxLabelMagic) {
    throw FormatError(FormatError::Kind::bad_magic, labels.string() + ": not an IDX label file");
  }
  if (img.size() < 16) throw FormatError(FormatError::Kind::truncated, images.string() + ": truncated header");
  if (lab.size() < 8) throw FormatError(FormatError::Kind::truncated, labels.string() + ": truncated header");

  const std::size_t n = read_be32(img, 4), rows = read_be32(img, 8), cols = read_be32(img, 12);
  const std::size_t n_labels = read_be32(lab, 4);
  const std::size_t dim = rows * cols;
  if (n == 0 || dim == 0) throw FormatError(FormatError::Kind::truncated, images.string() + ": empty image set");
  if (img.size() < 16 + n * dim) {
    throw FormatError(FormatError::Kind::truncated, images.string() + ": fewer pixels than the header declares");
  }
  if (lab.size() < 8 + n_labels) {
    throw FormatError(FormatError::Kind::truncated, labels.string() + ": fewer labels than the header declares");
  }
  if (n != n_labels) {
    throw FormatError(FormatError::Kind::count_mismatch, std::to_string(n) + " images but " +
                                                             std::to_string(n_labels) + " labels");
  }

  std::vector<double> x(n * dim);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(img[16 + i]) / 255.0;
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = lab[8 + i];
    if (y[i] >= num_classes) {
      throw FormatError(FormatError::Kind::count_mismatch, "label " + std::to_string(y[i]) + " exceeds class count");
    }
  }
  return Dataset{Tensor({n, dim}, std::move(x)), std::move(y), num_classes, images.stem().string()};
}

std::vector<fs::path> fashion_files(const fs::path& dir) {
  return {dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", dir / "t10k-images-idx3-ubyte",
          dir / "t10k-labels-idx1-ubyte"};
}

Dataset load_fashion(const fs::path& dir, Split split) {
  const auto files = fashion_files(dir);
  auto d = split == Split::train ? load_idx(files[0], files[1]) : load_idx(files[2], files[3]);
  d.name = split == Split::train ? "fashion-train" : "fashion-test";
  return d;
}

// ---- synthetic blobs ------------------------------------------------------------------

Dataset synthetic_blobs(std::size_t classes, std::size_t per_class, std::size_t dims, double spread,
                        std::uint64_t seed) {
  if (classes < 2 || per_class == 0 || dims == 0 || !(spread >= 0.0)) {
    throw ContractError("synthetic_blobs: needs >= 2 classes, samples, dimensions and a non-negative spread");
  }
  constexpr double kCenterScale = 4.0;
  std::vector<std::vector<double>> centers(classes, std::vector<double>(dims, 0.0));
  for (std::size_t k = 0; k < classes; ++k) {
    if (dims >= classes) {
      centers[k][k] = kCenterScale;
    } else {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
      centers[k][0] = kCenterScale * std::cos(angle);
      if (dims > 1) centers[k][1] = kCenterScale * std::sin(angle);
    }
  }

  const std::size_t n = classes * per_class;
  std::vector<double> x(n * dims);
  std::vector<std::size_t> y(n);
  Rng rng(derive_seed(seed, 0xb10b5));
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t k = 0; k < classes; ++k) {
      const auto row = i * classes + k;
      y[row] = k;
      for (std::size_t d = 0; d < dims; ++d) x[row * dims + d] = centers[k][d] + spread * rng.normal();
    }
  }
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  for (auto& v : x) v = span > 0.0 ? (v - lo) / span : 0.0;

  return Dataset{Tensor({n, dims}, std::move(x)), std::move(y), classes, "blobs"};
}

// ---- model files ------------------------------------------------------------------------

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void f64s(std::span<const double> v) {
    for (double d : v) f64(d);
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{s[i]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{s[i]} << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    const auto s = take(n);
    return {s.begin(), s.end()};
  }
  std::vector<double> f64s(std::size_t n) {
    if (n > remaining() / 8) fail();
    std::vector<double> v(n);
    for (auto& d : v) d = f64();
    return v;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) fail();
    const auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  [[noreturn]] static void fail() {
    throw FormatError(FormatError::Kind::corrupt_length, "model payload ends early");
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint8_t kQuantLayer = 0;
constexpr std::uint8_t kBinaryLayer = 1;
constexpr std::size_t kPreambleSize = sizeof(kModelMagic) + 4 + 8;

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& m) {
  m.validate();
  Writer p;
  p.str(m.architecture);
  p.u32(static_cast<std::uint32_t>(m.bits));
  p.f64(m.logit_scale);
  p.u64(m.seed);
  p.u32(static_cast<std::uint32_t>(m.layers.size()));
  for (const auto& layer : m.layers) {
    if (const auto* l = std::get_if<QuantFcLayer>(&layer)) {
      const auto s = l->scheme();
      p.u8(kQuantLayer);
      p.u8(l->activation == Activation::relu ? 1 : 0);
      p.u32(static_cast<std::uint32_t>(l->out_features()));
      p.u32(static_cast<std::uint32_t>(l->in_features()));
      p.f64s(l->weight.values());
      p.f64s(l->bias.values());
      p.u32(static_cast<std::uint32_t>(s.bits()));
      p.f64(s.v_min());
      p.f64(s.v_max());
    } else {
      const auto& b = std::get<BinFcLayer>(layer);
      p.u8(kBinaryLayer);
      p.u8(b.binary_output ? 1 : 0);
      p.u32(static_cast<std::uint32_t>(b.out_features()));
      p.u32(static_cast<std::uint32_t>(b.in_features()));
      p.f64s(b.weight.values());
      p.f64s(b.threshold.values());
      p.u32(1);
      p.f64(-1.0);
      p.f64(1.0);
    }
  }

  Writer out;
  for (char c : kModelMagic) out.u8(static_cast<std::uint8_t>(c));
  out.u32(kModelFormatVersion);
  out.u64(p.bytes().size());
  out.bytes().insert(out.bytes().end(), p.bytes().begin(), p.bytes().end());
  out.u64(fnv1a(p.bytes()));
  return std::move(out.bytes());
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kModelMagic) || std::memcmp(bytes.data(), kModelMagic, sizeof(kModelMagic)) != 0) {
    throw FormatError(FormatError::Kind::bad_magic, "not a model file");
  }
  if (bytes.size() < kPreambleSize) throw FormatError(FormatError::Kind::corrupt_length, "model header truncated");
  Reader pre(bytes.subspan(sizeof(kModelMagic)));
  const auto version = pre.u32();
  if (version != kModelFormatVersion) {
    throw FormatError(FormatError::Kind::version_mismatch,
                      "model format version " + std::to_string(version) + ", expected " +
                          std::to_string(kModelFormatVersion));
  }
  const auto length = pre.u64();
  if (bytes.size() != kPreambleSize + length + 8) {
    throw FormatError(FormatError::Kind::corrupt_length, "model file length does not match its header");
  }
  const auto payload = bytes.subspan(kPreambleSize, length);
  Reader tail(bytes.subspan(kPreambleSize + length));
  if (tail.u64() != fnv1a(payload)) throw FormatError(FormatError::Kind::checksum, "model checksum mismatch");

  Reader r(payload);
  Model m;
  m.architecture = r.str();
  m.bits = static_cast<int>(r.u32());
  m.logit_scale = r.f64();
  m.seed = r.u64();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto kind = r.u8();
    const auto flag = r.u8();
    const std::size_t out = r.u32(), in = r.u32();
    auto w = r.f64s(out * in);
    auto b = r.f64s(out);
    const auto scheme_bits = static_cast<int>(r.u32());
    r.f64();  // v_min and v_max are recomputed from the weights
    r.f64();
    if (out == 0 || in == 0) throw FormatError(FormatError::Kind::corrupt_length, "zero-sized layer");
    Tensor wt({out, in}, std::move(w), true);
    Tensor bt({out}, std::move(b), true);
    if (kind == kQuantLayer) {
      m.layers.emplace_back(
          QuantFcLayer{std::move(wt), std::move(bt), scheme_bits, flag ? Activation::relu : Activation::none});
    } else if (kind == kBinaryLayer) {
      m.layers.emplace_back(BinFcLayer{std::move(wt), std::move(bt), flag != 0});
    } else {
      throw FormatError(FormatError::Kind::corrupt_length, "unknown layer kind");
    }
  }
  if (r.remaining() != 0) throw FormatError(FormatError::Kind::corrupt_length, "trailing bytes in model payload");
  try {
    m.validate();
  } catch (const Error& e) {
    throw FormatError(FormatError::Kind::corrupt_length, std::string("inconsistent model: ") + e.what());
  }
  return m;
}

void save_model(const Model& m, const fs::path& path) {
  const auto bytes = serialize_model(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Model load_model(const fs::path& path) {
  const auto bytes = read_file(path);
  return deserialize_model(bytes);
}

// ---- CSV --------------------------------------------------------------------------------

std::string format_decimal(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace {

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::string& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw IoError(path.string() + ": expected header '" + header + "'");
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    rows.push_back(std::move(fields));
  }
  return rows;
}

double to_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw IoError("malformed number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw IoError("malformed number '" + s + "'");
  }
}

constexpr const char* kSweepHeader = "ber,trial,accuracy,mean_margin";
constexpr const char* kLogHeader = "epoch,loss,accuracy,mlm,lr";

}  // namespace

void write_results_csv(const BerSweepResult& result, const fs::path& path) {
  auto out = open_csv(path);
  out << kSweepHeader << '\n';
  for (const auto& r : result.rows) {
    out << format_decimal(r.ber) << ',' << r.trial << ',' << format_decimal(r.accuracy) << ','
        << format_decimal(r.mean_margin) << '\n';
  }
  finish(out, path);
}

void write_results_csv(std::span<const EpochStats> log, const fs::path& path) {
  auto out = open_csv(path);
  out << kLogHeader << '\n';
  for (const auto& e : log) {
    out << e.epoch << ',' << format_decimal(e.loss) << ',' << format_decimal(e.accuracy) << ','
        << format_decimal(e.mlm) << ',' << format_decimal(e.lr) << '\n';
  }
  finish(out, path);
}

void write_margins_csv(std::span<const MarginRecord> records, std::span<const std::size_t> labels,
                       const fs::path& path) {
  if (labels.size() != records.size()) throw ContractError("write_margins_csv: one label per record required");
  auto out = open_csv(path);
  out << "sample,label,predicted,margin\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    out << records[i].sample << ',' << labels[i] << ',' << records[i].predicted << ','
        << format_decimal(records[i].margin) << '\n';
  }
  finish(out, path);
}

std::vector<SweepRow> read_sweep_csv(const fs::path& path) {
  std::vector<SweepRow> rows;
  for (const auto& f : read_csv(path, kSweepHeader)) {
    if (f.size() != 4) throw IoError(path.string() + ": expected 4 columns");
    rows.push_back({to_double(f[0]), static_cast<std::size_t>(to_double(f[1])), to_double(f[2]), to_double(f[3])});
  }
  return rows;
}

std::vector<EpochStats> read_training_log_csv(const fs::path& path) {
  std::vector<EpochStats> rows;
  for (const auto& f : read_csv(path, kLogHeader)) {
    if (f.size() != 5) throw IoError(path.string() + ": expected 5 columns");
    rows.push_back({static_cast<std::size_t>(to_double(f[0])), to_double(f[1]), to_double(f[2]), to_double(f[3]),
                    to_double(f[4])});
  }
  return rows;
}

// ---- plot script ------------------------------------------------------------------------

namespace {

std::string py_string(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\\' || c == '\'') out += '\\';
    out += c;
  }
  return out + "'";
}

}  // namespace

std::string emit_plot_script(std::span<const fs::path> csvs, const fs::path& output) {
  if (csvs.empty()) throw ContractError("emit_plot_script: no CSV files given");
  for (const auto& p : csvs) {
    if (!fs::exists(p)) throw IoError("missing csv " + p.string());
  }
  std::ostringstream os;
  os << "#!/usr/bin/env python3\n"
        "# Mean accuracy over bit error rate, one curve per sweep CSV.\n"
        "import csv\n"
        "import os\n"
        "from collections import defaultdict\n"
        "import matplotlib\n"
        "matplotlib.use('Agg')\n"
        "import matplotlib.pyplot as plt\n\n"
        "CURVES = [\n";
  for (const auto& p : csvs) {
    os << "    (" << py_string(p.stem().string()) << ", " << py_string(fs::absolute(p).string()) << "),\n";
  }
  os << "]\n\n"
        "def mean_by_ber(path):\n"
        "    acc = defaultdict(list)\n"
        "    with open(path, newline='') as f:\n"
        "        for row in csv.DictReader(f):\n"
        "            acc[float(row['ber'])].append(float(row['accuracy']))\n"
        "    bers = sorted(b for b in acc if b > 0)\n"
        "    return bers, [sum(acc[b]) / len(acc[b]) for b in bers]\n\n"
        "fig, ax = plt.subplots(figsize=(5, 3.5))\n"
        "for label, path in CURVES:\n"
        "    x, y = mean_by_ber(path)\n"
        "    ax.plot(x, y, marker='o', label=label)\n"
        "ax.set_xscale('log')\n"
        "ax.set_xlabel('bit error rate')\n"
        "ax.set_ylabel('accuracy')\n"
        "ax.grid(True, which='both', alpha=0.3)\n"
        "ax.legend()\n"
        "fig.tight_layout()\n"
        "fig.savefig(os.path.join(os.path.dirname(os.path.abspath(__file__)), 'accuracy_vs_ber.png'))\n";
  const auto text = os.str();
  std::ofstream out(output, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + output.string());
  out << text;
  if (!out) throw IoError("write failed for " + output.string());
  return text;
}

}  // namespace mcel
