#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include "mcel/data_io.hpp"
#include "mcel/errors.hpp"
#include "test_util.hpp"

namespace mcel {
namespace {

namespace fs = std::filesystem;

class DataIo : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::path(::testing::TempDir()) / (std::string("mcel_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) const {
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }

  static std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  }

  static std::string read_text(const fs::path& p) {
    std::ifstream f(p);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  }

  fs::path dir_;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

// Two 2x2 images and their labels.
std::vector<std::uint8_t> tiny_images() {
  std::vector<std::uint8_t> b;
  put_u32(b, kIdxImageMagic);
  put_u32(b, 2);
  put_u32(b, 2);
  put_u32(b, 2);
  for (std::uint8_t v : {0, 255, 51, 0, 255, 255, 0, 102}) b.push_back(v);
  return b;
}

std::vector<std::uint8_t> tiny_labels(std::uint32_t count = 2) {
  std::vector<std::uint8_t> b;
  put_u32(b, kIdxLabelMagic);
  put_u32(b, count);
  for (std::uint32_t i = 0; i < count; ++i) b.push_back(static_cast<std::uint8_t>(7 + i));
  return b;
}

FormatError::Kind idx_error_kind(const fs::path& images, const fs::path& labels) {
  try {
    load_idx(images, labels);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no FormatError";
  return FormatError::Kind::checksum;
}

FormatError::Kind model_error_kind(std::span<const std::uint8_t> bytes) {
  try {
    deserialize_model(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no FormatError";
  return FormatError::Kind::truncated;
}

TEST_F(DataIo, IdxTinyFile) {
  write_bytes(path("img"), tiny_images());
  write_bytes(path("lbl"), tiny_labels());
  const auto d = load_idx(path("img"), path("lbl"));
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.dim(), 4u);
  EXPECT_EQ(d.num_classes, 10u);
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{7, 8}));
  EXPECT_EQ(d.inputs.at(0, 0), 0.0);
  EXPECT_EQ(d.inputs.at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(d.inputs.at(0, 2), 0.2);
  EXPECT_DOUBLE_EQ(d.inputs.at(1, 3), 0.4);
}

TEST_F(DataIo, IdxErrorKinds) {
  write_bytes(path("lbl"), tiny_labels());

  auto bad = tiny_images();
  bad[3] = 0x02;
  write_bytes(path("bad"), bad);
  EXPECT_EQ(idx_error_kind(path("bad"), path("lbl")), FormatError::Kind::bad_magic);

  auto cut = tiny_images();
  cut.resize(cut.size() - 1);
  write_bytes(path("cut"), cut);
  EXPECT_EQ(idx_error_kind(path("cut"), path("lbl")), FormatError::Kind::truncated);

  write_bytes(path("img"), tiny_images());
  write_bytes(path("lbl3"), tiny_labels(3));
  EXPECT_EQ(idx_error_kind(path("img"), path("lbl3")), FormatError::Kind::count_mismatch);

  EXPECT_THROW(load_idx(path("missing"), path("lbl")), IoError);
}

TEST_F(DataIo, FashionMnistShapes) {
  const char* env = std::getenv("MCEL_DATA_DIR");
  if (env == nullptr || !fs::exists(fs::path(env) / "train-images-idx3-ubyte")) {
    GTEST_SKIP() << "MCEL_DATA_DIR not set";
  }
  const auto train = load_fashion(env, Split::train);
  EXPECT_EQ(train.size(), 60000u);
  EXPECT_EQ(train.dim(), 784u);
  EXPECT_EQ(train.num_classes, 10u);
  const auto test = load_fashion(env, Split::test);
  EXPECT_EQ(test.size(), 10000u);
  for (double v : test.inputs.values()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST_F(DataIo, BlobsReproducible) {
  const auto a = synthetic_blobs(5, 20, 7, 0.6, 11);
  const auto b = synthetic_blobs(5, 20, 7, 0.6, 11);
  const auto c = synthetic_blobs(5, 20, 7, 0.6, 12);
  EXPECT_EQ(testing::to_vector(a.inputs), testing::to_vector(b.inputs));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(testing::to_vector(a.inputs), testing::to_vector(c.inputs));
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(a.size(), 100u);
  for (double v : a.inputs.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST_F(DataIo, BlobsZeroSpreadCollapsesToCenters) {
  for (std::size_t dims : {2u, 6u}) {
    const auto d = synthetic_blobs(4, 10, dims, 0.0, 3);
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t j = 0; j < d.size(); ++j) {
        const auto a = d.row(i), b = d.row(j);
        const bool same = std::equal(a.begin(), a.end(), b.begin());
        EXPECT_EQ(same, d.labels[i] == d.labels[j]);
      }
  }
}

TEST_F(DataIo, BlobsLinearlySeparable) {
  const auto train_set = synthetic_blobs(10, 100, 20, 0.5, 5);
  const auto test_set = synthetic_blobs(10, 50, 20, 0.5, 6);
  auto m = make_mlp(20, {}, 10, 8, 1);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 32;
  cfg.lr = 1e-2;
  train(m, train_set, cfg, LossSpec{});
  EXPECT_GE(accuracy(m, test_set), 0.9);
}

TEST_F(DataIo, ModelRoundTripBitExact) {
  for (int bits : {1, 2, 4, 8}) {
    const auto m = make_fc_mlp3(12, 3, bits, 21, 2.5);
    const auto bytes = serialize_model(m);
    const auto back = deserialize_model(bytes);
    EXPECT_EQ(serialize_model(back), bytes);
    EXPECT_EQ(back.architecture, m.architecture);
    EXPECT_EQ(back.bits, bits);
    EXPECT_EQ(back.logit_scale, 2.5);
    EXPECT_EQ(back.parameter_count(), parameter_count_for(parse_architecture(m.architecture)));
    Rng rng(bits);
    const auto x = testing::random_tensor({5, 12}, rng, 0, 1);
    EXPECT_EQ(testing::to_vector(freeze(back).forward(x)), testing::to_vector(freeze(m).forward(x)));
  }
}

TEST_F(DataIo, ModelFileRoundTrip) {
  const auto m = make_fc_mlp3(6, 2, 4, 3);
  save_model(m, path("m.bin"));
  EXPECT_EQ(serialize_model(load_model(path("m.bin"))), serialize_model(m));
  EXPECT_EQ(read_bytes(path("m.bin")), serialize_model(m));
  EXPECT_THROW(load_model(path("nope.bin")), IoError);
}

TEST_F(DataIo, ModelCorruptionDetected) {
  const auto good = serialize_model(make_fc_mlp3(6, 2, 4, 3));

  auto cut = good;
  cut.resize(cut.size() / 2);
  EXPECT_EQ(model_error_kind(cut), FormatError::Kind::corrupt_length);

  auto flipped = good;
  flipped[good.size() / 2] ^= 0x10;
  EXPECT_EQ(model_error_kind(flipped), FormatError::Kind::checksum);

  auto version = good;
  version[8] = 9;
  EXPECT_EQ(model_error_kind(version), FormatError::Kind::version_mismatch);

  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(model_error_kind(magic), FormatError::Kind::bad_magic);

  EXPECT_EQ(model_error_kind(std::span(good).first(4)), FormatError::Kind::bad_magic);
  EXPECT_EQ(model_error_kind(std::span(good).first(12)), FormatError::Kind::corrupt_length);
}

TEST_F(DataIo, FormatDecimal) {
  EXPECT_EQ(format_decimal(0.0), "0");
  EXPECT_EQ(format_decimal(0.0025), "0.0025");
  EXPECT_EQ(format_decimal(1.0 / 3.0), "0.333333");
  EXPECT_EQ(format_decimal(123456789.0), "1.23457e+08");
}

TEST_F(DataIo, EmptySweepIsHeaderOnly) {
  write_results_csv(BerSweepResult{}, path("s.csv"));
  EXPECT_EQ(read_text(path("s.csv")), "ber,trial,accuracy,mean_margin\n");
  EXPECT_TRUE(read_sweep_csv(path("s.csv")).empty());
}

TEST_F(DataIo, SweepCsvRoundTrip) {
  BerSweepResult r;
  r.rows = {{0.0, 0, 0.875, 1.5}, {0.0, 1, 0.875, 1.5}, {0.01, 0, 0.5, 0.25}, {0.01, 1, 0.625, 0.125}};
  write_results_csv(r, path("s.csv"));
  const auto text = read_text(path("s.csv"));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
  const auto back = read_sweep_csv(path("s.csv"));
  ASSERT_EQ(back.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back[i].ber, r.rows[i].ber);
    EXPECT_EQ(back[i].trial, r.rows[i].trial);
    EXPECT_EQ(back[i].accuracy, r.rows[i].accuracy);
    EXPECT_EQ(back[i].mean_margin, r.rows[i].mean_margin);
  }
}

TEST_F(DataIo, TrainingLogCsvRoundTrip) {
  const std::vector<EpochStats> log{{1, 2.5, 0.5, 0.75, 0.001}, {2, 1.25, 0.625, 1.5, 0.0005}};
  write_results_csv(log, path("log.csv"));
  EXPECT_EQ(read_text(path("log.csv")).substr(0, 25), "epoch,loss,accuracy,mlm,l");
  const auto back = read_training_log_csv(path("log.csv"));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].epoch, 2u);
  EXPECT_EQ(back[1].lr, 0.0005);
  EXPECT_EQ(back[0].mlm, 0.75);
}

TEST_F(DataIo, MarginsCsv) {
  const std::vector<MarginRecord> recs{{0, 1, 0.5, {}}, {1, 0, 2.0, {}}};
  const std::vector<std::size_t> labels{1, 1};
  write_margins_csv(recs, labels, path("m.csv"));
  EXPECT_EQ(read_text(path("m.csv")), "sample,label,predicted,margin\n0,1,1,0.5\n1,1,0,2\n");
}

TEST_F(DataIo, PlotScript) {
  BerSweepResult r;
  r.rows = {{0.0, 0, 0.9, 1.0}, {0.01, 0, 0.7, 0.5}, {0.1, 0, 0.3, 0.1}};
  write_results_csv(r, path("cel.csv"));
  r.rows[1].accuracy = 0.85;
  write_results_csv(r, path("mcel.csv"));
  const std::vector<fs::path> csvs{path("cel.csv"), path("mcel.csv")};
  const auto script = emit_plot_script(csvs, path("plot.py"));
  EXPECT_EQ(read_text(path("plot.py")), script);
  EXPECT_NE(script.find("('cel', '" + path("cel.csv").string() + "')"), std::string::npos);
  EXPECT_NE(script.find("('mcel', '" + path("mcel.csv").string() + "')"), std::string::npos);
  EXPECT_NE(script.find("accuracy_vs_ber.png"), std::string::npos);

  const std::vector<fs::path> missing{path("absent.csv")};
  EXPECT_THROW(emit_plot_script(missing, path("p2.py")), IoError);
  EXPECT_THROW(emit_plot_script({}, path("p3.py")), ContractError);

  if (std::system("python3 -c 'import matplotlib' >/dev/null 2>&1") != 0) GTEST_SKIP() << "matplotlib unavailable";
  const auto cmd = "MPLBACKEND=Agg python3 " + path("plot.py").string() + " >/dev/null 2>&1";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(path("accuracy_vs_ber.png")));
}

}  // namespace
}  // namespace mcel
