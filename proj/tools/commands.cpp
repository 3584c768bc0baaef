#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>

#include "mcel/data_io.hpp"
#include "mcel/errors.hpp"
#include "mcel/fault_injection.hpp"
#include "mcel/metrics.hpp"
#include "mcel/network.hpp"
#include "mcel/quantization.hpp"

namespace mcel::cli {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void ensure_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

TrainConfig train_config(const RunConfig& cfg) {
  return TrainConfig{cfg.epochs, cfg.batch_size, cfg.lr, cfg.step_size, cfg.gamma, cfg.seed};
}

}  // namespace

LossSpec RunConfig::loss_spec() const {
  const double m = margin.value_or(loss == LossKind::hinge ? 1.0 : 0.0);
  return LossSpec{loss, m, bound};
}

void RunConfig::validate() const {
  try {
    if (dataset != "fashion" && dataset != "blobs") throw UsageError("--dataset must be fashion or blobs");
    if (!valid_bit_width(bits)) throw UsageError("--bits must be 1, 2, 4 or 8");
    if (!(logit_scale > 0.0) || !std::isfinite(logit_scale)) throw UsageError("--logit-scale must be positive");
    loss_spec().validate();
    train_config(*this).validate();
    for (double p : bers) ErrorModel{p}.validate();
    if (trials == 0) throw UsageError("--trials must be positive");
    if (blob_classes < 2 || blob_per_class == 0 || blob_dims == 0 || !(blob_spread >= 0.0)) {
      throw UsageError("invalid blobs parameters");
    }
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
}

Dataset load_dataset(const RunConfig& cfg, bool train) {
  if (cfg.dataset == "blobs") {
    auto d = synthetic_blobs(cfg.blob_classes, cfg.blob_per_class, cfg.blob_dims, cfg.blob_spread,
                             train ? cfg.data_seed : derive_seed(cfg.data_seed, 0x7e57));
    d.name = train ? "blobs-train" : "blobs-test";
    return d;
  }
  const char* root = std::getenv("MCEL_DATA_DIR");
  if (root == nullptr || *root == '\0') throw IoError("MCEL_DATA_DIR is not set\n" + fashion_manifest("$MCEL_DATA_DIR"));
  for (const auto& f : fashion_files(root)) {
    if (!fs::exists(f)) throw IoError("missing " + f.string() + "\n" + fashion_manifest(root));
  }
  return load_fashion(root, train ? Split::train : Split::test);
}

std::string fashion_manifest(const fs::path& dir) {
  // Uncompressed sizes, and MD5 of the gzip archives as published upstream.
  struct Entry {
    const char* size;
    const char* md5;
  };
  static constexpr Entry entries[] = {{"47040016", "8d4fb7e6c68d591d4c3dfef9ec88bf0d"},
                                      {"60008", "25c81989df183df01b3e8a0aad5dffbe"},
                                      {"7840016", "bef4ecab320f06d8554ea6380940ec79"},
                                      {"10008", "bb300cfdad3c16e7a12a480ee83cd310"}};
  std::string text = "expected FashionMNIST IDX files (gunzipped):\n";
  const auto files = fashion_files(dir);
  for (std::size_t i = 0; i < files.size(); ++i) {
    text += "  " + files[i].string() + "  " + entries[i].size + " bytes  (.gz md5 " + entries[i].md5 + ")\n";
  }
  return text;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const auto spec = cfg.loss_spec();
  for (const auto& w : spec.warnings()) out << "warning: " << w << '\n';

  const auto train_data = load_dataset(cfg, true);
  const auto test_data = load_dataset(cfg, false);
  ensure_out_dir(cfg.out);

  Model m = make_fc_mlp3(train_data.dim(), train_data.num_classes, cfg.bits, cfg.seed, cfg.logit_scale);
  out << "training " << m.architecture << " bits=" << cfg.bits << " loss=" << to_string(spec.kind)
      << " m=" << spec.margin << " L=" << spec.bound << " on " << train_data.name << " (" << train_data.size()
      << " samples)\n";

  const auto log = train(m, train_data, train_config(cfg), spec, [&](const EpochStats& e) {
    out << "epoch " << e.epoch << " loss " << fixed(e.loss) << " acc " << fixed(e.accuracy) << " mlm "
        << fixed(e.mlm) << " lr " << format_decimal(e.lr) << '\n';
  });

  save_model(m, cfg.out / kModelFile);
  write_results_csv(std::span<const EpochStats>(log), cfg.out / kTrainLogFile);
  out << "test accuracy " << fixed(accuracy(m, test_data)) << '\n';
  out << "wrote " << (cfg.out / kModelFile).string() << " and " << (cfg.out / kTrainLogFile).string() << '\n';
  return kExitOk;
}

int cmd_eval_ber(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  if (cfg.model.empty()) throw UsageError("--model is required");
  const Model m = load_model(cfg.model);
  const auto data = load_dataset(cfg, false);
  ensure_out_dir(cfg.out);

  const auto bers = cfg.bers.empty() ? default_ber_grid() : cfg.bers;
  const auto result = ber_sweep(m, data, bers, cfg.trials, cfg.seed, cfg.threads);
  const auto csv = cfg.out / kSweepFile;
  write_results_csv(result, csv);
  const std::vector<fs::path> curves{csv};
  emit_plot_script(curves, cfg.out / kPlotScriptFile);

  out << "ber        mean_accuracy\n";
  for (const auto& [ber, acc] : result.mean_accuracy_by_ber()) {
    char line[64];
    std::snprintf(line, sizeof line, "%-10s %.4f\n", format_decimal(ber).c_str(), acc);
    out << line;
  }
  out << "wrote " << csv.string() << '\n';
  return kExitOk;
}

int cmd_margins(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  if (cfg.model.empty()) throw UsageError("--model is required");
  const Model m = load_model(cfg.model);
  const auto data = load_dataset(cfg, false);
  ensure_out_dir(cfg.out);

  const auto records = margin_records(freeze(m), data);
  write_margins_csv(records, data.labels, cfg.out / kMarginsFile);

  const auto [lo, hi] = std::minmax_element(records.begin(), records.end(),
                                            [](const auto& a, const auto& b) { return a.margin < b.margin; });
  const double mean = mlm(records);
  std::ofstream summary(cfg.out / kMarginsSummaryFile, std::ios::binary | std::ios::trunc);
  if (!summary) throw IoError("cannot write " + (cfg.out / kMarginsSummaryFile).string());
  summary << "count " << records.size() << '\n'
          << "mean " << format_decimal(mean) << '\n'
          << "min " << format_decimal(lo->margin) << '\n'
          << "max " << format_decimal(hi->margin) << '\n';
  if (!summary) throw IoError("write failed for " + (cfg.out / kMarginsSummaryFile).string());

  out << "samples " << records.size() << " mlm " << format_decimal(mean) << " min " << format_decimal(lo->margin)
      << " max " << format_decimal(hi->margin) << '\n';
  return kExitOk;
}

int cmd_flip_demo(const RunConfig& cfg, std::ostream& out) {
  if (cfg.bits < 2 || !valid_bit_width(cfg.bits)) throw UsageError("flip-demo needs --bits 2, 4 or 8");
  const QuantScheme s(cfg.bits, -1.0, 1.0);
  if (cfg.flip_code && *cfg.flip_code > s.max_code()) {
    throw UsageError("--code must be at most " + std::to_string(s.max_code()));
  }
  if (cfg.flip_bit && (*cfg.flip_bit < 0 || *cfg.flip_bit >= cfg.bits)) {
    throw UsageError("--bit must lie in [0, " + std::to_string(cfg.bits - 1) + "]");
  }

  std::vector<Code> codes;
  if (cfg.flip_code) {
    codes.push_back(*cfg.flip_code);
  } else {
    for (Code c = 0; c <= s.max_code(); ++c) codes.push_back(c);
  }
  std::vector<int> positions;
  if (cfg.flip_bit) {
    positions.push_back(*cfg.flip_bit);
  } else {
    for (int i = 0; i < cfg.bits; ++i) positions.push_back(i);
  }

  out << "bits " << cfg.bits << " range [-1, 1] delta " << format_decimal(s.delta()) << '\n';
  out << "code  bit  flipped  value      flipped_value  |delta|    2^i*delta  ok\n";
  std::size_t failures = 0;
  // Values are formed as v_min + c * delta, so the difference can pick up
  // one rounding step; anything beyond that is a genuine violation.
  const double tol = 8.0 * std::numeric_limits<double>::epsilon();
  for (Code c : codes) {
    for (int i : positions) {
      const Code f = c ^ (Code{1} << i);
      const double before = dequantize(c, s), after = dequantize(f, s);
      const double delta = std::abs(after - before);
      const double law = std::ldexp(s.delta(), i);
      const bool ok = std::abs(delta - law) <= tol * std::max(1.0, law) &&
                      delta <= std::ldexp(s.delta(), cfg.bits - 1) * (1.0 + tol);
      failures += ok ? 0 : 1;
      char line[160];
      std::snprintf(line, sizeof line, "%-5u %-4d %-8u %-10.6f %-14.6f %-10.6f %-10.6f %s\n", c, i, f, before,
                    after, delta, law, ok ? "yes" : "NO");
      out << line;
    }
  }
  out << (failures == 0 ? "all flips satisfy |delta| = 2^i * delta\n"
                        : std::to_string(failures) + " flips violate |delta| = 2^i * delta\n");
  return failures == 0 ? kExitOk : kExitFailure;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Margin cross-entropy training and bit error evaluation for quantized MLPs", "mcel"};
  app.require_subcommand(1);
  RunConfig cfg;
  std::string loss_name = "cel";

  const auto add_data = [&](CLI::App* c) {
    c->add_option("--dataset", cfg.dataset, "fashion (reads MCEL_DATA_DIR) or blobs")->capture_default_str();
    c->add_option("--blob-classes", cfg.blob_classes)->capture_default_str();
    c->add_option("--blob-per-class", cfg.blob_per_class)->capture_default_str();
    c->add_option("--blob-dims", cfg.blob_dims)->capture_default_str();
    c->add_option("--blob-spread", cfg.blob_spread)->capture_default_str();
    c->add_option("--data-seed", cfg.data_seed, "seed of the synthetic data")->capture_default_str();
    c->add_option("--out", cfg.out, "output directory")->capture_default_str();
  };

  auto* train_cmd = app.add_subcommand("train", "train a model and write model.bin and train_log.csv");
  add_data(train_cmd);
  train_cmd->add_option("--bits", cfg.bits, "weight bit width; 1 trains the binarized network")->capture_default_str();
  train_cmd->add_option("--loss", loss_name, "cel | celm | mcel | hinge")->capture_default_str();
  train_cmd->add_option("--m", cfg.margin, "margin (default 0, or 1 for hinge)");
  train_cmd->add_option("--L", cfg.bound, "tanh bound of mcel")->capture_default_str();
  train_cmd->add_option("--logit-scale", cfg.logit_scale, "constant multiplying raw logits")->capture_default_str();
  train_cmd->add_option("--epochs,--ep", cfg.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size,--bs", cfg.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", cfg.lr)->capture_default_str();
  train_cmd->add_option("--step-size,--ss", cfg.step_size, "epochs between learning rate decays")
      ->capture_default_str();
  train_cmd->add_option("--gamma", cfg.gamma, "learning rate decay factor")->capture_default_str();
  train_cmd->add_option("--seed", cfg.seed)->capture_default_str();

  auto* eval_cmd = app.add_subcommand("eval-ber", "bit error sweep of a saved model; writes ber_sweep.csv");
  add_data(eval_cmd);
  eval_cmd->add_option("--model", cfg.model)->required();
  eval_cmd->add_option("--bers", cfg.bers, "comma separated bit error rates")->delimiter(',');
  eval_cmd->add_option("--trials", cfg.trials)->capture_default_str();
  eval_cmd->add_option("--seed", cfg.seed, "master seed of the flip patterns")->capture_default_str();
  eval_cmd->add_option("--threads", cfg.threads, "0 uses every core")->capture_default_str();

  auto* margins_cmd = app.add_subcommand("margins", "per-sample top-2 margins; writes margins.csv");
  add_data(margins_cmd);
  margins_cmd->add_option("--model", cfg.model)->required();

  auto* flip_cmd = app.add_subcommand("flip-demo", "value change of single bit flips in n-bit codes");
  flip_cmd->add_option("--bits", cfg.bits)->capture_default_str();
  flip_cmd->add_option("--code", cfg.flip_code, "code to flip (default: every code)");
  flip_cmd->add_option("--bit", cfg.flip_bit, "bit position (default: every position)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    cfg.loss = parse_loss_kind(loss_name);
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(cfg, out);
    if (eval_cmd->parsed()) return cmd_eval_ber(cfg, out);
    if (margins_cmd->parsed()) return cmd_margins(cfg, out);
    return cmd_flip_demo(cfg, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace mcel::cli
