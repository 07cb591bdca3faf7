// binrep command-line front end. Links only the C interface.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "binrep/binrep.h"

namespace fs = std::filesystem;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(br_status s, const std::string& what) {
  if (s != BR_OK) {
    throw Failure(what + ": " + br_status_name(s) + ": " + br_last_error());
  }
}

struct DatasetDeleter {
  void operator()(br_dataset* d) const { br_dataset_free(d); }
};
struct NetworkDeleter {
  void operator()(br_network* n) const { br_network_free(n); }
};
struct PackedDeleter {
  void operator()(br_packed_model* m) const { br_packed_free(m); }
};
using DatasetPtr = std::unique_ptr<br_dataset, DatasetDeleter>;
using NetworkPtr = std::unique_ptr<br_network, NetworkDeleter>;
using PackedPtr = std::unique_ptr<br_packed_model, PackedDeleter>;

struct RunConfig {
  std::string dataset = "mnist";
  std::string data_dir;
  std::string preset;  // defaults per dataset
  double width_mult = 1.0;
  std::string binarize_layers = "last";
  std::uint64_t seed = 1;
  std::string out = ".";
  std::size_t limit_train = 0;
  std::size_t limit_test = 0;

  br_train_config train{};
  std::string mode = "step";
  std::string checkpoint;
  std::string model;
  int epochs = 1;

  std::size_t layer = SIZE_MAX;
  std::string split = "val";
  std::size_t val_size = 5000;
  double tau_pos = 0.95;
  double tau_neg = 0.05;
  double min_binary = 0.999;
};

void add_common(CLI::App* cmd, RunConfig& c, bool needs_net) {
  cmd->add_option("--dataset", c.dataset, "mnist or cifar10")
      ->check(CLI::IsMember({"mnist", "cifar10"}))
      ->capture_default_str();
  cmd->add_option("--data-dir", c.data_dir, "dataset root (default: $BINREP_DATA_DIR)");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--limit-train", c.limit_train, "use only the first N training samples");
  cmd->add_option("--limit-test", c.limit_test, "use only the first N test samples");
  if (!needs_net) return;
  cmd->add_option("--preset", c.preset, "lenet-small, mnist-mlp or cifar-quick");
  cmd->add_option("--width-mult", c.width_mult, "channel multiplier")->capture_default_str();
  cmd->add_option("--binarize-layers", c.binarize_layers,
                  "last, all, none, or one 0/1 per activation slot")
      ->capture_default_str();
  cmd->add_option("--seed", c.seed, "RNG seed")->capture_default_str();
}

void add_solver(CLI::App* cmd, RunConfig& c) {
  auto& t = c.train;
  cmd->add_option("--phase1-lambda", t.phase1_lambda)->capture_default_str();
  cmd->add_option("--phase2-lambda", t.phase2_lambda)->capture_default_str();
  cmd->add_option("--epochs1", t.phase1_epochs)->capture_default_str();
  cmd->add_option("--epochs2", t.phase2_epochs)->capture_default_str();
  cmd->add_option("--growth-cap", t.growth_cap)->capture_default_str();
  cmd->add_option("--lr", t.learning_rate)->capture_default_str();
  cmd->add_option("--momentum", t.momentum)->capture_default_str();
  cmd->add_option("--weight-decay", t.weight_decay)->capture_default_str();
  cmd->add_option("--batch-size", t.batch_size)->capture_default_str();
  cmd->add_option("--lr-step", t.lr_step_epochs, "epochs between lr decays (0: off)")
      ->capture_default_str();
  cmd->add_option("--lr-gamma", t.lr_gamma)->capture_default_str();
  cmd->add_option("--telemetry-samples", t.telemetry_samples,
                  "evaluation samples used for per-epoch telemetry (0: all)")
      ->capture_default_str();
}

std::string data_root(const RunConfig& c) {
  std::string dir = c.data_dir;
  if (dir.empty()) {
    if (const char* env = std::getenv("BINREP_DATA_DIR")) dir = env;
  }
  if (dir.empty()) throw Failure("no data directory: pass --data-dir or set BINREP_DATA_DIR");
  if (!fs::is_directory(dir)) throw Failure("data directory not found: " + dir);
  const fs::path sub = c.dataset == "mnist" ? "mnist" : "cifar-10-batches-bin";
  if (fs::is_directory(fs::path(dir) / sub)) return (fs::path(dir) / sub).string();
  return dir;
}

struct Data {
  DatasetPtr train;
  DatasetPtr test;
};

Data load_data(const RunConfig& c) {
  br_dataset* train = nullptr;
  br_dataset* test = nullptr;
  check(br_dataset_load(c.dataset.c_str(), data_root(c).c_str(), &train, &test), "loading data");
  Data d{DatasetPtr(train), DatasetPtr(test)};
  if (c.limit_train) check(br_dataset_truncate(d.train.get(), c.limit_train), "--limit-train");
  if (c.limit_test) check(br_dataset_truncate(d.test.get(), c.limit_test), "--limit-test");
  return d;
}

NetworkPtr make_network(const RunConfig& c) {
  const std::string preset =
      !c.preset.empty() ? c.preset : (c.dataset == "mnist" ? "lenet-small" : "cifar-quick");
  br_network* n = nullptr;
  check(br_network_create(preset.c_str(), c.width_mult, c.binarize_layers.c_str(), c.seed, &n),
        "building network");
  return NetworkPtr(n);
}

std::string out_path(const RunConfig& c, const std::string& name) {
  fs::create_directories(c.out);
  return (fs::path(c.out) / name).string();
}

std::string checkpoint_path(const RunConfig& c) {
  return c.checkpoint.empty() ? out_path(c, "model.brck") : c.checkpoint;
}

NetworkPtr load_network(const RunConfig& c) {
  auto net = make_network(c);
  check(br_network_load(net.get(), checkpoint_path(c).c_str()), "loading checkpoint");
  return net;
}

br_mode parse_mode(const std::string& m) { return m == "linear" ? BR_MODE_LINEAR : BR_MODE_STEP; }

void write_eval_csv(const std::string& path, const std::string& mode, const br_eval_result& r) {
  std::ofstream f(path, std::ios::trunc);
  f.precision(10);
  f << "mode,accuracy,loss,samples\n" << mode << ',' << r.accuracy << ',' << r.loss << ','
    << r.samples << '\n';
  if (!f) throw Failure("failed writing " + path);
}

void write_predictions(const std::string& path, const std::vector<int>& preds) {
  std::ofstream f(path, std::ios::trunc);
  f << "index,prediction\n";
  for (std::size_t i = 0; i < preds.size(); ++i) f << i << ',' << preds[i] << '\n';
  if (!f) throw Failure("failed writing " + path);
}

int cmd_train(RunConfig& c) {
  auto data = load_data(c);
  auto net = make_network(c);
  const auto epochs_csv = out_path(c, "epochs.csv");
  const auto curve_csv = out_path(c, "binarization.csv");
  c.train.seed = c.seed;
  c.train.epoch_csv = epochs_csv.c_str();
  c.train.binarization_csv = curve_csv.c_str();
  c.train.verbose = 1;
  check(br_train(net.get(), data.train.get(), data.test.get(), &c.train), "training");
  const auto ckpt = checkpoint_path(c);
  check(br_network_save(net.get(), ckpt.c_str()), "saving checkpoint");
  br_eval_result r{};
  check(br_evaluate(net.get(), data.test.get(), BR_MODE_STEP, &r, nullptr), "evaluating");
  std::printf("step-mode test accuracy %.4f\nwrote %s, %s, %s\n", r.accuracy, ckpt.c_str(),
              epochs_csv.c_str(), curve_csv.c_str());
  return 0;
}

int cmd_eval(RunConfig& c) {
  auto data = load_data(c);
  auto net = load_network(c);
  br_eval_result r{};
  check(br_evaluate(net.get(), data.test.get(), parse_mode(c.mode), &r, nullptr), "evaluating");
  write_eval_csv(out_path(c, "eval_" + c.mode + ".csv"), c.mode, r);
  std::printf("%s-mode accuracy %.4f loss %.4f on %zu samples\n", c.mode.c_str(), r.accuracy,
              r.loss, r.samples);
  return 0;
}

int cmd_finetune(RunConfig& c, bool ternarize) {
  auto data = load_data(c);
  auto net = load_network(c);
  c.train.seed = c.seed;
  if (ternarize) {
    check(br_ternarize(net.get(), data.train.get(), &c.train, c.epochs), "ternarizing");
  } else {
    check(br_finetune_head(net.get(), data.train.get(), &c.train, c.epochs), "finetuning head");
  }
  const auto path = out_path(c, ternarize ? "model_ternary.brck" : "model_finetuned.brck");
  check(br_network_save(net.get(), path.c_str()), "saving checkpoint");
  br_eval_result r{};
  check(br_evaluate(net.get(), data.test.get(), BR_MODE_STEP, &r, nullptr), "evaluating");
  std::printf("step-mode test accuracy %.4f\nwrote %s\n", r.accuracy, path.c_str());
  return 0;
}

int cmd_analyze(RunConfig& c) {
  auto data = load_data(c);
  auto net = load_network(c);
  DatasetPtr val;
  const br_dataset* target = data.test.get();
  if (c.split == "val") {
    br_dataset* v = nullptr;
    check(br_dataset_split_validation(data.train.get(), c.val_size, &v), "validation split");
    val.reset(v);
    target = val.get();
  } else if (c.split == "train") {
    target = data.train.get();
  }
  std::size_t layer = c.layer;
  if (layer == SIZE_MAX) {
    check(br_network_num_rectifiers(net.get(), &layer), "counting rectifiers");
    if (layer == 0) throw Failure("network has no bounded rectifiers");
    --layer;
  }
  const auto curve = out_path(c, "binarization_" + c.split + ".csv");
  check(br_binarization_csv(net.get(), target, curve.c_str()), "binarization report");
  const auto firing = out_path(c, "firing.csv");
  const auto report = out_path(c, "splits.txt");
  std::size_t units = 0;
  check(br_analyze(net.get(), target, layer, c.min_binary, c.tau_pos, c.tau_neg, firing.c_str(),
                   report.c_str(), &units),
        "analysis");
  std::printf("%zu units separate positive from negative classes\nwrote %s, %s, %s\n", units,
              firing.c_str(), report.c_str(), curve.c_str());
  return 0;
}

int cmd_export(RunConfig& c) {
  auto net = load_network(c);
  const auto path = c.model.empty() ? out_path(c, "model.bnet") : c.model;
  check(br_export_packed(net.get(), path.c_str()), "export");
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

int cmd_infer(RunConfig& c) {
  const auto path = c.model.empty() ? out_path(c, "model.bnet") : c.model;
  br_packed_model* m = nullptr;
  check(br_packed_load(path.c_str(), &m), "loading packed model");
  PackedPtr model(m);
  auto data = load_data(c);
  std::vector<int> preds(br_dataset_size(data.test.get()));
  const auto timing = out_path(c, "timing.csv");
  br_eval_result r{};
  check(br_packed_evaluate(model.get(), data.test.get(), &r, preds.data(), timing.c_str()),
        "packed inference");
  const auto pred_path = out_path(c, "predictions.csv");
  write_predictions(pred_path, preds);
  std::printf("packed accuracy %.4f on %zu samples\nwrote %s, %s\n", r.accuracy, r.samples,
              pred_path.c_str(), timing.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bounded-rectifier training, binarization analysis and packed inference"};
  app.require_subcommand(1);
  RunConfig c;
  br_train_config_defaults(&c.train);

  auto* train = app.add_subcommand("train", "two-phase training; writes checkpoint and CSVs");
  add_common(train, c, true);
  add_solver(train, c);
  train->add_option("--checkpoint", c.checkpoint, "checkpoint path (default OUT/model.brck)");

  auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
  add_common(eval, c, true);
  eval->add_option("--checkpoint", c.checkpoint, "default OUT/model.brck");
  eval->add_option("--mode", c.mode, "linear or step")
      ->check(CLI::IsMember({"linear", "step"}))
      ->capture_default_str();

  auto* finetune = app.add_subcommand("finetune", "train only the softmax head in step mode");
  auto* ternarize =
      app.add_subcommand("ternarize", "threshold weights to +-1 and finetune biases and slopes");
  for (auto* cmd : {finetune, ternarize}) {
    add_common(cmd, c, true);
    add_solver(cmd, c);
    cmd->add_option("--checkpoint", c.checkpoint, "default OUT/model.brck");
    cmd->add_option("--epochs", c.epochs, "finetuning epochs")->capture_default_str();
  }

  auto* analyze = app.add_subcommand("analyze", "firing matrix and class split report");
  add_common(analyze, c, true);
  analyze->add_option("--checkpoint", c.checkpoint, "default OUT/model.brck");
  analyze->add_option("--layer", c.layer, "bounded layer ordinal (default: last)");
  analyze->add_option("--split", c.split, "val, train or test")
      ->check(CLI::IsMember({"val", "train", "test"}))
      ->capture_default_str();
  analyze->add_option("--val-size", c.val_size)->capture_default_str();
  analyze->add_option("--tau-pos", c.tau_pos)->capture_default_str();
  analyze->add_option("--tau-neg", c.tau_neg)->capture_default_str();
  analyze->add_option("--min-binary", c.min_binary, "required per-unit binary fraction")
      ->capture_default_str();

  auto* exp = app.add_subcommand("export", "write a bit-packed model");
  add_common(exp, c, true);
  exp->add_option("--checkpoint", c.checkpoint, "default OUT/model.brck");
  exp->add_option("--model", c.model, "output path (default OUT/model.bnet)");

  auto* infer = app.add_subcommand("infer", "packed inference on the test split");
  add_common(infer, c, false);
  infer->add_option("--model", c.model, "packed model (default OUT/model.bnet)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(c);
    if (*eval) return cmd_eval(c);
    if (*finetune) return cmd_finetune(c, false);
    if (*ternarize) return cmd_finetune(c, true);
    if (*analyze) return cmd_analyze(c);
    if (*exp) return cmd_export(c);
    if (*infer) return cmd_infer(c);
  } catch (const Failure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
