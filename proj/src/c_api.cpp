#include "binrep/binrep.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <new>
#include <optional>
#include <string>

#include "binrep/analysis.hpp"
#include "binrep/checkpoint.hpp"
#include "binrep/data.hpp"
#include "binrep/error.hpp"
#include "binrep/metrics.hpp"
#include "binrep/packed.hpp"
#include "binrep/presets.hpp"
#include "binrep/schedule.hpp"

struct br_dataset {
  binrep::Dataset ds;
};

struct br_network {
  binrep::Network net;
};

struct br_packed_model {
  binrep::PackedModel model;
};

namespace {

thread_local std::string g_last_error;

br_status to_status(binrep::ErrorCode code) {
  using binrep::ErrorCode;
  switch (code) {
    case ErrorCode::Dimension: return BR_ERR_DIMENSION;
    case ErrorCode::Config: return BR_ERR_CONFIG;
    case ErrorCode::Input: return BR_ERR_INPUT;
    case ErrorCode::State: return BR_ERR_STATE;
    case ErrorCode::Transform: return BR_ERR_TRANSFORM;
    case ErrorCode::Format: return BR_ERR_FORMAT;
    case ErrorCode::Io: return BR_ERR_IO;
    case ErrorCode::Precondition: return BR_ERR_PRECONDITION;
    case ErrorCode::Training: return BR_ERR_TRAINING;
    case ErrorCode::Singularity: return BR_ERR_SINGULARITY;
    case ErrorCode::DegenerateLayer: return BR_ERR_DEGENERATE_LAYER;
    case ErrorCode::Export: return BR_ERR_EXPORT;
  }
  return BR_ERR_INTERNAL;
}

br_status fail(br_status s, std::string msg) {
  g_last_error = std::move(msg);
  return s;
}

template <class F>
br_status guarded(F&& f) {
  try {
    f();
    return BR_OK;
  } catch (const binrep::Error& e) {
    return fail(to_status(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(BR_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(BR_ERR_INTERNAL, e.what());
  }
}

#define BR_REQUIRE(cond, what) \
  if (!(cond)) return fail(BR_ERR_INVALID_ARGUMENT, what)

std::optional<binrep::ActivationMode> to_mode(br_mode m) {
  switch (m) {
    case BR_MODE_LINEAR: return binrep::ActivationMode::Linear;
    case BR_MODE_STEP: return binrep::ActivationMode::Step;
    case BR_MODE_AS_CONFIGURED: break;
  }
  return std::nullopt;
}

bool valid_mode(br_mode m) {
  return m == BR_MODE_AS_CONFIGURED || m == BR_MODE_LINEAR || m == BR_MODE_STEP;
}

binrep::TrainOptions to_options(const br_train_config& c) {
  binrep::TrainOptions o;
  o.growth.phase1_lambda = c.phase1_lambda;
  o.growth.phase2_lambda = c.phase2_lambda;
  o.growth.phase1_epochs = c.phase1_epochs;
  o.growth.phase2_epochs = c.phase2_epochs;
  o.growth.growth_cap = c.growth_cap;
  o.solver.learning_rate = c.learning_rate;
  o.solver.momentum = c.momentum;
  o.solver.weight_decay = c.weight_decay;
  o.solver.batch_size = c.batch_size;
  o.solver.lr_step_epochs = c.lr_step_epochs;
  o.solver.lr_gamma = c.lr_gamma;
  o.seed = c.seed;
  o.telemetry_samples = c.telemetry_samples;
  return o;
}

std::ofstream open_csv(const char* path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw binrep::IoError(std::string("cannot write ") + path);
  f.precision(10);
  return f;
}

void write_predictions(const std::vector<int>& preds, int* out) {
  if (out) std::copy(preds.begin(), preds.end(), out);
}

}  // namespace

extern "C" {

const char* br_version(void) { return "0.1.0"; }

const char* br_status_name(br_status status) {
  switch (status) {
    case BR_OK: return "ok";
    case BR_ERR_DIMENSION: return "dimension error";
    case BR_ERR_CONFIG: return "config error";
    case BR_ERR_INPUT: return "input error";
    case BR_ERR_STATE: return "state error";
    case BR_ERR_TRANSFORM: return "transform error";
    case BR_ERR_FORMAT: return "format error";
    case BR_ERR_IO: return "io error";
    case BR_ERR_PRECONDITION: return "precondition failed";
    case BR_ERR_TRAINING: return "training error";
    case BR_ERR_SINGULARITY: return "singularity error";
    case BR_ERR_DEGENERATE_LAYER: return "degenerate layer";
    case BR_ERR_EXPORT: return "export error";
    case BR_ERR_INVALID_ARGUMENT: return "invalid argument";
    case BR_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* br_last_error(void) { return g_last_error.c_str(); }

br_status br_dataset_load(const char* kind, const char* dir, br_dataset** train,
                          br_dataset** test) {
  BR_REQUIRE(kind && dir, "dataset kind and directory are required");
  BR_REQUIRE(train || test, "no output requested");
  const std::string k = kind;
  BR_REQUIRE(k == "mnist" || k == "cifar10", "dataset must be 'mnist' or 'cifar10'");
  return guarded([&] {
    auto pair = k == "mnist" ? binrep::load_mnist(dir) : binrep::load_cifar10(dir);
    if (train) *train = new br_dataset{std::move(pair.train)};
    if (test) *test = new br_dataset{std::move(pair.test)};
  });
}

br_status br_dataset_split_validation(br_dataset* train, size_t count, br_dataset** validation) {
  BR_REQUIRE(train && validation, "null argument");
  return guarded([&] {
    *validation = new br_dataset{binrep::split_validation(train->ds, count)};
  });
}

br_status br_dataset_truncate(br_dataset* ds, size_t max_samples) {
  BR_REQUIRE(ds, "null dataset");
  BR_REQUIRE(max_samples > 0, "max_samples must be positive");
  return guarded([&] {
    if (max_samples < ds->ds.size()) ds->ds = binrep::slice(ds->ds, 0, max_samples);
  });
}

size_t br_dataset_size(const br_dataset* ds) { return ds ? ds->ds.size() : 0; }

void br_dataset_free(br_dataset* ds) { delete ds; }

br_status br_network_create(const char* preset, double width_mult, const char* binarize_mask,
                            uint64_t seed, br_network** out) {
  BR_REQUIRE(preset && out, "null argument");
  return guarded([&] {
    binrep::PresetOptions opts;
    opts.width_mult = width_mult;
    if (binarize_mask) opts.binarize_mask = binarize_mask;
    auto* h = new br_network{binrep::build_preset(preset, opts)};
    binrep::init_network(h->net, seed);
    *out = h;
  });
}

void br_network_free(br_network* net) { delete net; }

br_status br_network_save(const br_network* net, const char* path) {
  BR_REQUIRE(net && path, "null argument");
  return guarded([&] { binrep::save_checkpoint(net->net, path); });
}

br_status br_network_load(br_network* net, const char* path) {
  BR_REQUIRE(net && path, "null argument");
  return guarded([&] { binrep::load_checkpoint(net->net, path); });
}

br_status br_network_set_mode(br_network* net, br_mode mode) {
  BR_REQUIRE(net, "null network");
  BR_REQUIRE(mode == BR_MODE_LINEAR || mode == BR_MODE_STEP, "mode must be linear or step");
  return guarded([&] { net->net.set_mode(*to_mode(mode)); });
}

br_status br_network_mean_abs_slope(const br_network* net, double* out) {
  BR_REQUIRE(net && out, "null argument");
  return guarded([&] { *out = net->net.mean_abs_slope(); });
}

br_status br_network_num_rectifiers(const br_network* net, size_t* out) {
  BR_REQUIRE(net && out, "null argument");
  return guarded([&] { *out = net->net.rectifier_indices().size(); });
}

void br_train_config_defaults(br_train_config* c) {
  if (!c) return;
  const binrep::TrainOptions o;
  *c = br_train_config{};
  c->phase1_lambda = o.growth.phase1_lambda;
  c->phase2_lambda = o.growth.phase2_lambda;
  c->phase1_epochs = o.growth.phase1_epochs;
  c->phase2_epochs = o.growth.phase2_epochs;
  c->growth_cap = o.growth.growth_cap;
  c->learning_rate = o.solver.learning_rate;
  c->momentum = o.solver.momentum;
  c->weight_decay = o.solver.weight_decay;
  c->batch_size = o.solver.batch_size;
  c->lr_step_epochs = o.solver.lr_step_epochs;
  c->lr_gamma = o.solver.lr_gamma;
  c->seed = o.seed;
  c->telemetry_samples = o.telemetry_samples;
}

br_status br_train(br_network* net, const br_dataset* train, const br_dataset* eval,
                   const br_train_config* config) {
  BR_REQUIRE(net && train && eval && config, "null argument");
  return guarded([&] {
    binrep::TrainOptions opts = to_options(*config);
    std::ofstream epochs, curve;
    if (config->epoch_csv) {
      epochs = open_csv(config->epoch_csv);
      epochs << "epoch,phase,train_loss,test_loss,test_acc_linear,test_acc_step,mean_abs_slope\n";
    }
    if (config->binarization_csv) {
      curve = open_csv(config->binarization_csv);
      binrep::write_binarization_csv_header(curve);
    }
    const bool verbose = config->verbose != 0;
    opts.on_epoch = [&](const binrep::EpochRecord& r) {
      if (epochs.is_open()) {
        epochs << r.epoch << ',' << binrep::phase_name(r.phase) << ',' << r.train_loss << ','
               << r.test_loss << ',' << r.accuracy_linear << ',' << r.accuracy_step << ','
               << r.mean_abs_slope << '\n'
               << std::flush;
      }
      if (curve.is_open()) {
        binrep::write_binarization_csv_rows(curve, r.epoch, r.binarization);
        curve.flush();
      }
      if (verbose) {
        std::fprintf(stderr,
                     "epoch %d phase %s loss %.4f test %.4f acc linear %.4f step %.4f |k| %.3f\n",
                     r.epoch, binrep::phase_name(r.phase), r.train_loss, r.test_loss,
                     r.accuracy_linear, r.accuracy_step, r.mean_abs_slope);
      }
    };
    binrep::train_two_phase(net->net, train->ds, eval->ds, opts);
    if (epochs.is_open() && !epochs) throw binrep::IoError("failed writing epoch CSV");
    if (curve.is_open() && !curve) throw binrep::IoError("failed writing binarization CSV");
  });
}

br_status br_finetune_head(br_network* net, const br_dataset* train,
                           const br_train_config* config, int epochs) {
  BR_REQUIRE(net && train && config, "null argument");
  BR_REQUIRE(epochs >= 0, "epochs must be >= 0");
  return guarded([&] {
    const auto opts = to_options(*config);
    binrep::finetune_head(net->net, train->ds, opts.solver, epochs, opts.seed);
  });
}

br_status br_ternarize(br_network* net, const br_dataset* train, const br_train_config* config,
                       int epochs) {
  BR_REQUIRE(net && train && config, "null argument");
  BR_REQUIRE(epochs >= 0, "epochs must be >= 0");
  return guarded(
      [&] { binrep::ternarize_and_finetune(net->net, train->ds, to_options(*config), epochs); });
}

br_status br_evaluate(const br_network* net, const br_dataset* ds, br_mode mode,
                      br_eval_result* out, int* predictions) {
  BR_REQUIRE(net && ds && out, "null argument");
  BR_REQUIRE(valid_mode(mode), "unknown mode");
  return guarded([&] {
    const auto r = binrep::evaluate(net->net, ds->ds, to_mode(mode));
    *out = br_eval_result{r.accuracy, r.loss, ds->ds.size()};
    write_predictions(r.predictions, predictions);
  });
}

br_status br_binarization_csv(const br_network* net, const br_dataset* ds, const char* path) {
  BR_REQUIRE(net && ds && path, "null argument");
  return guarded([&] {
    auto f = open_csv(path);
    binrep::write_binarization_csv_header(f);
    binrep::write_binarization_csv_rows(f, 0, binrep::binarization_report(net->net, ds->ds));
    if (!f) throw binrep::IoError(std::string("failed writing ") + path);
  });
}

br_status br_analyze(const br_network* net, const br_dataset* ds, size_t rectifier,
                     double min_binary, double tau_pos, double tau_neg, const char* firing_csv,
                     const char* split_report, size_t* split_units) {
  BR_REQUIRE(net && ds, "null argument");
  BR_REQUIRE(tau_neg <= tau_pos, "tau_neg must not exceed tau_pos");
  return guarded([&] {
    // Binary in the trained (Linear) configuration, as the firing matrix
    // stands in for what the network actually computes.
    const auto report = binrep::binarization_report(net->net, ds->ds, binrep::kDefaultBinaryThresholds,
                                                    0, binrep::ActivationMode::Linear);
    if (rectifier >= report.layers.size()) {
      throw binrep::DimensionError("network has " + std::to_string(report.layers.size()) +
                                   " bounded layers, asked for #" + std::to_string(rectifier));
    }
    binrep::zero_one_split(report.layers[rectifier], min_binary);
    const auto fm = binrep::firing_matrix(net->net, ds->ds, rectifier);
    const auto splits = binrep::detect_splits(fm, tau_pos, tau_neg);
    if (firing_csv) {
      auto f = open_csv(firing_csv);
      binrep::write_firing_csv(f, fm);
      if (!f) throw binrep::IoError(std::string("failed writing ") + firing_csv);
    }
    std::size_t lines = 0;
    if (split_report) {
      std::ofstream f(split_report, std::ios::trunc);
      if (!f) throw binrep::IoError(std::string("cannot write ") + split_report);
      lines = binrep::write_split_report(f, splits);
      if (!f) throw binrep::IoError(std::string("failed writing ") + split_report);
    } else {
      for (const auto& s : splits) lines += !s.positive.empty() && !s.negative.empty();
    }
    if (split_units) *split_units = lines;
  });
}

br_status br_export_packed(const br_network* net, const char* path) {
  BR_REQUIRE(net && path, "null argument");
  return guarded([&] {
    binrep::Network stepped = net->net;
    stepped.set_mode(binrep::ActivationMode::Step);
    binrep::save_packed(binrep::export_packed(stepped), path);
  });
}

br_status br_packed_load(const char* path, br_packed_model** out) {
  BR_REQUIRE(path && out, "null argument");
  return guarded([&] { *out = new br_packed_model{binrep::load_packed(path)}; });
}

void br_packed_free(br_packed_model* model) { delete model; }

br_status br_packed_evaluate(const br_packed_model* model, const br_dataset* ds,
                             br_eval_result* out, int* predictions, const char* timing_csv) {
  BR_REQUIRE(model && ds && out, "null argument");
  return guarded([&] {
    const auto& d = ds->ds;
    if (d.size() == 0) throw binrep::InputError("evaluation over an empty dataset");
    if (d.sample_shape() != model->model.input_shape) {
      throw binrep::DimensionError("dataset samples are " + binrep::shape_string(d.sample_shape()) +
                                   ", model expects " +
                                   binrep::shape_string(model->model.input_shape));
    }
    auto timing = binrep::make_timing(model->model);
    const std::size_t per = d.sample_size();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto s = binrep::packed_forward(model->model, std::span(d.images.data() + i * per, per),
                                            &timing);
      const int pred = static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
      correct += pred == d.labels[i];
      if (predictions) predictions[i] = pred;
    }
    *out = br_eval_result{static_cast<double>(correct) / static_cast<double>(d.size()), 0.0,
                          d.size()};
    if (timing_csv) {
      auto f = open_csv(timing_csv);
      f << "layer,kind,calls,seconds\n";
      for (std::size_t i = 0; i < timing.size(); ++i)
        f << i << ',' << timing[i].kind << ',' << timing[i].calls << ',' << timing[i].seconds << '\n';
      if (!f) throw binrep::IoError(std::string("failed writing ") + timing_csv);
    }
  });
}

}  // extern "C"
