#include "binrep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "binrep/error.hpp"

namespace binrep {

double LayerBinarization::zero_fraction() const {
  return total_count ? static_cast<double>(zero_count) / static_cast<double>(total_count) : 0.0;
}

double LayerBinarization::one_fraction() const {
  return total_count ? static_cast<double>(one_count) / static_cast<double>(total_count) : 0.0;
}

double LayerBinarization::nonbinary_fraction() const {
  return total_count ? static_cast<double>(total_count - zero_count - one_count) /
                           static_cast<double>(total_count)
                     : 0.0;
}

double LayerBinarization::fraction_at(double threshold) const {
  for (const auto& p : curve)
    if (p.threshold == threshold) return p.fraction;
  throw InputError("threshold " + std::to_string(threshold) + " not in report");
}

BinarizationAccumulator::BinarizationAccumulator(std::vector<std::string> layer_names,
                                                 std::vector<std::size_t> layer_indices)
    : names_(std::move(layer_names)),
      indices_(std::move(layer_indices)),
      binary_hits_(names_.size()),
      zeros_(names_.size(), 0),
      ones_(names_.size(), 0) {
  if (indices_.empty()) {
    indices_.resize(names_.size());
    std::iota(indices_.begin(), indices_.end(), std::size_t{0});
  }
}

void BinarizationAccumulator::add(std::span<const Tensor> activations) {
  if (activations.size() != names_.size()) {
    throw DimensionError("expected activations for " + std::to_string(names_.size()) +
                         " layers, got " + std::to_string(activations.size()));
  }
  std::size_t batch = 0;
  for (std::size_t l = 0; l < activations.size(); ++l) {
    const Tensor& a = activations[l];
    batch = a.dim(0);
    const std::size_t units = a.size() / batch;
    auto& hits = binary_hits_[l];
    if (hits.empty()) hits.assign(units, 0);
    if (hits.size() != units) throw DimensionError("unit count changed between batches");
    for (std::size_t n = 0; n < batch; ++n) {
      const double* row = a.data() + n * units;
      for (std::size_t u = 0; u < units; ++u) {
        if (row[u] == 0.0) {
          ++hits[u];
          ++zeros_[l];
        } else if (row[u] == 1.0) {
          ++hits[u];
          ++ones_[l];
        }
      }
    }
  }
  samples_ += batch;
}

BinarizationReport BinarizationAccumulator::finish(std::span<const double> thresholds) const {
  if (samples_ == 0) throw InputError("binarization report over an empty evaluation set");
  BinarizationReport r;
  for (std::size_t l = 0; l < names_.size(); ++l) {
    LayerBinarization lb;
    lb.layer = names_[l];
    lb.layer_index = indices_[l];
    const auto& hits = binary_hits_[l];
    lb.unit_fraction.resize(hits.size());
    for (std::size_t u = 0; u < hits.size(); ++u)
      lb.unit_fraction[u] = static_cast<double>(hits[u]) / static_cast<double>(samples_);
    for (double t : thresholds) {
      const auto n = std::count_if(lb.unit_fraction.begin(), lb.unit_fraction.end(),
                                   [t](double f) { return f >= t; });
      lb.curve.push_back(
          {t, hits.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(hits.size())});
    }
    lb.zero_count = zeros_[l];
    lb.one_count = ones_[l];
    lb.total_count = static_cast<std::uint64_t>(samples_) * hits.size();
    r.layers.push_back(std::move(lb));
  }
  return r;
}

namespace {

std::vector<std::string> rectifier_names(const Network& net) {
  std::vector<std::string> names;
  for (std::size_t i : net.rectifier_indices()) {
    const auto& b = std::get<BoundedLayer>(net.layers()[i]);
    std::string n = b.slopes.name;
    if (auto dot = n.find('.'); dot != std::string::npos) n.resize(dot);
    names.push_back(n.empty() ? "layer" + std::to_string(i) : n);
  }
  return names;
}

}  // namespace

BinarizationReport binarization_report(const Network& net, const Dataset& eval,
                                       std::span<const double> thresholds,
                                       std::size_t max_samples,
                                       std::optional<ActivationMode> mode) {
  const std::size_t n = max_samples ? std::min(max_samples, eval.size()) : eval.size();
  if (n == 0) throw InputError("binarization report over an empty evaluation set");
  BinarizationAccumulator acc(rectifier_names(net), net.rectifier_indices());
  std::vector<Tensor> taps;
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < n; first += kChunk) {
    const std::size_t count = std::min(kChunk, n - first);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), first);
    net.infer(gather(eval, idx).images, mode, &taps);
    acc.add(taps);
  }
  return acc.finish(thresholds);
}

ZeroOneSplit zero_one_split(const LayerBinarization& layer, double min_binary) {
  std::vector<std::size_t> weak;
  for (std::size_t u = 0; u < layer.unit_fraction.size(); ++u)
    if (layer.unit_fraction[u] < min_binary) weak.push_back(u);
  if (!weak.empty()) {
    std::string msg = "layer " + layer.layer + " is not fully binary: " +
                      std::to_string(weak.size()) + " of " +
                      std::to_string(layer.unit_fraction.size()) + " units below " +
                      std::to_string(min_binary) + " (unit:fraction";
    for (std::size_t i = 0; i < std::min<std::size_t>(weak.size(), 16); ++i)
      msg += " " + std::to_string(weak[i]) + ":" + std::to_string(layer.unit_fraction[weak[i]]);
    if (weak.size() > 16) msg += " ...";
    throw PreconditionError(msg + ")");
  }
  return ZeroOneSplit{layer.zero_fraction(), layer.one_fraction(), layer.nonbinary_fraction(),
                      layer.zero_count,      layer.one_count,      layer.total_count};
}

ZeroOneSplit zero_one_split(const Network& net, const Dataset& eval, std::size_t rectifier,
                            double min_binary) {
  const auto report = binarization_report(net, eval);
  if (rectifier >= report.layers.size()) {
    throw InputError("network has " + std::to_string(report.layers.size()) +
                     " rectifier layers, asked for #" + std::to_string(rectifier));
  }
  return zero_one_split(report.layers[rectifier], min_binary);
}

std::vector<double> generalization_gap(std::span<const double> train_losses,
                                       std::span<const double> test_losses) {
  if (train_losses.size() != test_losses.size()) {
    throw InputError("loss series lengths differ: " + std::to_string(train_losses.size()) +
                     " vs " + std::to_string(test_losses.size()));
  }
  std::vector<double> gap(train_losses.size());
  for (std::size_t i = 0; i < gap.size(); ++i) gap[i] = test_losses[i] - train_losses[i];
  return gap;
}

EvalResult evaluate(const Network& net, const Dataset& ds, std::optional<ActivationMode> mode,
                    std::size_t batch_size) {
  if (ds.size() == 0) throw InputError("evaluation over an empty dataset");
  EvalResult r;
  r.predictions.reserve(ds.size());
  std::size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < ds.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, ds.size() - first);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), first);
    const Batch b = gather(ds, idx);
    const Tensor logits = net.infer(b.images, mode);
    const std::size_t classes = logits.dim(1);
    loss_sum += kernels::softmax_ce_loss(logits, b.labels).loss * static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const double* row = logits.data() + i * classes;
      const int pred = static_cast<int>(std::max_element(row, row + classes) - row);
      r.predictions.push_back(pred);
      correct += pred == b.labels[i];
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  r.loss = loss_sum / static_cast<double>(ds.size());
  return r;
}

void write_binarization_csv_header(std::ostream& os) {
  os << "epoch,layer,threshold,fraction\n";
}

void write_binarization_csv_rows(std::ostream& os, int epoch, const BinarizationReport& report) {
  for (const auto& l : report.layers)
    for (const auto& p : l.curve) os << epoch << ',' << l.layer << ',' << p.threshold << ',' << p.fraction << '\n';
}

}  // namespace binrep
