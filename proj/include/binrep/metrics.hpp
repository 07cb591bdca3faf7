#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "binrep/data.hpp"
#include "binrep/network.hpp"

namespace binrep {

inline constexpr std::array<double, 3> kDefaultBinaryThresholds{0.9, 0.99, 0.999};

struct CurvePoint {
  double threshold;
  double fraction;  // share of units binary on at least `threshold` of the samples
};

/// Binarization statistics of one rectifier layer. A unit is one scalar
/// activation coordinate; it counts as binary on a sample iff its output is
/// exactly 0 or exactly 1.
struct LayerBinarization {
  std::string layer;
  std::size_t layer_index = 0;
  std::vector<double> unit_fraction;
  std::vector<CurvePoint> curve;
  std::uint64_t zero_count = 0;
  std::uint64_t one_count = 0;
  std::uint64_t total_count = 0;  // samples x units

  double zero_fraction() const;
  double one_fraction() const;
  double nonbinary_fraction() const;
  /// Curve value at `threshold` (must be one of the report thresholds).
  double fraction_at(double threshold) const;
};

struct BinarizationReport {
  std::vector<LayerBinarization> layers;
};

/// Streams rectifier outputs batch by batch and turns them into a report.
class BinarizationAccumulator {
 public:
  explicit BinarizationAccumulator(std::vector<std::string> layer_names,
                                   std::vector<std::size_t> layer_indices = {});
  /// `activations[l]` is the [batch, ...] output of layer l.
  void add(std::span<const Tensor> activations);
  BinarizationReport finish(std::span<const double> thresholds) const;
  std::size_t samples() const noexcept { return samples_; }

 private:
  std::vector<std::string> names_;
  std::vector<std::size_t> indices_;
  std::vector<std::vector<std::uint64_t>> binary_hits_;
  std::vector<std::uint64_t> zeros_;
  std::vector<std::uint64_t> ones_;
  std::size_t samples_ = 0;
};

/// Report over every bounded layer of `net` on `eval` (first `max_samples`
/// samples when non-zero). Throws InputError on an empty evaluation set.
BinarizationReport binarization_report(
    const Network& net, const Dataset& eval,
    std::span<const double> thresholds = kDefaultBinaryThresholds, std::size_t max_samples = 0,
    std::optional<ActivationMode> mode = std::nullopt);

struct ZeroOneSplit {
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double nonbinary_fraction = 0.0;
  std::uint64_t zero_count = 0;
  std::uint64_t one_count = 0;
  std::uint64_t total_count = 0;
};

/// Zero/one shares over all (sample, unit) pairs of a layer. Requires every
/// unit to be binary on at least `min_binary` of the samples; otherwise
/// throws PreconditionError listing the offending units.
ZeroOneSplit zero_one_split(const LayerBinarization& layer, double min_binary = 0.999);
/// `rectifier` is the ordinal among the network's bounded layers.
ZeroOneSplit zero_one_split(const Network& net, const Dataset& eval, std::size_t rectifier,
                            double min_binary = 0.999);

/// Elementwise test - train; throws InputError on length mismatch.
std::vector<double> generalization_gap(std::span<const double> train_losses,
                                       std::span<const double> test_losses);

struct EvalResult {
  double accuracy = 0.0;  // top-1, in [0, 1]
  double loss = 0.0;      // mean softmax cross-entropy
  std::vector<int> predictions;
};

EvalResult evaluate(const Network& net, const Dataset& ds,
                    std::optional<ActivationMode> mode = std::nullopt,
                    std::size_t batch_size = 256);

/// CSV columns: epoch,layer,threshold,fraction
void write_binarization_csv_header(std::ostream& os);
void write_binarization_csv_rows(std::ostream& os, int epoch, const BinarizationReport& report);

}  // namespace binrep
