#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "binrep/data.hpp"
#include "binrep/network.hpp"

namespace binrep {

/// Per-class firing rates of the units of one rectifier layer.
struct FiringMatrix {
  std::size_t num_classes = 0;
  std::size_t num_units = 0;
  std::vector<double> rates;  // [num_classes x num_units], row-major
  std::vector<std::size_t> class_counts;

  double at(std::size_t cls, std::size_t unit) const { return rates[cls * num_units + unit]; }
};

/// entry[c, u] = mean over class-c samples of unit u's Step-mode output at
/// rectifier `rectifier` (ordinal among bounded layers). Throws InputError
/// if some class has no samples and DimensionError on a bad ordinal.
FiringMatrix firing_matrix(const Network& net, const Dataset& data, std::size_t rectifier);

/// Same, from precomputed binary outputs [samples x units].
FiringMatrix firing_matrix(const Tensor& unit_outputs, std::span<const int> labels,
                           std::size_t num_classes);

struct UnitClassSplit {
  std::size_t unit = 0;
  std::vector<int> positive;
  std::vector<int> negative;
  std::vector<int> ambiguous;
};

/// Class c is positive for unit u if rate >= tau_pos, negative if rate <=
/// tau_neg, ambiguous otherwise.
std::vector<UnitClassSplit> detect_splits(const FiringMatrix& fm, double tau_pos = 0.95,
                                          double tau_neg = 0.05);

/// Reads a single binary unit as a positive-vs-negative group separator:
/// score_c = w_c * (a - 0.5), w = +1 / -1 / 0 for positive / negative /
/// ambiguous classes.
class OneUnitClassifier {
 public:
  /// Throws PreconditionError if either the positive or negative set is empty.
  explicit OneUnitClassifier(UnitClassSplit split, std::size_t num_classes);

  std::vector<double> scores(double activation) const;
  /// True iff the positive group wins, i.e. activation == 1.
  bool predicts_positive(double activation) const;
  const UnitClassSplit& split() const noexcept { return split_; }

 private:
  UnitClassSplit split_;
  std::vector<double> weights_;
};

/// CSV: header "class,u0,u1,...", one row per class.
void write_firing_csv(std::ostream& os, const FiringMatrix& fm);
/// One line per unit with at least one positive and one negative class:
///   unit 12 positive: 0 6 negative: 1 7
/// Returns the number of lines written.
std::size_t write_split_report(std::ostream& os, const std::vector<UnitClassSplit>& splits);

}  // namespace binrep
