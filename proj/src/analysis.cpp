#include "binrep/analysis.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include "binrep/error.hpp"

namespace binrep {

FiringMatrix firing_matrix(const Tensor& unit_outputs, std::span<const int> labels,
                           std::size_t num_classes) {
  if (unit_outputs.rank() < 1 || unit_outputs.dim(0) != labels.size()) {
    throw DimensionError("unit outputs " + shape_string(unit_outputs.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  FiringMatrix fm;
  fm.num_classes = num_classes;
  fm.num_units = labels.empty() ? 0 : unit_outputs.size() / labels.size();
  fm.rates.assign(num_classes * fm.num_units, 0.0);
  fm.class_counts.assign(num_classes, 0);
  // Integer counts first so every rate is a single exact division.
  std::vector<std::uint64_t> fired(fm.rates.size(), 0);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const int c = labels[n];
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
      throw InputError("label " + std::to_string(c) + " out of range");
    }
    ++fm.class_counts[c];
    const double* row = unit_outputs.data() + n * fm.num_units;
    auto* dst = fired.data() + c * fm.num_units;
    for (std::size_t u = 0; u < fm.num_units; ++u) {
      if (row[u] != 0.0 && row[u] != 1.0) {
        throw InputError("unit " + std::to_string(u) + " output " + std::to_string(row[u]) +
                         " is not binary");
      }
      dst[u] += row[u] == 1.0;
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (fm.class_counts[c] == 0) throw InputError("class " + std::to_string(c) + " has no samples");
    for (std::size_t u = 0; u < fm.num_units; ++u) {
      fm.rates[c * fm.num_units + u] = static_cast<double>(fired[c * fm.num_units + u]) /
                                       static_cast<double>(fm.class_counts[c]);
    }
  }
  return fm;
}

FiringMatrix firing_matrix(const Network& net, const Dataset& data, std::size_t rectifier) {
  const auto rect = net.rectifier_indices();
  if (rectifier >= rect.size()) {
    throw DimensionError("network has " + std::to_string(rect.size()) +
                         " bounded layers, asked for #" + std::to_string(rectifier));
  }
  if (data.size() == 0) throw InputError("firing matrix over an empty dataset");
  const std::size_t units = shape_size(net.output_shape(rect[rectifier]));
  Tensor outputs(Shape{data.size(), units});
  std::vector<Tensor> taps;
  std::vector<std::size_t> idx;
  constexpr std::size_t kChunk = 256;
  for (std::size_t first = 0; first < data.size(); first += kChunk) {
    const std::size_t count = std::min(kChunk, data.size() - first);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), first);
    net.infer(gather(data, idx).images, ActivationMode::Step, &taps);
    const Tensor& t = taps[rectifier];
    std::copy(t.data(), t.data() + t.size(), outputs.data() + first * units);
  }
  return firing_matrix(outputs, data.labels, data.num_classes);
}

std::vector<UnitClassSplit> detect_splits(const FiringMatrix& fm, double tau_pos,
                                          double tau_neg) {
  std::vector<UnitClassSplit> out(fm.num_units);
  for (std::size_t u = 0; u < fm.num_units; ++u) {
    out[u].unit = u;
    for (std::size_t c = 0; c < fm.num_classes; ++c) {
      const double r = fm.at(c, u);
      const int cls = static_cast<int>(c);
      if (r >= tau_pos) {
        out[u].positive.push_back(cls);
      } else if (r <= tau_neg) {
        out[u].negative.push_back(cls);
      } else {
        out[u].ambiguous.push_back(cls);
      }
    }
  }
  return out;
}

OneUnitClassifier::OneUnitClassifier(UnitClassSplit split, std::size_t num_classes)
    : split_(std::move(split)), weights_(num_classes, 0.0) {
  if (split_.positive.empty() || split_.negative.empty()) {
    throw PreconditionError("unit " + std::to_string(split_.unit) +
                            " needs at least one positive and one negative class");
  }
  auto set = [&](const std::vector<int>& classes, double w) {
    for (int c : classes) {
      if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
        throw InputError("class " + std::to_string(c) + " out of range");
      weights_[c] = w;
    }
  };
  set(split_.positive, 1.0);
  set(split_.negative, -1.0);
}

std::vector<double> OneUnitClassifier::scores(double activation) const {
  std::vector<double> s(weights_.size());
  for (std::size_t c = 0; c < s.size(); ++c) s[c] = weights_[c] * (activation - 0.5);
  return s;
}

bool OneUnitClassifier::predicts_positive(double activation) const {
  const auto s = scores(activation);
  const double pos = s[split_.positive.front()];
  const double neg = s[split_.negative.front()];
  return pos > neg;
}

void write_firing_csv(std::ostream& os, const FiringMatrix& fm) {
  os << "class";
  for (std::size_t u = 0; u < fm.num_units; ++u) os << ",u" << u;
  os << '\n';
  for (std::size_t c = 0; c < fm.num_classes; ++c) {
    os << c;
    for (std::size_t u = 0; u < fm.num_units; ++u) os << ',' << fm.at(c, u);
    os << '\n';
  }
}

std::size_t write_split_report(std::ostream& os, const std::vector<UnitClassSplit>& splits) {
  std::size_t lines = 0;
  for (const auto& s : splits) {
    if (s.positive.empty() || s.negative.empty()) continue;
    os << "unit " << s.unit << " positive:";
    for (int c : s.positive) os << ' ' << c;
    os << " negative:";
    for (int c : s.negative) os << ' ' << c;
    os << '\n';
    ++lines;
  }
  return lines;
}

}  // namespace binrep
