#pragma once

// Bit-packed inference for networks whose hidden representation is binary.
// Unit or weight j lives in bit j % 64 of word j / 64; a set weight bit
// means +1, a clear one -1. Padding bits are zero on both sides.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "binrep/network.hpp"
#include "binrep/tensor.hpp"

namespace binrep {

inline constexpr std::size_t kWordBits = 64;

inline std::size_t words_for(std::size_t bits) noexcept {
  return (bits + kWordBits - 1) / kWordBits;
}

enum class PackedKind : std::uint8_t {
  RealConv = 1,    // first layer, real weights, stepped output
  RealFc = 2,      // first layer, real weights, stepped output
  BinaryConv = 3,  // +-1 weights over bits, stepped output
  BinaryFc = 4,    // +-1 weights over bits, stepped output
  MaxPool = 5,     // OR over the window
  Flatten = 6,
  Head = 7,        // +-1 weights over bits, real scores
};

const char* packed_kind_name(PackedKind kind) noexcept;

struct PackedLayer {
  PackedKind kind = PackedKind::Flatten;
  Shape in_shape;   // per sample
  Shape out_shape;  // per sample
  std::uint32_t kernel_h = 0, kernel_w = 0, stride = 1, pad = 0;  // conv / pool

  // Binary layers: one row of row_bits weight bits per output channel,
  // padded to words_per_row words.
  std::uint64_t row_bits = 0;
  std::vector<std::uint64_t> weight_bits;

  // Real first layer.
  Tensor real_weight;
  Tensor real_bias;

  // Real bias of binary layers, kept for the head and for reference.
  std::vector<double> bias;

  // Stepped layers: per output channel, fire iff s > threshold (sign > 0),
  // s < threshold (sign < 0), never (sign == 0). Real first layers only use
  // the sign and compare the real pre-activation with 0.
  std::vector<std::int64_t> thresholds;
  std::vector<std::int8_t> signs;

  std::size_t words_per_row() const noexcept { return words_for(row_bits); }
  std::size_t out_channels() const;
};

struct PackedModel {
  Shape input_shape;
  std::vector<PackedLayer> layers;

  std::size_t num_classes() const;
};

struct PackedActivations {
  std::vector<std::uint64_t> bits;
  Shape shape;  // logical per-sample shape

  static PackedActivations zeros(Shape shape);
  std::size_t size() const { return shape_size(shape); }
  bool get(std::size_t j) const { return (bits[j / kWordBits] >> (j % kWordBits)) & 1U; }
  void set(std::size_t j) { bits[j / kWordBits] |= std::uint64_t{1} << (j % kWordBits); }
  std::size_t count() const;
};

PackedActivations pack_bits(std::span<const double> values, Shape shape);
std::vector<double> unpack_bits(const PackedActivations& a);

/// sum_j w_j a_j for w in {-1,+1}^n encoded by `w`, a in {0,1}^n.
inline std::int64_t signed_dot(const std::uint64_t* w, const std::uint64_t* a,
                               std::size_t words) noexcept {
  std::int64_t both = 0, ones = 0;
  for (std::size_t i = 0; i < words; ++i) {
    both += __builtin_popcountll(w[i] & a[i]);
    ones += __builtin_popcountll(a[i]);
  }
  return 2 * both - ones;
}

/// Integer firing threshold equivalent to comparing s + bias with zero for
/// integer s in [-fan_in, fan_in].
std::int64_t step_threshold(double bias, int sign, std::size_t fan_in);
bool threshold_fires(std::int64_t s, std::int64_t threshold, int sign) noexcept;

/// Freezes a Step-mode network. The first affine layer stays real; every
/// other affine weight must be exactly -1 or +1. Throws ExportError naming
/// the layer and index of the first violation, and for rectifiers not in
/// Step mode, ReLU layers, or layer orders the engine cannot run.
PackedModel export_packed(const Network& net);

std::vector<std::uint8_t> serialize_packed(const PackedModel& model);
/// Throws FormatError carrying the byte offset of the first problem.
PackedModel deserialize_packed(std::span<const std::uint8_t> bytes);
void save_packed(const PackedModel& model, const std::filesystem::path& path);
PackedModel load_packed(const std::filesystem::path& path);

PackedActivations packed_fc(const PackedActivations& a, const PackedLayer& layer);
PackedActivations packed_conv(const PackedActivations& a, const PackedLayer& layer);
PackedActivations packed_pool(const PackedActivations& a, const PackedLayer& layer);
std::vector<double> packed_head(const PackedActivations& a, const PackedLayer& layer);

struct LayerTiming {
  std::string kind;
  double seconds = 0.0;
  std::size_t calls = 0;
};

/// Class scores for one sample of model.input_shape. `timing`, when given,
/// must hold one entry per layer and accumulates wall time.
std::vector<double> packed_forward(const PackedModel& model, std::span<const double> image,
                                   std::vector<LayerTiming>* timing = nullptr);
/// Scores for a [n, ...] batch as an [n, classes] tensor.
Tensor packed_forward_batch(const PackedModel& model, const Tensor& images,
                            std::vector<LayerTiming>* timing = nullptr);
std::vector<LayerTiming> make_timing(const PackedModel& model);

}  // namespace binrep
