#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "binrep/tensor.hpp"

namespace binrep {

enum class ActivationMode : std::uint8_t { Linear, Step };

/// Adjustable bounded rectifier f(y) = min(max(k*y + 0.5, 0), 1) with one
/// slope k per channel. For 2-D [batch, units] inputs a channel is a unit.
struct BoundedRectifierLayer {
  std::vector<double> slopes;
  ActivationMode mode = ActivationMode::Linear;
  std::size_t channel_axis = 1;
};

inline double bounded_value(double slope, double y) noexcept {
  const double v = slope * y + 0.5;
  return v <= 0.0 ? 0.0 : (v >= 1.0 ? 1.0 : v);
}

/// Hard step that the bounded rectifier tends to as |k| grows: fires iff
/// k*y > 0. Evaluated through signs so that a product underflowing to zero
/// cannot disagree with the packed engine.
inline bool step_fires(double slope, double y) noexcept {
  return (slope > 0.0 && y > 0.0) || (slope < 0.0 && y < 0.0);
}

/// Gradient passes only strictly inside the linear interval.
inline bool in_linear_zone(double slope, double y) noexcept {
  const double v = slope * y + 0.5;
  return v > 0.0 && v < 1.0;
}

Tensor bounded_forward(const Tensor& y, const BoundedRectifierLayer& layer);
Tensor step_forward(const Tensor& y, const BoundedRectifierLayer& layer);
/// Dispatches on layer.mode.
Tensor rectify(const Tensor& y, const BoundedRectifierLayer& layer);

struct BoundedGradients {
  Tensor grad_input;
  std::vector<double> grad_slopes;
};

/// Stateful wrapper that caches the forward input so the backward pass can
/// evaluate the slope gradient, summed over every unit sharing a slope.
class BoundedRectifier {
 public:
  explicit BoundedRectifier(BoundedRectifierLayer layer);

  Tensor forward(const Tensor& y);
  /// Throws StateError when called before forward().
  BoundedGradients backward(const Tensor& upstream) const;

  const BoundedRectifierLayer& layer() const noexcept { return layer_; }

 private:
  BoundedRectifierLayer layer_;
  std::optional<Tensor> cached_input_;
};

namespace detail {

// Number of elements after the channel axis and the channel count, validated
// against the slope vector.
struct ChannelLayout {
  std::size_t outer = 1;
  std::size_t channels = 1;
  std::size_t inner = 1;
};

ChannelLayout channel_layout(const Shape& shape, std::size_t axis, std::size_t slope_count);

}  // namespace detail

}  // namespace binrep
