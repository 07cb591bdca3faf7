#include "binrep/activation.hpp"

#include "binrep/error.hpp"

namespace binrep {

namespace detail {

ChannelLayout channel_layout(const Shape& shape, std::size_t axis, std::size_t slope_count) {
  if (axis >= shape.size()) {
    throw DimensionError("channel axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape));
  }
  ChannelLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.channels = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  if (l.channels != slope_count) {
    throw DimensionError("rectifier has " + std::to_string(slope_count) +
                         " slopes but input " + shape_string(shape) + " has " +
                         std::to_string(l.channels) + " channels");
  }
  return l;
}

}  // namespace detail

namespace {

template <typename F>
Tensor map_channels(const Tensor& y, const BoundedRectifierLayer& layer, F f) {
  const auto l = detail::channel_layout(y.shape(), layer.channel_axis, layer.slopes.size());
  Tensor out(y.shape());
  std::size_t i = 0;
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t c = 0; c < l.channels; ++c) {
      const double k = layer.slopes[c];
      for (std::size_t j = 0; j < l.inner; ++j, ++i) out[i] = f(k, y[i]);
    }
  return out;
}

}  // namespace

Tensor bounded_forward(const Tensor& y, const BoundedRectifierLayer& layer) {
  return map_channels(y, layer, [](double k, double v) { return bounded_value(k, v); });
}

Tensor step_forward(const Tensor& y, const BoundedRectifierLayer& layer) {
  return map_channels(y, layer, [](double k, double v) { return step_fires(k, v) ? 1.0 : 0.0; });
}

Tensor rectify(const Tensor& y, const BoundedRectifierLayer& layer) {
  return layer.mode == ActivationMode::Step ? step_forward(y, layer) : bounded_forward(y, layer);
}

BoundedRectifier::BoundedRectifier(BoundedRectifierLayer layer) : layer_(std::move(layer)) {}

Tensor BoundedRectifier::forward(const Tensor& y) {
  Tensor out = rectify(y, layer_);
  cached_input_ = y;
  return out;
}

BoundedGradients BoundedRectifier::backward(const Tensor& upstream) const {
  if (!cached_input_) throw StateError("bounded rectifier backward called before forward");
  const Tensor& y = *cached_input_;
  if (upstream.shape() != y.shape()) {
    throw DimensionError("upstream gradient " + shape_string(upstream.shape()) +
                         " does not match rectifier input " + shape_string(y.shape()));
  }
  BoundedGradients g{Tensor(y.shape()), std::vector<double>(layer_.slopes.size(), 0.0)};
  if (layer_.mode == ActivationMode::Step) return g;
  const auto l = detail::channel_layout(y.shape(), layer_.channel_axis, layer_.slopes.size());
  std::size_t i = 0;
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t c = 0; c < l.channels; ++c) {
      const double k = layer_.slopes[c];
      double acc = 0.0;
      for (std::size_t j = 0; j < l.inner; ++j, ++i) {
        if (!in_linear_zone(k, y[i])) continue;
        g.grad_input[i] = upstream[i] * k;
        acc += upstream[i] * y[i];
      }
      g.grad_slopes[c] += acc;
    }
  return g;
}

}  // namespace binrep
