#include "binrep/transform.hpp"

#include <algorithm>
#include <cmath>

#include "binrep/error.hpp"

namespace binrep {

namespace {

// Scales output channel c of an affine layer's weight and bias by factors[c].
void scale_output_channels(AffineView a, std::span<const double> factors) {
  const std::size_t out = a.bias->value.size();
  const std::size_t per_channel = a.weight->value.size() / out;
  for (std::size_t c = 0; c < out; ++c) {
    double* w = a.weight->value.data() + c * per_channel;
    for (std::size_t j = 0; j < per_channel; ++j) w[j] *= factors[c];
    a.bias->value[c] *= factors[c];
  }
}

// Output of layer `last` when the first last+1 layers of `net` run on `x`.
Tensor run_prefix(const Network& net, std::size_t last, const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i <= last; ++i) out = forward_layer(net.layers()[i], out);
  return out;
}

}  // namespace

Network absorb_slopes(const Network& net) {
  Network out = net;
  auto& layers = out.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto* b = std::get_if<BoundedLayer>(&layers[i]);
    if (!b) continue;
    std::optional<AffineView> prev = i > 0 ? affine_params(layers[i - 1]) : std::nullopt;
    if (!prev) {
      throw TransformError("rectifier at layer " + std::to_string(i) +
                           " is not directly preceded by a conv or fc layer");
    }
    scale_output_channels(*prev, b->slopes.value.values());
    b->slopes.value.fill(1.0);
  }
  return out;
}

Network cast_relu_net(const Network& relu_net, const Tensor& calibration) {
  Network out = relu_net;
  auto& layers = out.layers();
  double pending_scale = 0.0;  // 0 = nothing pending
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (auto a = affine_params(layers[i]); a && pending_scale != 0.0) {
      for (double& w : a->weight->value.values()) w *= pending_scale;
      pending_scale = 0.0;
    }
    if (!std::holds_alternative<ReluLayer>(layers[i])) continue;
    std::optional<AffineView> prev = i > 0 ? affine_params(layers[i - 1]) : std::nullopt;
    if (!prev) {
      throw TransformError("relu at layer " + std::to_string(i) +
                           " is not directly preceded by a conv or fc layer");
    }
    // Bound of the source network's pre-activation. Earlier rewrites leave it
    // unchanged, so measure on the original.
    const Tensor z = run_prefix(relu_net, i - 1, calibration);
    double bound = 0.0;
    for (double v : z.values()) bound = std::max(bound, std::abs(v));
    if (bound == 0.0) {
      throw DegenerateLayerError("pre-activation of layer " + std::to_string(i - 1) +
                                 " is identically zero on the calibration data");
    }
    for (double& b : prev->bias->value.values()) b -= 0.5 * bound;
    const std::size_t channels = prev->bias->value.size();
    layers[i] = BoundedLayer{
        Parameter("act" + std::to_string(i) + ".slope", Tensor(Shape{channels}, 1.0 / bound),
                  false),
        ActivationMode::Linear};
    pending_scale = bound;
  }
  if (pending_scale != 0.0) throw TransformError("relu is not followed by an affine layer");
  out.validate();
  return out;
}

}  // namespace binrep
