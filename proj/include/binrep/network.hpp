#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "binrep/activation.hpp"
#include "binrep/autograd.hpp"
#include "binrep/kernels.hpp"
#include "binrep/tensor.hpp"

namespace binrep {

struct ConvLayer {
  Parameter weight;  // [c_out, c_in, kh, kw]
  Parameter bias;    // [c_out]
  kernels::ConvGeometry geometry;
};

struct FcLayer {
  Parameter weight;  // [out, in]
  Parameter bias;    // [out]
};

struct PoolLayer {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct BoundedLayer {
  Parameter slopes;  // one per channel (conv) or per unit (fc)
  ActivationMode mode = ActivationMode::Linear;
};

struct ReluLayer {};
struct FlattenLayer {};

using Layer = std::variant<ConvLayer, FcLayer, PoolLayer, BoundedLayer, ReluLayer, FlattenLayer>;

std::string_view layer_kind_name(const Layer& layer);

/// Ordered layer graph for a single-input classifier. The last affine layer
/// is the softmax head; its logits feed the cross-entropy loss.
class Network {
 public:
  Network() = default;
  /// Validates that every layer accepts the shape produced by its predecessor.
  Network(Shape input_shape, std::vector<Layer> layers);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  /// Per-sample output shape of layer `index` (no batch axis).
  Shape output_shape(std::size_t index) const;
  std::size_t num_classes() const;

  /// Records a forward pass onto the tape and returns the logits node.
  NodeId forward(Tape& tape, NodeId input);

  /// Gradient-free forward pass. `mode` overrides every bounded layer's own
  /// mode; `taps`, when given, receives each bounded layer's output.
  Tensor infer(const Tensor& batch, std::optional<ActivationMode> mode = std::nullopt,
               std::vector<Tensor>* taps = nullptr) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  /// Layer indices of bounded rectifiers, in order.
  std::vector<std::size_t> rectifier_indices() const;
  /// Layer indices of conv / fc layers, in order.
  std::vector<std::size_t> affine_indices() const;

  void set_mode(ActivationMode mode);
  double mean_abs_slope() const;

  void validate() const;

 private:
  Shape input_shape_;
  std::vector<Layer> layers_;
};

/// Applies one layer to a batch without recording gradients.
Tensor forward_layer(const Layer& layer, const Tensor& batch,
                     std::optional<ActivationMode> mode = std::nullopt);

/// Affine parameters (weight, bias) of a conv or fc layer; nullopt otherwise.
struct AffineView {
  Parameter* weight;
  Parameter* bias;
};
std::optional<AffineView> affine_params(Layer& layer);

}  // namespace binrep
