#include "binrep/network.hpp"

#include <algorithm>
#include <cmath>

#include "binrep/error.hpp"

namespace binrep {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

std::string layer_label(std::size_t index, const Layer& layer) {
  return "layer " + std::to_string(index) + " (" + std::string(layer_kind_name(layer)) + ")";
}

Shape next_shape(std::size_t index, const Layer& layer, const Shape& in) {
  return std::visit(
      overloaded{
          [&](const ConvLayer& l) -> Shape {
            const Shape& w = l.weight.value.shape();
            if (in.size() != 3 || w.size() != 4 || w[1] != in[0]) {
              throw DimensionError(layer_label(index, layer) + " weight " + shape_string(w) +
                                   " cannot consume " + shape_string(in));
            }
            if (l.bias.value.shape() != Shape{w[0]}) {
              throw DimensionError(layer_label(index, layer) + " bias shape mismatch");
            }
            return Shape{w[0], kernels::conv_output_extent(in[1], w[2], l.geometry),
                         kernels::conv_output_extent(in[2], w[3], l.geometry)};
          },
          [&](const FcLayer& l) -> Shape {
            const Shape& w = l.weight.value.shape();
            if (in.size() != 1 || w.size() != 2 || w[1] != in[0]) {
              throw DimensionError(layer_label(index, layer) + " weight " + shape_string(w) +
                                   " cannot consume " + shape_string(in));
            }
            if (l.bias.value.shape() != Shape{w[0]}) {
              throw DimensionError(layer_label(index, layer) + " bias shape mismatch");
            }
            return Shape{w[0]};
          },
          [&](const PoolLayer& l) -> Shape {
            if (in.size() != 3 || l.window == 0 || l.stride == 0 || l.window > in[1] ||
                l.window > in[2]) {
              throw DimensionError(layer_label(index, layer) + " cannot pool " +
                                   shape_string(in));
            }
            return Shape{in[0], (in[1] - l.window) / l.stride + 1,
                         (in[2] - l.window) / l.stride + 1};
          },
          [&](const BoundedLayer& l) -> Shape {
            if (l.slopes.value.size() != in[0]) {
              throw DimensionError(layer_label(index, layer) + " has " +
                                   std::to_string(l.slopes.value.size()) +
                                   " slopes for input " + shape_string(in));
            }
            return in;
          },
          [&](const ReluLayer&) -> Shape { return in; },
          [&](const FlattenLayer&) -> Shape { return Shape{shape_size(in)}; },
      },
      layer);
}

}  // namespace

std::string_view layer_kind_name(const Layer& layer) {
  return std::visit(overloaded{
                        [](const ConvLayer&) { return std::string_view("conv"); },
                        [](const FcLayer&) { return std::string_view("fc"); },
                        [](const PoolLayer&) { return std::string_view("maxpool"); },
                        [](const BoundedLayer&) { return std::string_view("bounded"); },
                        [](const ReluLayer&) { return std::string_view("relu"); },
                        [](const FlattenLayer&) { return std::string_view("flatten"); },
                    },
                    layer);
}

std::optional<AffineView> affine_params(Layer& layer) {
  if (auto* c = std::get_if<ConvLayer>(&layer)) return AffineView{&c->weight, &c->bias};
  if (auto* f = std::get_if<FcLayer>(&layer)) return AffineView{&f->weight, &f->bias};
  return std::nullopt;
}

Network::Network(Shape input_shape, std::vector<Layer> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  validate();
}

void Network::validate() const {
  if (input_shape_.empty()) throw DimensionError("network input shape is empty");
  Shape s = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) s = next_shape(i, layers_[i], s);
  if (s.size() != 1) {
    throw DimensionError("network output must be a class-score vector, got " + shape_string(s));
  }
}

Shape Network::output_shape(std::size_t index) const {
  if (index >= layers_.size()) throw DimensionError("layer index out of range");
  Shape s = input_shape_;
  for (std::size_t i = 0; i <= index; ++i) s = next_shape(i, layers_[i], s);
  return s;
}

std::size_t Network::num_classes() const {
  if (layers_.empty()) return shape_size(input_shape_);
  return shape_size(output_shape(layers_.size() - 1));
}

NodeId Network::forward(Tape& tape, NodeId input) {
  NodeId x = input;
  for (Layer& layer : layers_) {
    x = std::visit(
        overloaded{
            [&](ConvLayer& l) {
              return tape.conv2d(x, tape.parameter(l.weight), tape.parameter(l.bias), l.geometry);
            },
            [&](FcLayer& l) {
              return tape.fc(x, tape.parameter(l.weight), tape.parameter(l.bias));
            },
            [&](PoolLayer& l) { return tape.maxpool(x, l.window, l.stride); },
            [&](BoundedLayer& l) { return tape.bounded(x, tape.parameter(l.slopes), l.mode); },
            [&](ReluLayer&) { return tape.relu(x); },
            [&](FlattenLayer&) { return tape.flatten(x); },
        },
        layer);
  }
  return x;
}

Tensor forward_layer(const Layer& layer, const Tensor& x, std::optional<ActivationMode> mode) {
  return std::visit(
      overloaded{
          [&](const ConvLayer& l) {
            return kernels::conv2d_forward(x, l.weight.value, l.bias.value, l.geometry);
          },
          [&](const FcLayer& l) { return kernels::fc_forward(x, l.weight.value, l.bias.value); },
          [&](const PoolLayer& l) {
            return std::move(kernels::maxpool_forward(x, l.window, l.stride).output);
          },
          [&](const BoundedLayer& l) {
            BoundedRectifierLayer r{std::vector<double>(l.slopes.value.values().begin(),
                                                        l.slopes.value.values().end()),
                                    mode.value_or(l.mode), 1};
            return rectify(x, r);
          },
          [&](const ReluLayer&) {
            Tensor out = x;
            for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
            return out;
          },
          [&](const FlattenLayer&) {
            const std::size_t n = x.dim(0);
            return x.reshaped(Shape{n, x.size() / n});
          },
      },
      layer);
}

Tensor Network::infer(const Tensor& batch, std::optional<ActivationMode> mode,
                      std::vector<Tensor>* taps) const {
  if (batch.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), batch.shape().begin() + 1)) {
    throw DimensionError("network expects per-sample shape " + shape_string(input_shape_) +
                         ", got batch " + shape_string(batch.shape()));
  }
  if (taps) taps->clear();
  Tensor x = batch;
  for (const Layer& layer : layers_) {
    x = forward_layer(layer, x, mode);
    if (taps && std::holds_alternative<BoundedLayer>(layer)) taps->push_back(x);
  }
  return x;
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  for (Layer& layer : layers_) {
    if (auto a = affine_params(layer)) {
      out.push_back(a->weight);
      out.push_back(a->bias);
    } else if (auto* b = std::get_if<BoundedLayer>(&layer)) {
      out.push_back(&b->slopes);
    }
  }
  return out;
}

std::vector<const Parameter*> Network::parameters() const {
  auto mut = const_cast<Network*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<std::size_t> Network::rectifier_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (std::holds_alternative<BoundedLayer>(layers_[i])) out.push_back(i);
  return out;
}

std::vector<std::size_t> Network::affine_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (std::holds_alternative<ConvLayer>(layers_[i]) || std::holds_alternative<FcLayer>(layers_[i]))
      out.push_back(i);
  return out;
}

void Network::set_mode(ActivationMode mode) {
  for (Layer& layer : layers_)
    if (auto* b = std::get_if<BoundedLayer>(&layer)) b->mode = mode;
}

double Network::mean_abs_slope() const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const Layer& layer : layers_) {
    if (const auto* b = std::get_if<BoundedLayer>(&layer)) {
      for (double k : b->slopes.value.values()) sum += std::abs(k);
      count += b->slopes.value.size();
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace binrep
