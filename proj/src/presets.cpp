#include "binrep/presets.hpp"

#include <cmath>

#include "binrep/error.hpp"

namespace binrep {

namespace {

struct Builder {
  std::vector<Layer> layers;
  std::vector<bool> mask;
  std::size_t slot = 0;
  std::size_t conv_count = 0;
  std::size_t fc_count = 0;

  void conv(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t pad) {
    const std::string name = "conv" + std::to_string(++conv_count);
    layers.emplace_back(ConvLayer{Parameter(name + ".weight", Tensor(Shape{c_out, c_in, k, k})),
                                  Parameter(name + ".bias", Tensor(Shape{c_out}), false),
                                  kernels::ConvGeometry{1, pad}});
  }
  void fc(std::size_t in, std::size_t out) {
    const std::string name = "fc" + std::to_string(++fc_count);
    layers.emplace_back(FcLayer{Parameter(name + ".weight", Tensor(Shape{out, in})),
                                Parameter(name + ".bias", Tensor(Shape{out}), false)});
  }
  void activation(std::size_t channels) {
    const bool bounded = mask.at(slot);
    ++slot;
    if (bounded) {
      layers.emplace_back(BoundedLayer{
          Parameter("act" + std::to_string(slot) + ".slope", Tensor(Shape{channels}, 1.0), false),
          ActivationMode::Linear});
    } else {
      layers.emplace_back(ReluLayer{});
    }
  }
  void pool() { layers.emplace_back(PoolLayer{2, 2}); }
  void flatten() { layers.emplace_back(FlattenLayer{}); }
};

std::size_t scaled(std::size_t base, double mult) {
  const auto v = static_cast<std::size_t>(std::lround(static_cast<double>(base) * mult));
  return v == 0 ? 1 : v;
}

}  // namespace

std::vector<std::string> preset_names() { return {"lenet-small", "mnist-mlp", "cifar-quick"}; }

std::size_t preset_activation_slots(std::string_view name) {
  if (name == "lenet-small") return 3;
  if (name == "mnist-mlp") return 1;
  if (name == "cifar-quick") return 4;
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

std::vector<bool> parse_binarize_mask(std::string_view mask, std::size_t slots) {
  std::vector<bool> out(slots, false);
  if (mask == "none") return out;
  if (mask == "all") return std::vector<bool>(slots, true);
  if (mask == "last") {
    if (slots) out.back() = true;
    return out;
  }
  if (mask.size() != slots) {
    throw ConfigError("binarize mask '" + std::string(mask) + "' needs " + std::to_string(slots) +
                      " digits");
  }
  for (std::size_t i = 0; i < slots; ++i) {
    if (mask[i] != '0' && mask[i] != '1') {
      throw ConfigError("binarize mask '" + std::string(mask) + "' must contain only 0 and 1");
    }
    out[i] = mask[i] == '1';
  }
  return out;
}

Network build_preset(std::string_view name, const PresetOptions& options) {
  if (!(options.width_mult > 0.0)) throw ConfigError("width multiplier must be positive");
  Builder b;
  b.mask = parse_binarize_mask(options.binarize_mask, preset_activation_slots(name));
  const double w = options.width_mult;
  if (name == "lenet-small") {
    const std::size_t c1 = scaled(16, w), c2 = scaled(32, w), f1 = scaled(256, w);
    b.conv(1, c1, 5, 0);
    b.activation(c1);
    b.pool();
    b.conv(c1, c2, 5, 0);
    b.activation(c2);
    b.pool();
    b.flatten();
    b.fc(c2 * 4 * 4, f1);
    b.activation(f1);
    b.fc(f1, 10);
    return Network(Shape{1, 28, 28}, std::move(b.layers));
  }
  if (name == "mnist-mlp") {
    const std::size_t f1 = scaled(128, w);
    b.flatten();
    b.fc(784, f1);
    b.activation(f1);
    b.fc(f1, 10);
    return Network(Shape{1, 28, 28}, std::move(b.layers));
  }
  // cifar-quick
  const std::size_t c1 = scaled(32, w), c2 = scaled(32, w), c3 = scaled(64, w),
                    f1 = scaled(64, w);
  b.conv(3, c1, 5, 2);
  b.activation(c1);
  b.pool();
  b.conv(c1, c2, 5, 2);
  b.activation(c2);
  b.pool();
  b.conv(c2, c3, 5, 2);
  b.activation(c3);
  b.pool();
  b.flatten();
  b.fc(c3 * 4 * 4, f1);
  b.activation(f1);
  b.fc(f1, 10);
  return Network(Shape{3, 32, 32}, std::move(b.layers));
}

}  // namespace binrep
