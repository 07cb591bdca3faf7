#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "binrep/network.hpp"

namespace binrep {

struct PresetOptions {
  double width_mult = 1.0;
  // "last", "all", "none", or one '0'/'1' per activation slot (front to back).
  // Slots marked 1 get a bounded rectifier, the rest ReLU.
  std::string binarize_mask = "last";
};

/// Named architectures:
///   lenet-small  1x28x28: conv5(16)-act-pool2, conv5(32)-act-pool2, fc(256)-act, fc(10)
///   mnist-mlp    1x28x28: fc(128)-act, fc(10)
///   cifar-quick  3x32x32: conv5p2(32)-act-pool2, conv5p2(32)-act-pool2,
///                         conv5p2(64)-act-pool2, fc(64)-act, fc(10)
/// Channel counts scale with width_mult. Parameters come back zeroed; call
/// init_network() before training.
Network build_preset(std::string_view name, const PresetOptions& options = {});
std::vector<std::string> preset_names();
std::size_t preset_activation_slots(std::string_view name);

/// Throws ConfigError on a malformed mask or a length mismatch.
std::vector<bool> parse_binarize_mask(std::string_view mask, std::size_t slots);

}  // namespace binrep
