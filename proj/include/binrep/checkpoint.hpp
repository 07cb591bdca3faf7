#pragma once

#include <filesystem>

#include "binrep/network.hpp"

namespace binrep {

/// Writes every parameter of `net` as a BRCK container: magic, u32 version,
/// u32 record count, then per parameter u32 name length, name, u32 rank,
/// u64 dims and little-endian f64 values.
void save_checkpoint(const Network& net, const std::filesystem::path& path);

/// Loads parameter values into an already-built network of the same
/// architecture. Throws ConfigError when names or shapes disagree and
/// FormatError (with offset) on a malformed file.
void load_checkpoint(Network& net, const std::filesystem::path& path);

}  // namespace binrep
