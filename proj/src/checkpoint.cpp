#include "binrep/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "binrep/error.hpp"

namespace binrep {

namespace {

constexpr char kMagic[4] = {'B', 'R', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Cursor {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;

  std::uint64_t get(int bytes, const char* what) {
    if (pos + static_cast<std::size_t>(bytes) > b.size()) {
      throw FormatError(std::string("checkpoint truncated in ") + what, pos);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t{b[pos + i]} << (8 * i);
    pos += static_cast<std::size_t>(bytes);
    return v;
  }
};

}  // namespace

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  const auto params = net.parameters();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put(out, kVersion, 4);
  put(out, params.size(), 4);
  for (const Parameter* p : params) {
    put(out, p->name.size(), 4);
    out.insert(out.end(), p->name.begin(), p->name.end());
    put(out, p->value.rank(), 4);
    for (std::size_t d : p->value.shape()) put(out, d, 8);
    for (double v : p->value.values()) put(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

void load_checkpoint(Network& net, const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                        std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(path.string() + " is not a BRCK checkpoint", 0);
  }
  Cursor c{bytes, 4};
  if (const auto v = c.get(4, "version"); v != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v), 4);
  }
  auto params = net.parameters();
  const auto count = c.get(4, "record count");
  if (count != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(count) + " parameters, network has " +
                      std::to_string(params.size()));
  }
  // Decode everything first so a mismatch leaves the network untouched.
  std::vector<std::vector<double>> values(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto len = c.get(4, "name length");
    if (len > bytes.size() - c.pos) throw FormatError("checkpoint name past end of file", c.pos);
    const std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(c.pos),
                           bytes.begin() + static_cast<std::ptrdiff_t>(c.pos + len));
    c.pos += len;
    if (name != params[i]->name) {
      throw ConfigError("checkpoint record " + std::to_string(i) + " is '" + name +
                        "', network expects '" + params[i]->name + "'");
    }
    const auto rank = c.get(4, "rank");
    if (rank > 8) throw FormatError("implausible rank in " + name, c.pos - 4);
    Shape shape(rank);
    for (auto& d : shape) d = c.get(8, "dims");
    if (shape != params[i]->value.shape()) {
      throw ConfigError("shape of " + name + " is " + shape_string(shape) + " in checkpoint, " +
                        shape_string(params[i]->value.shape()) + " in network");
    }
    values[i].resize(shape_size(shape));
    for (auto& v : values[i]) v = std::bit_cast<double>(c.get(8, name.c_str()));
  }
  if (c.pos != bytes.size()) throw FormatError("trailing bytes in checkpoint", c.pos);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(values[i].begin(), values[i].end(), params[i]->value.data());
    params[i]->velocity.fill(0.0);
  }
}

}  // namespace binrep
