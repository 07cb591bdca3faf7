#include "binrep/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <limits>
#include <numeric>

#include "binrep/error.hpp"

namespace binrep {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t offset,
                        const std::string& name) {
  if (offset + 4 > b.size()) throw FormatError(name + ": truncated header", b.size());
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

std::filesystem::path find_file(const std::filesystem::path& dir,
                                std::initializer_list<const char*> names) {
  for (const char* n : names) {
    for (const char* suffix : {"", ".gz"}) {
      auto p = dir / (std::string(n) + suffix);
      if (std::filesystem::exists(p)) return p;
    }
  }
  throw IoError("none of the expected files (e.g. " + std::string(*names.begin()) +
                ") found in " + dir.string());
}

// Uniform draw in [0, bound) by rejection; independent of the standard
// library's distribution implementation.
std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % bound;
}

}  // namespace

Shape Dataset::sample_shape() const {
  return Shape(images.shape().begin() + 1, images.shape().end());
}

std::size_t Dataset::sample_size() const { return shape_size(sample_shape()); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("file not found: " + path.string());
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 20);
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      int err = 0;
      std::string msg = gzerror(f, &err);
      gzclose(f);
      throw FormatError(path.string() + ": " + msg, out.size());
    }
    if (n == 0) break;
    out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return out;
}

Tensor parse_idx_images(std::span<const std::uint8_t> bytes, const std::string& name) {
  const std::uint32_t magic = read_be32(bytes, 0, name);
  if (magic != kIdxImagesMagic) {
    throw FormatError(name + ": bad IDX image magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }(), 0);
  }
  const std::size_t n = read_be32(bytes, 4, name), rows = read_be32(bytes, 8, name),
                    cols = read_be32(bytes, 12, name);
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(name + ": empty image set", 4);
  const std::size_t need = 16 + n * rows * cols;
  if (bytes.size() < need) {
    throw FormatError(name + ": truncated, expected " + std::to_string(need) + " bytes",
                      bytes.size());
  }
  Tensor images(Shape{n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) images[i] = bytes[16 + i] / 255.0;
  return images;
}

std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes, const std::string& name) {
  const std::uint32_t magic = read_be32(bytes, 0, name);
  if (magic != kIdxLabelsMagic) throw FormatError(name + ": bad IDX label magic", 0);
  const std::size_t n = read_be32(bytes, 4, name);
  if (bytes.size() < 8 + n) {
    throw FormatError(name + ": truncated, expected " + std::to_string(8 + n) + " bytes",
                      bytes.size());
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = bytes[8 + i];
    if (labels[i] > 9) throw FormatError(name + ": label out of range", 8 + i);
  }
  return labels;
}

Dataset parse_cifar10_batch(std::span<const std::uint8_t> bytes, const std::string& name) {
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw FormatError(name + ": length " + std::to_string(bytes.size()) +
                          " is not a positive multiple of " + std::to_string(kCifarRecord),
                      bytes.size() - bytes.size() % kCifarRecord);
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset ds;
  ds.images = Tensor(Shape{n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t off = r * kCifarRecord;
    if (bytes[off] > 9) throw FormatError(name + ": label byte out of range", off);
    ds.labels[r] = bytes[off];
    double* dst = ds.images.data() + r * (kCifarRecord - 1);
    for (std::size_t i = 0; i + 1 < kCifarRecord; ++i) dst[i] = bytes[off + 1 + i] / 255.0;
  }
  return ds;
}

DatasetPair load_mnist(const std::filesystem::path& dir) {
  auto load = [&](const char* images_name, const char* images_alt, const char* labels_name,
                  const char* labels_alt, Split split) {
    const auto ip = find_file(dir, {images_name, images_alt});
    const auto lp = find_file(dir, {labels_name, labels_alt});
    Dataset ds;
    ds.images = parse_idx_images(read_file_bytes(ip), ip.string());
    ds.labels = parse_idx_labels(read_file_bytes(lp), lp.string());
    ds.split = split;
    if (ds.images.dim(0) != ds.labels.size()) {
      throw FormatError(ip.string() + " holds " + std::to_string(ds.images.dim(0)) +
                            " images but " + lp.string() + " holds " +
                            std::to_string(ds.labels.size()) + " labels",
                        4);
    }
    return ds;
  };
  return {load("train-images-idx3-ubyte", "train-images.idx3-ubyte", "train-labels-idx1-ubyte",
               "train-labels.idx1-ubyte", Split::Train),
          load("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte", "t10k-labels-idx1-ubyte",
               "t10k-labels.idx1-ubyte", Split::Test)};
}

DatasetPair load_cifar10(const std::filesystem::path& dir) {
  auto concat = [](std::vector<Dataset> parts, Split split) {
    std::size_t n = 0;
    for (const auto& p : parts) n += p.size();
    Dataset ds;
    ds.images = Tensor(Shape{n, 3, 32, 32});
    ds.split = split;
    std::size_t at = 0;
    for (const auto& p : parts) {
      std::copy(p.images.data(), p.images.data() + p.images.size(), ds.images.data() + at);
      at += p.images.size();
      ds.labels.insert(ds.labels.end(), p.labels.begin(), p.labels.end());
    }
    return ds;
  };
  std::vector<Dataset> train_parts;
  for (int i = 1; i <= 5; ++i) {
    const auto p = find_file(dir, {("data_batch_" + std::to_string(i) + ".bin").c_str()});
    train_parts.push_back(parse_cifar10_batch(read_file_bytes(p), p.string()));
  }
  const auto tp = find_file(dir, {"test_batch.bin"});
  std::vector<Dataset> test_parts;
  test_parts.push_back(parse_cifar10_batch(read_file_bytes(tp), tp.string()));
  return {concat(std::move(train_parts), Split::Train), concat(std::move(test_parts), Split::Test)};
}

Dataset slice(const Dataset& ds, std::size_t first, std::size_t count) {
  if (first + count > ds.size() || count == 0) {
    throw InputError("slice [" + std::to_string(first) + ", " + std::to_string(first + count) +
                     ") outside dataset of " + std::to_string(ds.size()));
  }
  Shape shape = ds.images.shape();
  shape[0] = count;
  const std::size_t per = ds.sample_size();
  Dataset out;
  out.images = Tensor(shape, std::vector<double>(ds.images.data() + first * per,
                                                 ds.images.data() + (first + count) * per));
  out.labels.assign(ds.labels.begin() + static_cast<std::ptrdiff_t>(first),
                    ds.labels.begin() + static_cast<std::ptrdiff_t>(first + count));
  out.split = ds.split;
  out.num_classes = ds.num_classes;
  return out;
}

Dataset split_validation(Dataset& train, std::size_t count) {
  if (count == 0 || count >= train.size()) {
    throw InputError("validation split of " + std::to_string(count) +
                     " leaves no training data out of " + std::to_string(train.size()));
  }
  const std::size_t keep = train.size() - count;
  Dataset val = slice(train, keep, count);
  val.split = Split::Validation;
  train = slice(train, 0, keep);
  return val;
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  Shape shape = ds.images.shape();
  shape[0] = indices.size();
  const std::size_t per = ds.sample_size();
  Batch b{Tensor(shape), std::vector<int>(indices.size())};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    std::copy(ds.images.data() + src * per, ds.images.data() + (src + 1) * per,
              b.images.data() + i * per);
    b.labels[i] = ds.labels[src];
  }
  return b;
}

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size), rng_(seed), order_(ds.size()) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
}

void BatchIterator::start_epoch() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  for (std::size_t i = order_.size(); i > 1; --i) {
    std::swap(order_[i - 1], order_[bounded_draw(rng_, i)]);
  }
  cursor_ = 0;
  if (started_) ++epoch_;
  started_ = true;
}

bool BatchIterator::next(Batch& out) {
  if (!started_) start_epoch();
  if (cursor_ >= order_.size()) return false;
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  out = gather(*ds_, std::span(order_).subspan(cursor_, n));
  cursor_ += n;
  return true;
}

}  // namespace binrep
