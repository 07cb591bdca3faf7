#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "binrep/tensor.hpp"

namespace binrep {

enum class Split : std::uint8_t { Train, Validation, Test };

/// Images are [n, c, h, w] with pixels already scaled by 1/255.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  Split split = Split::Train;
  std::size_t num_classes = 10;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const;
  std::size_t sample_size() const;
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

/// Reads a whole file; gzip-compressed files are inflated transparently.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Parses an IDX image file (magic 0x00000803) into [n, 1, rows, cols].
Tensor parse_idx_images(std::span<const std::uint8_t> bytes, const std::string& name);
/// Parses an IDX label file (magic 0x00000801).
std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes, const std::string& name);
/// Parses CIFAR-10 binary records (1 label byte + 3072 channel-major pixels).
Dataset parse_cifar10_batch(std::span<const std::uint8_t> bytes, const std::string& name);

/// Standard MNIST file names, optionally gzipped, in `dir`.
DatasetPair load_mnist(const std::filesystem::path& dir);
/// data_batch_1..5.bin and test_batch.bin in `dir`.
DatasetPair load_cifar10(const std::filesystem::path& dir);

/// Moves the last `count` samples of `train` into a validation split.
Dataset split_validation(Dataset& train, std::size_t count = 5000);
/// Copy of samples [first, first + count).
Dataset slice(const Dataset& ds, std::size_t first, std::size_t count);

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

Batch gather(const Dataset& ds, std::span<const std::size_t> indices);

/// Deterministic shuffled mini-batches. Each epoch draws a fresh permutation
/// from a generator seeded once, so the sequence of epochs is a pure function
/// of the seed. The last partial batch is emitted.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed);

  /// Reshuffles and rewinds; called implicitly by the first next().
  void start_epoch();
  bool next(Batch& out);

  std::size_t epoch() const noexcept { return epoch_; }
  std::span<const std::size_t> order() const noexcept { return order_; }

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  bool started_ = false;
};

}  // namespace binrep
