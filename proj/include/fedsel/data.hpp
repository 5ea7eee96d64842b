#pragma once

// Dataset ingestion (IDX, CIFAR-10 binary, synthetic multinomial-logistic),
// Dirichlet non-iid partitioning and per-round batch sampling.

#include "fedsel/nn.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace fedsel {

enum class DataErrorKind {
  Io,
  BadMagic,
  Truncated,
  CountMismatch,
  BadRecordSize,
  BadLabel,
  Empty,
  Infeasible,
};

class DataError : public std::runtime_error {
 public:
  DataError(DataErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  DataErrorKind kind() const { return kind_; }

 private:
  DataErrorKind kind_;
};

/// n samples of input_dim features plus labels in [0, num_classes).
/// Image datasets keep raw bytes and scale by 1/255 on access; synthetic data
/// stores doubles.
class Dataset {
 public:
  static Dataset from_bytes(std::string name, std::size_t input_dim, std::vector<std::uint8_t> bytes,
                            std::vector<int> labels, int num_classes);
  static Dataset from_values(std::string name, std::size_t input_dim, std::vector<double> values,
                             std::vector<int> labels, int num_classes);

  const std::string& name() const { return name_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t input_dim() const { return input_dim_; }
  int num_classes() const { return num_classes_; }
  const std::vector<int>& labels() const { return labels_; }
  int label(std::size_t i) const { return labels_[i]; }

  double value(std::size_t row, std::size_t col) const;
  void copy_row(std::size_t row, std::span<double> out) const;

  /// Rows `indices`, in the given order.
  Batch gather(std::span<const std::size_t> indices) const;
  /// Rows [begin, end) as a new dataset.
  Dataset slice(std::size_t begin, std::size_t end) const;

  std::vector<std::size_t> class_histogram() const;

 private:
  Dataset() = default;

  std::string name_;
  std::size_t input_dim_ = 0;
  int num_classes_ = 0;
  std::variant<std::vector<std::uint8_t>, std::vector<double>> storage_;
  std::vector<int> labels_;
};

struct ClientShard {
  int client_id = 0;
  std::vector<std::size_t> indices;

  bool operator==(const ClientShard&) const = default;
};

struct PartitionSpec {
  std::size_t clients = 1;
  double beta = 1.0;
  std::uint64_t seed = 0;
  std::size_t min_shard_size = 10;
};

// IDX ---------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads a whole file, inflating it when it starts with the gzip signature.
std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path);

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_idx_images(const IdxImages& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

/// MNIST-style pair of IDX files (optionally gzip-compressed). Pixels scale
/// by 1/255; labels must lie in [0, 10).
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::string name = "idx");

// CIFAR-10 ----------------------------------------------------------------

inline constexpr std::size_t kCifarPixels = 3072;
inline constexpr std::size_t kCifarRecord = kCifarPixels + 1;

/// Parses a CIFAR-10 binary batch: 3073-byte records, label byte first.
void parse_cifar10(std::span<const std::uint8_t> bytes, std::vector<std::uint8_t>& pixels,
                   std::vector<int>& labels);
Dataset load_cifar10(std::span<const std::filesystem::path> batch_paths, std::string name = "cifar10");

// Synthetic ---------------------------------------------------------------

/// Gaussian inputs x ~ N(0, I_dim); label drawn from softmax(W x) with a
/// hidden W (num_classes x dim, entries N(0, 1)). Draw order: W row-major,
/// then per sample dim normals followed by one uniform for the label.
Dataset synthetic_logistic(std::size_t n, std::size_t dim, int num_classes, std::uint64_t seed);

// Partitioning and sampling -------------------------------------------------

/// Per class c, p_c ~ Dir_K(beta) and the (shuffled) indices of c go to
/// clients in proportion to p_c with largest-remainder rounding. The whole
/// partition is redrawn (up to 100 attempts) until every shard has at least
/// min_shard_size samples.
std::vector<ClientShard> dirichlet_partition(const Dataset& ds, const PartitionSpec& spec);

/// Indices of a uniform sample without replacement of min(batch_size, |shard|)
/// shard positions. Depends only on (round_seed, shard.client_id).
std::vector<std::size_t> sample_indices(const ClientShard& shard, std::size_t batch_size, std::uint64_t round_seed);

Batch sample_batch(const Dataset& ds, const ClientShard& shard, std::size_t batch_size, std::uint64_t round_seed);

}  // namespace fedsel
