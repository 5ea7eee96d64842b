#include "fedsel/data.hpp"

#include "fedsel/rng.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace fedsel {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& compressed, const std::string& origin) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) {
    throw DataError(DataErrorKind::Io, "zlib init failed for " + origin);
  }
  zs.next_in = const_cast<Bytef*>(compressed.data());
  zs.avail_in = static_cast<uInt>(compressed.size());
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 20);
  int status = Z_OK;
  while (status != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    status = inflate(&zs, Z_NO_FLUSH);
    if (status != Z_OK && status != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError(DataErrorKind::Truncated, "corrupt or truncated gzip stream in " + origin);
    }
    out.insert(out.end(), chunk.begin(), chunk.begin() + static_cast<std::ptrdiff_t>(chunk.size() - zs.avail_out));
    if (status == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw DataError(DataErrorKind::Truncated, "truncated gzip stream in " + origin);
    }
  }
  inflateEnd(&zs);
  return out;
}

}  // namespace

// Dataset -------------------------------------------------------------------

Dataset Dataset::from_bytes(std::string name, std::size_t input_dim, std::vector<std::uint8_t> bytes,
                            std::vector<int> labels, int num_classes) {
  if (labels.empty()) {
    throw DataError(DataErrorKind::Empty, name + ": dataset has no samples");
  }
  if (bytes.size() != labels.size() * input_dim) {
    throw DataError(DataErrorKind::CountMismatch, name + ": pixel buffer does not match sample count");
  }
  Dataset ds;
  ds.name_ = std::move(name);
  ds.input_dim_ = input_dim;
  ds.num_classes_ = num_classes;
  ds.storage_ = std::move(bytes);
  ds.labels_ = std::move(labels);
  return ds;
}

Dataset Dataset::from_values(std::string name, std::size_t input_dim, std::vector<double> values,
                             std::vector<int> labels, int num_classes) {
  if (labels.empty()) {
    throw DataError(DataErrorKind::Empty, name + ": dataset has no samples");
  }
  if (values.size() != labels.size() * input_dim) {
    throw DataError(DataErrorKind::CountMismatch, name + ": value buffer does not match sample count");
  }
  Dataset ds;
  ds.name_ = std::move(name);
  ds.input_dim_ = input_dim;
  ds.num_classes_ = num_classes;
  ds.storage_ = std::move(values);
  ds.labels_ = std::move(labels);
  return ds;
}

double Dataset::value(std::size_t row, std::size_t col) const {
  const std::size_t at = row * input_dim_ + col;
  if (const auto* bytes = std::get_if<std::vector<std::uint8_t>>(&storage_)) {
    return static_cast<double>((*bytes)[at]) / 255.0;
  }
  return std::get<std::vector<double>>(storage_)[at];
}

void Dataset::copy_row(std::size_t row, std::span<double> out) const {
  const std::size_t base = row * input_dim_;
  if (const auto* bytes = std::get_if<std::vector<std::uint8_t>>(&storage_)) {
    for (std::size_t j = 0; j < input_dim_; ++j) {
      out[j] = static_cast<double>((*bytes)[base + j]) / 255.0;
    }
  } else {
    const auto& values = std::get<std::vector<double>>(storage_);
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(base), input_dim_, out.begin());
  }
}

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  Batch batch;
  batch.inputs.resize(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(input_dim_));
  batch.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    copy_row(indices[i], {batch.inputs.data() + i * input_dim_, input_dim_});
    batch.labels.push_back(labels_[indices[i]]);
  }
  return batch;
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > size()) {
    throw DataError(DataErrorKind::Empty, name_ + ": invalid slice");
  }
  const auto first = static_cast<std::ptrdiff_t>(begin * input_dim_);
  const auto last = static_cast<std::ptrdiff_t>(end * input_dim_);
  std::vector<int> labels(labels_.begin() + static_cast<std::ptrdiff_t>(begin),
                          labels_.begin() + static_cast<std::ptrdiff_t>(end));
  return std::visit(
      [&](const auto& buffer) {
        Dataset ds;
        ds.name_ = name_;
        ds.input_dim_ = input_dim_;
        ds.num_classes_ = num_classes_;
        ds.storage_ = std::decay_t<decltype(buffer)>(buffer.begin() + first, buffer.begin() + last);
        ds.labels_ = std::move(labels);
        return ds;
      },
      storage_);
}

std::vector<std::size_t> Dataset::class_histogram() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes_), 0);
  for (int y : labels_) {
    ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

// IDX -----------------------------------------------------------------------

std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(DataErrorKind::Io, "cannot open " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B) {
    return gunzip(bytes, path.string());
  }
  return bytes;
}

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) {
    throw DataError(DataErrorKind::Truncated, "IDX image header truncated");
  }
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxImagesMagic) {
    throw DataError(DataErrorKind::BadMagic, "bad IDX image magic " + std::to_string(magic));
  }
  if (bytes.size() < 16) {
    throw DataError(DataErrorKind::Truncated, "IDX image header truncated");
  }
  IdxImages images;
  images.count = read_be32(bytes, 4);
  images.rows = read_be32(bytes, 8);
  images.cols = read_be32(bytes, 12);
  const std::size_t payload = images.count * images.rows * images.cols;
  if (bytes.size() - 16 < payload) {
    throw DataError(DataErrorKind::Truncated, "IDX image payload truncated");
  }
  images.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
  return images;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) {
    throw DataError(DataErrorKind::Truncated, "IDX label header truncated");
  }
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxLabelsMagic) {
    throw DataError(DataErrorKind::BadMagic, "bad IDX label magic " + std::to_string(magic));
  }
  if (bytes.size() < 8) {
    throw DataError(DataErrorKind::Truncated, "IDX label header truncated");
  }
  const std::size_t count = read_be32(bytes, 4);
  if (bytes.size() - 8 < count) {
    throw DataError(DataErrorKind::Truncated, "IDX label payload truncated");
  }
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  write_be32(out, kIdxImagesMagic);
  write_be32(out, static_cast<std::uint32_t>(images.count));
  write_be32(out, static_cast<std::uint32_t>(images.rows));
  write_be32(out, static_cast<std::uint32_t>(images.cols));
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  write_be32(out, kIdxLabelsMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::string name) {
  IdxImages images = parse_idx_images(read_maybe_gzip(images_path));
  const std::vector<std::uint8_t> raw_labels = parse_idx_labels(read_maybe_gzip(labels_path));
  if (images.count != raw_labels.size()) {
    throw DataError(DataErrorKind::CountMismatch, "IDX image count " + std::to_string(images.count) +
                                                      " != label count " + std::to_string(raw_labels.size()));
  }
  std::vector<int> labels;
  labels.reserve(raw_labels.size());
  for (std::uint8_t y : raw_labels) {
    if (y > 9) {
      throw DataError(DataErrorKind::BadLabel, "IDX label " + std::to_string(y) + " outside [0, 10)");
    }
    labels.push_back(y);
  }
  return Dataset::from_bytes(std::move(name), images.rows * images.cols, std::move(images.pixels),
                             std::move(labels), 10);
}

// CIFAR-10 ------------------------------------------------------------------

void parse_cifar10(std::span<const std::uint8_t> bytes, std::vector<std::uint8_t>& pixels,
                   std::vector<int>& labels) {
  if (bytes.empty()) {
    throw DataError(DataErrorKind::Empty, "empty CIFAR-10 batch");
  }
  if (bytes.size() % kCifarRecord != 0) {
    throw DataError(DataErrorKind::BadRecordSize,
                    "CIFAR-10 batch size " + std::to_string(bytes.size()) + " is not a multiple of 3073");
  }
  const std::size_t records = bytes.size() / kCifarRecord;
  pixels.reserve(pixels.size() + records * kCifarPixels);
  labels.reserve(labels.size() + records);
  for (std::size_t r = 0; r < records; ++r) {
    const auto record = bytes.subspan(r * kCifarRecord, kCifarRecord);
    if (record[0] > 9) {
      throw DataError(DataErrorKind::BadLabel, "CIFAR-10 label byte " + std::to_string(record[0]) + " > 9");
    }
    labels.push_back(record[0]);
    pixels.insert(pixels.end(), record.begin() + 1, record.end());
  }
}

Dataset load_cifar10(std::span<const std::filesystem::path> batch_paths, std::string name) {
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  for (const auto& path : batch_paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      throw DataError(DataErrorKind::Io, "cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
      parse_cifar10(bytes, pixels, labels);
    } catch (const DataError& e) {
      throw DataError(e.kind(), path.string() + ": " + e.what());
    }
  }
  return Dataset::from_bytes(std::move(name), kCifarPixels, std::move(pixels), std::move(labels), 10);
}

// Synthetic -----------------------------------------------------------------

Dataset synthetic_logistic(std::size_t n, std::size_t dim, int num_classes, std::uint64_t seed) {
  if (n == 0 || dim == 0 || num_classes < 1) {
    throw DataError(DataErrorKind::Empty, "synthetic_logistic needs n, dim, num_classes >= 1");
  }
  rng::Stream stream(rng::derive(seed, {0x5e7}));
  const auto classes = static_cast<std::size_t>(num_classes);
  std::vector<double> hidden(classes * dim);
  for (double& h : hidden) {
    h = stream.normal();
  }
  std::vector<double> values(n * dim);
  std::vector<int> labels(n);
  std::vector<double> logit(classes);
  for (std::size_t i = 0; i < n; ++i) {
    double* x = values.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) {
      x[j] = stream.normal();
    }
    double peak = -INFINITY;
    for (std::size_t c = 0; c < classes; ++c) {
      double z = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        z += hidden[c * dim + j] * x[j];
      }
      logit[c] = z;
      peak = std::max(peak, z);
    }
    double total = 0.0;
    for (double& z : logit) {
      z = std::exp(z - peak);
      total += z;
    }
    const double u = stream.uniform() * total;
    double cumulative = 0.0;
    int label = num_classes - 1;
    for (std::size_t c = 0; c < classes; ++c) {
      cumulative += logit[c];
      if (u < cumulative) {
        label = static_cast<int>(c);
        break;
      }
    }
    labels[i] = label;
  }
  return Dataset::from_values("synthetic", dim, std::move(values), std::move(labels), num_classes);
}

// Partitioning --------------------------------------------------------------

namespace {

std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& proportions) {
  const std::size_t k = proportions.size();
  std::vector<std::size_t> counts(k);
  std::vector<double> fractional(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = static_cast<double>(total) * proportions[i];
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    fractional[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fractional[a] > fractional[b]; });
  // Floating-point floor can overshoot by one in degenerate cases.
  while (assigned > total) {
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) {
    ++counts[order[r % k]];
  }
  return counts;
}

std::vector<ClientShard> draw_partition(const std::vector<std::vector<std::size_t>>& by_class, std::size_t clients,
                                        double beta, std::uint64_t seed) {
  rng::Stream stream(seed);
  std::vector<ClientShard> shards(clients);
  for (std::size_t k = 0; k < clients; ++k) {
    shards[k].client_id = static_cast<int>(k);
  }
  std::vector<double> p(clients);
  for (const auto& members : by_class) {
    double total = 0.0;
    do {
      total = 0.0;
      for (double& x : p) {
        x = stream.gamma(beta);
        total += x;
      }
    } while (!(total > 0.0));
    for (double& x : p) {
      x /= total;
    }
    std::vector<std::size_t> pool = members;
    for (std::size_t i = pool.size(); i > 1; --i) {
      std::swap(pool[i - 1], pool[stream.below(i)]);
    }
    const auto counts = largest_remainder(pool.size(), p);
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < clients; ++k) {
      shards[k].indices.insert(shards[k].indices.end(), pool.begin() + static_cast<std::ptrdiff_t>(cursor),
                               pool.begin() + static_cast<std::ptrdiff_t>(cursor + counts[k]));
      cursor += counts[k];
    }
  }
  for (auto& shard : shards) {
    std::sort(shard.indices.begin(), shard.indices.end());
  }
  return shards;
}

}  // namespace

std::vector<ClientShard> dirichlet_partition(const Dataset& ds, const PartitionSpec& spec) {
  if (spec.clients < 1) {
    throw std::invalid_argument("partition needs at least one client");
  }
  if (!(spec.beta > 0.0)) {
    throw std::invalid_argument("Dirichlet concentration must be positive");
  }
  if (spec.clients * spec.min_shard_size > ds.size()) {
    throw DataError(DataErrorKind::Infeasible, std::to_string(spec.clients) + " clients x " +
                                                   std::to_string(spec.min_shard_size) + " samples exceeds " +
                                                   std::to_string(ds.size()) + " available");
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.label(i))].push_back(i);
  }
  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto shards = draw_partition(by_class, spec.clients, spec.beta,
                                 rng::derive(spec.seed, {0xd1c1, static_cast<std::uint64_t>(attempt)}));
    const bool feasible = std::all_of(shards.begin(), shards.end(), [&](const ClientShard& s) {
      return s.indices.size() >= spec.min_shard_size;
    });
    if (feasible) {
      return shards;
    }
  }
  throw DataError(DataErrorKind::Infeasible,
                  "no partition with every shard >= " + std::to_string(spec.min_shard_size) + " samples after " +
                      std::to_string(kMaxAttempts) + " attempts");
}

std::vector<std::size_t> sample_indices(const ClientShard& shard, std::size_t batch_size, std::uint64_t round_seed) {
  if (shard.indices.empty()) {
    throw DataError(DataErrorKind::Empty, "client " + std::to_string(shard.client_id) + " has an empty shard");
  }
  rng::Stream stream(rng::derive(round_seed, {static_cast<std::uint64_t>(shard.client_id)}));
  std::vector<std::size_t> pool = shard.indices;
  const std::size_t take = std::min(batch_size, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::swap(pool[i], pool[i + stream.below(pool.size() - i)]);
  }
  pool.resize(take);
  return pool;
}

Batch sample_batch(const Dataset& ds, const ClientShard& shard, std::size_t batch_size, std::uint64_t round_seed) {
  return ds.gather(sample_indices(shard, batch_size, round_seed));
}

}  // namespace fedsel
