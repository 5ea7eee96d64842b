#pragma once

// Experiment configuration: a flat `key = value` text file. Lists use
// brackets (`clients_per_round = [1, 25]`); `#` starts a comment. List-valued
// keys define a sweep over their cross product.

#include "fedsel/selection.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsel {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0, std::string key = {})
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line),
        key_(std::move(key)) {}
  std::size_t line() const { return line_; }
  /// Offending key for errors raised after parsing, empty otherwise.
  const std::string& key() const { return key_; }

 private:
  std::size_t line_;
  std::string key_;
};

enum class DatasetKind { Mnist, Fmnist, Cifar10, Synthetic };

std::string dataset_name(DatasetKind kind);

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::Mnist;
  std::string data_dir;
  std::string train_images, train_labels, test_images, test_labels;  // IDX overrides
  std::vector<std::string> cifar_train, cifar_test;                  // CIFAR overrides

  std::size_t synthetic_n = 2000;
  std::size_t synthetic_test_n = 500;
  std::size_t synthetic_dim = 10;
  int synthetic_classes = 3;
  std::uint64_t synthetic_seed = 7;

  std::vector<std::size_t> hidden = {200, 200};
  bool hidden_set = false;  // synthetic data defaults to no hidden layers

  std::size_t clients = 100;
  std::vector<std::size_t> clients_per_round = {25};
  std::vector<double> beta = {0.3};
  std::vector<double> eta = {0.1};
  std::vector<StrategyKind> strategy = {StrategyKind::HighestGradientNorm};
  std::vector<std::uint64_t> seed = {1};
  std::uint64_t partition_seed = 0;
  std::size_t min_shard_size = 10;

  std::size_t rounds = 500;
  std::size_t batch_size = 64;
  std::size_t eval_stride = 1;
  std::size_t checkpoint_stride = 0;
  std::vector<std::size_t> sweep_rounds;  // rounds reported in sweep tables
  bool weighted_aggregation = false;
  bool full_train_loss = false;
  std::size_t threads = 1;
  std::string output_dir = "runs/default";

  /// Hidden widths after applying the dataset default.
  std::vector<std::size_t> hidden_layers() const;
  bool is_sweep() const;
  /// One single-valued config per point of the cross product, ordered by
  /// strategy, clients_per_round, beta, eta, seed.
  std::vector<ExperimentConfig> cells() const;
  /// Stable per-cell directory name.
  std::string cell_name() const;
  /// Throws ConfigError on violated invariants.
  void validate() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Text that parses back to an identical config.
std::string serialize_config(const ExperimentConfig& config);

}  // namespace fedsel
