#pragma once

// Run artifacts: the per-round CSV, checkpoint files and atomic writes.

#include "fedsel/federation.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedsel {

/// Shortest decimal text that reads back to the same double.
std::string format_double(double value);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_text_file(const std::filesystem::path& path);

inline constexpr std::string_view kCsvHeader =
    "round,strategy,train_loss,test_accuracy,selected_clients,mean_grad_norm,max_grad_norm,step_norm,"
    "uplink_bytes,downlink_bytes";

/// One parsed CSV row. selected_clients is kept as its raw `;`-joined cell.
struct CsvRow {
  std::size_t round = 0;
  std::string strategy;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  std::string selected_clients;
  double mean_grad_norm = 0.0;
  double max_grad_norm = 0.0;
  double step_norm = 0.0;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
};

/// Header plus one row per evaluated record. train_loss is the full
/// training-set loss when it was computed, else the mean client batch loss.
std::string records_to_csv(const std::vector<RoundRecord>& records, StrategyKind strategy);
std::string rows_to_csv(const std::vector<CsvRow>& rows);
/// Throws std::runtime_error on a header or field mismatch.
std::vector<CsvRow> parse_results_csv(std::string_view text);

/// Binary checkpoint stream: "FSCK", u64 count, then per checkpoint
/// u64 round, u64 d and d little-endian doubles.
std::string encode_checkpoints(const std::vector<Checkpoint>& checkpoints);
std::vector<Checkpoint> decode_checkpoints(std::string_view bytes);

}  // namespace fedsel
