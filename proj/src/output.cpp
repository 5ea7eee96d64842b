#include "fedsel/output.hpp"

#include <unistd.h>

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fedsel {

namespace {

template <typename T>
T parse_field(std::string_view text, std::string_view what) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::runtime_error("bad CSV " + std::string(what) + " field '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) {
      return out;
    }
    start = pos + 1;
  }
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

std::uint64_t get_u64(std::string_view bytes, std::size_t& offset) {
  if (offset + 8 > bytes.size()) {
    throw std::runtime_error("truncated checkpoint file");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= std::uint64_t{static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(i)])} << (8 * i);
  }
  offset += 8;
  return v;
}

}  // namespace

std::string format_double(double value) {
  std::array<char, 64> buffer{};
  const auto [ptr, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  if (ec != std::errc()) {
    throw std::runtime_error("cannot format double");
  }
  return {buffer.data(), ptr};
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::filesystem::path temp = path;
  temp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot write " + temp.string());
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      throw std::runtime_error("short write to " + temp.string());
    }
  }
  std::filesystem::rename(temp, path);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot read " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string records_to_csv(const std::vector<RoundRecord>& records, StrategyKind strategy) {
  std::vector<CsvRow> rows;
  for (const auto& r : records) {
    if (!r.test) {
      continue;
    }
    CsvRow row;
    row.round = r.round;
    row.strategy = std::string(strategy_name(strategy));
    row.train_loss = r.full_train_loss.value_or(r.train_loss);
    row.test_accuracy = r.test->accuracy;
    for (std::size_t i = 0; i < r.selected.size(); ++i) {
      row.selected_clients += (i ? ";" : "") + std::to_string(r.selected[i]);
    }
    row.mean_grad_norm = r.mean_grad_norm();
    row.max_grad_norm = r.max_grad_norm();
    row.step_norm = r.step_norm;
    row.uplink_bytes = r.uplink_bytes;
    row.downlink_bytes = r.downlink_bytes;
    rows.push_back(std::move(row));
  }
  return rows_to_csv(rows);
}

std::string rows_to_csv(const std::vector<CsvRow>& rows) {
  std::string out(kCsvHeader);
  out += "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.round) + "," + r.strategy + "," + format_double(r.train_loss) + "," +
           format_double(r.test_accuracy) + "," + r.selected_clients + "," + format_double(r.mean_grad_norm) + "," +
           format_double(r.max_grad_norm) + "," + format_double(r.step_norm) + "," + std::to_string(r.uplink_bytes) +
           "," + std::to_string(r.downlink_bytes) + "\n";
  }
  return out;
}

std::vector<CsvRow> parse_results_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  std::size_t start = 0;
  bool header = true;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      end = text.size();
    }
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (header) {
      if (line != kCsvHeader) {
        throw std::runtime_error("unexpected CSV header");
      }
      header = false;
      continue;
    }
    if (line.empty()) {
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 10) {
      throw std::runtime_error("CSV row has " + std::to_string(f.size()) + " fields, expected 10");
    }
    CsvRow row;
    row.round = parse_field<std::size_t>(f[0], "round");
    row.strategy = std::string(f[1]);
    row.train_loss = parse_field<double>(f[2], "train_loss");
    row.test_accuracy = parse_field<double>(f[3], "test_accuracy");
    row.selected_clients = std::string(f[4]);
    row.mean_grad_norm = parse_field<double>(f[5], "mean_grad_norm");
    row.max_grad_norm = parse_field<double>(f[6], "max_grad_norm");
    row.step_norm = parse_field<double>(f[7], "step_norm");
    row.uplink_bytes = parse_field<std::uint64_t>(f[8], "uplink_bytes");
    row.downlink_bytes = parse_field<std::uint64_t>(f[9], "downlink_bytes");
    rows.push_back(std::move(row));
  }
  if (header) {
    throw std::runtime_error("empty CSV");
  }
  return rows;
}

std::string encode_checkpoints(const std::vector<Checkpoint>& checkpoints) {
  std::string out = "FSCK";
  put_u64(out, checkpoints.size());
  for (const auto& cp : checkpoints) {
    put_u64(out, cp.round);
    put_u64(out, cp.w.size());
    for (double v : cp.w.values()) {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

std::vector<Checkpoint> decode_checkpoints(std::string_view bytes) {
  if (bytes.substr(0, 4) != "FSCK") {
    throw std::runtime_error("not a checkpoint file");
  }
  std::size_t offset = 4;
  const std::uint64_t count = get_u64(bytes, offset);
  std::vector<Checkpoint> out;
  for (std::uint64_t c = 0; c < count; ++c) {
    Checkpoint cp;
    cp.round = get_u64(bytes, offset);
    const std::uint64_t d = get_u64(bytes, offset);
    cp.w = ParamVector(d);
    for (std::uint64_t i = 0; i < d; ++i) {
      cp.w[i] = std::bit_cast<double>(get_u64(bytes, offset));
    }
    out.push_back(std::move(cp));
  }
  return out;
}

}  // namespace fedsel
