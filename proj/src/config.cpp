#include "fedsel/config.hpp"

#include "fedsel/output.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace fedsel {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

std::vector<std::string> split_items(const std::string& value, std::size_t line) {
  if (value.empty()) {
    throw ConfigError("missing value", line);
  }
  if (value.front() != '[') {
    return {unquote(value)};
  }
  if (value.back() != ']') {
    throw ConfigError("unterminated list", line);
  }
  std::vector<std::string> items;
  const std::string inner = value.substr(1, value.size() - 2);
  if (trim(inner).empty()) {
    return items;
  }
  std::stringstream stream(inner);
  std::string item;
  while (std::getline(stream, item, ',')) {
    item = trim(item);
    if (item.empty()) {
      throw ConfigError("empty list item", line);
    }
    items.push_back(unquote(item));
  }
  return items;
}

template <typename T>
T parse_number(const std::string& text, std::size_t line) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("'" + text + "' is not a valid number", line);
  }
  return value;
}

bool parse_bool(const std::string& text, std::size_t line) {
  if (text == "true") {
    return true;
  }
  if (text == "false") {
    return false;
  }
  throw ConfigError("'" + text + "' is not true/false", line);
}

std::string single(const std::vector<std::string>& items, std::size_t line) {
  if (items.size() != 1) {
    throw ConfigError("expected a single value", line);
  }
  return items.front();
}

template <typename T>
std::vector<T> number_list(const std::vector<std::string>& items, std::size_t line) {
  std::vector<T> out;
  for (const auto& item : items) {
    out.push_back(parse_number<T>(item, line));
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values, const std::function<std::string(const T&)>& fmt) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    out += (i ? ", " : "") + fmt(values[i]);
  }
  return out + "]";
}

std::string fmt_size(const std::size_t& v) { return std::to_string(v); }
std::string fmt_u64(const std::uint64_t& v) { return std::to_string(v); }
std::string fmt_double(const double& v) { return format_double(v); }
std::string fmt_string(const std::string& v) { return "\"" + v + "\""; }
std::string fmt_strategy(const StrategyKind& v) { return std::string(strategy_name(v)); }

}  // namespace

std::string dataset_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::Mnist:
      return "mnist";
    case DatasetKind::Fmnist:
      return "fmnist";
    case DatasetKind::Cifar10:
      return "cifar10";
    case DatasetKind::Synthetic:
      return "synthetic";
  }
  return "unknown";
}

std::vector<std::size_t> ExperimentConfig::hidden_layers() const {
  if (!hidden_set && dataset == DatasetKind::Synthetic) {
    return {};
  }
  return hidden;
}

bool ExperimentConfig::is_sweep() const {
  return clients_per_round.size() > 1 || beta.size() > 1 || eta.size() > 1 || strategy.size() > 1 || seed.size() > 1;
}

std::vector<ExperimentConfig> ExperimentConfig::cells() const {
  std::vector<ExperimentConfig> out;
  for (StrategyKind s : strategy) {
    for (std::size_t c : clients_per_round) {
      for (double b : beta) {
        for (double e : eta) {
          for (std::uint64_t sd : seed) {
            ExperimentConfig cell = *this;
            cell.strategy = {s};
            cell.clients_per_round = {c};
            cell.beta = {b};
            cell.eta = {e};
            cell.seed = {sd};
            out.push_back(std::move(cell));
          }
        }
      }
    }
  }
  return out;
}

std::string ExperimentConfig::cell_name() const {
  return std::string(strategy_name(strategy.front())) + "_C" + std::to_string(clients_per_round.front()) + "_beta" +
         format_double(beta.front()) + "_eta" + format_double(eta.front()) + "_seed" + std::to_string(seed.front());
}

void ExperimentConfig::validate() const {
  if (clients < 1) {
    throw ConfigError("clients must be >= 1", 0, "clients");
  }
  if (clients_per_round.empty() || beta.empty() || eta.empty() || strategy.empty() || seed.empty()) {
    throw ConfigError("list-valued keys need at least one value");
  }
  for (std::size_t c : clients_per_round) {
    if (c < 1 || c > clients) {
      throw ConfigError("clients_per_round " + std::to_string(c) + " outside [1, " + std::to_string(clients) + "]", 0, "clients_per_round");
    }
  }
  for (double b : beta) {
    if (!(b > 0.0)) {
      throw ConfigError("beta must be > 0", 0, "beta");
    }
  }
  for (double e : eta) {
    if (!(e > 0.0)) {
      throw ConfigError("eta must be > 0", 0, "eta");
    }
  }
  if (batch_size < 1) {
    throw ConfigError("batch_size must be >= 1", 0, "batch_size");
  }
  if (min_shard_size < 1) {
    throw ConfigError("min_shard_size must be >= 1", 0, "min_shard_size");
  }
  if (eval_stride < 1) {
    throw ConfigError("eval_stride must be >= 1", 0, "eval_stride");
  }
  if (threads < 1) {
    throw ConfigError("threads must be >= 1", 0, "threads");
  }
  for (std::size_t r : sweep_rounds) {
    if (r < 1 || r > rounds) {
      throw ConfigError("sweep round " + std::to_string(r) + " outside [1, rounds]", 0, "sweep_rounds");
    }
    if (r % eval_stride != 0) {
      throw ConfigError("eval_stride " + std::to_string(eval_stride) + " does not divide sweep round " +
                        std::to_string(r),
                        0, "sweep_rounds");
    }
  }
  if (dataset == DatasetKind::Synthetic) {
    if (synthetic_n < 1 || synthetic_test_n < 1 || synthetic_dim < 1 || synthetic_classes < 1) {
      throw ConfigError("synthetic sizes must be >= 1");
    }
  } else if (data_dir.empty() && train_images.empty() && cifar_train.empty()) {
    throw ConfigError("data_dir is required for " + dataset_name(dataset));
  }
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  using Handler = std::function<void(const std::vector<std::string>&, std::size_t)>;
  const std::map<std::string, Handler> handlers = {
      {"dataset",
       [&](const auto& v, std::size_t line) {
         const std::string name = single(v, line);
         if (name == "mnist") {
           cfg.dataset = DatasetKind::Mnist;
         } else if (name == "fmnist") {
           cfg.dataset = DatasetKind::Fmnist;
         } else if (name == "cifar10") {
           cfg.dataset = DatasetKind::Cifar10;
         } else if (name == "synthetic") {
           cfg.dataset = DatasetKind::Synthetic;
         } else {
           throw ConfigError("unknown dataset '" + name + "'", line);
         }
       }},
      {"data_dir", [&](const auto& v, std::size_t line) { cfg.data_dir = single(v, line); }},
      {"train_images", [&](const auto& v, std::size_t line) { cfg.train_images = single(v, line); }},
      {"train_labels", [&](const auto& v, std::size_t line) { cfg.train_labels = single(v, line); }},
      {"test_images", [&](const auto& v, std::size_t line) { cfg.test_images = single(v, line); }},
      {"test_labels", [&](const auto& v, std::size_t line) { cfg.test_labels = single(v, line); }},
      {"cifar_train", [&](const auto& v, std::size_t) { cfg.cifar_train = v; }},
      {"cifar_test", [&](const auto& v, std::size_t) { cfg.cifar_test = v; }},
      {"synthetic_n",
       [&](const auto& v, std::size_t line) { cfg.synthetic_n = parse_number<std::size_t>(single(v, line), line); }},
      {"synthetic_test_n",
       [&](const auto& v, std::size_t line) {
         cfg.synthetic_test_n = parse_number<std::size_t>(single(v, line), line);
       }},
      {"synthetic_dim",
       [&](const auto& v, std::size_t line) { cfg.synthetic_dim = parse_number<std::size_t>(single(v, line), line); }},
      {"synthetic_classes",
       [&](const auto& v, std::size_t line) { cfg.synthetic_classes = parse_number<int>(single(v, line), line); }},
      {"synthetic_seed",
       [&](const auto& v, std::size_t line) {
         cfg.synthetic_seed = parse_number<std::uint64_t>(single(v, line), line);
       }},
      {"hidden",
       [&](const auto& v, std::size_t line) {
         cfg.hidden = number_list<std::size_t>(v, line);
         cfg.hidden_set = true;
       }},
      {"clients",
       [&](const auto& v, std::size_t line) { cfg.clients = parse_number<std::size_t>(single(v, line), line); }},
      {"clients_per_round",
       [&](const auto& v, std::size_t line) { cfg.clients_per_round = number_list<std::size_t>(v, line); }},
      {"beta", [&](const auto& v, std::size_t line) { cfg.beta = number_list<double>(v, line); }},
      {"eta", [&](const auto& v, std::size_t line) { cfg.eta = number_list<double>(v, line); }},
      {"strategy",
       [&](const auto& v, std::size_t line) {
         cfg.strategy.clear();
         for (const auto& item : v) {
           const auto kind = parse_strategy(item);
           if (!kind) {
             throw ConfigError("unknown strategy '" + item + "' (grad_norm, loss, random, full)", line);
           }
           cfg.strategy.push_back(*kind);
         }
       }},
      {"seed", [&](const auto& v, std::size_t line) { cfg.seed = number_list<std::uint64_t>(v, line); }},
      {"partition_seed",
       [&](const auto& v, std::size_t line) {
         cfg.partition_seed = parse_number<std::uint64_t>(single(v, line), line);
       }},
      {"min_shard_size",
       [&](const auto& v, std::size_t line) { cfg.min_shard_size = parse_number<std::size_t>(single(v, line), line); }},
      {"rounds",
       [&](const auto& v, std::size_t line) { cfg.rounds = parse_number<std::size_t>(single(v, line), line); }},
      {"batch_size",
       [&](const auto& v, std::size_t line) { cfg.batch_size = parse_number<std::size_t>(single(v, line), line); }},
      {"eval_stride",
       [&](const auto& v, std::size_t line) { cfg.eval_stride = parse_number<std::size_t>(single(v, line), line); }},
      {"checkpoint_stride",
       [&](const auto& v, std::size_t line) {
         cfg.checkpoint_stride = parse_number<std::size_t>(single(v, line), line);
       }},
      {"sweep_rounds", [&](const auto& v, std::size_t line) { cfg.sweep_rounds = number_list<std::size_t>(v, line); }},
      {"weighted_aggregation",
       [&](const auto& v, std::size_t line) { cfg.weighted_aggregation = parse_bool(single(v, line), line); }},
      {"full_train_loss",
       [&](const auto& v, std::size_t line) { cfg.full_train_loss = parse_bool(single(v, line), line); }},
      {"threads",
       [&](const auto& v, std::size_t line) { cfg.threads = parse_number<std::size_t>(single(v, line), line); }},
      {"output_dir", [&](const auto& v, std::size_t line) { cfg.output_dir = single(v, line); }},
  };

  std::map<std::string, std::size_t> seen;
  std::istringstream stream(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(stream, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string content = trim(std::string_view(raw).substr(0, hash));
    if (content.empty()) {
      continue;
    }
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("expected 'key = value'", line);
    }
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    const auto handler = handlers.find(key);
    if (handler == handlers.end()) {
      throw ConfigError("unknown key '" + key + "'", line);
    }
    if (!seen.emplace(key, line).second) {
      throw ConfigError("duplicate key '" + key + "'", line);
    }
    handler->second(split_items(value, line), line);
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    const auto at = seen.find(e.key());
    if (at != seen.end()) {
      throw ConfigError(e.what(), at->second);
    }
    throw;
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read config " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_config(buffer.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ":" + (e.line() > 0 ? "" : " ") + e.what(), 0);
  }
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "dataset = " << dataset_name(c.dataset) << "\n";
  if (!c.data_dir.empty()) out << "data_dir = " << fmt_string(c.data_dir) << "\n";
  if (!c.train_images.empty()) out << "train_images = " << fmt_string(c.train_images) << "\n";
  if (!c.train_labels.empty()) out << "train_labels = " << fmt_string(c.train_labels) << "\n";
  if (!c.test_images.empty()) out << "test_images = " << fmt_string(c.test_images) << "\n";
  if (!c.test_labels.empty()) out << "test_labels = " << fmt_string(c.test_labels) << "\n";
  if (!c.cifar_train.empty()) out << "cifar_train = " << join<std::string>(c.cifar_train, fmt_string) << "\n";
  if (!c.cifar_test.empty()) out << "cifar_test = " << join<std::string>(c.cifar_test, fmt_string) << "\n";
  if (c.dataset == DatasetKind::Synthetic) {
    out << "synthetic_n = " << c.synthetic_n << "\n";
    out << "synthetic_test_n = " << c.synthetic_test_n << "\n";
    out << "synthetic_dim = " << c.synthetic_dim << "\n";
    out << "synthetic_classes = " << c.synthetic_classes << "\n";
    out << "synthetic_seed = " << c.synthetic_seed << "\n";
  }
  out << "hidden = " << join<std::size_t>(c.hidden_layers(), fmt_size) << "\n";
  out << "clients = " << c.clients << "\n";
  out << "clients_per_round = " << join<std::size_t>(c.clients_per_round, fmt_size) << "\n";
  out << "beta = " << join<double>(c.beta, fmt_double) << "\n";
  out << "eta = " << join<double>(c.eta, fmt_double) << "\n";
  out << "strategy = " << join<StrategyKind>(c.strategy, fmt_strategy) << "\n";
  out << "seed = " << join<std::uint64_t>(c.seed, fmt_u64) << "\n";
  out << "partition_seed = " << c.partition_seed << "\n";
  out << "min_shard_size = " << c.min_shard_size << "\n";
  out << "rounds = " << c.rounds << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "eval_stride = " << c.eval_stride << "\n";
  out << "checkpoint_stride = " << c.checkpoint_stride << "\n";
  out << "sweep_rounds = " << join<std::size_t>(c.sweep_rounds, fmt_size) << "\n";
  out << "weighted_aggregation = " << (c.weighted_aggregation ? "true" : "false") << "\n";
  out << "full_train_loss = " << (c.full_train_loss ? "true" : "false") << "\n";
  out << "threads = " << c.threads << "\n";
  out << "output_dir = " << fmt_string(c.output_dir) << "\n";
  return out.str();
}

}  // namespace fedsel
