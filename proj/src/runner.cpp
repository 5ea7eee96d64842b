#include "fedsel/runner.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <numeric>
#include <set>

namespace fedsel {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

fs::path data_file(const std::string& override_path, const std::string& dir, const std::string& name) {
  if (!override_path.empty()) {
    return override_path;
  }
  fs::path p = fs::path(dir) / name;
  if (!fs::exists(p)) {
    fs::path gz = p;
    gz += ".gz";
    if (fs::exists(gz)) {
      return gz;
    }
  }
  return p;
}

std::string absolute_or_empty(const std::string& p) {
  return p.empty() ? p : fs::absolute(p).lexically_normal().string();
}

ExperimentConfig effective_config(const ExperimentConfig& cell, const fs::path& dir) {
  ExperimentConfig eff = cell;
  eff.data_dir = absolute_or_empty(eff.data_dir);
  eff.train_images = absolute_or_empty(eff.train_images);
  eff.train_labels = absolute_or_empty(eff.train_labels);
  eff.test_images = absolute_or_empty(eff.test_images);
  eff.test_labels = absolute_or_empty(eff.test_labels);
  for (auto& p : eff.cifar_train) {
    p = absolute_or_empty(p);
  }
  for (auto& p : eff.cifar_test) {
    p = absolute_or_empty(p);
  }
  eff.hidden = eff.hidden_layers();
  eff.hidden_set = true;
  eff.output_dir = dir.string();
  return eff;
}

bool completed_run(const fs::path& dir, const std::string& config_text) {
  try {
    if (!fs::exists(dir / "summary.json") || !fs::exists(dir / "results.csv") ||
        read_text_file(dir / "config.txt") != config_text) {
      return false;
    }
    const Json summary = Json::parse(read_text_file(dir / "summary.json"));
    return summary.value("status", "") == "complete";
  } catch (const std::exception&) {
    return false;
  }
}

Json summary_json(const ExperimentConfig& cell, const ExperimentPlan& plan, const ExperimentResult& result,
                  const Dataset& train, const std::string& status) {
  Json j;
  j["status"] = status;
  j["dataset"] = dataset_name(cell.dataset);
  j["strategy"] = std::string(strategy_name(cell.strategy.front()));
  j["clients"] = cell.clients;
  j["clients_per_round"] = cell.clients_per_round.front();
  j["beta"] = cell.beta.front();
  j["eta"] = cell.eta.front();
  j["seed"] = cell.seed.front();
  j["rounds"] = cell.rounds;
  j["rounds_completed"] = result.records.size();
  j["param_count"] = plan.initial.w.size();
  j["heterogeneity"] = heterogeneity_score(plan.initial.shards, train);
  j["max_client_grad_norm"] = result.max_client_norm;
  std::uint64_t uplink = 0;
  std::uint64_t downlink = 0;
  for (const auto& r : result.records) {
    uplink += r.uplink_bytes;
    downlink += r.downlink_bytes;
  }
  j["total_uplink_bytes"] = uplink;
  j["total_downlink_bytes"] = downlink;
  for (auto it = result.records.rbegin(); it != result.records.rend(); ++it) {
    if (it->test) {
      j["last_evaluated_round"] = it->round;
      j["final_test_accuracy"] = it->test->accuracy;
      j["final_test_loss"] = it->test->loss;
      break;
    }
  }
  if (cell.clients_per_round.front() == 1 && cell.strategy.front() == StrategyKind::HighestGradientNorm) {
    const auto lemma = lemma1_audit(result.records, cell.eta.front());
    j["lemma1"] = {{"rounds_checked", lemma.rounds_checked}, {"violations", lemma.violations.size()}};
  }
  return j;
}

std::vector<CsvRow> mean_rows(const std::vector<std::vector<CsvRow>>& runs) {
  std::vector<CsvRow> out = runs.front();
  for (std::size_t i = 0; i < out.size(); ++i) {
    CsvRow& m = out[i];
    m.selected_clients.clear();
    m.train_loss = m.test_accuracy = m.mean_grad_norm = m.max_grad_norm = m.step_norm = 0.0;
    for (const auto& run : runs) {
      if (run.size() != out.size() || run[i].round != m.round) {
        throw std::runtime_error("seed runs disagree on evaluated rounds");
      }
      m.train_loss += run[i].train_loss;
      m.test_accuracy += run[i].test_accuracy;
      m.mean_grad_norm += run[i].mean_grad_norm;
      m.max_grad_norm += run[i].max_grad_norm;
      m.step_norm += run[i].step_norm;
    }
    const auto n = static_cast<double>(runs.size());
    m.train_loss /= n;
    m.test_accuracy /= n;
    m.mean_grad_norm /= n;
    m.max_grad_norm /= n;
    m.step_norm /= n;
  }
  return out;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CompareError& e) {
    std::cerr << "compare error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

ExperimentData load_experiment_data(const ExperimentConfig& c) {
  switch (c.dataset) {
    case DatasetKind::Mnist:
    case DatasetKind::Fmnist: {
      const std::string name = dataset_name(c.dataset);
      return {load_idx(data_file(c.train_images, c.data_dir, "train-images-idx3-ubyte"),
                       data_file(c.train_labels, c.data_dir, "train-labels-idx1-ubyte"), name),
              load_idx(data_file(c.test_images, c.data_dir, "t10k-images-idx3-ubyte"),
                       data_file(c.test_labels, c.data_dir, "t10k-labels-idx1-ubyte"), name)};
    }
    case DatasetKind::Cifar10: {
      std::vector<fs::path> train;
      std::vector<fs::path> test;
      if (c.cifar_train.empty()) {
        for (int b = 1; b <= 5; ++b) {
          train.push_back(fs::path(c.data_dir) / ("data_batch_" + std::to_string(b) + ".bin"));
        }
      } else {
        train.assign(c.cifar_train.begin(), c.cifar_train.end());
      }
      if (c.cifar_test.empty()) {
        test.push_back(fs::path(c.data_dir) / "test_batch.bin");
      } else {
        test.assign(c.cifar_test.begin(), c.cifar_test.end());
      }
      return {load_cifar10(train), load_cifar10(test)};
    }
    case DatasetKind::Synthetic: {
      const Dataset all = synthetic_logistic(c.synthetic_n + c.synthetic_test_n, c.synthetic_dim, c.synthetic_classes,
                                             c.synthetic_seed);
      return {all.slice(0, c.synthetic_n), all.slice(c.synthetic_n, all.size())};
    }
  }
  throw ConfigError("unsupported dataset");
}

fs::path resolve_output_dir(const std::string& output_dir) {
  const fs::path p(output_dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("FEDSEL_OUTPUT_ROOT"); root != nullptr && *root != '\0') {
      return fs::path(root) / p;
    }
  }
  return p;
}

ExperimentPlan build_plan(const ExperimentConfig& cell, const Dataset& train) {
  cell.validate();
  ExperimentPlan plan;
  FederationState& s = plan.initial;
  s.arch = {train.input_dim(), cell.hidden_layers(), static_cast<std::size_t>(train.num_classes())};
  s.shards = dirichlet_partition(train, {cell.clients, cell.beta.front(), cell.partition_seed, cell.min_shard_size});
  s.w = init_params(s.arch, cell.seed.front());
  s.strategy = {cell.strategy.front(), cell.clients_per_round.front(), cell.seed.front()};
  s.eta = cell.eta.front();
  s.batch_size = cell.batch_size;
  s.master_seed = cell.seed.front();
  s.weighted_aggregation = cell.weighted_aggregation;
  plan.rounds = cell.rounds;
  plan.eval_stride = cell.eval_stride;
  plan.checkpoint_stride = cell.checkpoint_stride;
  plan.full_train_loss = cell.full_train_loss;
  plan.threads = cell.threads;
  return plan;
}

RunOutput run_cell(const ExperimentConfig& cell, const ExperimentData& data, const fs::path& dir,
                   const RunOptions& options) {
  if (cell.is_sweep()) {
    throw ConfigError("run needs single-valued clients_per_round, beta, eta, strategy and seed; use sweep");
  }
  const ExperimentConfig eff = effective_config(cell, dir);
  const std::string config_text = serialize_config(eff);
  RunOutput out;
  out.dir = dir;
  if (options.reuse_existing && completed_run(dir, config_text)) {
    out.rows = parse_results_csv(read_text_file(dir / "results.csv"));
    out.reused = true;
    return out;
  }

  const ExperimentPlan plan = build_plan(cell, data.train);
  ExperimentResult result;
  std::string status = "complete";
  std::string failure;
  try {
    result = run_experiment(plan, data.train, data.test);
  } catch (const ExperimentAborted& e) {
    result = e.partial();
    status = "aborted";
    failure = e.what();
  }
  const std::string csv = records_to_csv(result.records, cell.strategy.front());
  fs::create_directories(dir);
  write_file_atomic(dir / "config.txt", config_text);
  write_file_atomic(dir / "results.csv", csv);
  if (cell.checkpoint_stride > 0) {
    write_file_atomic(dir / "checkpoints.bin", encode_checkpoints(result.checkpoints));
  }
  Json summary = summary_json(cell, plan, result, data.train, status);
  if (!failure.empty()) {
    summary["error"] = failure;
  }
  write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");
  if (!failure.empty()) {
    throw std::runtime_error(failure);
  }
  out.rows = parse_results_csv(csv);
  out.result = std::move(result);
  return out;
}

std::string seed_group_name(const ExperimentConfig& cell) {
  return std::string(strategy_name(cell.strategy.front())) + "_C" + std::to_string(cell.clients_per_round.front()) +
         "_beta" + format_double(cell.beta.front()) + "_eta" + format_double(cell.eta.front());
}

SweepResult run_sweep(const ExperimentConfig& config, const ExperimentData& data, const fs::path& root,
                      const RunOptions& options) {
  SweepResult sweep;
  sweep.rounds = config.sweep_rounds;
  if (sweep.rounds.empty() && config.rounds > 0 && config.rounds % config.eval_stride == 0) {
    sweep.rounds = {config.rounds};
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  std::vector<std::vector<CsvRow>> all_rows;
  for (const ExperimentConfig& cell : config.cells()) {
    const fs::path dir = root / "cells" / cell.cell_name();
    RunOutput out = run_cell(cell, data, dir, options);
    SweepCell sc;
    sc.config = cell;
    sc.dir = dir;
    for (const CsvRow& row : out.rows) {
      if (std::find(sweep.rounds.begin(), sweep.rounds.end(), row.round) != sweep.rounds.end()) {
        sc.accuracy_percent[row.round] = 100.0 * row.test_accuracy;
      }
    }
    sc.final_accuracy_percent = out.rows.empty() ? 0.0 : 100.0 * out.rows.back().test_accuracy;
    groups[seed_group_name(cell)].push_back(sweep.cells.size());
    sweep.cells.push_back(std::move(sc));
    all_rows.push_back(std::move(out.rows));
  }

  // Seed-averaged curves.
  for (const auto& [name, members] : groups) {
    if (members.size() < 2) {
      continue;
    }
    std::vector<std::vector<CsvRow>> runs;
    ExperimentConfig group = sweep.cells[members.front()].config;
    group.seed.clear();
    for (std::size_t i : members) {
      runs.push_back(all_rows[i]);
      group.seed.push_back(sweep.cells[i].config.seed.front());
    }
    const fs::path dir = root / "mean" / name;
    write_file_atomic(dir / "config.txt", serialize_config(effective_config(group, dir)));
    write_file_atomic(dir / "results.csv", rows_to_csv(mean_rows(runs)));
    sweep.mean_dirs[name] = dir;
  }

  // Best eta per (strategy, C, beta), by seed-mean final accuracy.
  std::map<std::string, std::map<double, std::pair<double, int>>> by_eta;
  for (const auto& sc : sweep.cells) {
    const std::string key = std::string(strategy_name(sc.config.strategy.front())) + "_C" +
                            std::to_string(sc.config.clients_per_round.front()) + "_beta" +
                            format_double(sc.config.beta.front());
    auto& acc = by_eta[key][sc.config.eta.front()];
    acc.first += sc.final_accuracy_percent;
    acc.second += 1;
  }
  for (const auto& [key, etas] : by_eta) {
    double best = -1.0;
    for (const auto& [eta, acc] : etas) {
      const double mean = acc.first / acc.second;
      if (mean > best) {
        best = mean;
        sweep.best_eta[key] = eta;
      }
    }
  }

  std::string table = "strategy,clients_per_round,beta,eta,seed";
  for (std::size_t r : sweep.rounds) {
    table += ",accuracy_at_" + std::to_string(r);
  }
  table += ",final_accuracy\n";
  for (const auto& sc : sweep.cells) {
    table += std::string(strategy_name(sc.config.strategy.front())) + "," +
             std::to_string(sc.config.clients_per_round.front()) + "," + format_double(sc.config.beta.front()) + "," +
             format_double(sc.config.eta.front()) + "," + std::to_string(sc.config.seed.front());
    for (std::size_t r : sweep.rounds) {
      const auto it = sc.accuracy_percent.find(r);
      table += "," + (it == sc.accuracy_percent.end() ? std::string() : format_double(it->second));
    }
    table += "," + format_double(sc.final_accuracy_percent) + "\n";
  }
  write_file_atomic(root / "sweep.csv", table);

  Json summary;
  summary["cells"] = sweep.cells.size();
  summary["rounds"] = sweep.rounds;
  Json best = Json::object();
  for (const auto& [key, eta] : sweep.best_eta) {
    best[key] = eta;
  }
  summary["best_eta"] = best;
  Json means = Json::object();
  for (const auto& [key, dir] : sweep.mean_dirs) {
    means[key] = dir.string();
  }
  summary["seed_means"] = means;
  write_file_atomic(root / "sweep_summary.json", summary.dump(2) + "\n");
  return sweep;
}

double Comparison::accuracy_gap(std::size_t run, std::size_t round) const {
  const auto it = std::find(rounds.begin(), rounds.end(), round);
  if (it == rounds.end()) {
    throw CompareError("round " + std::to_string(round) + " was not evaluated in every run");
  }
  const auto idx = static_cast<std::size_t>(it - rounds.begin());
  return accuracy.at(run)[idx] - accuracy.at(0)[idx];
}

std::string Comparison::to_csv() const {
  std::string out = "round";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out += ",accuracy_" + std::to_string(i);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out += ",train_loss_" + std::to_string(i);
  }
  for (std::size_t i = 1; i < labels.size(); ++i) {
    out += ",accuracy_delta_" + std::to_string(i) + ",train_loss_delta_" + std::to_string(i);
  }
  out += "\n";
  for (std::size_t r = 0; r < rounds.size(); ++r) {
    out += std::to_string(rounds[r]);
    for (const auto& a : accuracy) {
      out += "," + format_double(a[r]);
    }
    for (const auto& l : loss) {
      out += "," + format_double(l[r]);
    }
    for (std::size_t i = 1; i < labels.size(); ++i) {
      out += "," + format_double(accuracy[i][r] - accuracy[0][r]) + "," + format_double(loss[i][r] - loss[0][r]);
    }
    out += "\n";
  }
  return out;
}

Comparison compare_runs(const std::vector<fs::path>& dirs) {
  if (dirs.empty()) {
    throw CompareError("compare needs at least one run directory");
  }
  Comparison cmp;
  std::vector<std::vector<CsvRow>> runs;
  std::optional<ExperimentConfig> reference;
  for (const auto& dir : dirs) {
    const ExperimentConfig cfg = load_config(dir / "config.txt");
    if (reference) {
      if (cfg.dataset != reference->dataset || cfg.clients != reference->clients ||
          cfg.clients_per_round != reference->clients_per_round || cfg.rounds != reference->rounds) {
        throw CompareError(dir.string() + " differs from " + dirs.front().string() +
                           " in dataset, clients, clients_per_round or rounds");
      }
    } else {
      reference = cfg;
    }
    cmp.labels.push_back(dir.string());
    runs.push_back(parse_results_csv(read_text_file(dir / "results.csv")));
  }
  std::set<std::size_t> common;
  for (const auto& row : runs.front()) {
    common.insert(row.round);
  }
  for (std::size_t i = 1; i < runs.size(); ++i) {
    std::set<std::size_t> mine;
    for (const auto& row : runs[i]) {
      if (common.count(row.round)) {
        mine.insert(row.round);
      }
    }
    common = std::move(mine);
  }
  cmp.rounds.assign(common.begin(), common.end());
  for (const auto& run : runs) {
    std::vector<double> acc;
    std::vector<double> loss;
    for (const auto& row : run) {
      if (common.count(row.round)) {
        acc.push_back(row.test_accuracy);
        loss.push_back(row.train_loss);
      }
    }
    cmp.accuracy.push_back(std::move(acc));
    cmp.loss.push_back(std::move(loss));
  }
  return cmp;
}

AuditOutcome audit_run(const fs::path& dir) {
  const ExperimentConfig cfg = load_config(dir / "config.txt");
  if (cfg.is_sweep()) {
    throw ConfigError("audit expects a single run directory, not a seed-mean or sweep root");
  }
  if (!fs::exists(dir / "checkpoints.bin")) {
    throw AuditError("no checkpoints in " + dir.string() + " (run with checkpoint_stride > 0)");
  }
  const ExperimentData data = load_experiment_data(cfg);
  const ExperimentPlan plan = build_plan(cfg, data.train);
  const auto rows = parse_results_csv(read_text_file(dir / "results.csv"));
  const auto checkpoints = decode_checkpoints(read_text_file(dir / "checkpoints.bin"));
  const Json summary = Json::parse(read_text_file(dir / "summary.json"));

  // The CSV keeps only the largest client norm per round; that is all the
  // audits below need.
  std::vector<RoundRecord> records;
  for (const auto& row : rows) {
    RoundRecord r;
    r.round = row.round;
    r.per_client_norm = {row.max_grad_norm};
    r.step_norm = row.step_norm;
    records.push_back(std::move(r));
  }
  std::size_t largest_shard = 0;
  for (const auto& s : plan.initial.shards) {
    largest_shard = std::max(largest_shard, s.indices.size());
  }
  AuditOptions options;
  options.eta = cfg.eta.front();
  options.gradient_bound = summary.value("max_client_grad_norm", 0.0);
  options.unbiased_regime = (cfg.strategy.front() == StrategyKind::Full || cfg.clients_per_round.front() == cfg.clients) &&
                            cfg.weighted_aggregation && cfg.batch_size >= largest_shard;
  AuditOutcome outcome;
  outcome.report = audit_trajectory(records, plan.initial.shards, data.train, plan.initial.arch, checkpoints, options);
  if (cfg.clients_per_round.front() == 1 && cfg.strategy.front() == StrategyKind::HighestGradientNorm) {
    outcome.lemma1 = lemma1_audit(records, cfg.eta.front());
  }

  std::string text = outcome.report.to_text();
  Json j;
  j["checkpoints"] = outcome.report.stats.rounds.size();
  j["f0"] = outcome.report.f0;
  j["mean_grad_sq_norm"] = outcome.report.stats.mean();
  j["min_grad_sq_norm"] = outcome.report.stats.min();
  j["grad_sq_norms"] = outcome.report.stats.grad_sq_norms;
  j["checkpoint_rounds"] = outcome.report.stats.rounds;
  if (outcome.report.bound) {
    j["bound"] = *outcome.report.bound;
    j["bound_holds"] = outcome.report.bound_holds;
    j["informational"] = outcome.report.informational;
    j["L"] = outcome.report.constants->L;
    j["G"] = outcome.report.constants->G;
  }
  if (outcome.lemma1) {
    text += "lemma1: " + std::to_string(outcome.lemma1->rounds_checked) + " rounds checked, " +
            std::to_string(outcome.lemma1->violations.size()) + " violations\n";
    j["lemma1"] = {{"rounds_checked", outcome.lemma1->rounds_checked},
                   {"violations", outcome.lemma1->violations}};
  }
  write_file_atomic(dir / "audit.txt", text);
  write_file_atomic(dir / "audit.json", j.dump(2) + "\n");
  return outcome;
}

int run_command(const fs::path& config_path) {
  return guarded([&] {
    const ExperimentConfig cfg = load_config(config_path);
    if (cfg.is_sweep()) {
      throw ConfigError("config has list-valued sweep keys; use `sweep`");
    }
    const ExperimentData data = load_experiment_data(cfg);
    const fs::path dir = resolve_output_dir(cfg.output_dir);
    const RunOutput out = run_cell(cfg, data, dir);
    std::cout << "wrote " << (dir / "results.csv").string() << " (" << out.rows.size() << " evaluated rounds)\n";
    if (!out.rows.empty()) {
      std::cout << "final test accuracy: " << format_double(100.0 * out.rows.back().test_accuracy) << "% at round "
                << out.rows.back().round << "\n";
    }
    return static_cast<int>(kExitOk);
  });
}

int sweep_command(const fs::path& config_path) {
  return guarded([&] {
    const ExperimentConfig cfg = load_config(config_path);
    const ExperimentData data = load_experiment_data(cfg);
    const fs::path root = resolve_output_dir(cfg.output_dir);
    const SweepResult sweep = run_sweep(cfg, data, root);
    std::cout << read_text_file(root / "sweep.csv");
    for (const auto& [key, eta] : sweep.best_eta) {
      std::cout << "best eta " << key << ": " << format_double(eta) << "\n";
    }
    return static_cast<int>(kExitOk);
  });
}

int compare_command(const std::vector<fs::path>& dirs, const std::string& out_path,
                    std::optional<std::size_t> at_round) {
  return guarded([&] {
    const Comparison cmp = compare_runs(dirs);
    const std::string csv = cmp.to_csv();
    if (out_path.empty()) {
      std::cout << csv;
    } else {
      write_file_atomic(out_path, csv);
    }
    if (at_round) {
      for (std::size_t i = 1; i < cmp.labels.size(); ++i) {
        std::cout << "accuracy gap at round " << *at_round << " (" << cmp.labels[i] << " - " << cmp.labels[0]
                  << "): " << format_double(100.0 * cmp.accuracy_gap(i, *at_round)) << " points\n";
      }
    }
    return static_cast<int>(kExitOk);
  });
}

int audit_command(const fs::path& dir) {
  return guarded([&] {
    const AuditOutcome outcome = audit_run(dir);
    std::cout << read_text_file(dir / "audit.txt");
    return static_cast<int>(outcome.lemma1 && !outcome.lemma1->passed() ? kExitRuntime : kExitOk);
  });
}

}  // namespace fedsel
