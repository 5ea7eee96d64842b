// Acceptance harness: one PASS/FAIL line per criterion.
//
//   fedsel_acceptance [--suite fast|scale|all] [--data DIR] [--cache DIR]
//
// DIR for --data holds mnist/, fmnist/ and cifar10/ (defaults to
// $FEDSEL_DATA_ROOT, then <source>/data). Full-scale runs are cached under
// --cache and reused when their effective config is unchanged.

#include "fedsel/analysis.hpp"
#include "fedsel/rng.hpp"
#include "fedsel/runner.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <sys/wait.h>

using namespace fedsel;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path data_root;
  fs::path cache;
  fs::path configs = FEDSEL_SOURCE_DIR "/configs";
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream out;
  out.precision(digits);
  out << v;
  return out.str();
}

fs::path dataset_dir(const Context& ctx, DatasetKind kind) {
  switch (kind) {
    case DatasetKind::Mnist:
      return ctx.data_root / "mnist";
    case DatasetKind::Fmnist:
      return ctx.data_root / "fmnist";
    case DatasetKind::Cifar10:
      return ctx.data_root / "cifar10";
    case DatasetKind::Synthetic:
      return {};
  }
  return {};
}

ExperimentConfig load_named(const Context& ctx, const std::string& name) {
  ExperimentConfig cfg = load_config(ctx.configs / (name + ".cfg"));
  if (cfg.dataset != DatasetKind::Synthetic) {
    cfg.data_dir = dataset_dir(ctx, cfg.dataset).string();
  }
  return cfg;
}

// Data is loaded once per dataset and shared by every run.
const ExperimentData& data_for(const ExperimentConfig& cfg) {
  static std::map<std::string, ExperimentData> cache;
  const std::string key = dataset_name(cfg.dataset) + "|" + cfg.data_dir + "|" + std::to_string(cfg.synthetic_n) +
                          "|" + std::to_string(cfg.synthetic_test_n) + "|" + std::to_string(cfg.synthetic_dim) +
                          "|" + std::to_string(cfg.synthetic_classes) + "|" + std::to_string(cfg.synthetic_seed);
  auto it = cache.find(key);
  if (it == cache.end()) {
    it = cache.emplace(key, load_experiment_data(cfg)).first;
  }
  return it->second;
}

SweepResult run_named(const Context& ctx, const std::string& name) {
  const ExperimentConfig cfg = load_named(ctx, name);
  RunOptions reuse;
  reuse.reuse_existing = true;
  std::cerr << "  running " << name << " (" << cfg.cells().size() << " cells, " << cfg.rounds << " rounds)\n";
  return run_sweep(cfg, data_for(cfg), ctx.cache / name, reuse);
}

double accuracy_at(const fs::path& dir, std::size_t round) {
  for (const auto& row : parse_results_csv(read_text_file(dir / "results.csv"))) {
    if (row.round == round) {
      return 100.0 * row.test_accuracy;
    }
  }
  throw std::runtime_error("round " + std::to_string(round) + " not evaluated in " + dir.string());
}

const SweepCell& cell_with(const SweepResult& sweep, StrategyKind kind, std::size_t c) {
  for (const auto& cell : sweep.cells) {
    if (cell.config.strategy.front() == kind && cell.config.clients_per_round.front() == c) {
      return cell;
    }
  }
  throw std::runtime_error("sweep has no cell " + std::string(strategy_name(kind)) + " C=" + std::to_string(c));
}

fs::path only_mean(const SweepResult& sweep) {
  if (sweep.mean_dirs.size() != 1) {
    throw std::runtime_error("expected one seed-averaged group");
  }
  return sweep.mean_dirs.begin()->second;
}

// 1 -------------------------------------------------------------------------

Outcome gradient_oracle(const Context&) {
  rng::Stream s(rng::derive(2024, {1}));
  double worst = 0.0;
  std::size_t coords = 0;
  for (int trial = 0; trial < 50; ++trial) {
    MlpArchitecture arch;
    do {
      arch.input_dim = 1 + s.below(10);
      arch.hidden_dims.assign(s.below(3), 0);
      for (auto& h : arch.hidden_dims) {
        h = 1 + s.below(12);
      }
      arch.output_dim = 2 + s.below(6);
    } while (param_count(arch) > 500);
    const std::size_t n = 1 + s.below(16);
    Batch b;
    b.inputs = RowMatrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(arch.input_dim));
    for (Eigen::Index i = 0; i < b.inputs.size(); ++i) {
      b.inputs.data()[i] = s.normal();
    }
    for (std::size_t i = 0; i < n; ++i) {
      b.labels.push_back(static_cast<int>(s.below(arch.output_dim)));
    }
    // Random biases too: with zero biases a fully dead layer feeds exact
    // zeros into the next ReLU, where the loss is not differentiable.
    ParamVector w(param_count(arch));
    for (double& v : w.values()) {
      v = 0.5 * s.normal();
    }
    const auto analytic = backward(arch, w, b).grad;
    const auto numeric = finite_difference_gradient(arch, w, b, 1e-5);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-6});
      worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
      ++coords;
    }
  }
  return {worst <= 1e-4, "max relative error " + fmt(worst, 3) + " over " + std::to_string(coords) +
                             " coordinates of 50 architectures (limit 1e-4)"};
}

// 2 -------------------------------------------------------------------------

Outcome lemma1_identity(const Context& ctx) {
  std::size_t rounds = 0;
  std::size_t violations = 0;
  std::size_t runs = 0;
  for (const std::vector<std::size_t>& hidden : {std::vector<std::size_t>{}, {8}, {12, 6}}) {
    ExperimentConfig cfg = load_named(ctx, "lemma1");
    cfg.hidden = hidden;
    cfg.hidden_set = true;
    const RunOutput out = run_cell(cfg, data_for(cfg), ctx.cache / ("lemma1_h" + std::to_string(hidden.size())));
    const auto report = lemma1_audit(out.result->records, cfg.eta.front());
    rounds += report.rounds_checked;
    violations += report.violations.size();
    ++runs;
  }
  return {rounds >= 100 && violations == 0, std::to_string(violations) + " violations in " + std::to_string(rounds) +
                                                " rounds over " + std::to_string(runs) +
                                                " C=1 grad_norm runs (rel. tol 1e-9)"};
}

// 3 -------------------------------------------------------------------------

Outcome selection_invariants(const Context&) {
  rng::Stream s(rng::derive(3, {3}));
  std::size_t failures = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 1 + s.below(60);
    const std::size_t c = 1 + s.below(k);
    std::vector<ClientScore> scores;
    for (std::size_t i = 0; i < k; ++i) {
      scores.push_back({static_cast<int>(i), static_cast<double>(s.below(8))});
    }
    for (auto kind : {StrategyKind::HighestGradientNorm, StrategyKind::HighestLoss}) {
      const SelectionStrategy strategy{kind, c, 0};
      const auto chosen = select(strategy, scores, 0);
      // Reference: order by (score desc, id asc) and take the first c.
      auto ranked = scores;
      std::sort(ranked.begin(), ranked.end(), [](const ClientScore& a, const ClientScore& b) {
        return a.score != b.score ? a.score > b.score : a.client_id < b.client_id;
      });
      std::vector<int> expected;
      for (std::size_t i = 0; i < c; ++i) {
        expected.push_back(ranked[i].client_id);
      }
      std::sort(expected.begin(), expected.end());
      auto shuffled = scores;
      for (std::size_t i = shuffled.size(); i > 1; --i) {
        std::swap(shuffled[i - 1], shuffled[s.below(i)]);
      }
      if (chosen != expected || select(strategy, scores, 0) != chosen || select(strategy, shuffled, 0) != chosen) {
        ++failures;
      }
    }
  }
  std::vector<ClientScore> ten;
  for (int i = 0; i < 10; ++i) {
    ten.push_back({i, 0.0});
  }
  std::vector<int> hits(10, 0);
  for (std::uint64_t round = 0; round < 10000; ++round) {
    for (int id : select({StrategyKind::Random, 3, 42}, ten, round)) {
      ++hits[static_cast<std::size_t>(id)];
    }
  }
  double worst = 0.0;
  for (int h : hits) {
    worst = std::max(worst, std::abs(h / 10000.0 - 0.3));
  }
  return {failures == 0 && worst <= 0.02, std::to_string(failures) +
                                              " top-C/tie/permutation failures in 1000 cases; random inclusion "
                                              "frequency within 0.3 +- " + fmt(worst, 3) + " (limit 0.02)"};
}

// 4 -------------------------------------------------------------------------

Outcome partition_invariants(const Context& ctx) {
  rng::Stream s(rng::derive(4, {4}));
  int exact = 0;
  int attempts = 0;
  while (exact < 100 && attempts < 200) {
    ++attempts;
    const std::size_t n = 50 + s.below(2000);
    const int classes = 1 + static_cast<int>(s.below(10));
    const Dataset ds = synthetic_logistic(n, 2, classes, s.next());
    const std::size_t k = 1 + s.below(std::min<std::size_t>(n / 20, 50));
    const double beta = std::exp(std::log(0.2) + s.uniform() * std::log(250.0));
    std::vector<ClientShard> shards;
    try {
      shards = dirichlet_partition(ds, {k, beta, s.next(), 1});
    } catch (const DataError& e) {
      if (e.kind() != DataErrorKind::Infeasible) {
        return {false, std::string("unexpected error: ") + e.what()};
      }
      continue;
    }
    std::vector<int> seen(n, 0);
    for (const auto& shard : shards) {
      for (std::size_t i : shard.indices) {
        ++seen[i];
      }
    }
    if (shards.size() != k || !std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; })) {
      return {false, "partition is not an exact cover (n=" + std::to_string(n) + ", K=" + std::to_string(k) + ")"};
    }
    ++exact;
  }

  ExperimentConfig cfg;
  cfg.dataset = DatasetKind::Mnist;
  cfg.data_dir = dataset_dir(ctx, DatasetKind::Mnist).string();
  const Dataset& train = data_for(cfg).train;
  double h03 = 0.0;
  double h5 = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    h03 += heterogeneity_score(dirichlet_partition(train, {100, 0.3, seed, 10}), train) / 10.0;
    h5 += heterogeneity_score(dirichlet_partition(train, {100, 5.0, seed, 10}), train) / 10.0;
  }
  return {exact == 100 && h03 > h5, std::to_string(exact) + " exact covers; MNIST K=100 mean heterogeneity " +
                                        fmt(h03) + " (beta 0.3) vs " + fmt(h5) + " (beta 5)"};
}

// 5 -------------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string command = std::string("\"") + FEDSEL_CLI_PATH + "\" " + args + " > /dev/null";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism(const Context& ctx) {
  const fs::path root = ctx.cache / "determinism";
  fs::remove_all(root);
  std::string csv[3];
  const std::size_t threads[3] = {1, 1, 4};
  for (int i = 0; i < 3; ++i) {
    ExperimentConfig cfg = load_named(ctx, "mnist_determinism");
    cfg.threads = threads[i];
    cfg.output_dir = (root / ("exec" + std::to_string(i))).string();
    const fs::path config_path = root / ("exec" + std::to_string(i) + ".cfg");
    write_file_atomic(config_path, serialize_config(cfg));
    const int code = run_cli("run \"" + config_path.string() + "\"");
    if (code != 0) {
      return {false, "fedsel run exited with " + std::to_string(code)};
    }
    csv[i] = read_text_file(fs::path(cfg.output_dir) / "results.csv");
  }
  const bool same = csv[0] == csv[1] && csv[0] == csv[2];
  return {same, std::string("three `fedsel run` executions (threads 1, 1, 4): CSVs ") +
                    (same ? "byte-identical" : "differ") + " (" + std::to_string(csv[0].size()) + " bytes)"};
}

// 6 -------------------------------------------------------------------------

Outcome bound_check(const Context& ctx) {
  const ExperimentConfig cfg = load_named(ctx, "convex_bound");
  const fs::path dir = ctx.cache / "convex_bound";
  run_cell(cfg, data_for(cfg), dir);
  const AuditOutcome audit = audit_run(dir);
  const AuditReport& r = audit.report;
  if (!r.bound || r.informational) {
    return {false, "bound not established for this run: " + r.to_text()};
  }
  return {r.bound_holds, "T+1=" + std::to_string(r.constants->T_plus_1) + ": mean ||grad f||^2 = " +
                             fmt(r.stats.mean()) + " <= bound " + fmt(*r.bound) + " (L=" + fmt(r.constants->L) +
                             ", G=" + fmt(r.constants->G) + ", eta=" + fmt(r.constants->eta) + ")"};
}

// 7 -------------------------------------------------------------------------

Outcome rate_check(const Context& ctx) {
  const ExperimentConfig base = load_named(ctx, "convex_rate");
  const double eta0 = base.eta.front() * std::sqrt(static_cast<double>(base.rounds + 1));
  std::vector<double> horizon;
  std::vector<double> minimum;
  std::string detail;
  for (std::size_t t1 : {100, 400, 1600}) {
    ExperimentConfig cfg = base;
    cfg.rounds = t1 - 1;
    cfg.eta = {eta0 / std::sqrt(static_cast<double>(t1))};
    const fs::path dir = ctx.cache / ("convex_rate_" + std::to_string(t1));
    run_cell(cfg, data_for(cfg), dir);
    const AuditOutcome audit = audit_run(dir);
    horizon.push_back(static_cast<double>(t1));
    minimum.push_back(audit.report.stats.min());
    detail += "T+1=" + std::to_string(t1) + ": min " + fmt(audit.report.stats.min()) + "; ";
  }
  const bool decreasing = minimum[1] < minimum[0] && minimum[2] < minimum[1];
  const double slope = loglog_slope(horizon, minimum);
  return {decreasing && std::abs(slope + 0.5) <= 0.2,
          detail + "log-log slope " + fmt(slope) + " (target -0.5 +- 0.2)"};
}

// 8 -------------------------------------------------------------------------

Outcome mnist_accuracy(const Context& ctx) {
  const SweepResult sweep = run_named(ctx, "mnist_b0.3_c25_grad_norm");
  const fs::path dir = sweep.cells.front().dir;
  const double a150 = accuracy_at(dir, 150);
  const double a500 = accuracy_at(dir, 500);
  const bool pass = std::abs(a150 - 81.6) <= 5.0 && std::abs(a500 - 89.9) <= 3.0;
  return {pass, "round 150: " + fmt(a150) + "% (81.6 +- 5), round 500: " + fmt(a500) + "% (89.9 +- 3)"};
}

// 9 -------------------------------------------------------------------------

Outcome gradnorm_vs_random(const Context& ctx) {
  const fs::path norm = run_named(ctx, "mnist_b0.3_c25_grad_norm").cells.front().dir;
  const fs::path random = only_mean(run_named(ctx, "mnist_b0.3_c25_random"));
  const Comparison cmp = compare_runs({random, norm});
  const double gap = cmp.accuracy_gap(1, 150) * 100.0;
  return {gap >= 8.0, "round 150: grad_norm " + fmt(accuracy_at(norm, 150)) + "% vs random (5 seeds) " +
                          fmt(accuracy_at(random, 150)) + "%, gap " + fmt(gap, 3) + " points (need >= 8)"};
}

// 10 ------------------------------------------------------------------------

Outcome low_heterogeneity(const Context& ctx) {
  const SweepResult scored = run_named(ctx, "mnist_b5_c25_scored");
  const fs::path random = only_mean(run_named(ctx, "mnist_b5_c25_random"));
  const double norm = accuracy_at(cell_with(scored, StrategyKind::HighestGradientNorm, 25).dir, 500);
  const double loss = accuracy_at(cell_with(scored, StrategyKind::HighestLoss, 25).dir, 500);
  const double rnd = accuracy_at(random, 500);
  const double gap = std::max({norm, loss, rnd}) - std::min({norm, loss, rnd});
  return {gap <= 5.0, "round 500: grad_norm " + fmt(norm) + "%, loss " + fmt(loss) + "%, random (5 seeds) " +
                          fmt(rnd) + "%, max gap " + fmt(gap, 3) + " points (limit 5)"};
}

// 11 ------------------------------------------------------------------------

Outcome fmnist_overlap(const Context& ctx) {
  const SweepResult c85 = run_named(ctx, "fmnist_b0.3_c85");
  const Comparison cmp = compare_runs({cell_with(c85, StrategyKind::HighestGradientNorm, 85).dir,
                                       cell_with(c85, StrategyKind::HighestLoss, 85).dir});
  double worst = 0.0;
  std::string gaps;
  for (std::size_t r : {150, 300, 500}) {
    const double gap = 100.0 * cmp.accuracy_gap(1, r);
    worst = std::max(worst, std::abs(gap));
    gaps += fmt(gap, 3) + (r == 500 ? "" : ", ");
  }
  const SweepResult c15 = run_named(ctx, "fmnist_b0.3_c15");
  const double a15 = accuracy_at(c15.cells.front().dir, 150);
  return {worst <= 2.0 && std::abs(a15 - 71.6) <= 5.0,
          "C=85 loss minus grad_norm at rounds 150/300/500: " + gaps + " points (limit 2); C=15 round 150: " +
              fmt(a15) + "% (71.6 +- 5)"};
}

// 12 ------------------------------------------------------------------------

Outcome degenerate_selection(const Context& ctx) {
  const double c1 = accuracy_at(run_named(ctx, "mnist_b0.3_c1").cells.front().dir, 150);
  const double c25 = accuracy_at(run_named(ctx, "mnist_b0.3_c25_grad_norm").cells.front().dir, 150);
  const SweepResult cifar = run_named(ctx, "cifar10_b0.3");
  const double cifar1 = accuracy_at(cell_with(cifar, StrategyKind::HighestGradientNorm, 1).dir, 150);
  const double cifar25 = accuracy_at(cell_with(cifar, StrategyKind::HighestGradientNorm, 25).dir, 150);
  const bool pass = c1 <= 50.0 && c25 >= 75.0 && std::abs(cifar1 - 10.0) <= 2.0;
  return {pass, "round 150: MNIST C=1 " + fmt(c1) + "% (<= 50), C=25 " + fmt(c25) + "% (>= 75); CIFAR-10 C=1 " +
                    fmt(cifar1) + "% (10 +- 2), C=25 " + fmt(cifar25) + "%"};
}

struct Criterion {
  int id;
  const char* title;
  bool scale;
  std::function<Outcome(const Context&)> check;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedsel acceptance criteria"};
  std::string suite = "fast";
  Context ctx;
  const char* env_root = std::getenv("FEDSEL_DATA_ROOT");
  std::string data_root = env_root != nullptr ? env_root : FEDSEL_SOURCE_DIR "/data";
  std::string cache = "acceptance_runs";
  app.add_option("--suite", suite, "fast, scale or all")->check(CLI::IsMember({"fast", "scale", "all"}));
  app.add_option("--data", data_root, "Directory holding mnist/, fmnist/ and cifar10/");
  app.add_option("--cache", cache, "Run cache directory");
  CLI11_PARSE(app, argc, argv);
  ctx.data_root = fs::absolute(data_root);
  ctx.cache = fs::absolute(cache);

  const std::vector<Criterion> criteria = {
      {1, "gradient oracle", false, gradient_oracle},
      {2, "max-step identity", false, lemma1_identity},
      {3, "selection invariants", false, selection_invariants},
      {4, "partition invariants", false, partition_invariants},
      {5, "determinism", false, determinism},
      {6, "convergence bound", false, bound_check},
      {7, "1/sqrt(T) rate", false, rate_check},
      {8, "MNIST grad_norm accuracy", true, mnist_accuracy},
      {9, "grad_norm beats random", true, gradnorm_vs_random},
      {10, "beta=5 strategies close", true, low_heterogeneity},
      {11, "FMNIST overlap and C=15", true, fmnist_overlap},
      {12, "degenerate selection", true, degenerate_selection},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if ((suite == "fast" && c.scale) || (suite == "scale" && !c.scale)) {
      continue;
    }
    Outcome outcome;
    try {
      outcome = c.check(ctx);
    } catch (const std::exception& e) {
      outcome = {false, std::string("error: ") + e.what()};
    }
    failed += outcome.pass ? 0 : 1;
    std::cout << "criterion " << c.id << " " << (outcome.pass ? "PASS" : "FAIL") << ": " << c.title << ": "
              << outcome.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
