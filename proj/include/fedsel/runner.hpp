#pragma once

// Orchestration behind the command-line verbs: load data, build the
// federation, run it and write the per-run directory.
//
// A run directory holds:
//   config.txt       effective single-cell config (re-runnable as is)
//   results.csv      one row per evaluated round
//   summary.json     final metrics and run status
//   checkpoints.bin  w^t snapshots, when checkpoint_stride > 0

#include "fedsel/analysis.hpp"
#include "fedsel/config.hpp"
#include "fedsel/data.hpp"
#include "fedsel/federation.hpp"
#include "fedsel/output.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fedsel {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitData = 2, kExitRuntime = 3 };

struct ExperimentData {
  Dataset train;
  Dataset test;
};

ExperimentData load_experiment_data(const ExperimentConfig& config);

/// Prefixes relative output directories with $FEDSEL_OUTPUT_ROOT when set.
std::filesystem::path resolve_output_dir(const std::string& output_dir);

/// Partition, architecture, w^0 and strategy for a single-valued config.
ExperimentPlan build_plan(const ExperimentConfig& cell, const Dataset& train);

struct RunOutput {
  std::filesystem::path dir;
  std::vector<CsvRow> rows;
  std::optional<ExperimentResult> result;  // absent when reused from disk
  bool reused = false;
};

struct RunOptions {
  /// Skip the run when `dir` already holds a completed run of the same
  /// effective config.
  bool reuse_existing = false;
};

RunOutput run_cell(const ExperimentConfig& cell, const ExperimentData& data, const std::filesystem::path& dir,
                   const RunOptions& options = {});

struct SweepCell {
  ExperimentConfig config;
  std::filesystem::path dir;
  std::map<std::size_t, double> accuracy_percent;  // by sweep round
  double final_accuracy_percent = 0.0;
};

struct SweepResult {
  std::vector<std::size_t> rounds;
  std::vector<SweepCell> cells;
  /// Seed-averaged runs (groups with more than one seed), keyed by group name.
  std::map<std::string, std::filesystem::path> mean_dirs;
  /// Best eta per (strategy, C, beta) group by final accuracy.
  std::map<std::string, double> best_eta;
};

SweepResult run_sweep(const ExperimentConfig& config, const ExperimentData& data, const std::filesystem::path& root,
                      const RunOptions& options = {});

/// Group key shared by every seed of a sweep cell.
std::string seed_group_name(const ExperimentConfig& cell);

class CompareError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Comparison {
  std::vector<std::string> labels;  // run directories
  std::vector<std::size_t> rounds;  // rounds present in every run
  std::vector<std::vector<double>> accuracy;  // [run][round index]
  std::vector<std::vector<double>> loss;

  /// accuracy of run i minus accuracy of run 0 at `round`.
  double accuracy_gap(std::size_t run, std::size_t round) const;
  /// Per-round deltas of every run against the first.
  std::string to_csv() const;
};

/// Runs must share dataset, clients, clients_per_round and rounds.
Comparison compare_runs(const std::vector<std::filesystem::path>& dirs);

struct AuditOutcome {
  AuditReport report;
  std::optional<Lemma1Report> lemma1;
};

AuditOutcome audit_run(const std::filesystem::path& dir);

// Command-line verbs; return process exit codes and report on stderr.
int run_command(const std::filesystem::path& config_path);
int sweep_command(const std::filesystem::path& config_path);
int compare_command(const std::vector<std::filesystem::path>& dirs, const std::string& out_path,
                    std::optional<std::size_t> at_round);
int audit_command(const std::filesystem::path& dir);

}  // namespace fedsel
