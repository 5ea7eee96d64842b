#include "fedsel/runner.hpp"

#include <CLI11.hpp>

#include <optional>
#include <string>
#include <vector>

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator with gradient-norm client selection"};
  app.require_subcommand(1);

  std::string run_config;
  auto* run = app.add_subcommand("run", "Run one experiment from a config file");
  run->add_option("config", run_config, "Config file")->required();

  std::string sweep_config;
  auto* sweep = app.add_subcommand("sweep", "Run every cell of a config with list-valued keys");
  sweep->add_option("config", sweep_config, "Config file")->required();

  std::vector<std::string> compare_dirs;
  std::string compare_out;
  std::optional<std::size_t> compare_round;
  auto* compare = app.add_subcommand("compare", "Per-round deltas between run directories");
  compare->add_option("dirs", compare_dirs, "Run directories; the first is the reference")->required();
  compare->add_option("--out", compare_out, "Write the delta CSV here instead of stdout");
  compare->add_option("--round", compare_round, "Print the accuracy gap at this round");

  std::string audit_dir;
  auto* audit = app.add_subcommand("audit", "Check a run against the convergence bound");
  audit->add_option("dir", audit_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fedsel::kExitConfig;
  }

  if (*run) {
    return fedsel::run_command(run_config);
  }
  if (*sweep) {
    return fedsel::sweep_command(sweep_config);
  }
  if (*compare) {
    std::vector<std::filesystem::path> dirs(compare_dirs.begin(), compare_dirs.end());
    return fedsel::compare_command(dirs, compare_out, compare_round);
  }
  return fedsel::audit_command(audit_dir);
}
