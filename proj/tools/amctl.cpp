// Batch driver: amctl <command> --config FILE [--out DIR] [--seed N] [--checkpoint FILE]
#include "actionmatch/experiment.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdlib>
#include <iostream>
#include <string>

namespace {

// ACTIONMATCH_THREADS caps Eigen's internal threading (default 1, which is
// also the reference configuration for reproducibility).
int configure_threads() {
  const char* env = std::getenv("ACTIONMATCH_THREADS");
  if (!env || !*env) {
    Eigen::setNbThreads(1);
    return 0;
  }
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) {
    std::cerr << "config error: ACTIONMATCH_THREADS must be a positive integer, got '" << env << "'\n";
    return actionmatch::kExitConfig;
  }
  Eigen::setNbThreads(static_cast<int>(n));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Action Matching experiment driver"};
  app.require_subcommand(1);

  actionmatch::CommandOptions opts;
  std::uint64_t seed = 0;
  std::string checkpoint;

  for (const auto& name : actionmatch::kCommands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--checkpoint", checkpoint, "field checkpoint (train: resume from it)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : actionmatch::kExitConfig;
  }

  if (const int rc = configure_threads()) return rc;

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) opts.seed = seed;
  if (sub->count("--checkpoint")) opts.checkpoint = checkpoint;
  return actionmatch::run_command(sub->get_name(), opts);
}
