#pragma once

#include "actionmatch/dynamics.hpp"
#include "actionmatch/field.hpp"
#include "actionmatch/metrics.hpp"
#include "actionmatch/paths.hpp"
#include "actionmatch/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace actionmatch {

enum ExitCode { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumeric = 3 };

// Fully defaulted experiment configuration. `resolved` holds every value,
// including defaults, and is what gets echoed next to the outputs.
struct ExperimentConfig {
  nlohmann::json resolved;
  std::uint64_t seed = 0;
};

// Default document for a given path kind (all sections present).
nlohmann::json default_config(const std::string& path_kind = "gaussian");
// Overlays the user document on the defaults. Unknown keys are rejected.
ExperimentConfig resolve_config(const nlohmann::json& user, std::optional<std::uint64_t> seed_override = {});
ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override = {});

TimeFn time_fn_from_json(const nlohmann::json& spec);
PathPtr build_path(const nlohmann::json& path_spec);
std::shared_ptr<MlpField> build_model(const nlohmann::json& model_spec, int dim);
TrainConfig build_train_config(const ExperimentConfig& config, const PathPtr& path);

// How learned dynamics are pushed forward for sampling and evaluation.
enum class PushMode { ode, sde, weighted };
PushMode push_mode(const ExperimentConfig& config);

struct CommandOptions {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> checkpoint;
};

extern const std::vector<std::string> kCommands;

// Runs one command and maps failures to exit codes (0 ok, 2 config, 3 numeric),
// writing the message to stderr.
int run_command(const std::string& command, const CommandOptions& options);

// The commands themselves; they throw InvalidArgument / NumericError.
void cmd_generate(const ExperimentConfig& config, const std::string& out_dir);
void cmd_train(const ExperimentConfig& config, const std::string& out_dir,
               const std::optional<std::string>& resume_checkpoint);
void cmd_sample(const ExperimentConfig& config, const std::string& out_dir, const std::string& checkpoint);
void cmd_likelihood(const ExperimentConfig& config, const std::string& out_dir, const std::string& checkpoint);
void cmd_evaluate(const ExperimentConfig& config, const std::string& out_dir,
                  const std::optional<std::string>& checkpoint);
void cmd_compare_ald(const ExperimentConfig& config, const std::string& out_dir,
                     const std::optional<std::string>& checkpoint);

// Per-time distribution comparison shared by evaluate and compare-ald.
struct TimeMetrics {
  double time = 0.0;
  double mmd = 0.0;
  double mmd_null = 0.0;
  std::optional<double> w2, w2_null;
  double bandwidth = 0.0;
};

struct EvaluationSummary {
  std::string method;
  std::vector<TimeMetrics> per_time;
  double average_mmd = 0.0;
  double average_mmd_null = 0.0;
};

// Compares each generated ensemble against fresh path samples of the same size
// and against an independent resampling null.
EvaluationSummary compare_to_path(const std::string& method, const MarginalPath& path,
                                  const std::vector<ParticleEnsemble>& generated, bool with_w2,
                                  const KernelSpec& kernel, std::uint64_t seed);

void write_evaluation(const std::string& out_dir, const EvaluationSummary& summary,
                      const nlohmann::json& metadata);

}  // namespace actionmatch
