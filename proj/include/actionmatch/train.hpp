#pragma once

#include "actionmatch/field.hpp"
#include "actionmatch/metrics.hpp"
#include "actionmatch/objectives.hpp"
#include "actionmatch/paths.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace actionmatch {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

// Bias-corrected Adam update in place. Moments are sized on first use.
void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state, const AdamConfig& config);

enum class ObjectiveKind { am, eam, uam, cam, ssm };

ObjectiveKind parse_objective(const std::string& name);
std::string objective_name(ObjectiveKind kind);

struct TrainConfig {
  long iterations = 20000;
  BatchSpec batch;
  AdamConfig adam;
  ObjectiveKind objective = ObjectiveKind::am;
  WeightSchedule schedule = WeightSchedule::constant_one();
  std::optional<TimeFn> diffusion;     // required by eam
  double growth = 1.0;                 // uam multiplier on 1/2 s^2
  std::optional<Conjugate> conjugate;  // required by cam
  int ssm_projections = 1;
  bool adaptive_proposal = false;
  long eval_every = 1000;
  std::uint64_t seed = 0;

  // Reference drift for field_error; defaults to the path's analytic velocity.
  std::optional<VelocityFn> truth;
  int error_times = 20;
  Eigen::Index error_samples = 500;

  void validate() const;
};

struct TrainRecord {
  long iteration = 0;
  double loss = 0.0;
  std::map<std::string, double> terms;
  std::optional<double> field_error;
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<TrainRecord> records;
};

// Everything needed to continue a run bitwise: parameters live in the field.
struct TrainState {
  long iteration = 0;  // iterations completed
  AdamState adam;
  TimeProposal proposal;
};

// One objective evaluation at the batch drawn for `iteration`.
LossEstimate evaluate_objective(const ActionField& field, const MarginalPath& path, const TrainConfig& config,
                                const TimeProposal& proposal, long iteration, bool with_grad = true);

struct TrainHooks {
  std::function<void(const TrainRecord&)> on_record;
  // Called at the eval cadence and at the end with the state after `iteration` steps.
  std::function<void(const MlpField&, const TrainState&)> on_checkpoint;
};

// Runs iterations state.iteration+1 .. config.iterations. Batches are seeded by
// mix_seed(config.seed, iteration), so a resumed run matches an uninterrupted one.
// A non-finite loss or gradient restores the last good parameters and throws
// NumericError; checkpoints already written are left untouched.
TrainReport train(MlpField& field, const MarginalPath& path, const TrainConfig& config, TrainState& state,
                  const TrainHooks& hooks = {});
TrainReport train(MlpField& field, const MarginalPath& path, const TrainConfig& config,
                  const TrainHooks& hooks = {});

// Training checkpoint: the field record plus optimizer and proposal state.
std::string train_checkpoint_json(const MlpField& field, const TrainState& state);
void save_train_checkpoint(const std::string& path, const MlpField& field, const TrainState& state);
// Returns the field; fills `state` when the file carries training state.
std::shared_ptr<MlpField> load_train_checkpoint(const std::string& path, TrainState& state);

std::string record_to_json(const TrainRecord& record, bool with_wall_time = false);

}  // namespace actionmatch
