#include "actionmatch/train.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace actionmatch {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw InvalidArgument("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw InvalidArgument("Adam epsilon must be positive");
}

void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state, const AdamConfig& config) {
  if (params.size() != grad.size())
    throw InvalidArgument("gradient length " + std::to_string(grad.size()) + " does not match parameter count " +
                          std::to_string(params.size()));
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw InvalidArgument("Adam state does not match parameter count");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

ObjectiveKind parse_objective(const std::string& name) {
  if (name == "am") return ObjectiveKind::am;
  if (name == "eam") return ObjectiveKind::eam;
  if (name == "uam") return ObjectiveKind::uam;
  if (name == "cam") return ObjectiveKind::cam;
  if (name == "ssm") return ObjectiveKind::ssm;
  throw InvalidArgument("unknown objective '" + name + "' (expected am, eam, uam, cam or ssm)");
}

std::string objective_name(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::am: return "am";
    case ObjectiveKind::eam: return "eam";
    case ObjectiveKind::uam: return "uam";
    case ObjectiveKind::cam: return "cam";
    case ObjectiveKind::ssm: return "ssm";
  }
  return "am";
}

void TrainConfig::validate() const {
  if (iterations < 1) throw InvalidArgument("iterations must be >= 1");
  batch.validate();
  adam.validate();
  if (eval_every < 1) throw InvalidArgument("eval_every must be >= 1");
  if (objective == ObjectiveKind::eam && !diffusion) throw InvalidArgument("eam objective requires a sigma schedule");
  if (objective == ObjectiveKind::cam && !conjugate) throw InvalidArgument("cam objective requires a conjugate");
  if (objective == ObjectiveKind::uam && !(growth > 0.0)) throw InvalidArgument("uam growth multiplier must be > 0");
  if (objective == ObjectiveKind::ssm && ssm_projections < 1) throw InvalidArgument("ssm needs >= 1 projection");
  if (error_times < 1 || error_samples < 1) throw InvalidArgument("field-error grid sizes must be >= 1");
}

LossEstimate evaluate_objective(const ActionField& field, const MarginalPath& path, const TrainConfig& config,
                                const TimeProposal& proposal, long iteration, bool with_grad) {
  BatchSpec batch = config.batch;
  batch.seed = mix_seed(config.seed, static_cast<std::uint64_t>(iteration));
  if (config.objective == ObjectiveKind::ssm) return ssm_loss(field, path, batch, config.ssm_projections);
  ObjectiveOptions opt;
  opt.schedule = config.schedule;
  opt.proposal = config.adaptive_proposal ? &proposal : nullptr;
  opt.with_grad = with_grad;
  if (config.objective == ObjectiveKind::eam) opt.diffusion = config.diffusion;
  if (config.objective == ObjectiveKind::uam) opt.growth = config.growth;
  if (config.objective == ObjectiveKind::cam) opt.conjugate = config.conjugate;
  return action_matching_objective(field, path, batch, opt);
}

namespace {

std::optional<double> maybe_field_error(const ActionField& field, const MarginalPath& path,
                                        const TrainConfig& config) {
  const std::uint64_t seed = mix_seed(config.seed, 0xe7707ULL);
  if (config.truth) return field_error(field, path, *config.truth, config.error_times, config.error_samples, seed);
  if (config.objective == ObjectiveKind::am || config.objective == ObjectiveKind::cam) {
    if (path.true_action() || path.has_velocity())
      return field_error(field, path, config.error_times, config.error_samples, seed);
  }
  return std::nullopt;
}

}  // namespace

TrainReport train(MlpField& field, const MarginalPath& path, const TrainConfig& config, TrainState& state,
                  const TrainHooks& hooks) {
  config.validate();
  if (field.dim() != path.dim())
    throw InvalidArgument("field dimension " + std::to_string(field.dim()) + " does not match path dimension " +
                          std::to_string(path.dim()));
  if (state.iteration < 0 || state.iteration > config.iterations)
    throw InvalidArgument("resume iteration outside the configured run");

  TrainReport report;
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> params(field.params().begin(), field.params().end());
  for (long it = state.iteration + 1; it <= config.iterations; ++it) {
    LossEstimate est;
    try {
      est = evaluate_objective(field, path, config, state.proposal, it);
      for (double g : est.grad)
        if (!std::isfinite(g)) throw NumericError("non-finite parameter gradient");
    } catch (const NumericError& e) {
      throw NumericError("training diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    const AdamState before = state.adam;
    adam_step(params, est.grad, state.adam, config.adam);
    bool finite = true;
    for (double p : params) finite = finite && std::isfinite(p);
    if (!finite) {
      state.adam = before;
      params.assign(field.params().begin(), field.params().end());
      throw NumericError("training diverged at iteration " + std::to_string(it) + ": non-finite parameters");
    }
    field.set_params(params);
    if (config.adaptive_proposal) state.proposal = update_time_proposal(state.proposal, est.observations);
    state.iteration = it;

    if (it % config.eval_every == 0 || it == config.iterations) {
      TrainRecord rec;
      rec.iteration = it;
      rec.loss = est.value;
      rec.terms = est.terms;
      rec.field_error = maybe_field_error(field, path, config);
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      report.records.push_back(rec);
      if (hooks.on_record) hooks.on_record(rec);
      if (hooks.on_checkpoint) hooks.on_checkpoint(field, state);
    }
  }
  return report;
}

TrainReport train(MlpField& field, const MarginalPath& path, const TrainConfig& config, const TrainHooks& hooks) {
  TrainState state;
  return train(field, path, config, state, hooks);
}

std::string train_checkpoint_json(const MlpField& field, const TrainState& state) {
  nlohmann::json j = nlohmann::json::parse(field_to_json(field));
  const TimeProposal& p = state.proposal;
  j["training"] = {
      {"iteration", state.iteration},
      {"adam", {{"step", state.adam.step}, {"m", state.adam.m}, {"v", state.adam.v}}},
      {"proposal",
       {{"bins", p.bins()},
        {"decay", p.decay()},
        {"masses", p.masses()},
        {"ema_mean", p.ema_mean},
        {"ema_second", p.ema_second},
        {"ema_count", p.ema_count}}},
  };
  return j.dump();
}

void save_train_checkpoint(const std::string& path, const MlpField& field, const TrainState& state) {
  // Write then rename so an interrupted save never clobbers the previous checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw InvalidArgument("cannot write checkpoint " + path);
    out << train_checkpoint_json(field, state) << '\n';
    if (!out) throw InvalidArgument("failed writing checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw InvalidArgument("cannot replace checkpoint " + path);
}

std::shared_ptr<MlpField> load_train_checkpoint(const std::string& path, TrainState& state) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto field = field_from_json(ss.str());
  const nlohmann::json j = nlohmann::json::parse(ss.str());
  state.iteration = 0;
  state.adam = AdamState();
  state.proposal = TimeProposal();
  if (!j.contains("training")) return field;
  try {
    const auto& t = j.at("training");
    state.iteration = t.at("iteration").get<long>();
    state.adam.step = t.at("adam").at("step").get<long>();
    state.adam.m = t.at("adam").at("m").get<std::vector<double>>();
    state.adam.v = t.at("adam").at("v").get<std::vector<double>>();
    const auto& p = t.at("proposal");
    TimeProposal prop(p.at("bins").get<int>(), p.at("decay").get<double>());
    prop.set_masses(p.at("masses").get<std::vector<double>>());
    prop.ema_mean = p.at("ema_mean").get<std::vector<double>>();
    prop.ema_second = p.at("ema_second").get<std::vector<double>>();
    prop.ema_count = p.at("ema_count").get<std::vector<long>>();
    if (prop.ema_mean.size() != prop.masses().size() || prop.ema_second.size() != prop.masses().size() ||
        prop.ema_count.size() != prop.masses().size())
      throw InvalidArgument("proposal state in " + path + " has inconsistent bin counts");
    state.proposal = std::move(prop);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("malformed training state in " + path + ": " + e.what());
  }
  return field;
}

std::string record_to_json(const TrainRecord& record, bool with_wall_time) {
  nlohmann::json j;
  j["iteration"] = record.iteration;
  j["loss"] = record.loss;
  j["terms"] = record.terms;
  if (record.field_error) j["field_error"] = *record.field_error;
  if (with_wall_time) j["wall_seconds"] = record.wall_seconds;
  return j.dump();
}

}  // namespace actionmatch
