#include "actionmatch/experiment.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace actionmatch {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kCommands = {"generate", "train", "sample", "likelihood", "evaluate", "compare-ald"};

namespace {

// Seed streams per consumer, so commands never share random numbers.
enum SeedTag : std::uint64_t {
  kTagGenerate = 1,
  kTagInitial = 2,
  kTagDynamics = 3,
  kTagReference = 4,
  kTagLikelihood = 5,
};

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = n == 1 ? a : a + (b - a) * i / (n - 1);
  return out;
}

json path_defaults(const std::string& kind) {
  if (kind == "gaussian")
    return {{"kind", "gaussian"},
            {"x0", {0.0, 0.0}},
            {"mean", {{"kind", "translation"}, {"u", {2.0, 2.0}}}},
            {"scale", {{"kind", "constant"}, {"c", 1.0}}}};
  if (kind == "delta_mixture")
    return {{"kind", "delta_mixture"},
            {"centers", {{-1.0, 0.0}, {1.0, 0.0}}},
            {"mean", {{"kind", "translation"}, {"u", {1.0, 0.0}}}},
            {"scale", {{"kind", "linear"}, {"a", 1.0}, {"b", 1.0}}}};
  if (kind == "weight_shift")
    return {{"kind", "weight_shift"}, {"left_mean", -5.0}, {"right_mean", 5.0}, {"alpha0", 0.2}, {"alpha1", 0.8}};
  if (kind == "qho") return {{"kind", "qho"}};
  if (kind == "interpolant")
    return {{"kind", "interpolant"},
            {"dim", 2},
            {"prior", {{"mean", {0.0, 0.0}}, {"std", 1.0}}},
            {"data", {{"mean", {3.0, 3.0}}, {"std", 1.0}}},
            {"mask", nullptr}};
  if (kind == "snapshots") return {{"kind", "snapshots"}, {"file", nullptr}, {"smoothing", "blend"}};
  throw InvalidArgument("unknown path kind '" + kind +
                        "' (expected gaussian, delta_mixture, weight_shift, qho, interpolant or snapshots)");
}

// Nested objects carrying a "kind" (mean maps, time functions) are replaced
// wholesale when the kind changes; everything else merges key by key.
void overlay(json& base, const json& user, const std::string& where) {
  if (!user.is_object()) throw InvalidArgument("config section '" + where + "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw InvalidArgument("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    const json& val = it.value();
    if (slot.is_object() && val.is_object()) {
      const bool kind_changes = !where.empty() && slot.contains("kind") && val.contains("kind") && slot["kind"] != val["kind"];
      if (kind_changes)
        slot = val;
      else
        overlay(slot, val, key);
    } else {
      slot = val;
    }
  }
}

template <class T>
T get(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidArgument("config value '" + where + "." + key + "' is missing or has the wrong type");
  }
}

Vector vector_from(const json& j, const std::string& where) {
  try {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  } catch (const json::exception&) {
    throw InvalidArgument("config value '" + where + "' must be a list of numbers");
  }
}

MeanFn mean_fn_from_json(const json& spec, int dim) {
  const std::string kind = get<std::string>(spec, "kind", "path.mean");
  if (kind == "fixed") return MeanFn::fixed();
  if (kind == "translation") {
    const Vector u = vector_from(spec.at("u"), "path.mean.u");
    if (u.size() != dim) throw InvalidArgument("path.mean.u has the wrong dimension");
    return MeanFn::translation(u);
  }
  if (kind == "scaled") return MeanFn::scaled(time_fn_from_json(spec.at("alpha")));
  throw InvalidArgument("unknown mean kind '" + kind + "' (expected fixed, translation or scaled)");
}

struct GaussianSpec {
  Vector mean;
  double std = 1.0;
};

GaussianSpec gaussian_spec(const json& spec, const std::string& where) {
  GaussianSpec g{vector_from(spec.at("mean"), where + ".mean"), get<double>(spec, "std", where)};
  if (!(g.std > 0.0)) throw InvalidArgument(where + ".std must be positive");
  return g;
}

double gaussian_log_density(const GaussianSpec& g, const Vector& x) {
  const double d = static_cast<double>(x.size());
  return -0.5 * (x - g.mean).squaredNorm() / (g.std * g.std) - d * std::log(g.std) - 0.5 * d * std::log(2.0 * M_PI);
}

std::vector<double> time_list(const json& j, const std::string& where) {
  std::vector<double> ts;
  try {
    ts = j.get<std::vector<double>>();
  } catch (const json::exception&) {
    throw InvalidArgument(where + " must be a list of times");
  }
  if (ts.empty()) throw InvalidArgument(where + " must not be empty");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (!(ts[i] >= 0.0 && ts[i] <= 1.0)) throw InvalidArgument(where + " entries must lie in [0, 1]");
    if (i > 0 && !(ts[i] > ts[i - 1])) throw InvalidArgument(where + " must be strictly increasing");
  }
  return ts;
}

Eigen::Index positive_count(const json& j, const std::string& key, const std::string& where) {
  const long n = get<long>(j, key, where);
  if (n < 1) throw InvalidArgument(where + "." + key + " must be >= 1");
  return static_cast<Eigen::Index>(n);
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InvalidArgument("cannot create output directory " + dir);
  const fs::path probe = fs::path(dir) / ".write_probe";
  std::ofstream out(probe);
  if (!out) throw InvalidArgument("output directory " + dir + " is not writable");
  out.close();
  fs::remove(probe, ec);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << text;
  if (!out) throw InvalidArgument("failed writing " + path.string());
}

void echo_config(const ExperimentConfig& config, const std::string& out_dir) {
  write_text(fs::path(out_dir) / "config.resolved.json", config.resolved.dump(2) + "\n");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError("non-finite " + what);
}

IntegratorConfig ode_config(const ExperimentConfig& config) {
  const json& j = config.resolved.at("integrator");
  IntegratorConfig c;
  c.method = parse_method(get<std::string>(j, "method", "integrator"));
  c.steps = get<int>(j, "steps", "integrator");
  c.validate();
  if (c.method == Method::euler_maruyama)
    throw InvalidArgument("integrator.method must be euler or rk4; the SDE always uses euler_maruyama");
  return c;
}

std::optional<TimeFn> diffusion_of(const ExperimentConfig& config) {
  const json& sigma = config.resolved.at("objective").at("sigma");
  if (sigma.is_null()) return std::nullopt;
  return time_fn_from_json(sigma);
}

std::vector<ParticleEnsemble> push_forward(const ActionField& field, const ParticleEnsemble& start,
                                           const std::vector<double>& times, PushMode mode,
                                           const ExperimentConfig& config, std::uint64_t seed) {
  const IntegratorConfig ode = ode_config(config);
  if (mode != PushMode::sde) return integrate_ode_saving(field, start, times, ode);

  const TimeFn sigma = *diffusion_of(config);
  const int sde_steps = get<int>(config.resolved.at("integrator"), "sde_steps", "integrator");
  if (sde_steps < 1) throw InvalidArgument("integrator.sde_steps must be >= 1");
  std::vector<ParticleEnsemble> frames;
  ParticleEnsemble cur = start;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double t = times[k];
    if (t < cur.time) throw InvalidArgument("push-forward times must be ascending from the start time");
    if (t > cur.time) {
      IntegratorConfig seg{Method::euler_maruyama, std::max(1, static_cast<int>(std::lround(sde_steps * (t - cur.time))))};
      cur = integrate_sde(field, cur, cur.time, t, sigma, seg, mix_seed(seed, k));
    }
    frames.push_back(cur);
  }
  return frames;
}

// Multinomial resampling by normalized weights; leaves unweighted ensembles alone.
Points resample_by_weight(const ParticleEnsemble& e, Rng& rng) {
  if (!e.log_weights) return e.positions;
  const Vector& lw = *e.log_weights;
  const double mx = lw.maxCoeff();
  std::vector<double> w(static_cast<std::size_t>(lw.size()));
  for (Eigen::Index i = 0; i < lw.size(); ++i) w[static_cast<std::size_t>(i)] = std::exp(lw(i) - mx);
  std::discrete_distribution<Eigen::Index> pick(w.begin(), w.end());
  Points out(e.positions.rows(), e.positions.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = e.positions.row(pick(rng));
  return out;
}

FieldPtr field_for(const ExperimentConfig& config, const PathPtr& path, const std::optional<std::string>& checkpoint,
                   const std::string& source) {
  FieldPtr field;
  if (source == "true_action") {
    field = path->true_action();
    if (!field) throw InvalidArgument(path->kind() + " path has no closed-form true action");
  } else if (source == "checkpoint") {
    if (!checkpoint) throw InvalidArgument("this command needs --checkpoint");
    if (!fs::exists(*checkpoint)) throw InvalidArgument("checkpoint not found: " + *checkpoint);
    field = load_field(*checkpoint);
  } else {
    throw InvalidArgument("evaluate.field must be 'checkpoint' or 'true_action'");
  }
  if (field->dim() != path->dim())
    throw InvalidArgument("checkpoint dimension " + std::to_string(field->dim()) + " does not match path dimension " +
                          std::to_string(path->dim()));
  (void)config;
  return field;
}

double quadrature_mass_1d(const MarginalPath& path, double t) {
  const int n = 24001;
  const double lo = -15.0, hi = 15.0, h = (hi - lo) / (n - 1);
  double total = 0.0;
  Vector x(1);
  for (int i = 0; i < n; ++i) {
    x(0) = lo + i * h;
    total += (i == 0 || i == n - 1 ? 0.5 : 1.0) * path.density(t, x);
  }
  return total * h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

json default_config(const std::string& path_kind) {
  return {
      {"seed", 0},
      {"path", path_defaults(path_kind)},
      {"model", {{"hidden_widths", {64, 64}}, {"activation", "tanh"}, {"seed", nullptr}}},
      {"objective",
       {{"kind", "am"},
        {"sigma", nullptr},
        {"growth", 1.0},
        {"conjugate", nullptr},
        {"ssm_projections", 1},
        {"weight_schedule", "constant"},
        {"adaptive_proposal", false}}},
      {"train",
       {{"iterations", 20000},
        {"n_boundary", 256},
        {"n_interior", 256},
        {"lr", 1e-3},
        {"beta1", 0.9},
        {"beta2", 0.999},
        {"eps", 1e-8},
        {"eval_every", 1000},
        {"error_times", 20},
        {"error_samples", 500}}},
      {"integrator", {{"method", "rk4"}, {"steps", 100}, {"sde_steps", 500}}},
      {"generate", {{"times", {0.0, 0.25, 0.5, 0.75, 1.0}}, {"n", 1000}}},
      {"sample", {{"times", linspace(0.0, 1.0, 11)}, {"n", 1000}}},
      {"evaluate",
       {{"times", linspace(0.1, 1.0, 10)}, {"n", 2000}, {"w2", true}, {"bandwidth", nullptr}, {"field", "checkpoint"}}},
      {"ald", {{"M", kDefaultLangevinSteps}, {"step", 0.01}, {"score", "auto"}}},
      {"likelihood", {{"n", 500}, {"points", nullptr}, {"base", nullptr}, {"target", nullptr}}},
  };
}

ExperimentConfig resolve_config(const json& user, std::optional<std::uint64_t> seed_override) {
  if (!user.is_object()) throw InvalidArgument("config must be a JSON object");
  std::string kind = "gaussian";
  if (user.contains("path")) {
    const json& p = user.at("path");
    if (!p.is_object()) throw InvalidArgument("config section 'path' must be an object");
    if (p.contains("kind")) {
      if (!p.at("kind").is_string()) throw InvalidArgument("path.kind must be a string");
      kind = p.at("kind").get<std::string>();
    }
  }
  json doc = default_config(kind);
  overlay(doc, user, "");
  if (seed_override) doc["seed"] = *seed_override;
  if (doc.at("model").at("seed").is_null()) doc["model"]["seed"] = doc.at("seed");

  ExperimentConfig config;
  config.resolved = doc;
  try {
    config.seed = doc.at("seed").get<std::uint64_t>();
  } catch (const json::exception&) {
    throw InvalidArgument("seed must be a non-negative integer");
  }

  // Validate everything up front so commands fail before doing work.
  const PathPtr path = build_path(doc.at("path"));
  build_model(doc.at("model"), path->dim());
  build_train_config(config, path);
  ode_config(config);
  push_mode(config);
  time_list(doc.at("generate").at("times"), "generate.times");
  time_list(doc.at("sample").at("times"), "sample.times");
  time_list(doc.at("evaluate").at("times"), "evaluate.times");
  positive_count(doc.at("generate"), "n", "generate");
  positive_count(doc.at("sample"), "n", "sample");
  positive_count(doc.at("evaluate"), "n", "evaluate");
  positive_count(doc.at("likelihood"), "n", "likelihood");
  if (get<int>(doc.at("ald"), "M", "ald") < 0) throw InvalidArgument("ald.M must be >= 0");
  if (!(get<double>(doc.at("ald"), "step", "ald") > 0.0)) throw InvalidArgument("ald.step must be positive");
  const json& bw = doc.at("evaluate").at("bandwidth");
  if (!bw.is_null()) KernelSpec::rbf(bw.get<double>());
  return config;
}

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read config " + path);
  json user;
  try {
    user = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument("config " + path + " is not valid JSON: " + e.what());
  }
  // Relative data files resolve against the config's directory.
  if (user.contains("path") && user["path"].is_object() && user["path"].contains("file") &&
      user["path"]["file"].is_string()) {
    const fs::path f = user["path"]["file"].get<std::string>();
    if (f.is_relative()) user["path"]["file"] = (fs::absolute(path).parent_path() / f).lexically_normal().string();
  }
  if (user.contains("likelihood") && user["likelihood"].is_object() && user["likelihood"].contains("points") &&
      user["likelihood"]["points"].is_string()) {
    const fs::path f = user["likelihood"]["points"].get<std::string>();
    if (f.is_relative())
      user["likelihood"]["points"] = (fs::absolute(path).parent_path() / f).lexically_normal().string();
  }
  return resolve_config(user, seed_override);
}

TimeFn time_fn_from_json(const json& spec) {
  if (!spec.is_object()) throw InvalidArgument("time function spec must be an object with a kind");
  const std::string kind = get<std::string>(spec, "kind", "time function");
  if (kind == "constant") return TimeFn::constant(get<double>(spec, "c", kind));
  if (kind == "linear") return TimeFn::linear(get<double>(spec, "a", kind), get<double>(spec, "b", kind));
  if (kind == "exponential")
    return TimeFn::exponential(get<double>(spec, "c", kind), get<double>(spec, "rate", kind));
  if (kind == "sqrt_poly")
    return TimeFn::sqrt_poly(get<double>(spec, "a", kind), get<double>(spec, "b", kind), get<double>(spec, "c", kind));
  throw InvalidArgument("unknown time function kind '" + kind +
                        "' (expected constant, linear, exponential or sqrt_poly)");
}

PathPtr build_path(const json& spec) {
  const std::string kind = get<std::string>(spec, "kind", "path");
  if (kind == "gaussian") {
    const Vector x0 = vector_from(spec.at("x0"), "path.x0");
    if (x0.size() < 1) throw InvalidArgument("path.x0 must be non-empty");
    return gaussian_path(x0, mean_fn_from_json(spec.at("mean"), static_cast<int>(x0.size())),
                         time_fn_from_json(spec.at("scale")));
  }
  if (kind == "delta_mixture") {
    std::vector<std::vector<double>> rows;
    try {
      rows = spec.at("centers").get<std::vector<std::vector<double>>>();
    } catch (const json::exception&) {
      throw InvalidArgument("path.centers must be a list of points");
    }
    if (rows.empty()) throw InvalidArgument("delta_mixture needs at least one point");
    Points c(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.front().size()) throw InvalidArgument("path.centers rows differ in length");
      for (std::size_t j = 0; j < rows[i].size(); ++j)
        c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return delta_mixture_path(c, mean_fn_from_json(spec.at("mean"), static_cast<int>(c.cols())),
                              time_fn_from_json(spec.at("scale")));
  }
  if (kind == "weight_shift")
    return weight_shift_path(get<double>(spec, "left_mean", "path"), get<double>(spec, "right_mean", "path"),
                             get<double>(spec, "alpha0", "path"), get<double>(spec, "alpha1", "path"));
  if (kind == "qho") return qho_superposition_path();
  if (kind == "interpolant") {
    const int dim = get<int>(spec, "dim", "path");
    if (dim < 1) throw InvalidArgument("path.dim must be >= 1");
    const GaussianSpec prior = gaussian_spec(spec.at("prior"), "path.prior");
    const GaussianSpec data = gaussian_spec(spec.at("data"), "path.data");
    if (prior.mean.size() != dim || data.mean.size() != dim)
      throw InvalidArgument("interpolant prior/data dimension mismatch with path.dim");
    std::optional<Vector> mask;
    if (!spec.at("mask").is_null()) mask = vector_from(spec.at("mask"), "path.mask");
    return interpolant_path(dim, gaussian_sampler(prior.mean, prior.std), gaussian_sampler(data.mean, data.std), mask);
  }
  if (kind == "snapshots") {
    if (spec.at("file").is_null()) throw InvalidArgument("snapshots path needs path.file");
    return snapshot_path(load_snapshots(spec.at("file").get<std::string>()),
                         parse_smoothing(get<std::string>(spec, "smoothing", "path")));
  }
  path_defaults(kind);  // throws the unknown-kind error
  return nullptr;
}

std::shared_ptr<MlpField> build_model(const json& spec, int dim) {
  std::vector<int> widths;
  try {
    widths = spec.at("hidden_widths").get<std::vector<int>>();
  } catch (const json::exception&) {
    throw InvalidArgument("model.hidden_widths must be a list of integers");
  }
  return new_mlp_field(dim, widths, parse_activation(get<std::string>(spec, "activation", "model")),
                       get<std::uint64_t>(spec, "seed", "model"));
}

TrainConfig build_train_config(const ExperimentConfig& config, const PathPtr& path) {
  const json& o = config.resolved.at("objective");
  const json& t = config.resolved.at("train");
  TrainConfig c;
  c.objective = parse_objective(get<std::string>(o, "kind", "objective"));
  c.iterations = get<long>(t, "iterations", "train");
  c.batch.n_boundary = positive_count(t, "n_boundary", "train");
  c.batch.n_interior = positive_count(t, "n_interior", "train");
  c.adam = {get<double>(t, "lr", "train"), get<double>(t, "beta1", "train"), get<double>(t, "beta2", "train"),
            get<double>(t, "eps", "train")};
  c.eval_every = get<long>(t, "eval_every", "train");
  c.error_times = get<int>(t, "error_times", "train");
  c.error_samples = positive_count(t, "error_samples", "train");
  c.seed = config.seed;
  c.diffusion = diffusion_of(config);
  c.growth = get<double>(o, "growth", "objective");
  c.ssm_projections = get<int>(o, "ssm_projections", "objective");
  c.adaptive_proposal = get<bool>(o, "adaptive_proposal", "objective");
  const std::string schedule = get<std::string>(o, "weight_schedule", "objective");
  if (schedule == "constant")
    c.schedule = WeightSchedule::constant_one();
  else if (schedule == "endpoint_cancelling")
    c.schedule = WeightSchedule::endpoint_cancelling();
  else
    throw InvalidArgument("objective.weight_schedule must be 'constant' or 'endpoint_cancelling'");
  if (!o.at("conjugate").is_null()) {
    const std::string conj = o.at("conjugate").get<std::string>();
    if (conj == "quadratic")
      c.conjugate = Conjugate::quadratic();
    else if (conj == "quartic")
      c.conjugate = Conjugate::quartic();
    else
      throw InvalidArgument("objective.conjugate must be 'quadratic' or 'quartic'");
  }
  if (c.objective == ObjectiveKind::eam && c.diffusion && path->has_velocity() && path->has_score())
    c.truth = entropic_drift(path, *c.diffusion);
  c.validate();
  return c;
}

PushMode push_mode(const ExperimentConfig& config) {
  const std::string kind = config.resolved.at("objective").at("kind").get<std::string>();
  if (kind == "eam") {
    if (!diffusion_of(config)) throw InvalidArgument("eam objective requires objective.sigma");
    return PushMode::sde;
  }
  if (kind == "uam") return PushMode::weighted;
  return PushMode::ode;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

EvaluationSummary compare_to_path(const std::string& method, const MarginalPath& path,
                                  const std::vector<ParticleEnsemble>& generated, bool with_w2,
                                  const KernelSpec& kernel, std::uint64_t seed) {
  EvaluationSummary s;
  s.method = method;
  for (std::size_t k = 0; k < generated.size(); ++k) {
    const ParticleEnsemble& g = generated[k];
    const Eigen::Index n = g.size();
    Rng ref_rng(mix_seed(seed, 2 * k)), null_rng(mix_seed(seed, 2 * k + 1)), pick_rng(mix_seed(seed, 1000 + k));
    const Points ref = path.sample(g.time, n, ref_rng);
    const Points null = path.sample(g.time, n, null_rng);
    const Points gen = resample_by_weight(g, pick_rng);
    TimeMetrics m;
    m.time = g.time;
    // One kernel per time, fixed from the truth samples, shared by model and null.
    m.bandwidth = kernel.bandwidth ? *kernel.bandwidth : median_bandwidth(ref, null);
    const KernelSpec k_fixed = KernelSpec::rbf(m.bandwidth);
    m.mmd = mmd(gen, ref, k_fixed);
    m.mmd_null = mmd(null, ref, k_fixed);
    if (with_w2 && n <= kMaxAssignmentSize) {
      m.w2 = wasserstein2(gen, ref);
      m.w2_null = wasserstein2(null, ref);
    }
    require_finite(m.mmd, "MMD");
    s.per_time.push_back(m);
    s.average_mmd += m.mmd / static_cast<double>(generated.size());
    s.average_mmd_null += m.mmd_null / static_cast<double>(generated.size());
  }
  return s;
}

void write_evaluation(const std::string& out_dir, const EvaluationSummary& s, const json& metadata) {
  std::ostringstream lines, csv;
  csv << "method,time,mmd,mmd_null,w2,w2_null\n";
  std::vector<double> times;
  for (const auto& m : s.per_time) {
    times.push_back(m.time);
    lines << json{{"method", s.method},     {"time", m.time},          {"metric", "mmd"},
                  {"value", m.mmd},          {"null", m.mmd_null},      {"bandwidth", m.bandwidth}}
                 .dump()
          << '\n';
    if (m.w2)
      lines << json{{"method", s.method}, {"time", m.time}, {"metric", "w2"}, {"value", *m.w2}, {"null", *m.w2_null}}
                   .dump()
            << '\n';
    csv << s.method << ',' << fmt(m.time) << ',' << fmt(m.mmd) << ',' << fmt(m.mmd_null) << ','
        << (m.w2 ? fmt(*m.w2) : "") << ',' << (m.w2_null ? fmt(*m.w2_null) : "") << '\n';
  }
  lines << json{{"method", s.method},
                {"metric", "average_mmd"},
                {"value", s.average_mmd},
                {"null", s.average_mmd_null},
                {"times", times}}
               .dump()
        << '\n';
  json meta = metadata;
  meta["method"] = s.method;
  meta["times"] = times;
  meta["average_mmd"] = s.average_mmd;
  meta["average_mmd_null"] = s.average_mmd_null;
  const fs::path dir(out_dir);
  write_text(dir / ("metrics_" + s.method + ".jsonl"), lines.str());
  write_text(dir / ("metrics_" + s.method + ".csv"), csv.str());
  write_text(dir / ("metrics_" + s.method + ".json"), meta.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Commands

void cmd_generate(const ExperimentConfig& config, const std::string& out_dir) {
  ensure_out_dir(out_dir);
  echo_config(config, out_dir);
  const PathPtr path = build_path(config.resolved.at("path"));
  const json& g = config.resolved.at("generate");
  const std::vector<double> times = time_list(g.at("times"), "generate.times");
  const Eigen::Index n = positive_count(g, "n", "generate");
  std::vector<Points> points;
  for (std::size_t k = 0; k < times.size(); ++k) {
    Rng rng(mix_seed(mix_seed(config.seed, kTagGenerate), k));
    points.push_back(path->sample(times[k], n, rng));
  }
  write_snapshots((fs::path(out_dir) / "snapshots.csv").string(), times, points);

  json side{{"path", config.resolved.at("path")}, {"times", times}, {"n", n}, {"seed", config.seed}};
  if (path->has_density() && path->dim() == 1) {
    std::vector<double> mass;
    for (double t : times) mass.push_back(quadrature_mass_1d(*path, t));
    side["normalization"] = {{"method", "trapezoid on [-15, 15], 24001 nodes"}, {"integral", mass}};
  }
  if (auto qho = std::dynamic_pointer_cast<const QhoSuperpositionPath>(path)) {
    side["rejection_envelope"] = {{"variance", QhoSuperpositionPath::envelope_variance},
                                  {"bound", qho->envelope_bound()}};
  }
  write_text(fs::path(out_dir) / "snapshots.json", side.dump(2) + "\n");
}

void cmd_train(const ExperimentConfig& config, const std::string& out_dir,
               const std::optional<std::string>& resume_checkpoint) {
  ensure_out_dir(out_dir);
  echo_config(config, out_dir);
  const PathPtr path = build_path(config.resolved.at("path"));
  const TrainConfig tc = build_train_config(config, path);
  std::shared_ptr<MlpField> field;
  TrainState state;
  if (resume_checkpoint) {
    if (!fs::exists(*resume_checkpoint)) throw InvalidArgument("checkpoint not found: " + *resume_checkpoint);
    field = load_train_checkpoint(*resume_checkpoint, state);
    if (field->dim() != path->dim()) throw InvalidArgument("checkpoint dimension does not match the path");
  } else {
    field = build_model(config.resolved.at("model"), path->dim());
  }

  const fs::path dir(out_dir);
  const std::string ckpt = (dir / "checkpoint.json").string();
  std::ofstream report(dir / "train_report.jsonl", resume_checkpoint ? std::ios::app : std::ios::trunc);
  if (!report) throw InvalidArgument("cannot write train report in " + out_dir);
  json timing = json::array();
  TrainHooks hooks;
  hooks.on_record = [&](const TrainRecord& r) {
    report << record_to_json(r) << '\n';
    report.flush();
    timing.push_back({{"iteration", r.iteration}, {"wall_seconds", r.wall_seconds}});
  };
  hooks.on_checkpoint = [&](const MlpField& f, const TrainState& s) { save_train_checkpoint(ckpt, f, s); };
  try {
    train(*field, *path, tc, state, hooks);
  } catch (const NumericError&) {
    write_text(dir / "train_timing.json", timing.dump(2) + "\n");
    throw;
  }
  write_text(dir / "train_timing.json", timing.dump(2) + "\n");
}

void cmd_sample(const ExperimentConfig& config, const std::string& out_dir, const std::string& checkpoint) {
  ensure_out_dir(out_dir);
  echo_config(config, out_dir);
  const PathPtr path = build_path(config.resolved.at("path"));
  const FieldPtr field = field_for(config, path, checkpoint, "checkpoint");
  const json& s = config.resolved.at("sample");
  std::vector<double> times = time_list(s.at("times"), "sample.times");
  const Eigen::Index n = positive_count(s, "n", "sample");
  Rng rng(mix_seed(config.seed, kTagInitial));
  const PushMode mode = push_mode(config);
  ParticleEnsemble start{0.0, path->sample(0.0, n, rng), std::nullopt};
  if (mode == PushMode::weighted) start.log_weights = Vector::Zero(n);
  const auto frames = push_forward(*field, start, times, mode, config, mix_seed(config.seed, kTagDynamics));
  write_trajectory((fs::path(out_dir) / "trajectory.csv").string(), frames);
}

void cmd_likelihood(const ExperimentConfig& config, const std::string& out_dir, const std::string& checkpoint) {
  ensure_out_dir(out_dir);
  echo_config(config, out_dir);
  const PathPtr path = build_path(config.resolved.at("path"));
  const FieldPtr field = field_for(config, path, checkpoint, "checkpoint");
  const json& L = config.resolved.at("likelihood");

  Points x;
  if (!L.at("points").is_null()) {
    const SnapshotDataset data = load_snapshots(L.at("points").get<std::string>());
    x = data.snapshots.back();
    if (x.cols() != path->dim()) throw InvalidArgument("likelihood.points dimension does not match the path");
  } else {
    Rng rng(mix_seed(config.seed, kTagLikelihood));
    x = path->sample(1.0, positive_count(L, "n", "likelihood"), rng);
  }

  LogDensityFn base;
  std::string base_name;
  if (!L.at("base").is_null()) {
    const GaussianSpec g = gaussian_spec(L.at("base"), "likelihood.base");
    if (g.mean.size() != path->dim()) throw InvalidArgument("likelihood.base dimension does not match the path");
    base = [g](const Vector& v) { return gaussian_log_density(g, v); };
    base_name = "gaussian(likelihood.base)";
  } else if (config.resolved.at("path").at("kind") == "interpolant") {
    const GaussianSpec g = gaussian_spec(config.resolved.at("path").at("prior"), "path.prior");
    base = [g](const Vector& v) { return gaussian_log_density(g, v); };
    base_name = "gaussian(path.prior)";
  } else if (path->has_density()) {
    base = [path](const Vector& v) { return std::log(path->density(0.0, v)); };
    base_name = "path density at t=0";
  } else {
    throw InvalidArgument("likelihood needs likelihood.base for paths without an analytic t=0 density");
  }

  const Vector ll = log_likelihood(*field, x, base, ode_config(config));

  std::optional<LogDensityFn> target;
  if (!L.at("target").is_null()) {
    const GaussianSpec g = gaussian_spec(L.at("target"), "likelihood.target");
    if (g.mean.size() != path->dim()) throw InvalidArgument("likelihood.target dimension does not match the path");
    target = [g](const Vector& v) { return gaussian_log_density(g, v); };
  } else if (path->has_density()) {
    target = [path](const Vector& v) { return std::log(path->density(1.0, v)); };
  }

  std::ostringstream csv;
  for (Eigen::Index j = 0; j < x.cols(); ++j) csv << 'x' << j << ',';
  csv << "log_likelihood" << (target ? ",analytic_log_density" : "") << '\n';
  double mean_ll = 0.0, mean_abs = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) csv << fmt(x(i, j)) << ',';
    csv << fmt(ll(i));
    mean_ll += ll(i) / static_cast<double>(x.rows());
    if (target) {
      const double a = (*target)(x.row(i).transpose());
      require_finite(a, "analytic log-density");
      csv << ',' << fmt(a);
      mean_abs += std::abs(ll(i) - a) / static_cast<double>(x.rows());
    }
    csv << '\n';
  }
  write_text(fs::path(out_dir) / "likelihood.csv", csv.str());
  json summary{{"n", x.rows()}, {"base", base_name}, {"mean_log_likelihood", mean_ll}};
  if (target) summary["mean_abs_error"] = mean_abs;
  write_text(fs::path(out_dir) / "likelihood.json", summary.dump(2) + "\n");
}

void cmd_evaluate(const ExperimentConfig& config, const std::string& out_dir,
                  const std::optional<std::string>& checkpoint) {
  ensure_out_dir(out_dir);
  echo_config(config, out_dir);
  const PathPtr path = build_path(config.resolved.at("path"));
  const json& e = config.resolved.at("evaluate");
  const std::string source = get<std::string>(e, "field", "evaluate");
  const FieldPtr field = field_for(config, path, checkpoint, source);
  const std::vector<double> times = time_list(e.at("times"), "evaluate.times");
  const Eigen::Index n = positive_count(e, "n", "evaluate");
  KernelSpec kernel;
  if (!e.at("bandwidth").is_null()) kernel = KernelSpec::rbf(e.at("bandwidth").get<double>());

  const PushMode mode = source == "true_action" ? PushMode::ode : push_mode(config);
  Rng rng(mix_seed(config.seed, kTagInitial));
  ParticleEnsemble start{0.0, path->sample(0.0, n, rng), std::nullopt};
  if (mode == PushMode::weighted) start.log_weights = Vector::Zero(n);
  const auto frames = push_forward(*field, start, times, mode, config, mix_seed(config.seed, kTagDynamics));
  const std::string method =
      source == "true_action" ? "true_action" : config.resolved.at("objective").at("kind").get<std::string>();
  const EvaluationSummary s =
      compare_to_path(method, *path, frames, get<bool>(e, "w2", "evaluate"), kernel, mix_seed(config.seed, kTagReference));
  const char* modes[] = {"ode", "sde", "weighted"};
  write_evaluation(out_dir, s,
                   {{"kernel", "rbf"},
                    {"bandwidth", kernel.bandwidth ? json(*kernel.bandwidth) : json("median heuristic on truth samples")},
                    {"n", n},
                    {"dynamics", modes[static_cast<int>(mode)]},
                    {"weighted_resampling", mode == PushMode::weighted}});
}

void cmd_compare_ald(const ExperimentConfig& config, const std::string& out_dir,
                     const std::optional<std::string>& checkpoint) {
  ensure_out_dir(out_dir);
  echo_config(config, out_dir);
  const PathPtr path = build_path(config.resolved.at("path"));
  const json& a = config.resolved.at("ald");
  const json& e = config.resolved.at("evaluate");
  std::string score_src = get<std::string>(a, "score", "ald");
  if (score_src == "auto") score_src = checkpoint ? "checkpoint" : "true";
  ScoreFn score;
  std::string method;
  if (score_src == "true") {
    if (!path->has_score())
      throw InvalidArgument(path->kind() + " path has no analytic score; pass --checkpoint with a score model");
    score = score_from_path(path);
    method = "ald_true";
  } else if (score_src == "checkpoint") {
    score = score_from_field(field_for(config, path, checkpoint, "checkpoint"));
    method = "ald_ssm";
  } else {
    throw InvalidArgument("ald.score must be 'auto', 'true' or 'checkpoint'");
  }
  const std::vector<double> times = time_list(e.at("times"), "evaluate.times");
  const Eigen::Index n = positive_count(e, "n", "evaluate");
  const int M = get<int>(a, "M", "ald");
  const double step = get<double>(a, "step", "ald");
  KernelSpec kernel;
  if (!e.at("bandwidth").is_null()) kernel = KernelSpec::rbf(e.at("bandwidth").get<double>());
  Rng rng(mix_seed(config.seed, kTagInitial));
  const Points initial = path->sample(0.0, n, rng);
  const auto frames = ald_sample(score, times, M, step, initial, mix_seed(config.seed, kTagDynamics));
  const EvaluationSummary s =
      compare_to_path(method, *path, frames, get<bool>(e, "w2", "evaluate"), kernel, mix_seed(config.seed, kTagReference));
  write_evaluation(out_dir, s,
                   {{"kernel", "rbf"},
                    {"bandwidth", kernel.bandwidth ? json(*kernel.bandwidth) : json("median heuristic on truth samples")},
                    {"n", n},
                    {"dynamics", "annealed_langevin"},
                    {"M", M},
                    {"step", step}});
}

int run_command(const std::string& command, const CommandOptions& options) {
  try {
    if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end())
      throw InvalidArgument("unknown command '" + command + "'");
    if (options.config_path.empty()) throw InvalidArgument("--config is required");
    const ExperimentConfig config = load_config(options.config_path, options.seed);
    if (command == "generate")
      cmd_generate(config, options.out_dir);
    else if (command == "train")
      cmd_train(config, options.out_dir, options.checkpoint);
    else if (command == "sample" || command == "likelihood") {
      if (!options.checkpoint) throw InvalidArgument(command + " needs --checkpoint");
      if (command == "sample")
        cmd_sample(config, options.out_dir, *options.checkpoint);
      else
        cmd_likelihood(config, options.out_dir, *options.checkpoint);
    }
    else if (command == "evaluate")
      cmd_evaluate(config, options.out_dir, options.checkpoint);
    else
      cmd_compare_ald(config, options.out_dir, options.checkpoint);
    return kExitOk;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace actionmatch
