#pragma once

#include "actionmatch/field.hpp"
#include "actionmatch/paths.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace actionmatch {

struct ParticleEnsemble {
  double time = 0.0;
  Points positions;                  // n x d
  std::optional<Vector> log_weights;  // present in unbalanced mode

  Eigen::Index size() const { return positions.rows(); }
  void validate() const;
};

enum class Method { euler, rk4, euler_maruyama };

Method parse_method(const std::string& name);
std::string method_name(Method m);

// Fixed-step integrator settings. Direction follows the sign of t1 - t0.
struct IntegratorConfig {
  Method method = Method::rk4;
  int steps = 100;

  void validate() const;
};

// dx/dt = grad s(t, x) from t0 to t1 (t1 < t0 integrates backward).
ParticleEnsemble integrate_ode(const ActionField& field, const ParticleEnsemble& start, double t0, double t1,
                               const IntegratorConfig& config = {});

// Euler-Maruyama for dx = grad s dt + sigma_t dW, forward only. Particle i draws
// its noise from the stream Rng(mix_seed(seed, i)), so results depend only on
// (seed, n) and not on evaluation order.
ParticleEnsemble integrate_sde(const ActionField& field, const ParticleEnsemble& start, double t0, double t1,
                               const TimeFn& sigma, const IntegratorConfig& config, std::uint64_t seed);

// Positions under grad s, log-weights under d log w / dt = s.
ParticleEnsemble integrate_weighted(const ActionField& field, const ParticleEnsemble& start, double t0, double t1,
                                    const IntegratorConfig& config = {});

// Integrates [x, l] backward from t=1 to t=0 with dx/dt = grad s, dl/dt = Laplacian s;
// returns log q_1(x) = log q_0(x(0)) + l(0) for every row of x.
using LogDensityFn = std::function<double(const Vector&)>;
Vector log_likelihood(const ActionField& field, const Points& x, const LogDensityFn& base_log_density,
                      const IntegratorConfig& config = {});

// Score of q_t at (t, points), one row per point.
using ScoreFn = std::function<Points(double t, const Points& x)>;
ScoreFn score_from_field(FieldPtr field);
ScoreFn score_from_path(PathPtr path);

constexpr int kDefaultLangevinSteps = 5;

// Annealed Langevin dynamics: for each time, M steps of
// x <- x + (step / 2) score + sqrt(step) xi, then record the ensemble.
std::vector<ParticleEnsemble> ald_sample(const ScoreFn& score, const std::vector<double>& times, int M,
                                         double step, const Points& initial, std::uint64_t seed);

// Deterministic pushforward saving the ensemble at every entry of `times`
// (ascending, starting at or after start.time). Each segment uses
// max(1, round(steps * |dt|)) steps.
std::vector<ParticleEnsemble> integrate_ode_saving(const ActionField& field, const ParticleEnsemble& start,
                                                   const std::vector<double>& times,
                                                   const IntegratorConfig& config = {});

// Trajectory CSV: header `t,particle,x0,...,x{d-1}[,log_w]`.
void write_trajectory(const std::string& path, const std::vector<ParticleEnsemble>& frames);

}  // namespace actionmatch
