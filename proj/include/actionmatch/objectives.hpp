#pragma once

#include "actionmatch/field.hpp"
#include "actionmatch/paths.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace actionmatch {

struct BatchSpec {
  Eigen::Index n_boundary = 256;
  Eigen::Index n_interior = 256;
  std::uint64_t seed = 0;

  void validate() const;
};

// Time reweighting w(t) >= 0 with derivative.
struct WeightSchedule {
  std::function<double(double)> value;
  std::function<double(double)> deriv;
  bool identity = false;

  static WeightSchedule constant_one();
  // (1 - t) t^{3/2}: vanishes at both ends, cancelling the 1/sigma_t^2 blow-up of
  // paths with sigma_t = sqrt(t), f_t(x) = x sqrt(1 - t).
  static WeightSchedule endpoint_cancelling();
};

struct BinObservation {
  int bin = 0;
  double value = 0.0;
};

// Piecewise-constant proposal over B equal bins of [0, 1], steered toward the
// running standard deviation of the interior integrand in each bin.
class TimeProposal {
 public:
  static constexpr int kDefaultBins = 100;
  static constexpr double kDefaultDecay = 0.99;
  static constexpr double kStdFloor = 1e-8;

  explicit TimeProposal(int bins = kDefaultBins, double decay = kDefaultDecay);

  int bins() const { return static_cast<int>(masses_.size()); }
  double decay() const { return decay_; }
  double mass_floor() const { return 1e-3 / bins(); }
  const std::vector<double>& masses() const { return masses_; }
  std::vector<double> stds() const;
  bool observed(int bin) const { return ema_count[static_cast<std::size_t>(bin)] > 0; }

  int bin_of(double t) const;
  double density(double t) const;
  // n times stratified in proposal-CDF space: t_i = F^{-1}((i + U) / n).
  std::vector<double> stratified_times(Eigen::Index n, Rng& rng) const;

  // Masses proportional to max(std, kStdFloor), renormalized with every mass
  // held at or above the floor.
  static std::vector<double> masses_from_stds(const std::vector<double>& stds, double floor);
  void set_masses(std::vector<double> masses);

  friend TimeProposal update_time_proposal(const TimeProposal& proposal, std::span<const BinObservation> obs);

  // Raw EMA state, for checkpoints.
  std::vector<double> ema_mean, ema_second;
  std::vector<long> ema_count;

 private:
  double decay_;
  std::vector<double> masses_;
};

TimeProposal update_time_proposal(const TimeProposal& proposal, std::span<const BinObservation> obs);

// Convex conjugate c* of a transport cost, with gradient.
struct Conjugate {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> grad;
  std::string name;

  static Conjugate quadratic();  // 1/2 |y|^2
  static Conjugate quartic();    // 1/4 |y|^4
};

// Monte-Carlo objective estimate. value == boundary_0 - boundary_1 + kinetic +
// time_deriv + laplacian + growth + weight_deriv (all keys always present).
struct LossEstimate {
  double value = 0.0;
  std::vector<double> grad;
  std::map<std::string, double> terms;
  // Per interior draw: proposal bin and unweighted integrand.
  std::vector<BinObservation> observations;
  // Standard error of `value` treating draws as independent.
  double std_error = 0.0;

  double signed_term_sum() const;
};

struct ObjectiveOptions {
  WeightSchedule schedule = WeightSchedule::constant_one();
  const TimeProposal* proposal = nullptr;  // uniform when null
  std::optional<TimeFn> diffusion;         // entropic term sigma_t^2 / 2 * Laplacian
  double growth = 0.0;                     // unbalanced term growth / 2 * s^2
  std::optional<Conjugate> conjugate;      // replaces 1/2 |grad s|^2
  bool with_grad = true;
};

LossEstimate action_matching_objective(const ActionField& field, const MarginalPath& path, const BatchSpec& batch,
                                       const ObjectiveOptions& options);

LossEstimate am_loss(const ActionField& field, const MarginalPath& path, const BatchSpec& batch,
                     const WeightSchedule& schedule = WeightSchedule::constant_one(),
                     const TimeProposal* proposal = nullptr);

LossEstimate eam_loss(const ActionField& field, const MarginalPath& path, const BatchSpec& batch,
                      const TimeFn& sigma, const WeightSchedule& schedule = WeightSchedule::constant_one(),
                      const TimeProposal* proposal = nullptr);

LossEstimate uam_loss(const ActionField& field, const MarginalPath& path, const BatchSpec& batch,
                      double lambda = 1.0, const TimeProposal* proposal = nullptr);

LossEstimate cam_loss(const ActionField& field, const MarginalPath& path, const BatchSpec& batch,
                      const Conjugate& conjugate, const WeightSchedule& schedule = WeightSchedule::constant_one(),
                      const TimeProposal* proposal = nullptr);

// Sliced score matching of the score model grad_x s(t, .) with Rademacher
// projections: E[v^T H v + 1/2 (v . grad s)^2] over interior times.
LossEstimate ssm_loss(const ActionField& field, const MarginalPath& path, const BatchSpec& batch, int n_projections);

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

// 1/2 int_0^1 E_{q_t} |grad s - grad s*|^2 dt, midpoint rule in t with
// n_samples / n_times draws per node.
McEstimate action_gap_estimate(const ActionField& field, const MarginalPath& path, int n_times,
                               Eigen::Index n_samples, std::uint64_t seed);
double action_gap(const ActionField& field, const MarginalPath& path, int n_times = 200,
                  Eigen::Index n_samples = 200000, std::uint64_t seed = 0);

// K* = 1/2 int_0^1 E_{q_t} |grad s*|^2 dt on the same quadrature.
McEstimate kinetic_energy_estimate(const MarginalPath& path, int n_times, Eigen::Index n_samples,
                                   std::uint64_t seed);

}  // namespace actionmatch
