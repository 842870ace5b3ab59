#pragma once

#include "actionmatch/field.hpp"
#include "actionmatch/types.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace actionmatch {

// Scalar function of time with its first two derivatives.
struct TimeFn {
  std::function<double(double)> value;
  std::function<double(double)> deriv;
  std::function<double(double)> second;

  static TimeFn constant(double c);
  static TimeFn linear(double a, double b);            // a + b t
  static TimeFn exponential(double c, double rate);    // c exp(rate t)
  static TimeFn sqrt_poly(double a, double b, double c);  // sqrt(a + b t + c t^2)
};

// Mean map f_t(x0) with time derivatives.
struct MeanFn {
  std::function<Vector(double, const Vector&)> value;
  std::function<Vector(double, const Vector&)> deriv;
  std::function<Vector(double, const Vector&)> second;

  static MeanFn fixed();                      // f_t(x0) = x0
  static MeanFn translation(const Vector& u);  // x0 + t u
  static MeanFn scaled(TimeFn alpha);          // alpha_t x0
};

// Time-indexed family q_t on R^d accessed through samples, with optional
// analytic hooks. Paths are immutable; concurrent sampling is safe when each
// caller owns its Rng.
class MarginalPath {
 public:
  virtual ~MarginalPath() = default;

  virtual int dim() const = 0;
  virtual std::string kind() const = 0;
  virtual Points sample(double t, Eigen::Index n, Rng& rng) const = 0;
  // One draw per entry of `times`.
  virtual Points sample_at(const Vector& times, Rng& rng) const;

  Points sample_initial(Eigen::Index n, Rng& rng) const { return sample(0.0, n, rng); }
  Points sample_final(Eigen::Index n, Rng& rng) const { return sample(1.0, n, rng); }

  virtual bool has_density() const { return false; }
  virtual double density(double t, const Vector& x) const;
  virtual bool has_score() const { return false; }
  virtual Vector score(double t, const Vector& x) const;
  virtual bool has_velocity() const { return false; }
  virtual Vector velocity(double t, const Vector& x) const;
  // Closed-form true action s*_t; present only for gradient-field paths.
  virtual FieldPtr true_action() const { return nullptr; }

  Vector true_action_grad(double t, const Vector& x) const;
};

using PathPtr = std::shared_ptr<const MarginalPath>;

// q_t = N(f_t(x0), sigma_t^2 I).
class GaussianPath final : public MarginalPath {
 public:
  GaussianPath(Vector x0, MeanFn mean, TimeFn scale);

  int dim() const override { return static_cast<int>(x0_.size()); }
  std::string kind() const override { return "gaussian"; }
  Points sample(double t, Eigen::Index n, Rng& rng) const override;
  Points sample_at(const Vector& times, Rng& rng) const override;
  bool has_density() const override { return true; }
  double density(double t, const Vector& x) const override;
  bool has_score() const override { return true; }
  Vector score(double t, const Vector& x) const override;
  bool has_velocity() const override { return true; }
  Vector velocity(double t, const Vector& x) const override;
  FieldPtr true_action() const override { return action_; }

  double log_density(double t, const Vector& x) const;
  Vector mean(double t) const { return mean_.value(t, x0_); }
  double scale(double t) const { return scale_.value(t); }
  // The exact flow map of the true velocity from time t0 to t1.
  Points transport(double t0, double t1, const Points& x) const;

 private:
  Vector x0_;
  MeanFn mean_;
  TimeFn scale_;
  FieldPtr action_;
};

// q_t = (1/N) sum_i N(f_t(x^i), sigma_t^2 I); velocity is the responsibility-
// weighted average of the per-component Gaussian velocities.
class DeltaMixturePath final : public MarginalPath {
 public:
  DeltaMixturePath(Points centers, MeanFn mean, TimeFn scale);

  int dim() const override { return static_cast<int>(centers_.cols()); }
  std::string kind() const override { return "delta_mixture"; }
  Points sample(double t, Eigen::Index n, Rng& rng) const override;
  bool has_density() const override { return true; }
  double density(double t, const Vector& x) const override;
  bool has_score() const override { return true; }
  Vector score(double t, const Vector& x) const override;
  bool has_velocity() const override { return true; }
  Vector velocity(double t, const Vector& x) const override;

  Vector responsibilities(double t, const Vector& x) const;

 private:
  Points centers_;
  MeanFn mean_;
  TimeFn scale_;
};

// 1D two-mode mixture alpha_t N(left, 1) + (1 - alpha_t) N(right, 1) with
// alpha_t linear from alpha0 to alpha1. Mass changes between modes without
// transport, so no velocity hook.
class WeightShiftPath final : public MarginalPath {
 public:
  WeightShiftPath(double left_mean = -5.0, double right_mean = 5.0, double alpha0 = 0.2, double alpha1 = 0.8);

  int dim() const override { return 1; }
  std::string kind() const override { return "weight_shift"; }
  Points sample(double t, Eigen::Index n, Rng& rng) const override;
  bool has_density() const override { return true; }
  double density(double t, const Vector& x) const override;
  bool has_score() const override { return true; }
  Vector score(double t, const Vector& x) const override;

  double left_weight(double t) const { return alpha0_ + (alpha1_ - alpha0_) * t; }
  double left_mean() const { return left_; }
  double right_mean() const { return right_; }

 private:
  double left_, right_, alpha0_, alpha1_;
};

// Equal superposition of the two lowest unit-frequency oscillator eigenstates,
// q_t = |psi(x, 2 pi t)|^2, which beats once over t in [0, 1]. The velocity is
// the probability current over the density, expressed in t units.
class QhoSuperpositionPath final : public MarginalPath {
 public:
  QhoSuperpositionPath();

  int dim() const override { return 1; }
  std::string kind() const override { return "qho"; }
  Points sample(double t, Eigen::Index n, Rng& rng) const override;
  bool has_density() const override { return true; }
  double density(double t, const Vector& x) const override;
  bool has_score() const override { return true; }
  Vector score(double t, const Vector& x) const override;
  bool has_velocity() const override { return true; }
  Vector velocity(double t, const Vector& x) const override;

  static constexpr double envelope_variance = 4.0;
  // Sup over x, t of q_t(x) / N(x | 0, envelope_variance).
  double envelope_bound() const { return bound_; }

 private:
  double bound_;
};

using Sampler = std::function<Points(Eigen::Index n, Rng& rng)>;

Sampler gaussian_sampler(const Vector& mean, double stddev);

// x_t = mask * x1 + (1 - mask) * ((1 - t) x0 + t x1), x0 ~ prior, x1 ~ data.
class InterpolantPath final : public MarginalPath {
 public:
  InterpolantPath(int dim, Sampler prior, Sampler data, std::optional<Vector> mask = std::nullopt);

  int dim() const override { return dim_; }
  std::string kind() const override { return "interpolant"; }
  Points sample(double t, Eigen::Index n, Rng& rng) const override;

 private:
  int dim_;
  Sampler prior_, data_;
  std::optional<Vector> mask_;
};

struct SnapshotDataset {
  std::vector<double> times;      // strictly increasing, within [0, 1]
  std::vector<Points> snapshots;  // one point set per time, common dimension
  std::vector<double> raw_times;  // timestamps as read, before rescaling

  int dim() const { return snapshots.empty() ? 0 : static_cast<int>(snapshots.front().cols()); }
  void validate() const;
};

enum class Smoothing {
  blend,      // linear blend of one draw from each neighbouring snapshot
  bernoulli,  // draw from snapshot k with probability (t_{k+1} - t) / (t_{k+1} - t_k), else k+1
  hold,       // piecewise-constant resampling of the preceding snapshot
};

Smoothing parse_smoothing(const std::string& name);

class SnapshotPath final : public MarginalPath {
 public:
  SnapshotPath(SnapshotDataset data, Smoothing smoothing = Smoothing::blend);

  int dim() const override { return data_.dim(); }
  std::string kind() const override { return "snapshots"; }
  Points sample(double t, Eigen::Index n, Rng& rng) const override;
  Points sample_at(const Vector& times, Rng& rng) const override;

 private:
  Vector draw(double t, Rng& rng) const;
  SnapshotDataset data_;
  Smoothing smoothing_;
};

// Factories mirroring the library's path kinds.
std::shared_ptr<GaussianPath> gaussian_path(const Vector& x0, MeanFn mean, TimeFn scale);
std::shared_ptr<DeltaMixturePath> delta_mixture_path(const Points& centers, MeanFn mean, TimeFn scale);
std::shared_ptr<WeightShiftPath> weight_shift_path(double left_mean = -5.0, double right_mean = 5.0,
                                                   double alpha0 = 0.2, double alpha1 = 0.8);
std::shared_ptr<QhoSuperpositionPath> qho_superposition_path();
std::shared_ptr<InterpolantPath> interpolant_path(int dim, Sampler prior, Sampler data,
                                                  std::optional<Vector> mask = std::nullopt);
std::shared_ptr<SnapshotPath> snapshot_path(SnapshotDataset data, Smoothing smoothing = Smoothing::blend);

// Snapshot CSV: header `t,x0,...,x{d-1}`, one point per row. Timestamps are
// rescaled affinely to [0, 1].
SnapshotDataset load_snapshots(const std::string& path);
SnapshotDataset parse_snapshots(const std::string& text);
void write_snapshots(const std::string& path, const std::vector<double>& times, const std::vector<Points>& points);

}  // namespace actionmatch
