#pragma once

#include "actionmatch/field.hpp"
#include "actionmatch/paths.hpp"

#include <cstdint>
#include <functional>
#include <optional>

namespace actionmatch {

// RBF kernel exp(-|x - y|^2 / (2 h^2)). Without an explicit bandwidth h is the
// median pairwise distance of the pooled sample.
struct KernelSpec {
  std::optional<double> bandwidth;

  static KernelSpec median_heuristic() { return {}; }
  static KernelSpec rbf(double h);
  void validate() const;
};

double median_bandwidth(const Points& X, const Points& Y);

// Biased (V-statistic) MMD, clipped at zero before the square root.
double mmd(const Points& X, const Points& Y, const KernelSpec& kernel = {});
// Same, returning the bandwidth actually used.
double mmd(const Points& X, const Points& Y, const KernelSpec& kernel, double& bandwidth_used);

constexpr Eigen::Index kMaxAssignmentSize = 4096;

// Optimal assignment for a square cost matrix; returns col_of_row.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

// Exact W2 between equal-size empirical measures.
double wasserstein2(const Points& X, const Points& Y);

// Reference velocity used by field_error.
using VelocityFn = std::function<Vector(double t, const Vector& x)>;

// sqrt(sum_t E|grad s - v*|^2 / sum_t E|v*|^2) on the midpoint grid
// (k + 1/2) / n_times, n_samples draws from q_t per node. v* is the gradient
// of the path's true action, or its velocity.
double field_error(const ActionField& field, const MarginalPath& path, int n_times, Eigen::Index n_samples,
                   std::uint64_t seed);
double field_error(const ActionField& field, const MarginalPath& path, const VelocityFn& truth, int n_times,
                   Eigen::Index n_samples, std::uint64_t seed);

// Drift of the SDE with diffusion sigma_t reproducing the path's marginals:
// v + sigma_t^2 / 2 * score. Needs analytic velocity and score.
VelocityFn entropic_drift(PathPtr path, TimeFn sigma);

}  // namespace actionmatch
