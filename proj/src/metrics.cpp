#include "actionmatch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace actionmatch {

namespace {

void require_same_dim(const Points& X, const Points& Y) {
  if (X.rows() == 0 || Y.rows() == 0) throw InvalidArgument("empty point set");
  if (X.cols() != Y.cols())
    throw InvalidArgument("dimension mismatch: " + std::to_string(X.cols()) + " vs " + std::to_string(Y.cols()));
}

Eigen::MatrixXd squared_distances(const Points& X, const Points& Y) {
  const Vector xn = X.rowwise().squaredNorm();
  const Vector yn = Y.rowwise().squaredNorm();
  Eigen::MatrixXd D = -2.0 * X * Y.transpose();
  D.colwise() += xn;
  D.rowwise() += yn.transpose();
  return D.cwiseMax(0.0);
}

double mean_kernel(const Points& X, const Points& Y, double h) {
  const double scale = -0.5 / (h * h);
  return (squared_distances(X, Y) * scale).array().exp().mean();
}

}  // namespace

KernelSpec KernelSpec::rbf(double h) {
  KernelSpec k;
  k.bandwidth = h;
  k.validate();
  return k;
}

void KernelSpec::validate() const {
  if (bandwidth && !(*bandwidth > 0.0 && std::isfinite(*bandwidth)))
    throw InvalidArgument("kernel bandwidth must be positive");
}

double median_bandwidth(const Points& X, const Points& Y) {
  require_same_dim(X, Y);
  Points Z(X.rows() + Y.rows(), X.cols());
  Z << X, Y;
  const Eigen::MatrixXd D = squared_distances(Z, Z);
  std::vector<double> upper;
  upper.reserve(static_cast<std::size_t>(Z.rows() * (Z.rows() - 1) / 2));
  for (Eigen::Index j = 1; j < Z.rows(); ++j)
    for (Eigen::Index i = 0; i < j; ++i) upper.push_back(D(i, j));
  if (upper.empty()) return 1.0;
  auto mid = upper.begin() + static_cast<std::ptrdiff_t>(upper.size() / 2);
  std::nth_element(upper.begin(), mid, upper.end());
  const double h = std::sqrt(*mid);
  return h > 0.0 ? h : 1.0;
}

double mmd(const Points& X, const Points& Y, const KernelSpec& kernel, double& bandwidth_used) {
  require_same_dim(X, Y);
  kernel.validate();
  const double h = kernel.bandwidth ? *kernel.bandwidth : median_bandwidth(X, Y);
  bandwidth_used = h;
  const double m2 = mean_kernel(X, X, h) + mean_kernel(Y, Y, h) - 2.0 * mean_kernel(X, Y, h);
  return std::sqrt(std::max(m2, 0.0));
}

double mmd(const Points& X, const Points& Y, const KernelSpec& kernel) {
  double h = 0.0;
  return mmd(X, Y, kernel, h);
}

// Shortest augmenting path with row/column potentials, O(n^3).
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw InvalidArgument("assignment cost matrix must be square");
  if (n > kMaxAssignmentSize)
    throw InvalidArgument("assignment size " + std::to_string(n) + " exceeds the exact-solver limit " +
                          std::to_string(kMaxAssignmentSize));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> c = cost;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      const double* row = c.data() + static_cast<std::ptrdiff_t>(i0 - 1) * n;
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = row[j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> col_of_row(n);
  for (int j = 1; j <= n; ++j) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

double wasserstein2(const Points& X, const Points& Y) {
  require_same_dim(X, Y);
  if (X.rows() != Y.rows())
    throw InvalidArgument("wasserstein2 needs equal sizes, got " + std::to_string(X.rows()) + " and " +
                          std::to_string(Y.rows()));
  if (!X.allFinite() || !Y.allFinite()) throw InvalidArgument("non-finite points");
  const Eigen::MatrixXd cost = squared_distances(X, Y);
  const std::vector<int> match = solve_assignment(cost);
  double total = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) total += cost(i, match[static_cast<std::size_t>(i)]);
  return std::sqrt(std::max(total / static_cast<double>(X.rows()), 0.0));
}

double field_error(const ActionField& field, const MarginalPath& path, const VelocityFn& truth, int n_times,
                   Eigen::Index n_samples, std::uint64_t seed) {
  if (n_times < 1 || n_samples < 1) throw InvalidArgument("field_error needs n_times >= 1 and n_samples >= 1");
  if (field.dim() != path.dim()) throw InvalidArgument("field and path dimensions differ");
  double num = 0.0, den = 0.0;
  for (int k = 0; k < n_times; ++k) {
    const double t = (k + 0.5) / n_times;
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
    const Points x = path.sample(t, n_samples, rng);
    const Points g = field.evaluate(make_query(t, x, JetOrder::first)).grad;
    for (Eigen::Index i = 0; i < n_samples; ++i) {
      const Vector v = truth(t, x.row(i).transpose());
      num += (g.row(i).transpose() - v).squaredNorm();
      den += v.squaredNorm();
    }
  }
  if (!std::isfinite(num) || !std::isfinite(den)) throw NumericError("non-finite field error");
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

double field_error(const ActionField& field, const MarginalPath& path, int n_times, Eigen::Index n_samples,
                   std::uint64_t seed) {
  if (path.true_action()) {
    return field_error(
        field, path, [&](double t, const Vector& x) { return path.true_action_grad(t, x); }, n_times, n_samples,
        seed);
  }
  if (path.has_velocity()) {
    return field_error(
        field, path, [&](double t, const Vector& x) { return path.velocity(t, x); }, n_times, n_samples, seed);
  }
  throw InvalidArgument(path.kind() + " path has no analytic velocity or true action");
}

VelocityFn entropic_drift(PathPtr path, TimeFn sigma) {
  if (!path->has_velocity() || !path->has_score())
    throw InvalidArgument(path->kind() + " path lacks the velocity and score needed for the entropic drift");
  return [path, sigma](double t, const Vector& x) -> Vector {
    const double s = sigma.value(t);
    return path->velocity(t, x) + 0.5 * s * s * path->score(t, x);
  };
}

}  // namespace actionmatch
