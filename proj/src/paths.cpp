#include "actionmatch/paths.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace actionmatch {

namespace {

constexpr double kPi = std::numbers::pi;

void require_unit_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("time " + std::to_string(t) + " outside [0, 1]");
}

void require_positive_scale(const TimeFn& scale) {
  for (int i = 0; i <= 1000; ++i) {
    const double t = i / 1000.0;
    const double s = scale.value(t);
    if (!(s > 0.0) || !std::isfinite(s))
      throw InvalidArgument("scale sigma_t must be positive on [0, 1]; sigma(" + std::to_string(t) +
                            ") = " + std::to_string(s) + " is a singularity");
  }
}

double log_gaussian_iso(const Vector& x, const Vector& mean, double sigma) {
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * kPi * sigma * sigma) - 0.5 * (x - mean).squaredNorm() / (sigma * sigma);
}

double normal_pdf(double x, double mean) {
  const double z = x - mean;
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi);
}

}  // namespace

// ---------------------------------------------------------------------------

TimeFn TimeFn::constant(double c) {
  return {[c](double) { return c; }, [](double) { return 0.0; }, [](double) { return 0.0; }};
}

TimeFn TimeFn::linear(double a, double b) {
  return {[a, b](double t) { return a + b * t; }, [b](double) { return b; }, [](double) { return 0.0; }};
}

TimeFn TimeFn::exponential(double c, double rate) {
  return {[c, rate](double t) { return c * std::exp(rate * t); },
          [c, rate](double t) { return c * rate * std::exp(rate * t); },
          [c, rate](double t) { return c * rate * rate * std::exp(rate * t); }};
}

TimeFn TimeFn::sqrt_poly(double a, double b, double c) {
  auto p = [a, b, c](double t) { return a + b * t + c * t * t; };
  auto dp = [b, c](double t) { return b + 2.0 * c * t; };
  return {[p](double t) { return std::sqrt(p(t)); },
          [p, dp](double t) { return dp(t) / (2.0 * std::sqrt(p(t))); },
          [p, dp, c](double t) {
            const double v = p(t);
            return (2.0 * c) / (2.0 * std::sqrt(v)) - dp(t) * dp(t) / (4.0 * v * std::sqrt(v));
          }};
}

MeanFn MeanFn::fixed() {
  return {[](double, const Vector& x0) { return x0; },
          [](double, const Vector& x0) -> Vector { return Vector::Zero(x0.size()); },
          [](double, const Vector& x0) -> Vector { return Vector::Zero(x0.size()); }};
}

MeanFn MeanFn::translation(const Vector& u) {
  return {[u](double t, const Vector& x0) -> Vector { return x0 + t * u; },
          [u](double, const Vector&) -> Vector { return u; },
          [u](double, const Vector&) -> Vector { return Vector::Zero(u.size()); }};
}

MeanFn MeanFn::scaled(TimeFn alpha) {
  return {[alpha](double t, const Vector& x0) -> Vector { return alpha.value(t) * x0; },
          [alpha](double t, const Vector& x0) -> Vector { return alpha.deriv(t) * x0; },
          [alpha](double t, const Vector& x0) -> Vector { return alpha.second(t) * x0; }};
}

// ---------------------------------------------------------------------------

Points MarginalPath::sample_at(const Vector& times, Rng& rng) const {
  Points out(times.size(), dim());
  for (Eigen::Index i = 0; i < times.size(); ++i) out.row(i) = sample(times(i), 1, rng).row(0);
  return out;
}

double MarginalPath::density(double, const Vector&) const {
  throw InvalidArgument(kind() + " path has no analytic density");
}

Vector MarginalPath::score(double, const Vector&) const {
  throw InvalidArgument(kind() + " path has no analytic score");
}

Vector MarginalPath::velocity(double, const Vector&) const {
  throw InvalidArgument(kind() + " path has no analytic velocity");
}

Vector MarginalPath::true_action_grad(double t, const Vector& x) const {
  const FieldPtr action = true_action();
  if (!action) throw InvalidArgument(kind() + " path has no analytic action");
  return eval_bundle(*action, t, x).spatial_grad;
}

// ---------------------------------------------------------------------------
// Gaussian

GaussianPath::GaussianPath(Vector x0, MeanFn mean, TimeFn scale)
    : x0_(std::move(x0)), mean_(std::move(mean)), scale_(std::move(scale)) {
  if (x0_.size() < 1) throw InvalidArgument("gaussian path needs dimension >= 1");
  require_positive_scale(scale_);
  // s*_t(x) = 1/2 |x - f_t|^2 rho_t + <f'_t, x>,  rho_t = d/dt log sigma_t.
  const Vector x0c = x0_;
  const MeanFn m = mean_;
  const TimeFn s = scale_;
  action_ = std::make_shared<CallbackField>(
      static_cast<int>(x0_.size()),
      [x0c, m, s](double t, const Vector& x, double& value, Vector& grad, double& time_deriv,
                  Eigen::MatrixXd& hessian) {
        const double sigma = s.value(t);
        const double rho = s.deriv(t) / sigma;
        const double rho_dot = s.second(t) / sigma - rho * rho;
        const Vector f = m.value(t, x0c);
        const Vector df = m.deriv(t, x0c);
        const Vector ddf = m.second(t, x0c);
        const Vector r = x - f;
        value = 0.5 * r.squaredNorm() * rho + df.dot(x);
        grad = r * rho + df;
        time_deriv = -r.dot(df) * rho + 0.5 * r.squaredNorm() * rho_dot + ddf.dot(x);
        hessian = rho * Eigen::MatrixXd::Identity(x.size(), x.size());
      });
}

Points GaussianPath::sample(double t, Eigen::Index n, Rng& rng) const {
  require_unit_time(t);
  Points out = standard_normal_points(rng, n, dim()) * scale_.value(t);
  out.rowwise() += mean(t).transpose();
  return out;
}

Points GaussianPath::sample_at(const Vector& times, Rng& rng) const {
  Points out(times.size(), dim());
  for (Eigen::Index i = 0; i < times.size(); ++i) {
    require_unit_time(times(i));
    const Vector f = mean(times(i));
    const double s = scale_.value(times(i));
    for (int j = 0; j < dim(); ++j) out(i, j) = f(j) + s * standard_normal(rng);
  }
  return out;
}

double GaussianPath::log_density(double t, const Vector& x) const { return log_gaussian_iso(x, mean(t), scale(t)); }

double GaussianPath::density(double t, const Vector& x) const { return std::exp(log_density(t, x)); }

Vector GaussianPath::score(double t, const Vector& x) const {
  const double s = scale(t);
  return -(x - mean(t)) / (s * s);
}

Vector GaussianPath::velocity(double t, const Vector& x) const {
  const double rho = scale_.deriv(t) / scale_.value(t);
  return (x - mean(t)) * rho + mean_.deriv(t, x0_);
}

Points GaussianPath::transport(double t0, double t1, const Points& x) const {
  const double ratio = scale(t1) / scale(t0);
  Points out = (x.rowwise() - mean(t0).transpose()) * ratio;
  out.rowwise() += mean(t1).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Delta mixture

DeltaMixturePath::DeltaMixturePath(Points centers, MeanFn mean, TimeFn scale)
    : centers_(std::move(centers)), mean_(std::move(mean)), scale_(std::move(scale)) {
  if (centers_.rows() < 1) throw InvalidArgument("delta mixture needs at least one point");
  require_positive_scale(scale_);
}

Points DeltaMixturePath::sample(double t, Eigen::Index n, Rng& rng) const {
  require_unit_time(t);
  std::uniform_int_distribution<Eigen::Index> pick(0, centers_.rows() - 1);
  const double s = scale_.value(t);
  Points out(n, dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector f = mean_.value(t, centers_.row(pick(rng)).transpose());
    for (int j = 0; j < dim(); ++j) out(i, j) = f(j) + s * standard_normal(rng);
  }
  return out;
}

Vector DeltaMixturePath::responsibilities(double t, const Vector& x) const {
  const double s = scale_.value(t);
  Vector logits(centers_.rows());
  for (Eigen::Index i = 0; i < centers_.rows(); ++i)
    logits(i) = -0.5 * (x - mean_.value(t, centers_.row(i).transpose())).squaredNorm() / (s * s);
  const double mx = logits.maxCoeff();
  Vector r = (logits.array() - mx).exp();
  return r / r.sum();
}

double DeltaMixturePath::density(double t, const Vector& x) const {
  const double s = scale_.value(t);
  double total = 0.0;
  for (Eigen::Index i = 0; i < centers_.rows(); ++i)
    total += std::exp(log_gaussian_iso(x, mean_.value(t, centers_.row(i).transpose()), s));
  return total / static_cast<double>(centers_.rows());
}

Vector DeltaMixturePath::score(double t, const Vector& x) const {
  const double s = scale_.value(t);
  const Vector r = responsibilities(t, x);
  Vector out = Vector::Zero(dim());
  for (Eigen::Index i = 0; i < centers_.rows(); ++i)
    out -= r(i) * (x - mean_.value(t, centers_.row(i).transpose())) / (s * s);
  return out;
}

Vector DeltaMixturePath::velocity(double t, const Vector& x) const {
  const double rho = scale_.deriv(t) / scale_.value(t);
  const Vector r = responsibilities(t, x);
  Vector out = Vector::Zero(dim());
  for (Eigen::Index i = 0; i < centers_.rows(); ++i) {
    const Vector c = centers_.row(i).transpose();
    out += r(i) * ((x - mean_.value(t, c)) * rho + mean_.deriv(t, c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weight shift

WeightShiftPath::WeightShiftPath(double left_mean, double right_mean, double alpha0, double alpha1)
    : left_(left_mean), right_(right_mean), alpha0_(alpha0), alpha1_(alpha1) {
  if (!(alpha0 > 0.0 && alpha0 < 1.0) || !(alpha1 > 0.0 && alpha1 < 1.0))
    throw InvalidArgument("mixture weights alpha0, alpha1 must lie in (0, 1)");
}

Points WeightShiftPath::sample(double t, Eigen::Index n, Rng& rng) const {
  require_unit_time(t);
  const double a = left_weight(t);
  Points out(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = uniform01(rng) < a ? left_ : right_;
    out(i, 0) = m + standard_normal(rng);
  }
  return out;
}

double WeightShiftPath::density(double t, const Vector& x) const {
  const double a = left_weight(t);
  return a * normal_pdf(x(0), left_) + (1.0 - a) * normal_pdf(x(0), right_);
}

Vector WeightShiftPath::score(double t, const Vector& x) const {
  const double a = left_weight(t);
  // responsibilities in log space to survive far tails
  const double la = std::log(a) - 0.5 * (x(0) - left_) * (x(0) - left_);
  const double lb = std::log(1.0 - a) - 0.5 * (x(0) - right_) * (x(0) - right_);
  const double mx = std::max(la, lb);
  const double ra = std::exp(la - mx), rb = std::exp(lb - mx);
  Vector out(1);
  out(0) = (ra * (left_ - x(0)) + rb * (right_ - x(0))) / (ra + rb);
  return out;
}

// ---------------------------------------------------------------------------
// Oscillator superposition
//
// psi0 = pi^{-1/4} e^{-x^2/2}, psi1 = sqrt(2) x psi0, E1 - E0 = 1, tau = 2 pi t.
// q = 1/2 psi0^2 (1 + 2x^2 + 2 sqrt(2) x cos tau)
// J = -sin(tau) psi0^2 / sqrt(2),  v = (d tau / dt) J / q.

namespace {

double qho_shape(double tau, double x) {
  return 1.0 + 2.0 * x * x + 2.0 * std::numbers::sqrt2 * x * std::cos(tau);
}

}  // namespace

QhoSuperpositionPath::QhoSuperpositionPath() {
  // sup_x sqrt(2) (1 + sqrt(2)|x|)^2 exp(-7x^2/8), attained at the positive root
  // of 7 sqrt(2) x^2 + 7 x - 8 sqrt(2) = 0.
  const double r2 = std::numbers::sqrt2;
  const double xs = (-7.0 + std::sqrt(49.0 + 4.0 * 7.0 * r2 * 8.0 * r2)) / (2.0 * 7.0 * r2);
  bound_ = r2 * (1.0 + r2 * xs) * (1.0 + r2 * xs) * std::exp(-7.0 * xs * xs / 8.0);
}

double QhoSuperpositionPath::density(double t, const Vector& x) const {
  const double z = x(0);
  return 0.5 / std::sqrt(kPi) * std::exp(-z * z) * qho_shape(2.0 * kPi * t, z);
}

Vector QhoSuperpositionPath::score(double t, const Vector& x) const {
  const double z = x(0);
  const double tau = 2.0 * kPi * t;
  Vector out(1);
  out(0) = -2.0 * z + (4.0 * z + 2.0 * std::numbers::sqrt2 * std::cos(tau)) / qho_shape(tau, z);
  return out;
}

Vector QhoSuperpositionPath::velocity(double t, const Vector& x) const {
  const double tau = 2.0 * kPi * t;
  Vector out(1);
  out(0) = 2.0 * kPi * (-std::numbers::sqrt2 * std::sin(tau)) / qho_shape(tau, x(0));
  return out;
}

Points QhoSuperpositionPath::sample(double t, Eigen::Index n, Rng& rng) const {
  require_unit_time(t);
  const double env_sd = std::sqrt(envelope_variance);
  Points out(n, 1);
  Vector x(1);
  for (Eigen::Index i = 0; i < n;) {
    const double z = env_sd * standard_normal(rng);
    const double g = std::exp(-0.5 * z * z / envelope_variance) / std::sqrt(2.0 * kPi * envelope_variance);
    x(0) = z;
    if (uniform01(rng) * bound_ * g < density(t, x)) out(i++, 0) = z;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Interpolant

Sampler gaussian_sampler(const Vector& mean, double stddev) {
  return [mean, stddev](Eigen::Index n, Rng& rng) -> Points {
    Points out = standard_normal_points(rng, n, mean.size()) * stddev;
    out.rowwise() += mean.transpose();
    return out;
  };
}

InterpolantPath::InterpolantPath(int dim, Sampler prior, Sampler data, std::optional<Vector> mask)
    : dim_(dim), prior_(std::move(prior)), data_(std::move(data)), mask_(std::move(mask)) {
  if (dim_ < 1) throw InvalidArgument("interpolant dimension must be >= 1");
  if (mask_) {
    if (mask_->size() != dim_) throw InvalidArgument("mask length does not match dimension");
    for (Eigen::Index i = 0; i < mask_->size(); ++i)
      if ((*mask_)(i) != 0.0 && (*mask_)(i) != 1.0) throw InvalidArgument("mask entries must be 0 or 1");
  }
}

Points InterpolantPath::sample(double t, Eigen::Index n, Rng& rng) const {
  require_unit_time(t);
  const Points x0 = prior_(n, rng);
  const Points x1 = data_(n, rng);
  if (x0.cols() != dim_ || x1.cols() != dim_ || x0.rows() != n || x1.rows() != n)
    throw InvalidArgument("sampler dimension mismatch in interpolant path");
  Points out = (1.0 - t) * x0 + t * x1;
  if (mask_)
    for (int j = 0; j < dim_; ++j)
      if ((*mask_)(j) == 1.0) out.col(j) = x1.col(j);
  return out;
}

// ---------------------------------------------------------------------------
// Snapshots

void SnapshotDataset::validate() const {
  if (times.size() < 2) throw InvalidArgument("snapshot dataset needs at least 2 timestamps");
  if (snapshots.size() != times.size()) throw InvalidArgument("one point set per timestamp required");
  const int d = dim();
  if (d < 1) throw InvalidArgument("snapshot points must have dimension >= 1");
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!(times[k] >= 0.0 && times[k] <= 1.0)) throw InvalidArgument("snapshot timestamps must lie in [0, 1]");
    if (k > 0 && !(times[k] > times[k - 1])) throw InvalidArgument("snapshot timestamps must increase");
    if (snapshots[k].rows() < 1) throw InvalidArgument("empty snapshot");
    if (snapshots[k].cols() != d) throw InvalidArgument("snapshots differ in dimension");
    if (!snapshots[k].allFinite()) throw InvalidArgument("non-finite snapshot point");
  }
}

Smoothing parse_smoothing(const std::string& name) {
  if (name == "blend") return Smoothing::blend;
  if (name == "bernoulli") return Smoothing::bernoulli;
  if (name == "hold") return Smoothing::hold;
  throw InvalidArgument("unknown smoothing '" + name + "' (expected blend, bernoulli or hold)");
}

SnapshotPath::SnapshotPath(SnapshotDataset data, Smoothing smoothing)
    : data_(std::move(data)), smoothing_(smoothing) {
  data_.validate();
}

Vector SnapshotPath::draw(double t, Rng& rng) const {
  const auto& ts = data_.times;
  if (!(t >= ts.front() && t <= ts.back()))
    throw InvalidArgument("time " + std::to_string(t) + " outside the snapshot range [" +
                          std::to_string(ts.front()) + ", " + std::to_string(ts.back()) + "]");
  auto resample = [&](std::size_t k) -> Vector {
    const Points& s = data_.snapshots[k];
    std::uniform_int_distribution<Eigen::Index> pick(0, s.rows() - 1);
    return s.row(pick(rng)).transpose();
  };
  // segment k with ts[k] <= t <= ts[k+1]
  std::size_t k = static_cast<std::size_t>(std::upper_bound(ts.begin(), ts.end(), t) - ts.begin());
  k = k == 0 ? 0 : k - 1;
  if (k >= ts.size() - 1) k = ts.size() - 2;
  if (t == ts[k]) return resample(k);
  if (t == ts[k + 1]) return resample(k + 1);
  const double lambda = (t - ts[k]) / (ts[k + 1] - ts[k]);
  switch (smoothing_) {
    case Smoothing::blend: {
      const Vector a = resample(k);
      const Vector b = resample(k + 1);
      return (1.0 - lambda) * a + lambda * b;
    }
    case Smoothing::bernoulli:
      return uniform01(rng) < 1.0 - lambda ? resample(k) : resample(k + 1);
    case Smoothing::hold:
      return resample(k);
  }
  return resample(k);
}

Points SnapshotPath::sample(double t, Eigen::Index n, Rng& rng) const {
  Points out(n, dim());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = draw(t, rng).transpose();
  return out;
}

Points SnapshotPath::sample_at(const Vector& times, Rng& rng) const {
  Points out(times.size(), dim());
  for (Eigen::Index i = 0; i < times.size(); ++i) out.row(i) = draw(times(i), rng).transpose();
  return out;
}

// ---------------------------------------------------------------------------

std::shared_ptr<GaussianPath> gaussian_path(const Vector& x0, MeanFn mean, TimeFn scale) {
  return std::make_shared<GaussianPath>(x0, std::move(mean), std::move(scale));
}

std::shared_ptr<DeltaMixturePath> delta_mixture_path(const Points& centers, MeanFn mean, TimeFn scale) {
  return std::make_shared<DeltaMixturePath>(centers, std::move(mean), std::move(scale));
}

std::shared_ptr<WeightShiftPath> weight_shift_path(double left_mean, double right_mean, double alpha0,
                                                   double alpha1) {
  return std::make_shared<WeightShiftPath>(left_mean, right_mean, alpha0, alpha1);
}

std::shared_ptr<QhoSuperpositionPath> qho_superposition_path() { return std::make_shared<QhoSuperpositionPath>(); }

std::shared_ptr<InterpolantPath> interpolant_path(int dim, Sampler prior, Sampler data, std::optional<Vector> mask) {
  return std::make_shared<InterpolantPath>(dim, std::move(prior), std::move(data), std::move(mask));
}

std::shared_ptr<SnapshotPath> snapshot_path(SnapshotDataset data, Smoothing smoothing) {
  return std::make_shared<SnapshotPath>(std::move(data), smoothing);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  const auto res = std::from_chars(begin, s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

SnapshotDataset parse_snapshots(const std::string& text) {
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("snapshot CSV is empty");
  const auto header = split_csv_line(line);
  double probe;
  if (header.empty() || header[0] != "t" || parse_double(header[0], probe))
    throw InvalidArgument("snapshot CSV missing header 't,x0,...,x{d-1}'");
  const std::size_t d = header.size() - 1;
  if (d < 1) throw InvalidArgument("snapshot CSV header has no coordinate columns");
  for (std::size_t j = 0; j < d; ++j)
    if (header[j + 1] != "x" + std::to_string(j))
      throw InvalidArgument("snapshot CSV header column " + std::to_string(j + 1) + " should be 'x" +
                            std::to_string(j) + "'");

  std::map<double, std::vector<std::vector<double>>> groups;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != d + 1)
      throw InvalidArgument("ragged row " + std::to_string(row) + ": expected " + std::to_string(d + 1) +
                            " cells, got " + std::to_string(cells.size()));
    std::vector<double> values(d + 1);
    for (std::size_t j = 0; j <= d; ++j)
      if (!parse_double(cells[j], values[j]) || !std::isfinite(values[j]))
        throw InvalidArgument("non-numeric cell '" + cells[j] + "' at row " + std::to_string(row));
    groups[values[0]].emplace_back(values.begin() + 1, values.end());
  }
  if (groups.size() < 2) throw InvalidArgument("snapshot dataset needs at least 2 timestamps");

  SnapshotDataset data;
  const double lo = groups.begin()->first;
  const double hi = groups.rbegin()->first;
  for (const auto& [t, pts] : groups) {
    data.raw_times.push_back(t);
    data.times.push_back((t - lo) / (hi - lo));
    Points p(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pts[i][j];
    data.snapshots.push_back(std::move(p));
  }
  data.times.back() = 1.0;
  data.validate();
  return data;
}

SnapshotDataset load_snapshots(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open snapshot file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_snapshots(ss.str());
}

void write_snapshots(const std::string& path, const std::vector<double>& times, const std::vector<Points>& points) {
  if (times.size() != points.size()) throw InvalidArgument("one point set per time required");
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path);
  const Eigen::Index d = points.empty() ? 0 : points.front().cols();
  out << "t";
  for (Eigen::Index j = 0; j < d; ++j) out << ",x" << j;
  out << '\n';
  char buf[64];
  for (std::size_t k = 0; k < times.size(); ++k) {
    for (Eigen::Index i = 0; i < points[k].rows(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", times[k]);
      out << buf;
      for (Eigen::Index j = 0; j < d; ++j) {
        std::snprintf(buf, sizeof buf, ",%.17g", points[k](i, j));
        out << buf;
      }
      out << '\n';
    }
  }
  if (!out) throw InvalidArgument("failed writing " + path);
}

}  // namespace actionmatch
