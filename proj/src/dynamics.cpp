#include "actionmatch/dynamics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace actionmatch {

namespace {

using Rhs = std::function<Points(double t, const Points& state)>;

void require_finite_state(const Points& state, int step) {
  if (!state.allFinite()) throw NumericError("non-finite state at integration step " + std::to_string(step));
}

// Fixed-step Euler or RK4 over an n x k state.
Points integrate_fixed(const Rhs& rhs, Points state, double t0, double t1, const IntegratorConfig& config) {
  config.validate();
  if (config.method == Method::euler_maruyama)
    throw InvalidArgument("euler_maruyama is for stochastic integration; use euler or rk4");
  const double h = (t1 - t0) / config.steps;
  for (int k = 0; k < config.steps; ++k) {
    const double t = t0 + k * h;
    if (config.method == Method::euler) {
      state += h * rhs(t, state);
    } else {
      const Points k1 = rhs(t, state);
      const Points k2 = rhs(t + 0.5 * h, state + 0.5 * h * k1);
      const Points k3 = rhs(t + 0.5 * h, state + 0.5 * h * k2);
      const Points k4 = rhs(t + h, state + h * k3);
      state += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    require_finite_state(state, k + 1);
  }
  return state;
}

void require_unit_interval(double t0, double t1) {
  if (!(t0 >= 0.0 && t0 <= 1.0 && t1 >= 0.0 && t1 <= 1.0))
    throw InvalidArgument("integration endpoints must lie in [0, 1]");
}

void require_dims(const ActionField& field, const Points& x) {
  if (x.cols() != field.dim())
    throw InvalidArgument("ensemble dimension " + std::to_string(x.cols()) + " does not match field dimension " +
                          std::to_string(field.dim()));
}

Points field_gradient(const ActionField& field, double t, const Points& x) {
  return field.evaluate(make_query(t, x, JetOrder::first)).grad;
}

}  // namespace

void ParticleEnsemble::validate() const {
  if (!positions.allFinite()) throw InvalidArgument("non-finite particle positions");
  if (log_weights) {
    if (log_weights->size() != positions.rows()) throw InvalidArgument("log-weight vector length must equal n");
    if (!log_weights->allFinite()) throw InvalidArgument("non-finite log-weights");
  }
}

Method parse_method(const std::string& name) {
  if (name == "euler") return Method::euler;
  if (name == "rk4") return Method::rk4;
  if (name == "euler_maruyama") return Method::euler_maruyama;
  throw InvalidArgument("unknown integrator '" + name + "' (expected euler, rk4 or euler_maruyama)");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::euler: return "euler";
    case Method::rk4: return "rk4";
    case Method::euler_maruyama: return "euler_maruyama";
  }
  return "rk4";
}

void IntegratorConfig::validate() const {
  if (steps < 1) throw InvalidArgument("integrator steps must be >= 1");
}

ParticleEnsemble integrate_ode(const ActionField& field, const ParticleEnsemble& start, double t0, double t1,
                               const IntegratorConfig& config) {
  start.validate();
  require_unit_interval(t0, t1);
  require_dims(field, start.positions);
  ParticleEnsemble out = start;
  out.positions = integrate_fixed([&](double t, const Points& x) { return field_gradient(field, t, x); },
                                  start.positions, t0, t1, config);
  out.time = t1;
  return out;
}

ParticleEnsemble integrate_sde(const ActionField& field, const ParticleEnsemble& start, double t0, double t1,
                               const TimeFn& sigma, const IntegratorConfig& config, std::uint64_t seed) {
  start.validate();
  config.validate();
  require_unit_interval(t0, t1);
  require_dims(field, start.positions);
  if (t1 < t0) throw InvalidArgument("backward SDE integration is not supported (time reversal undefined)");
  if (config.method == Method::rk4) throw InvalidArgument("stochastic integration uses euler_maruyama");

  const Eigen::Index n = start.size();
  const Eigen::Index d = start.positions.cols();
  std::vector<Rng> streams;
  streams.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) streams.emplace_back(mix_seed(seed, static_cast<std::uint64_t>(i)));

  ParticleEnsemble out = start;
  Points& x = out.positions;
  const double h = (t1 - t0) / config.steps;
  const double sqrt_h = std::sqrt(h);
  for (int k = 0; k < config.steps; ++k) {
    const double t = t0 + k * h;
    const Points drift = field_gradient(field, t, x);
    const double s = sigma.value(t);
    for (Eigen::Index i = 0; i < n; ++i) {
      Rng& r = streams[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < d; ++j) x(i, j) = x(i, j) + h * drift(i, j) + s * sqrt_h * standard_normal(r);
    }
    require_finite_state(x, k + 1);
  }
  out.time = t1;
  return out;
}

ParticleEnsemble integrate_weighted(const ActionField& field, const ParticleEnsemble& start, double t0, double t1,
                                    const IntegratorConfig& config) {
  start.validate();
  require_unit_interval(t0, t1);
  require_dims(field, start.positions);
  if (!start.log_weights) throw InvalidArgument("weighted integration requires log-weights");
  const Eigen::Index d = start.positions.cols();
  Points state(start.size(), d + 1);
  state.leftCols(d) = start.positions;
  state.col(d) = *start.log_weights;
  const Rhs rhs = [&](double t, const Points& y) {
    const JetBatch jets = field.evaluate(make_query(t, Points(y.leftCols(d)), JetOrder::first));
    Points dy(y.rows(), d + 1);
    dy.leftCols(d) = jets.grad;
    dy.col(d) = jets.value;
    return dy;
  };
  state = integrate_fixed(rhs, state, t0, t1, config);
  ParticleEnsemble out;
  out.time = t1;
  out.positions = state.leftCols(d);
  out.log_weights = state.col(d);
  return out;
}

Vector log_likelihood(const ActionField& field, const Points& x, const LogDensityFn& base_log_density,
                      const IntegratorConfig& config) {
  require_dims(field, x);
  if (!x.allFinite()) throw InvalidArgument("non-finite evaluation points");
  const Eigen::Index d = x.cols();
  Points state = Points::Zero(x.rows(), d + 1);
  state.leftCols(d) = x;
  const Rhs rhs = [&](double t, const Points& y) {
    const JetBatch jets = field.evaluate(make_query(t, Points(y.leftCols(d)), JetOrder::second));
    Points dy(y.rows(), d + 1);
    dy.leftCols(d) = jets.grad;
    dy.col(d) = jets.laplacian();
    return dy;
  };
  state = integrate_fixed(rhs, state, 1.0, 0.0, config);
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector x0 = state.row(i).head(d).transpose();
    out(i) = base_log_density(x0) + state(i, d);
    if (!std::isfinite(out(i))) throw NumericError("non-finite log-likelihood at row " + std::to_string(i));
  }
  return out;
}

ScoreFn score_from_field(FieldPtr field) {
  return [field](double t, const Points& x) { return field_gradient(*field, t, x); };
}

ScoreFn score_from_path(PathPtr path) {
  if (!path->has_score()) throw InvalidArgument(path->kind() + " path has no analytic score");
  return [path](double t, const Points& x) {
    Points out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = path->score(t, x.row(i).transpose()).transpose();
    return out;
  };
}

std::vector<ParticleEnsemble> ald_sample(const ScoreFn& score, const std::vector<double>& times, int M, double step,
                                         const Points& initial, std::uint64_t seed) {
  if (M < 0) throw InvalidArgument("number of Langevin steps M must be >= 0");
  if (!(step > 0.0)) throw InvalidArgument("Langevin step size must be positive");
  const Eigen::Index n = initial.rows(), d = initial.cols();
  std::vector<Rng> streams;
  for (Eigen::Index i = 0; i < n; ++i) streams.emplace_back(mix_seed(seed, static_cast<std::uint64_t>(i)));
  const double sqrt_step = std::sqrt(step);
  Points x = initial;
  std::vector<ParticleEnsemble> frames;
  int done = 0;
  for (double t : times) {
    for (int m = 0; m < M; ++m) {
      const Points g = score(t, x);
      for (Eigen::Index i = 0; i < n; ++i) {
        Rng& r = streams[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) += 0.5 * step * g(i, j) + sqrt_step * standard_normal(r);
      }
      require_finite_state(x, ++done);
    }
    frames.push_back({t, x, std::nullopt});
  }
  return frames;
}

std::vector<ParticleEnsemble> integrate_ode_saving(const ActionField& field, const ParticleEnsemble& start,
                                                   const std::vector<double>& times,
                                                   const IntegratorConfig& config) {
  std::vector<ParticleEnsemble> frames;
  ParticleEnsemble cur = start;
  for (double t : times) {
    if (t < cur.time) throw InvalidArgument("save times must be ascending and not before the start time");
    if (t > cur.time) {
      IntegratorConfig seg = config;
      seg.steps = std::max(1, static_cast<int>(std::lround(config.steps * (t - cur.time))));
      cur = cur.log_weights ? integrate_weighted(field, cur, cur.time, t, seg) : integrate_ode(field, cur, cur.time, t, seg);
    }
    frames.push_back(cur);
  }
  return frames;
}

void write_trajectory(const std::string& path, const std::vector<ParticleEnsemble>& frames) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path);
  const Eigen::Index d = frames.empty() ? 0 : frames.front().positions.cols();
  const bool weighted = !frames.empty() && frames.front().log_weights.has_value();
  out << "t,particle";
  for (Eigen::Index j = 0; j < d; ++j) out << ",x" << j;
  if (weighted) out << ",log_w";
  out << '\n';
  char buf[64];
  for (const auto& f : frames) {
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g,%lld", f.time, static_cast<long long>(i));
      out << buf;
      for (Eigen::Index j = 0; j < d; ++j) {
        std::snprintf(buf, sizeof buf, ",%.17g", f.positions(i, j));
        out << buf;
      }
      if (weighted) {
        std::snprintf(buf, sizeof buf, ",%.17g", (*f.log_weights)(i));
        out << buf;
      }
      out << '\n';
    }
  }
}

}  // namespace actionmatch
