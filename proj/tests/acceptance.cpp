// End-to-end acceptance checks. Usage: acceptance [A1 A2 ...]; no arguments runs all.
#include "actionmatch/dynamics.hpp"
#include "actionmatch/experiment.hpp"
#include "actionmatch/metrics.hpp"
#include "actionmatch/objectives.hpp"
#include "actionmatch/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace actionmatch;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1.0); }

double central(const std::function<double(double)>& f, double x, double h) { return (f(x + h) - f(x - h)) / (2 * h); }

Vector grad_at(const ActionField& f, double t, const Vector& x) {
  return f.evaluate(make_query(t, Points(x.transpose()), JetOrder::first)).grad.row(0).transpose();
}

double value_at(const ActionField& f, double t, const Vector& x) {
  return f.evaluate(make_query(t, Points(x.transpose()), JetOrder::value)).value(0);
}

ParticleEnsemble ensemble(const Points& x) { return {0.0, x, std::nullopt}; }

double log_normal(const Vector& x, const Vector& mean) {
  return -0.5 * (x - mean).squaredNorm() - 0.5 * static_cast<double>(x.size()) * std::log(2 * M_PI);
}

ObjectiveOptions value_only() {
  ObjectiveOptions o;
  o.with_grad = false;
  return o;
}

TrainConfig preset(long iterations, std::uint64_t seed) {
  TrainConfig c;
  c.iterations = iterations;
  c.batch.n_boundary = 256;
  c.batch.n_interior = 256;
  c.eval_every = iterations;
  c.seed = seed;
  return c;
}

// A1: exact jets and objective parameter gradients against central differences.
Outcome derivative_fidelity() {
  Rng rng(2024);
  double worst = 0.0;
  const Conjugate quartic = Conjugate::quartic();
  for (int k = 0; k < 100; ++k) {
    const int d = 1 + k % 3;
    const Activation act = k % 2 ? Activation::softplus : Activation::tanh;
    auto f = new_mlp_field(d, {16, 16}, act, 1000 + static_cast<std::uint64_t>(k));
    const double t = uniform01(rng);
    const Vector x = standard_normal_points(rng, d, 1);
    const FieldJet jet = eval_bundle(*f, t, x);
    double lap = 0.0;
    for (int j = 0; j < d; ++j) {
      auto along = [&](double h) {
        Vector y = x;
        y(j) += h;
        return value_at(*f, t, y);
      };
      auto grad_j = [&](double h) {
        Vector y = x;
        y(j) += h;
        return grad_at(*f, t, y)(j);
      };
      worst = std::max(worst, rel_err(jet.spatial_grad(j), central(along, 0.0, 1e-4)));
      lap += central(grad_j, 0.0, 1e-4);
    }
    worst = std::max(worst, rel_err(jet.time_deriv, central([&](double s) { return value_at(*f, s, x); }, t, 1e-4)));
    worst = std::max(worst, rel_err(jet.laplacian, lap));

    // Translating, widening path so every objective term is active.
    Vector u = Vector::Constant(d, 1.5);
    const auto path = gaussian_path(Vector::Zero(d), MeanFn::translation(u), TimeFn::linear(1.0, 0.5));
    const BatchSpec batch{6, 6, static_cast<std::uint64_t>(k)};
    std::vector<std::function<LossEstimate(bool)>> objectives = {
        [&](bool g) {
          ObjectiveOptions o;
          o.with_grad = g;
          return action_matching_objective(*f, *path, batch, o);
        },
        [&](bool g) {
          ObjectiveOptions o;
          o.diffusion = TimeFn::linear(0.5, 0.5);
          o.with_grad = g;
          return action_matching_objective(*f, *path, batch, o);
        },
        [&](bool g) {
          ObjectiveOptions o;
          o.growth = 1.0;
          o.with_grad = g;
          return action_matching_objective(*f, *path, batch, o);
        },
        [&](bool g) {
          ObjectiveOptions o;
          o.conjugate = quartic;
          o.with_grad = g;
          return action_matching_objective(*f, *path, batch, o);
        },
    };
    const Vector dir = standard_normal_points(rng, static_cast<Eigen::Index>(f->param_count()), 1);
    const std::vector<double> p0(f->params().begin(), f->params().end());
    for (const auto& obj : objectives) {
      const std::vector<double> g = obj(true).grad;
      double analytic = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) analytic += g[i] * dir(static_cast<Eigen::Index>(i));
      auto at = [&](double h) {
        std::vector<double> p = p0;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += h * dir(static_cast<Eigen::Index>(i));
        f->set_params(p);
        const double v = obj(false).value;
        f->set_params(p0);
        return v;
      };
      worst = std::max(worst, rel_err(analytic, central(at, 0.0, 1e-5)));
    }
  }
  return {worst < 1e-6, "max relative error " + fmt("%.3g", worst) + " over 100 fields"};
}

std::shared_ptr<GaussianPath> translation_path() {
  Vector u(2);
  u << 2.0, 2.0;
  return gaussian_path(Vector::Zero(2), MeanFn::translation(u), TimeFn::constant(1.0));
}

// A2: full training run on the translation path.
Outcome am_recovery() {
  const auto path = translation_path();
  auto f = new_mlp_field(2, {64, 64}, Activation::tanh, 0);
  TrainConfig c = preset(20000, 1);
  const TrainReport r = train(*f, *path, c);
  const double fe = r.records.back().field_error.value();
  // Reference cloud: the exact transport x + u t of the same q_0 draws.
  Rng rng(77);
  const Points x0 = path->sample(0.0, 2000, rng);
  ParticleEnsemble cur = ensemble(x0);
  std::ostringstream d;
  bool ok = fe <= 0.05;
  d << "field_error " << fmt("%.4f", fe) << "; W2";
  for (double t : {0.25, 0.5, 0.75, 1.0}) {
    cur = integrate_ode(*f, cur, cur.time, t, {Method::rk4, static_cast<int>(std::lround(100 * (t - cur.time)))});
    Points ref = x0;
    ref.array() += 2.0 * t;
    const double w2 = wasserstein2(cur.positions, ref);
    ok = ok && w2 <= 0.05;
    d << " t=" << t << ":" << fmt("%.5f", w2);
  }
  // Informational: W2 to an independent q_1 sample, and the same for two exact samples.
  Rng r1(78), r2(79);
  const Points indep = path->sample(1.0, 2000, r1);
  d << "; independent-sample W2 at t=1 " << fmt("%.4f", wasserstein2(cur.positions, indep)) << " (null "
    << fmt("%.4f", wasserstein2(path->sample(1.0, 2000, r2), indep)) << ")";
  return {ok, d.str()};
}

// A3: action gap versus objective plus kinetic energy on untrained fields.
Outcome decomposition() {
  const auto path = translation_path();
  const double kinetic = 0.5 * 8.0;  // 1/2 |u|^2 for u = (2, 2)
  bool ok = true;
  std::ostringstream d;
  for (int k = 0; k < 5; ++k) {
    auto f = new_mlp_field(2, {16, 16}, k % 2 ? Activation::softplus : Activation::tanh, 300 + k);
    const McEstimate gap = action_gap_estimate(*f, *path, 200, 1000000, 500 + k);
    // 10 chunks of 1e5 boundary and interior draws.
    std::vector<double> chunk;
    double var = 0.0;
    for (int c = 0; c < 10; ++c) {
      const LossEstimate e =
          action_matching_objective(*f, *path, {100000, 100000, mix_seed(600 + k, c)}, value_only());
      chunk.push_back(e.value);
      var += e.std_error * e.std_error;
    }
    const double loss = std::accumulate(chunk.begin(), chunk.end(), 0.0) / 10.0;
    const double loss_se = std::sqrt(var) / 10.0;
    const double se = std::sqrt(gap.std_error * gap.std_error + loss_se * loss_se);
    const double diff = std::abs(gap.value - (loss + kinetic));
    ok = ok && diff <= 3.0 * se;
    d << (k ? "; " : "") << fmt("|diff|/se=%.2f", diff / se);
  }
  return {ok, d.str()};
}

// A4: entropic AM on N(ut, (1 + t)) with unit diffusion; the marginal-preserving drift is u.
Outcome entropic() {
  const double u = 1.0;
  const auto path = gaussian_path(Vector::Zero(1), MeanFn::translation(Vector::Constant(1, u)),
                                  TimeFn::sqrt_poly(1.0, 1.0, 0.0));
  auto f = new_mlp_field(1, {64, 64}, Activation::tanh, 0);
  TrainConfig c = preset(10000, 4);
  c.objective = ObjectiveKind::eam;
  c.diffusion = TimeFn::constant(1.0);
  c.truth = [u](double, const Vector&) { return Vector::Constant(1, u); };
  const TrainReport r = train(*f, *path, c);
  const double fe = r.records.back().field_error.value();

  Rng rng(41);
  const Points x0 = path->sample(0.0, 2000, rng);
  std::vector<ParticleEnsemble> frames;
  ParticleEnsemble cur = ensemble(x0);
  for (double t : {0.5, 1.0}) {
    cur = integrate_sde(*f, cur, cur.time, t, TimeFn::constant(1.0),
                        {Method::euler_maruyama, static_cast<int>(std::lround(500 * (t - cur.time)))},
                        mix_seed(42, frames.size()));
    frames.push_back(cur);
  }
  const EvaluationSummary s = compare_to_path("eam", *path, frames, false, {}, 43);
  bool ok = fe <= 0.05;
  std::ostringstream d;
  d << "drift error " << fmt("%.4f", fe);
  for (const auto& m : s.per_time) {
    ok = ok && m.mmd <= 3.0 * m.mmd_null;
    d << "; t=" << m.time << " mmd " << fmt("%.4f", m.mmd) << " null " << fmt("%.4f", m.mmd_null);
  }
  return {ok, d.str()};
}

// A5: unbalanced AM moves mass between fixed modes by reweighting.
Outcome unbalanced() {
  const auto path = weight_shift_path(-5.0, 5.0, 0.2, 0.8);
  auto f = new_mlp_field(1, {64, 64}, Activation::tanh, 0);
  TrainConfig c = preset(10000, 5);
  c.objective = ObjectiveKind::uam;
  c.growth = 1.0;
  train(*f, *path, c);

  const Eigen::Index n = 5000;
  Rng rng(51);
  ParticleEnsemble start = ensemble(path->sample(0.0, n, rng));
  start.log_weights = Vector::Zero(n);
  std::vector<double> times(101);
  for (int k = 0; k <= 100; ++k) times[static_cast<std::size_t>(k)] = k / 100.0;
  const auto frames = integrate_ode_saving(*f, start, times, {Method::rk4, 200});
  std::vector<char> crossed(static_cast<std::size_t>(n), 0);
  for (const auto& fr : frames)
    for (Eigen::Index i = 0; i < n; ++i)
      if ((fr.positions(i, 0) < 0) != (start.positions(i, 0) < 0)) crossed[static_cast<std::size_t>(i)] = 1;
  const double crossing = std::accumulate(crossed.begin(), crossed.end(), 0.0) / static_cast<double>(n);
  const ParticleEnsemble& end = frames.back();
  const Vector w = end.log_weights->array().exp();
  double left = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (end.positions(i, 0) < 0) left += w(i);
  left /= w.sum();
  const double drift = std::abs(w.mean() - 1.0);
  const bool ok = std::abs(left - 0.8) <= 0.05 && std::abs((1 - left) - 0.2) <= 0.05 && crossing < 0.02 && drift < 0.05;
  return {ok, "left mass " + fmt("%.4f", left) + " (target 0.8); crossing " + fmt("%.4f", crossing) +
                  "; total-weight drift " + fmt("%.4f", drift)};
}

// A6: oscillator superposition, AM versus annealed Langevin with exact scores.
Outcome oscillator() {
  const auto path = qho_superposition_path();
  auto f = new_mlp_field(1, {64, 64}, Activation::tanh, 0);
  TrainConfig c = preset(20000, 6);
  train(*f, *path, c);

  std::vector<double> times;
  for (int k = 1; k <= 10; ++k) times.push_back(k / 10.0);
  const Eigen::Index n = 2000;
  Rng rng(61);
  const Points x0 = path->sample(0.0, n, rng);
  const auto am_frames = integrate_ode_saving(*f, ensemble(x0), times, {Method::rk4, 200});
  const EvaluationSummary am = compare_to_path("am", *path, am_frames, false, {}, 62);
  const auto ald_frames = ald_sample(score_from_path(path), times, kDefaultLangevinSteps, 0.01, x0, 63);
  const EvaluationSummary ald = compare_to_path("ald_true", *path, ald_frames, false, {}, 62);

  std::printf("    time      am_mmd     ald_mmd    null_mmd\n");
  for (std::size_t k = 0; k < times.size(); ++k)
    std::printf("    %.1f  %10.5f  %10.5f  %10.5f\n", times[k], am.per_time[k].mmd, ald.per_time[k].mmd,
                am.per_time[k].mmd_null);
  std::printf("    avg   %10.5f  %10.5f  %10.5f\n", am.average_mmd, ald.average_mmd, am.average_mmd_null);
  const bool ok = am.average_mmd <= 3.0 * am.average_mmd_null;
  return {ok, "AM average MMD " + fmt("%.5f", am.average_mmd) + " vs null " + fmt("%.5f", am.average_mmd_null) +
                  "; ALD(M=5) " + fmt("%.5f", ald.average_mmd) +
                  (am.average_mmd < ald.average_mmd ? " (AM lower)" : " (ALD lower)")};
}

// A7: likelihood through the instantaneous change of variables.
Outcome likelihood() {
  const Vector target = Vector::Constant(2, 3.0);
  const auto path =
      interpolant_path(2, gaussian_sampler(Vector::Zero(2), 1.0), gaussian_sampler(target, 1.0));
  auto f = new_mlp_field(2, {64, 64}, Activation::tanh, 0);
  TrainConfig c = preset(20000, 7);
  train(*f, *path, c);
  Rng rng(71);
  Points x = standard_normal_points(rng, 500, 2);
  x.array() += 3.0;
  const Vector ll = log_likelihood(*f, x, [](const Vector& v) { return log_normal(v, Vector::Zero(2)); });
  double err = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) err += std::abs(ll(i) - log_normal(x.row(i).transpose(), target));
  err /= static_cast<double>(x.rows());
  return {err <= 0.1, "mean |ll - log N((3,3), I)| = " + fmt("%.4f", err) + " nats over 500 points"};
}

// A8: the quadratic conjugate reduces cAM to AM.
Outcome cam_degeneracy() {
  const auto path = translation_path();
  auto f = new_mlp_field(2, {16, 16}, Activation::tanh, 8);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const BatchSpec b{64, 64, static_cast<std::uint64_t>(k)};
    const LossEstimate a = am_loss(*f, *path, b);
    const LossEstimate c = cam_loss(*f, *path, b, Conjugate::quadratic());
    worst = std::max(worst, std::abs(a.value - c.value));
    for (std::size_t i = 0; i < a.grad.size(); ++i) worst = std::max(worst, std::abs(a.grad[i] - c.grad[i]));
  }
  return {worst <= 1e-12, "max |cam - am| over values and gradients " + fmt("%.3g", worst)};
}

double brute_w2(const Points& X, const Points& Y) {
  std::vector<int> perm(static_cast<std::size_t>(X.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double cst = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      cst += (X.row(i) - Y.row(perm[static_cast<std::size_t>(i)])).squaredNorm();
    best = std::min(best, cst);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(X.rows()));
}

// A9: exact metric oracles.
Outcome metric_oracles() {
  Rng rng(9);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const Eigen::Index n = 1 + k % 7;
    const Eigen::Index d = 1 + k % 3;
    const Points X = standard_normal_points(rng, n, d), Y = standard_normal_points(rng, n, d);
    worst = std::max(worst, std::abs(wasserstein2(X, Y) - brute_w2(X, Y)));
  }
  Points a(1, 1), b(1, 1);
  a << 0.0;
  b << 1.0;
  const double hand = std::abs(mmd(a, b, KernelSpec::rbf(1.0)) - std::sqrt(2.0 - 2.0 * std::exp(-0.5)));
  int violations = 0;
  for (int k = 0; k < 100; ++k) {
    const Points A = standard_normal_points(rng, 20, 2), B = standard_normal_points(rng, 20, 2),
                 C = (standard_normal_points(rng, 20, 2).array() + 1.0).matrix();
    if (wasserstein2(A, C) > wasserstein2(A, B) + wasserstein2(B, C) + 1e-12) ++violations;
  }
  const bool ok = worst <= 1e-12 && hand <= 1e-12 && violations == 0;
  return {ok, "w2 vs brute force " + fmt("%.3g", worst) + "; mmd hand value " + fmt("%.3g", hand) +
                  "; triangle violations " + std::to_string(violations)};
}

// A10: integrator convergence orders and reversibility.
Outcome integrator_orders() {
  QuadraticField q(1, 1.0, 0.0);  // dx/dt = x
  auto err = [&](Method m, int steps) {
    return std::abs(integrate_ode(q, ensemble(Points::Ones(1, 1)), 0, 1, {m, steps}).positions(0, 0) - std::exp(1.0));
  };
  const double euler = err(Method::euler, 200) / err(Method::euler, 400);
  const double rk4 = err(Method::rk4, 10) / err(Method::rk4, 20);
  auto f = new_mlp_field(2, {16, 16}, Activation::tanh, 10);
  Rng rng(10);
  const Points x0 = standard_normal_points(rng, 100, 2);
  const ParticleEnsemble fwd = integrate_ode(*f, ensemble(x0), 0, 1, {Method::rk4, 100});
  const double trip = (integrate_ode(*f, fwd, 1, 0, {Method::rk4, 100}).positions - x0).cwiseAbs().maxCoeff();
  const bool ok = std::abs(euler - 2.0) <= 0.2 && std::abs(rk4 - 16.0) <= 1.6 && trip < 1e-6;
  return {ok, "euler ratio " + fmt("%.3f", euler) + "; rk4 ratio " + fmt("%.2f", rk4) + "; round trip " +
                  fmt("%.3g", trip)};
}

struct Criterion {
  const char* id;
  double budget_seconds;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {"A1", 60, derivative_fidelity}, {"A2", 600, am_recovery},    {"A3", 300, decomposition},
      {"A4", 600, entropic},           {"A5", 600, unbalanced},     {"A6", 900, oscillator},
      {"A7", 600, likelihood},         {"A8", 60, cam_degeneracy},  {"A9", 60, metric_oracles},
      {"A10", 60, integrator_orders},
  };
  std::set<std::string> wanted(argv + 1, argv + argc);
  for (const std::string& w : wanted) {
    if (std::none_of(all.begin(), all.end(), [&](const Criterion& c) { return w == c.id; })) {
      std::fprintf(stderr, "unknown criterion %s\n", w.c_str());
      return 2;
    }
  }
  int failures = 0;
  for (const Criterion& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = secs <= c.budget_seconds;
    const bool pass = o.pass && in_budget;
    failures += !pass;
    std::printf("%s %s  %s; %.1fs (budget %.0fs)\n", c.id, pass ? "PASS" : "FAIL", o.detail.c_str(), secs,
                c.budget_seconds);
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}
