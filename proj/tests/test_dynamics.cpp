#include "actionmatch/dynamics.hpp"

#include "support.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace actionmatch;
using namespace amtest;

namespace {

ParticleEnsemble ensemble(const Points& x, double t = 0.0) { return {t, x, std::nullopt}; }

Points row(double a, double b) {
  Points p(1, 2);
  p << a, b;
  return p;
}

double sample_variance(const Points& x) {
  const double m = x.mean();
  return (x.array() - m).square().sum() / static_cast<double>(x.size() - 1);
}

}  // namespace

TEST_CASE("ode integration oracles") {
  Rng rng(1);
  const Points x0 = standard_normal_points(rng, 5, 2);
  ConstantField c(2, 1.0);
  CHECK(integrate_ode(c, ensemble(x0), 0, 1, {Method::rk4, 7}).positions == x0);

  Vector a(2);
  a << 1, 0;
  LinearField lin(a);
  const Points x1 = integrate_ode(lin, ensemble(x0), 0, 1, {Method::euler, 13}).positions;
  CHECK((x1.col(0) - (x0.col(0).array() + 1.0).matrix()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(x1.col(1) == x0.col(1));

  QuadraticField q(2, 1.0, 0.0);
  const Points e = integrate_ode(q, ensemble(row(1, 0)), 0, 1, {Method::rk4, 100}).positions;
  CHECK(std::abs(e(0, 0) - std::exp(1.0)) < 1e-6);
  CHECK(e(0, 1) == 0.0);

  CHECK_THROWS_AS(integrate_ode(q, ensemble(row(1, 0)), 0, 1.5), InvalidArgument);
  CHECK_THROWS_AS(integrate_ode(q, ensemble(row(1, 0)), 0, 1, {Method::rk4, 0}), InvalidArgument);
  CHECK_THROWS_AS(integrate_ode(q, ensemble(row(1, 0)), 0, 1, {Method::euler_maruyama, 10}), InvalidArgument);
}

TEST_CASE("non-finite state reports the step index") {
  QuadraticField blow(1, 1e6, 0.0);
  try {
    integrate_ode(blow, ensemble(Points::Ones(1, 1)), 0, 1, {Method::euler, 100});
    FAIL("no error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("forward-backward round trip") {
  auto f = new_mlp_field(2, {16, 16}, Activation::tanh, 3);
  Rng rng(2);
  const Points x0 = standard_normal_points(rng, 20, 2);
  const ParticleEnsemble fwd = integrate_ode(*f, ensemble(x0), 0, 1, {Method::rk4, 100});
  CHECK(fwd.time == 1.0);
  const ParticleEnsemble back = integrate_ode(*f, fwd, 1, 0, {Method::rk4, 100});
  CHECK((back.positions - x0).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("convergence order under step halving") {
  QuadraticField q(1, 1.0, 0.0);
  auto err = [&](Method m, int steps) {
    return std::abs(integrate_ode(q, ensemble(Points::Ones(1, 1)), 0, 1, {m, steps}).positions(0, 0) - std::exp(1.0));
  };
  const double euler_ratio = err(Method::euler, 200) / err(Method::euler, 400);
  const double rk4_ratio = err(Method::rk4, 10) / err(Method::rk4, 20);
  CHECK(euler_ratio == doctest::Approx(2.0).epsilon(0.1));
  CHECK(rk4_ratio == doctest::Approx(16.0).epsilon(0.1));
}

TEST_CASE("sde integration") {
  Rng rng(4);
  const Points x0 = standard_normal_points(rng, 50, 2);
  auto f = new_mlp_field(2, {8}, Activation::tanh, 1);
  SUBCASE("zero diffusion equals euler bitwise") {
    const Points a = integrate_sde(*f, ensemble(x0), 0, 1, TimeFn::constant(0.0), {Method::euler_maruyama, 50}, 9).positions;
    const Points b = integrate_ode(*f, ensemble(x0), 0, 1, {Method::euler, 50}).positions;
    CHECK(a == b);
  }
  SUBCASE("seeded reproducibility") {
    const IntegratorConfig c{Method::euler_maruyama, 20};
    CHECK(integrate_sde(*f, ensemble(x0), 0, 1, TimeFn::constant(1.0), c, 5).positions ==
          integrate_sde(*f, ensemble(x0), 0, 1, TimeFn::constant(1.0), c, 5).positions);
    // Particle streams do not depend on the ensemble size.
    const Points part = integrate_sde(*f, ensemble(x0.topRows(10)), 0, 1, TimeFn::constant(1.0), c, 5).positions;
    CHECK(part == integrate_sde(*f, ensemble(x0), 0, 1, TimeFn::constant(1.0), c, 5).positions.topRows(10));
  }
  SUBCASE("brownian variance") {
    const Eigen::Index n = 100000;
    ConstantField zero(1, 0.0);
    const Points x = integrate_sde(zero, ensemble(Points::Zero(n, 1)), 0, 1, TimeFn::constant(1.0),
                                   {Method::euler_maruyama, 10}, 3).positions;
    CHECK(std::abs(sample_variance(x) - 1.0) < 3.0 * std::sqrt(2.0 / n));
  }
  SUBCASE("ornstein-uhlenbeck stationary variance") {
    const Eigen::Index n = 20000;
    QuadraticField drift(1, -1.0, 0.0);
    ParticleEnsemble e = ensemble(Points::Constant(n, 1, 3.0));
    for (int k = 0; k < 8; ++k) {
      e = integrate_sde(drift, e, 0, 1, TimeFn::constant(std::sqrt(2.0)), {Method::euler_maruyama, 500}, 100 + k);
      e.time = 0.0;
    }
    // Euler-Maruyama bias for h = 1/500 is ~h/2; MC error ~ sqrt(2/n).
    CHECK(std::abs(sample_variance(e.positions) - 1.0) < 0.05);
  }
  CHECK_THROWS_AS(integrate_sde(*f, ensemble(x0, 1.0), 1, 0, TimeFn::constant(1.0), {Method::euler_maruyama, 10}, 1),
                  InvalidArgument);
}

TEST_CASE("weighted integration") {
  Rng rng(6);
  ParticleEnsemble e = ensemble(standard_normal_points(rng, 4, 1));
  e.log_weights = Vector::Zero(4);
  ConstantField c(1, 0.7);
  const ParticleEnsemble a = integrate_weighted(c, e, 0, 1);
  CHECK(a.positions == e.positions);
  CHECK((a.log_weights->array() - 0.7).abs().maxCoeff() < 1e-14);
  ConstantField zero(1, 0.0);
  const ParticleEnsemble z = integrate_weighted(zero, e, 0, 1);
  CHECK(z.positions == e.positions);
  CHECK(*z.log_weights == *e.log_weights);

  // s = x: x(t) = t, log w(1) = int_0^1 t dt = 1/2.
  LinearField s(Vector::Ones(1));
  ParticleEnsemble o = ensemble(Points::Zero(1, 1));
  o.log_weights = Vector::Zero(1);
  const ParticleEnsemble r = integrate_weighted(s, o, 0, 1, {Method::rk4, 100});
  CHECK(std::abs(r.positions(0, 0) - 1.0) < 1e-12);
  CHECK(std::abs((*r.log_weights)(0) - 0.5) < 1e-8);

  CHECK_THROWS_AS(integrate_weighted(s, ensemble(Points::Zero(1, 1)), 0, 1), InvalidArgument);
}

TEST_CASE("log likelihood") {
  const double log2pi = std::log(2.0 * M_PI);
  auto std_normal = [&](const Vector& x) { return -0.5 * x.squaredNorm() - 0.5 * x.size() * log2pi; };
  ConstantField zero(1, 0.0);
  Points x(3, 1);
  x << -1.0, 0.0, 2.0;
  const Vector id = log_likelihood(zero, x, std_normal);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(id(i) - std_normal(x.row(i).transpose())) < 1e-14);

  // s = x^2/2: pushforward of N(0,1) over unit time is N(0, e^2).
  QuadraticField q(1, 1.0, 0.0);
  const Vector ll = log_likelihood(q, x, std_normal, {Method::rk4, 200});
  CHECK(std::abs(ll(1) - (-0.5 * log2pi - 1.0)) < 1e-5);
  for (int i = 0; i < 3; ++i) {
    const double exact = -0.5 * x(i, 0) * x(i, 0) / std::exp(2.0) - 1.0 - 0.5 * log2pi;
    CHECK(std::abs(ll(i) - exact) < 1e-5);
  }
}

TEST_CASE("likelihood and sampling are consistent on a linear flow") {
  // s = x^2/2 in 2D: samples pushed from N(0, I) have mean log-density -(log 2pi + 1) - 2.
  QuadraticField q(2, 1.0, 0.0);
  auto std_normal = [](const Vector& x) { return -0.5 * x.squaredNorm() - std::log(2.0 * M_PI); };
  Rng rng(7);
  const ParticleEnsemble pushed = integrate_ode(q, ensemble(standard_normal_points(rng, 2000, 2)), 0, 1);
  const Vector ll = log_likelihood(q, pushed.positions, std_normal);
  const double entropy_term = -(std::log(2.0 * M_PI) + 1.0) - 2.0;
  CHECK(std::abs(ll.mean() - entropy_term) < 0.1);
}

TEST_CASE("annealed langevin dynamics") {
  Rng rng(8);
  const Points init = standard_normal_points(rng, 10, 1);
  const ScoreFn score = [](double, const Points& x) { return Points(-x); };
  const auto frames0 = ald_sample(score, {0.1, 0.5, 0.9}, 0, 0.1, init, 1);
  CHECK(frames0.size() == 3);
  for (const auto& f : frames0) CHECK(f.positions == init);
  CHECK(kDefaultLangevinSteps == 5);

  // AR(1) stationary variance of Euler-Maruyama Langevin: 1 / (1 - eps/4).
  const double eps = 0.1;
  const Eigen::Index n = 2000;
  const auto frames = ald_sample(score, std::vector<double>(1, 0.5), 2000, eps,
                                 Points::Zero(n, 1), 2);
  const double expected = 1.0 / (1.0 - eps / 4.0);
  CHECK(std::abs(sample_variance(frames.back().positions) - expected) < 4.0 * expected * std::sqrt(2.0 / n));

  CHECK_THROWS_AS(ald_sample(score, {0.5}, -1, 0.1, init, 1), InvalidArgument);
  CHECK_THROWS_AS(ald_sample(score, {0.5}, 1, 0.0, init, 1), InvalidArgument);
}

TEST_CASE("saving integrator and trajectory dump") {
  LinearField s(Vector::Ones(1));
  ParticleEnsemble e = ensemble(Points::Zero(2, 1));
  e.log_weights = Vector::Zero(2);
  const auto frames = integrate_ode_saving(s, e, {0.0, 0.5, 1.0}, {Method::rk4, 10});
  CHECK(frames.size() == 3);
  CHECK(frames[1].positions(0, 0) == doctest::Approx(0.5));
  CHECK((*frames[2].log_weights)(0) == doctest::Approx(0.5));

  const std::string path = (std::filesystem::temp_directory_path() / "am_traj_test.csv").string();
  write_trajectory(path, frames);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,particle,x0,log_w");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 6);
  CHECK_THROWS_AS(integrate_ode_saving(s, e, {0.5, 0.2}), InvalidArgument);
}
