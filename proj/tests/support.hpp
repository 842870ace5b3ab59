#pragma once

#include "actionmatch/field.hpp"
#include "actionmatch/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace amtest {

using namespace actionmatch;

// |a - b| / max(|b|, 1): relative for O(1)+ magnitudes, absolute near zero.
inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1.0); }

inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-4) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double value_at(const ActionField& f, double t, const Vector& x) {
  return f.evaluate(make_query(t, Points(x.transpose()), JetOrder::value)).value(0);
}

inline Vector grad_at(const ActionField& f, double t, const Vector& x) {
  return f.evaluate(make_query(t, Points(x.transpose()), JetOrder::first)).grad.row(0).transpose();
}

inline Vector random_vector(Rng& rng, Eigen::Index d, double scale = 1.0) {
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = scale * standard_normal(rng);
  return v;
}

// Finite-difference directional derivative of a scalar function of the parameters.
inline double param_fd(ActionField& field, const Vector& dir, const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> p0(field.params().begin(), field.params().end()), p = p0;
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = p0[i] + h * dir(static_cast<Eigen::Index>(i));
  field.set_params(p);
  const double fp = f();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = p0[i] - h * dir(static_cast<Eigen::Index>(i));
  field.set_params(p);
  const double fm = f();
  field.set_params(p0);
  return (fp - fm) / (2.0 * h);
}

inline double dot(const std::vector<double>& g, const Vector& dir) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * dir(static_cast<Eigen::Index>(i));
  return s;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe r;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) r.mean += x / n;
  double var = 0.0;
  for (double x : xs) var += (x - r.mean) * (x - r.mean) / (n - 1.0);
  r.se = std::sqrt(var / n);
  return r;
}

}  // namespace amtest
