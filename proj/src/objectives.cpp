#include "actionmatch/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace actionmatch {

namespace {

const char* const kTermNames[] = {"boundary_0", "boundary_1", "kinetic", "time_deriv",
                                  "laplacian",  "growth",     "weight_deriv"};

std::map<std::string, double> zero_terms() {
  std::map<std::string, double> terms;
  for (const char* name : kTermNames) terms[name] = 0.0;
  return terms;
}

void require_same_dim(const ActionField& field, const MarginalPath& path) {
  if (field.dim() != path.dim())
    throw InvalidArgument("field dimension " + std::to_string(field.dim()) + " does not match path dimension " +
                          std::to_string(path.dim()));
}

// Sample variance of a sequence (0 for fewer than two entries).
double variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / static_cast<double>(v.size() - 1);
}

// Evaluates the functional, with or without the parameter gradient.
LossGrad run_functional(const ActionField& field, std::vector<JetQuery>& queries, const BatchFunctional& fn,
                        bool with_grad, const PointLabeler& label) {
  if (with_grad) return loss_and_param_grad(field, queries, fn, label);
  std::vector<JetBatch> jets;
  for (const auto& q : queries) jets.push_back(field.evaluate(q));
  LossGrad out;
  out.value = fn(jets).value;
  if (!std::isfinite(out.value)) throw NumericError("non-finite objective value");
  return out;
}

std::vector<double> uniform_stratified_times(Eigen::Index n, Rng& rng) {
  const double u = uniform01(rng);
  std::vector<double> ts(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) ts[static_cast<std::size_t>(i)] = (static_cast<double>(i) + u) / static_cast<double>(n);
  return ts;
}

}  // namespace

void BatchSpec::validate() const {
  if (n_boundary < 1 || n_interior < 1) throw InvalidArgument("batch sizes must be >= 1");
}

WeightSchedule WeightSchedule::constant_one() {
  return {[](double) { return 1.0; }, [](double) { return 0.0; }, true};
}

WeightSchedule WeightSchedule::endpoint_cancelling() {
  return {[](double t) { return (1.0 - t) * std::pow(t, 1.5); },
          [](double t) { return -std::pow(t, 1.5) + 1.5 * (1.0 - t) * std::sqrt(t); }, false};
}

// ---------------------------------------------------------------------------
// Time proposal

TimeProposal::TimeProposal(int bins, double decay) : decay_(decay) {
  if (bins < 1) throw InvalidArgument("time proposal needs at least one bin");
  if (!(decay >= 0.0 && decay < 1.0)) throw InvalidArgument("EMA decay must lie in [0, 1)");
  const auto b = static_cast<std::size_t>(bins);
  masses_.assign(b, 1.0 / bins);
  ema_mean.assign(b, 0.0);
  ema_second.assign(b, 0.0);
  ema_count.assign(b, 0);
}

int TimeProposal::bin_of(double t) const {
  const int b = static_cast<int>(std::floor(t * bins()));
  return std::clamp(b, 0, bins() - 1);
}

double TimeProposal::density(double t) const { return bins() * masses_[static_cast<std::size_t>(bin_of(t))]; }

std::vector<double> TimeProposal::stds() const {
  std::vector<double> out(masses_.size(), 0.0);
  for (std::size_t b = 0; b < out.size(); ++b)
    out[b] = std::sqrt(std::max(ema_second[b] - ema_mean[b] * ema_mean[b], 0.0));
  return out;
}

std::vector<double> TimeProposal::stratified_times(Eigen::Index n, Rng& rng) const {
  const double u0 = uniform01(rng);
  std::vector<double> ts(static_cast<std::size_t>(n));
  std::size_t b = 0;
  double cdf_lo = 0.0;
  const double B = bins();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = (static_cast<double>(i) + u0) / static_cast<double>(n);
    while (b + 1 < masses_.size() && u >= cdf_lo + masses_[b]) {
      cdf_lo += masses_[b];
      ++b;
    }
    const double frac = std::clamp((u - cdf_lo) / masses_[b], 0.0, std::nextafter(1.0, 0.0));
    ts[static_cast<std::size_t>(i)] = (static_cast<double>(b) + frac) / B;
  }
  return ts;
}

std::vector<double> TimeProposal::masses_from_stds(const std::vector<double>& stds, double floor) {
  const std::size_t B = stds.size();
  if (B == 0) throw InvalidArgument("no bins");
  if (floor * static_cast<double>(B) > 1.0) throw InvalidArgument("mass floor too large for bin count");
  std::vector<double> s(B);
  for (std::size_t b = 0; b < B; ++b) s[b] = std::max(stds[b], kStdFloor);
  std::vector<bool> pinned(B, false);
  std::vector<double> m(B);
  for (;;) {
    double free_mass = 1.0, free_std = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      if (pinned[b])
        free_mass -= floor;
      else
        free_std += s[b];
    }
    bool changed = false;
    for (std::size_t b = 0; b < B; ++b) {
      m[b] = pinned[b] ? floor : free_mass * s[b] / free_std;
      if (!pinned[b] && m[b] < floor) {
        pinned[b] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return m;
}

void TimeProposal::set_masses(std::vector<double> masses) {
  if (masses.size() != masses_.size()) throw InvalidArgument("mass vector has wrong length");
  double total = 0.0;
  for (double m : masses) {
    if (!(m >= mass_floor() * (1.0 - 1e-9))) throw InvalidArgument("bin mass below the floor");
    total += m;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("bin masses must sum to 1");
  masses_ = std::move(masses);
}

TimeProposal update_time_proposal(const TimeProposal& proposal, std::span<const BinObservation> obs) {
  TimeProposal out = proposal;
  const double lambda = out.decay();
  for (const auto& o : obs) {
    if (o.bin < 0 || o.bin >= out.bins()) throw InvalidArgument("observation bin out of range");
    const auto b = static_cast<std::size_t>(o.bin);
    if (out.ema_count[b] == 0) {
      out.ema_mean[b] = o.value;
      out.ema_second[b] = o.value * o.value;
    } else {
      out.ema_mean[b] = lambda * out.ema_mean[b] + (1.0 - lambda) * o.value;
      out.ema_second[b] = lambda * out.ema_second[b] + (1.0 - lambda) * o.value * o.value;
    }
    ++out.ema_count[b];
  }
  // Bins with fewer than two observations have no spread estimate yet; they
  // borrow the mean spread of the others.
  std::vector<double> s = out.stds();
  double known = 0.0;
  int n_known = 0;
  for (std::size_t b = 0; b < s.size(); ++b)
    if (out.ema_count[b] >= 2) {
      known += s[b];
      ++n_known;
    }
  const double fill = n_known > 0 ? known / n_known : 1.0;
  for (std::size_t b = 0; b < s.size(); ++b)
    if (out.ema_count[b] < 2) s[b] = fill;
  out.masses_ = TimeProposal::masses_from_stds(s, out.mass_floor());
  return out;
}

// ---------------------------------------------------------------------------

Conjugate Conjugate::quadratic() {
  return {[](const Vector& y) { return 0.5 * y.squaredNorm(); }, [](const Vector& y) -> Vector { return y; },
          "quadratic"};
}

Conjugate Conjugate::quartic() {
  return {[](const Vector& y) {
            const double r = y.squaredNorm();
            return 0.25 * r * r;
          },
          [](const Vector& y) -> Vector { return y.squaredNorm() * y; }, "quartic"};
}

double LossEstimate::signed_term_sum() const {
  auto get = [&](const char* k) {
    const auto it = terms.find(k);
    return it == terms.end() ? 0.0 : it->second;
  };
  return get("boundary_0") - get("boundary_1") + get("kinetic") + get("time_deriv") + get("laplacian") +
         get("growth") + get("weight_deriv");
}

LossEstimate action_matching_objective(const ActionField& field, const MarginalPath& path, const BatchSpec& batch,
                                       const ObjectiveOptions& opt) {
  batch.validate();
  require_same_dim(field, path);
  static const TimeProposal uniform_proposal;
  const TimeProposal& proposal = opt.proposal ? *opt.proposal : uniform_proposal;

  Rng rng(batch.seed);
  const Points x0 = path.sample(0.0, batch.n_boundary, rng);
  const Points x1 = path.sample(1.0, batch.n_boundary, rng);
  const std::vector<double> ts = proposal.stratified_times(batch.n_interior, rng);
  const Vector times = Eigen::Map<const Vector>(ts.data(), static_cast<Eigen::Index>(ts.size()));
  const Points xt = path.sample_at(times, rng);

  const bool entropic = opt.diffusion.has_value();
  std::vector<JetQuery> queries{make_query(0.0, x0, JetOrder::value), make_query(1.0, x1, JetOrder::value),
                                make_query(times, xt, entropic ? JetOrder::second : JetOrder::first)};

  const Eigen::Index ni = batch.n_interior;
  std::vector<double> weight(static_cast<std::size_t>(ni)), om(weight.size()), dom(weight.size()),
      half_sigma2(weight.size(), 0.0);
  for (std::size_t i = 0; i < weight.size(); ++i) {
    weight[i] = 1.0 / proposal.density(ts[i]);
    om[i] = opt.schedule.value(ts[i]);
    dom[i] = opt.schedule.deriv(ts[i]);
    if (entropic) {
      const double sigma = opt.diffusion->value(ts[i]);
      half_sigma2[i] = 0.5 * sigma * sigma;
    }
  }
  const double om0 = opt.schedule.value(0.0), om1 = opt.schedule.value(1.0);

  LossEstimate est;
  est.terms = zero_terms();
  est.observations.resize(weight.size());
  std::vector<double> contrib0, contrib1, contribi;

  const BatchFunctional fn = [&](std::span<const JetBatch> jets) {
    const JetBatch& j0 = jets[0];
    const JetBatch& j1 = jets[1];
    const JetBatch& ji = jets[2];
    const auto n0 = static_cast<double>(j0.value.size());
    const auto n1 = static_cast<double>(j1.value.size());
    const auto nint = static_cast<double>(ni);

    FunctionalResult res;
    res.adjoints.resize(3);
    res.adjoints[0].value = Vector::Constant(j0.value.size(), om0 / n0);
    res.adjoints[1].value = Vector::Constant(j1.value.size(), -om1 / n1);
    contrib0.assign(static_cast<std::size_t>(j0.value.size()), 0.0);
    contrib1.assign(static_cast<std::size_t>(j1.value.size()), 0.0);
    double sum0 = 0.0, sum1 = 0.0;
    for (Eigen::Index i = 0; i < j0.value.size(); ++i) {
      contrib0[static_cast<std::size_t>(i)] = om0 * j0.value(i);
      sum0 += j0.value(i);
    }
    for (Eigen::Index i = 0; i < j1.value.size(); ++i) {
      contrib1[static_cast<std::size_t>(i)] = om1 * j1.value(i);
      sum1 += j1.value(i);
    }

    JetBatch& adj = res.adjoints[2];
    adj.value.resize(ni);
    adj.grad.resize(ni, field.dim());
    adj.time_deriv.resize(ni);
    if (entropic) adj.curvature.resize(ni, ji.curvature.cols());
    contribi.assign(static_cast<std::size_t>(ni), 0.0);

    double kinetic = 0.0, time_deriv = 0.0, laplacian = 0.0, growth = 0.0, weight_deriv = 0.0;
    for (Eigen::Index i = 0; i < ni; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const Vector g = ji.grad.row(i).transpose();
      const double s = ji.value(i);
      const double kin = opt.conjugate ? opt.conjugate->value(g) : 0.5 * g.squaredNorm();
      const double w = weight[k];
      const double lap = entropic ? ji.curvature.row(i).sum() : 0.0;

      const double t_kin = om[k] * kin;
      const double t_dt = om[k] * ji.time_deriv(i);
      const double t_lap = entropic ? om[k] * half_sigma2[k] * lap : 0.0;
      const double t_growth = opt.growth != 0.0 ? om[k] * 0.5 * opt.growth * s * s : 0.0;
      const double t_wd = dom[k] * s;
      const double zeta = t_kin + t_dt + t_lap + t_growth + t_wd;

      kinetic += w * t_kin;
      time_deriv += w * t_dt;
      laplacian += w * t_lap;
      growth += w * t_growth;
      weight_deriv += w * t_wd;
      contribi[k] = w * zeta;
      est.observations[k] = {proposal.bin_of(ts[k]), zeta};

      const double scale = w / nint;
      adj.value(i) = scale * (dom[k] + om[k] * opt.growth * s);
      adj.grad.row(i) = scale * om[k] * (opt.conjugate ? opt.conjugate->grad(g) : g).transpose();
      adj.time_deriv(i) = scale * om[k];
      if (entropic) adj.curvature.row(i).setConstant(scale * om[k] * half_sigma2[k]);
    }

    est.terms["boundary_0"] = om0 * (sum0 / n0);
    est.terms["boundary_1"] = om1 * (sum1 / n1);
    est.terms["kinetic"] = kinetic / nint;
    est.terms["time_deriv"] = time_deriv / nint;
    est.terms["laplacian"] = laplacian / nint;
    est.terms["growth"] = growth / nint;
    est.terms["weight_deriv"] = weight_deriv / nint;
    res.value = est.signed_term_sum();
    return res;
  };

  const PointLabeler label = [&](std::size_t q, Eigen::Index row) -> std::string {
    if (q == 0) return "boundary t=0, row " + std::to_string(row);
    if (q == 1) return "boundary t=1, row " + std::to_string(row);
    const double t = ts[static_cast<std::size_t>(row)];
    return "interior time t=" + std::to_string(t) + " (time bin " + std::to_string(proposal.bin_of(t)) + ")";
  };

  LossGrad lg = run_functional(field, queries, fn, opt.with_grad, label);
  est.value = lg.value;
  est.grad = std::move(lg.grad);
  est.std_error = std::sqrt(variance(contrib0) / static_cast<double>(contrib0.size()) +
                            variance(contrib1) / static_cast<double>(contrib1.size()) +
                            variance(contribi) / static_cast<double>(contribi.size()));
  return est;
}

LossEstimate am_loss(const ActionField& field, const MarginalPath& path, const BatchSpec& batch,
                     const WeightSchedule& schedule, const TimeProposal* proposal) {
  ObjectiveOptions opt;
  opt.schedule = schedule;
  opt.proposal = proposal;
  return action_matching_objective(field, path, batch, opt);
}

LossEstimate eam_loss(const ActionField& field, const MarginalPath& path, const BatchSpec& batch,
                      const TimeFn& sigma, const WeightSchedule& schedule, const TimeProposal* proposal) {
  for (int i = 0; i <= 1000; ++i) {
    const double s = sigma.value(i / 1000.0);
    if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidArgument("diffusion sigma_t must be nonnegative and finite on [0, 1]");
  }
  ObjectiveOptions opt;
  opt.schedule = schedule;
  opt.proposal = proposal;
  opt.diffusion = sigma;
  return action_matching_objective(field, path, batch, opt);
}

LossEstimate uam_loss(const ActionField& field, const MarginalPath& path, const BatchSpec& batch, double lambda,
                      const TimeProposal* proposal) {
  if (!(lambda > 0.0)) throw InvalidArgument("growth weight lambda must be positive");
  ObjectiveOptions opt;
  opt.proposal = proposal;
  opt.growth = lambda;
  return action_matching_objective(field, path, batch, opt);
}

LossEstimate cam_loss(const ActionField& field, const MarginalPath& path, const BatchSpec& batch,
                      const Conjugate& conjugate, const WeightSchedule& schedule, const TimeProposal* proposal) {
  if (!conjugate.value || !conjugate.grad) throw InvalidArgument("conjugate needs value and gradient");
  ObjectiveOptions opt;
  opt.schedule = schedule;
  opt.proposal = proposal;
  opt.conjugate = conjugate;
  return action_matching_objective(field, path, batch, opt);
}

LossEstimate ssm_loss(const ActionField& field, const MarginalPath& path, const BatchSpec& batch, int n_projections) {
  if (n_projections < 1) throw InvalidArgument("ssm needs at least one projection");
  batch.validate();
  require_same_dim(field, path);
  Rng rng(batch.seed);
  const Eigen::Index n = batch.n_interior;
  const int d = field.dim();
  const std::vector<double> ts = uniform_stratified_times(n, rng);
  const Vector times = Eigen::Map<const Vector>(ts.data(), n);
  JetQuery q = make_query(times, path.sample_at(times, rng), JetOrder::second);
  std::bernoulli_distribution coin(0.5);
  for (int j = 0; j < n_projections; ++j) {
    Points v(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k) v(i, k) = coin(rng) ? 1.0 : -1.0;
    q.directions.push_back(std::move(v));
  }
  std::vector<JetQuery> queries{q};

  LossEstimate est;
  est.terms = zero_terms();
  std::vector<double> contrib(static_cast<std::size_t>(n));
  const BatchFunctional fn = [&](std::span<const JetBatch> jets) {
    const JetBatch& jb = jets[0];
    const double norm = static_cast<double>(n) * n_projections;
    FunctionalResult res;
    res.adjoints.resize(1);
    JetBatch& adj = res.adjoints[0];
    adj.grad = Points::Zero(n, d);
    adj.curvature = Points::Constant(n, n_projections, 1.0 / norm);
    double curv = 0.0, proj = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double ci = 0.0;
      for (int j = 0; j < n_projections; ++j) {
        const auto& v = queries[0].directions[static_cast<std::size_t>(j)];
        const double p = jb.grad.row(i).dot(v.row(i));
        curv += jb.curvature(i, j);
        proj += 0.5 * p * p;
        ci += jb.curvature(i, j) + 0.5 * p * p;
        adj.grad.row(i) += (p / norm) * v.row(i);
      }
      contrib[static_cast<std::size_t>(i)] = ci / n_projections;
    }
    est.terms["laplacian"] = curv / norm;
    est.terms["kinetic"] = proj / norm;
    res.value = est.signed_term_sum();
    return res;
  };
  LossGrad lg = run_functional(field, queries, fn, true, {});
  est.value = lg.value;
  est.grad = std::move(lg.grad);
  est.std_error = std::sqrt(variance(contrib) / static_cast<double>(n));
  return est;
}

// ---------------------------------------------------------------------------

namespace {

// Midpoint-rule integral over t of the per-node mean of `integrand`, which maps
// (node time, points) to per-point values.
template <typename Fn>
McEstimate integrate_in_time(const MarginalPath& path, int n_times, Eigen::Index n_samples, std::uint64_t seed,
                             Fn integrand) {
  if (n_times < 1) throw InvalidArgument("need at least one time node");
  const Eigen::Index per_node = std::max<Eigen::Index>(1, n_samples / n_times);
  Rng rng(seed);
  double total = 0.0, var = 0.0;
  for (int k = 0; k < n_times; ++k) {
    const double t = (k + 0.5) / n_times;
    const Points x = path.sample(t, per_node, rng);
    const std::vector<double> vals = integrand(t, x);
    const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
    total += mean;
    var += variance(vals) / static_cast<double>(vals.size());
  }
  return {total / n_times, std::sqrt(var) / n_times};
}

}  // namespace

McEstimate action_gap_estimate(const ActionField& field, const MarginalPath& path, int n_times,
                               Eigen::Index n_samples, std::uint64_t seed) {
  require_same_dim(field, path);
  const FieldPtr truth = path.true_action();
  if (!truth) throw InvalidArgument(path.kind() + " path lacks an analytic action; action gap is undefined");
  return integrate_in_time(path, n_times, n_samples, seed, [&](double t, const Points& x) {
    const JetBatch a = field.evaluate(make_query(t, x, JetOrder::first));
    const JetBatch b = truth->evaluate(make_query(t, x, JetOrder::first));
    std::vector<double> vals(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      vals[static_cast<std::size_t>(i)] = 0.5 * (a.grad.row(i) - b.grad.row(i)).squaredNorm();
    return vals;
  });
}

double action_gap(const ActionField& field, const MarginalPath& path, int n_times, Eigen::Index n_samples,
                  std::uint64_t seed) {
  return action_gap_estimate(field, path, n_times, n_samples, seed).value;
}

McEstimate kinetic_energy_estimate(const MarginalPath& path, int n_times, Eigen::Index n_samples,
                                   std::uint64_t seed) {
  const FieldPtr truth = path.true_action();
  if (!truth) throw InvalidArgument(path.kind() + " path lacks an analytic action; kinetic energy is undefined");
  return integrate_in_time(path, n_times, n_samples, seed, [&](double t, const Points& x) {
    const JetBatch b = truth->evaluate(make_query(t, x, JetOrder::first));
    std::vector<double> vals(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) vals[static_cast<std::size_t>(i)] = 0.5 * b.grad.row(i).squaredNorm();
    return vals;
  });
}

}  // namespace actionmatch
