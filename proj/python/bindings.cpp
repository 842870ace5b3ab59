#include "actionmatch/dynamics.hpp"
#include "actionmatch/experiment.hpp"
#include "actionmatch/metrics.hpp"
#include "actionmatch/objectives.hpp"
#include "actionmatch/train.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace actionmatch;

namespace {

using PathHandle = std::shared_ptr<MarginalPath>;

PathHandle make_path(const std::string& spec_json) {
  return std::const_pointer_cast<MarginalPath>(build_path(nlohmann::json::parse(spec_json)));
}

TimeFn time_fn(const std::string& spec_json) { return time_fn_from_json(nlohmann::json::parse(spec_json)); }

py::dict jets_to_dict(const JetBatch& j) {
  py::dict d;
  d["value"] = j.value;
  d["grad"] = j.grad;
  d["time_deriv"] = j.time_deriv;
  d["laplacian"] = j.laplacian();
  return d;
}

py::dict estimate_to_dict(const LossEstimate& e) {
  py::dict d;
  d["value"] = e.value;
  d["std_error"] = e.std_error;
  d["terms"] = e.terms;
  d["grad"] = e.grad;
  return d;
}

ParticleEnsemble ensemble(const Points& x, double t, std::optional<Vector> log_weights) {
  ParticleEnsemble e{t, x, std::move(log_weights)};
  e.validate();
  return e;
}

py::tuple ensemble_to_tuple(const ParticleEnsemble& e) {
  return py::make_tuple(e.positions, e.log_weights ? py::cast(*e.log_weights) : py::none());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Action Matching core";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<ActionField, std::shared_ptr<ActionField>>(m, "ActionField")
      .def_property_readonly("dim", &ActionField::dim)
      .def_property_readonly("param_count", &ActionField::param_count)
      .def(
          "evaluate",
          [](const ActionField& f, const Vector& times, const Points& x) {
            return jets_to_dict(f.evaluate(make_query(times, x, JetOrder::second)));
          },
          py::arg("times"), py::arg("x"), "Value, gradient, time derivative and Laplacian at (times[i], x[i]).");

  py::class_<MlpField, ActionField, std::shared_ptr<MlpField>>(m, "MlpField")
      .def(py::init([](int dim, std::vector<int> widths, const std::string& activation, std::uint64_t seed) {
             return new_mlp_field(dim, std::move(widths), parse_activation(activation), seed);
           }),
           py::arg("dim"), py::arg("hidden_widths") = std::vector<int>{64, 64}, py::arg("activation") = "tanh",
           py::arg("seed") = 0)
      .def_property(
          "params", [](const MlpField& f) { return std::vector<double>(f.params().begin(), f.params().end()); },
          [](MlpField& f, const std::vector<double>& p) { f.set_params(p); })
      .def_property_readonly("hidden_widths", &MlpField::hidden_widths)
      .def_property_readonly("activation", [](const MlpField& f) { return std::string(activation_name(f.activation())); })
      .def("save", [](const MlpField& f, const std::string& path) { save_field(f, path); })
      .def("to_json", [](const MlpField& f) { return field_to_json(f); });

  m.def("load_field", [](const std::string& path) { return load_field(path); }, py::arg("path"));

  py::class_<MarginalPath, PathHandle>(m, "MarginalPath")
      .def_property_readonly("dim", &MarginalPath::dim)
      .def_property_readonly("kind", &MarginalPath::kind)
      .def(
          "sample", [](const MarginalPath& p, double t, Eigen::Index n, std::uint64_t seed) {
            Rng rng(seed);
            return p.sample(t, n, rng);
          },
          py::arg("t"), py::arg("n"), py::arg("seed") = 0)
      .def_property_readonly("has_density", &MarginalPath::has_density)
      .def_property_readonly("has_score", &MarginalPath::has_score)
      .def_property_readonly("has_velocity", &MarginalPath::has_velocity)
      .def("density", &MarginalPath::density, py::arg("t"), py::arg("x"))
      .def("score", &MarginalPath::score, py::arg("t"), py::arg("x"))
      .def("velocity", &MarginalPath::velocity, py::arg("t"), py::arg("x"));

  m.def("_make_path", &make_path, py::arg("spec_json"));

  m.def(
      "_objective",
      [](const ActionField& f, const MarginalPath& path, const std::string& kind, Eigen::Index n_boundary,
         Eigen::Index n_interior, std::uint64_t seed, std::optional<std::string> sigma_json, double growth,
         const std::string& conjugate, int projections) {
        const BatchSpec batch{n_boundary, n_interior, seed};
        const ObjectiveKind k = parse_objective(kind);
        if (k == ObjectiveKind::ssm) return estimate_to_dict(ssm_loss(f, path, batch, projections));
        ObjectiveOptions o;
        if (k == ObjectiveKind::eam) {
          if (!sigma_json) throw InvalidArgument("eam objective requires sigma");
          o.diffusion = time_fn(*sigma_json);
        }
        if (k == ObjectiveKind::uam) o.growth = growth;
        if (k == ObjectiveKind::cam) o.conjugate = conjugate == "quartic" ? Conjugate::quartic() : Conjugate::quadratic();
        return estimate_to_dict(action_matching_objective(f, path, batch, o));
      },
      py::arg("field"), py::arg("path"), py::arg("kind"), py::arg("n_boundary"), py::arg("n_interior"),
      py::arg("seed"), py::arg("sigma_json"), py::arg("growth"), py::arg("conjugate"), py::arg("projections"));

  m.def(
      "_train",
      [](MlpField& f, const MarginalPath& path, const std::string& objective, long iterations, double lr,
         Eigen::Index n_boundary, Eigen::Index n_interior, std::uint64_t seed, long eval_every,
         std::optional<std::string> sigma_json, double growth, const std::string& conjugate, bool adaptive) {
        TrainConfig c;
        c.objective = parse_objective(objective);
        c.iterations = iterations;
        c.adam.lr = lr;
        c.batch = {n_boundary, n_interior, 0};
        c.seed = seed;
        c.eval_every = eval_every;
        c.growth = growth;
        c.adaptive_proposal = adaptive;
        if (sigma_json) c.diffusion = time_fn(*sigma_json);
        if (c.objective == ObjectiveKind::cam)
          c.conjugate = conjugate == "quartic" ? Conjugate::quartic() : Conjugate::quadratic();
        TrainReport r;
        {
          py::gil_scoped_release release;
          r = train(f, path, c);
        }
        py::list out;
        for (const auto& rec : r.records) out.append(py::module_::import("json").attr("loads")(record_to_json(rec)));
        return out;
      },
      py::arg("field"), py::arg("path"), py::arg("objective"), py::arg("iterations"), py::arg("lr"),
      py::arg("n_boundary"), py::arg("n_interior"), py::arg("seed"), py::arg("eval_every"), py::arg("sigma_json"),
      py::arg("growth"), py::arg("conjugate"), py::arg("adaptive_proposal"));

  m.def(
      "integrate_ode",
      [](const ActionField& f, const Points& x, double t0, double t1, const std::string& method, int steps,
         std::optional<Vector> log_weights) {
        const ParticleEnsemble start = ensemble(x, t0, std::move(log_weights));
        const IntegratorConfig c{parse_method(method), steps};
        return ensemble_to_tuple(start.log_weights ? integrate_weighted(f, start, t0, t1, c)
                                                   : integrate_ode(f, start, t0, t1, c));
      },
      py::arg("field"), py::arg("x"), py::arg("t0") = 0.0, py::arg("t1") = 1.0, py::arg("method") = "rk4",
      py::arg("steps") = 100, py::arg("log_weights") = py::none(),
      "Push particles along grad s; with log_weights, also integrate d log w / dt = s.");

  m.def(
      "_integrate_sde",
      [](const ActionField& f, const Points& x, double t0, double t1, const std::string& sigma_json, int steps,
         std::uint64_t seed) {
        return integrate_sde(f, ensemble(x, t0, std::nullopt), t0, t1, time_fn(sigma_json),
                             {Method::euler_maruyama, steps}, seed)
            .positions;
      },
      py::arg("field"), py::arg("x"), py::arg("t0"), py::arg("t1"), py::arg("sigma_json"), py::arg("steps"),
      py::arg("seed"));

  m.def(
      "log_likelihood",
      [](const ActionField& f, const Points& x, const Vector& base_mean, double base_std, int steps) {
        if (!(base_std > 0.0)) throw InvalidArgument("base_std must be positive");
        const LogDensityFn base = [base_mean, base_std](const Vector& v) {
          const double d = static_cast<double>(v.size());
          return -0.5 * (v - base_mean).squaredNorm() / (base_std * base_std) - d * std::log(base_std) -
                 0.5 * d * std::log(2.0 * M_PI);
        };
        return log_likelihood(f, x, base, {Method::rk4, steps});
      },
      py::arg("field"), py::arg("x"), py::arg("base_mean"), py::arg("base_std") = 1.0, py::arg("steps") = 100,
      "log q_1(x) for an isotropic Gaussian q_0.");

  m.def(
      "ald_sample",
      [](const PathHandle& path, const std::vector<double>& times, int M, double step, const Points& initial,
         std::uint64_t seed) {
        std::vector<Points> out;
        for (const auto& e : ald_sample(score_from_path(path), times, M, step, initial, seed)) out.push_back(e.positions);
        return out;
      },
      py::arg("path"), py::arg("times"), py::arg("M") = kDefaultLangevinSteps, py::arg("step") = 0.01,
      py::arg("initial"), py::arg("seed") = 0, "Annealed Langevin sampling with the path's analytic score.");

  m.def(
      "mmd",
      [](const Points& X, const Points& Y, std::optional<double> bandwidth) {
        KernelSpec k;
        if (bandwidth) k = KernelSpec::rbf(*bandwidth);
        return mmd(X, Y, k);
      },
      py::arg("X"), py::arg("Y"), py::arg("bandwidth") = py::none());
  m.def("median_bandwidth", &median_bandwidth, py::arg("X"), py::arg("Y"));
  m.def("wasserstein2", &wasserstein2, py::arg("X"), py::arg("Y"));
  m.def(
      "field_error",
      [](const ActionField& f, const MarginalPath& path, int n_times, Eigen::Index n_samples, std::uint64_t seed) {
        return field_error(f, path, n_times, n_samples, seed);
      },
      py::arg("field"), py::arg("path"), py::arg("n_times") = 20, py::arg("n_samples") = 500, py::arg("seed") = 0);

  m.def(
      "run_command",
      [](const std::string& command, const std::string& config, const std::string& out,
         std::optional<std::uint64_t> seed, std::optional<std::string> checkpoint) {
        CommandOptions o{config, out, seed, std::move(checkpoint)};
        py::gil_scoped_release release;
        return run_command(command, o);
      },
      py::arg("command"), py::arg("config"), py::arg("out") = ".", py::arg("seed") = py::none(),
      py::arg("checkpoint") = py::none(), "Run a CLI command; returns the exit code.");
  m.attr("commands") = kCommands;
}
