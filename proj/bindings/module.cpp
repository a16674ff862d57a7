// Python bindings for the main operations: model stepping, OCP solving, the
// control-law Jacobian, dataset generation, training, certification and the
// closed-loop study.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "nnmpc/certify.hpp"
#include "nnmpc/config.hpp"
#include "nnmpc/errors.hpp"
#include "nnmpc/pipeline.hpp"
#include "nnmpc/sensitivity.hpp"
#include "nnmpc/simulate.hpp"
#include "nnmpc/version.hpp"

namespace py = pybind11;
using namespace nnmpc;

namespace {

OcpSpec spec_from_args(const PendulumParams& params, double step_length, int horizon,
                       const Vec& q_diag, const Vec& r_diag, const Vec& p_diag,
                       const Vec& state_lower, const Vec& state_upper,
                       const Vec& input_lower, const Vec& input_upper) {
  OcpSpec spec{make_pendulum_model(params, step_length),
               horizon,
               Mat(q_diag.asDiagonal()),
               Mat(r_diag.asDiagonal()),
               Mat(p_diag.asDiagonal()),
               state_lower,
               state_upper,
               input_lower,
               input_upper};
  spec.validate();
  return spec;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "neural-network imitation of nonlinear MPC with certified error bounds";
  m.attr("__version__") = kVersion;

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<NumericalError>(m, "NumericalError");
  py::register_exception<BoundInfeasibleError>(m, "BoundInfeasibleError");

  py::class_<PendulumParams>(m, "PendulumParams")
      .def(py::init([](double mass, double gravity, double length) {
             PendulumParams p{mass, gravity, length};
             p.validate();
             return p;
           }),
           py::arg("mass") = 1.0, py::arg("gravity") = 9.81, py::arg("length") = 1.0)
      .def_readonly("mass", &PendulumParams::mass)
      .def_readonly("gravity", &PendulumParams::gravity)
      .def_readonly("length", &PendulumParams::length);

  py::class_<DiscreteModel>(m, "DiscreteModel")
      .def("step", &DiscreteModel::step, py::arg("x"), py::arg("u"))
      .def("step_jacobians",
           [](const DiscreteModel& model, const Vec& x, const Vec& u) {
             Mat a, b;
             model.step_jacobians(x, u, a, b);
             return py::make_tuple(a, b);
           })
      .def_property_readonly("state_dim", &DiscreteModel::state_dim)
      .def_property_readonly("input_dim", &DiscreteModel::input_dim)
      .def_property_readonly("step_length", &DiscreteModel::step_length);

  m.def("pendulum_model", &make_pendulum_model, py::arg("params") = PendulumParams{},
        py::arg("step_length") = 0.1);

  py::class_<OcpSpec>(m, "OcpSpec")
      .def(py::init(&spec_from_args), py::arg("params") = PendulumParams{},
           py::arg("step_length") = 0.1, py::arg("horizon") = 20,
           py::arg("q_diag") = Vec{{10.0, 1.0}}, py::arg("r_diag") = Vec{{0.1}},
           py::arg("p_diag") = Vec{{10.0, 1.0}},
           py::arg("state_lower") = Vec{{-2.0 * M_PI, -1.0}},
           py::arg("state_upper") = Vec{{2.0 * M_PI, 1.0}},
           py::arg("input_lower") = Vec{{-15.0}},
           py::arg("input_upper") = Vec{{15.0}})
      .def_readonly("horizon", &OcpSpec::horizon)
      .def_readonly("state_lower", &OcpSpec::state_lower)
      .def_readonly("state_upper", &OcpSpec::state_upper)
      .def_readonly("input_lower", &OcpSpec::input_lower)
      .def_readonly("input_upper", &OcpSpec::input_upper)
      .def_property_readonly("model", [](const OcpSpec& s) { return s.model; });

  py::enum_<SolveStatus>(m, "SolveStatus")
      .value("ok", SolveStatus::converged)
      .value("max_iter", SolveStatus::max_iter)
      .value("infeasible", SolveStatus::infeasible);

  m.def(
      "solve_ocp",
      [](const OcpSpec& spec, const Vec& x) {
        NlpInstance nlp(spec, x);
        const OcpSolution sol = SqpSolver().solve(nlp);
        py::dict out;
        out["u"] = sol.input;
        out["status"] = sol.status;
        out["kkt_residual"] = sol.kkt_residual;
        out["iterations"] = sol.iterations;
        return out;
      },
      py::arg("spec"), py::arg("x"),
      "Solve the OCP at one state and return the first input with diagnostics.");

  m.def("control_law_jacobian",
        [](const OcpSpec& spec, const Vec& x) { return control_law_jacobian(spec, x); },
        py::arg("spec"), py::arg("x"),
        "d kappa / d x from the active-set KKT sensitivity; empty if degenerate.");

  py::class_<SqpSettings>(m, "SqpSettings")
      .def(py::init<>())
      .def_readwrite("kkt_tol", &SqpSettings::kkt_tol)
      .def_readwrite("max_iter", &SqpSettings::max_iter);

  py::class_<MpcController>(m, "MpcController")
      .def(py::init<OcpSpec, SqpSettings>(), py::arg("spec"),
           py::arg("settings") = SqpSettings{})
      .def("compute", &MpcController::compute, py::arg("x"))
      .def("reset", &MpcController::reset);

  py::class_<GridSpec>(m, "GridSpec")
      .def(py::init([](const Vec& lower, const Vec& upper, std::vector<int> counts) {
             GridSpec g{lower, upper, std::move(counts)};
             g.validate();
             return g;
           }),
           py::arg("lower"), py::arg("upper"), py::arg("counts"))
      .def_readonly("lower", &GridSpec::lower)
      .def_readonly("upper", &GridSpec::upper)
      .def_readonly("counts", &GridSpec::counts)
      .def("spacing", &GridSpec::spacing)
      .def("total_points", &GridSpec::total_points);

  m.def("seed_grid", &seed_grid, py::arg("grid"));
  m.def("sample_uniform", &sample_uniform, py::arg("domain"), py::arg("count"),
        py::arg("seed"));

  py::class_<Sample>(m, "Sample")
      .def_readonly("x", &Sample::x)
      .def_readonly("u", &Sample::u)
      .def_property_readonly("jac",
                             [](const Sample& s) -> py::object {
                               if (!s.jac) return py::none();
                               return py::cast(*s.jac);
                             })
      .def_readonly("status", &Sample::status)
      .def_readonly("kkt_residual", &Sample::kkt_residual)
      .def("converged", &Sample::converged);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("n_x", &Dataset::n_x)
      .def_readonly("n_u", &Dataset::n_u)
      .def_readonly("samples", &Dataset::samples)
      .def("converged_count", &Dataset::converged_count)
      .def("save", [](const Dataset& ds, const std::filesystem::path& p) {
        save_dataset(ds, p);
      });

  m.def(
      "generate_dataset",
      [](const std::vector<Vec>& points, const OcpSpec& spec, bool with_sensitivities,
         int workers, py::object grid) {
        GenerateOptions opt;
        opt.with_sensitivities = with_sensitivities;
        opt.workers = workers;
        Dataset ds = generate(points, spec, opt);
        if (!grid.is_none()) ds.grid = grid.cast<GridSpec>();
        return ds;
      },
      py::arg("points"), py::arg("spec"), py::arg("with_sensitivities") = true,
      py::arg("workers") = 0, py::arg("grid") = py::none());
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("covering_radius", &covering_radius, py::arg("dataset"), py::arg("domain"),
        py::arg("probe_density") = 0);

  py::class_<MlpParams>(m, "Mlp")
      .def_static("zeros", &MlpParams::zeros, py::arg("layer_sizes"))
      .def_static("glorot", &MlpParams::glorot, py::arg("layer_sizes"), py::arg("seed"))
      .def("forward", [](const MlpParams& p, const Vec& x) { return mlp_forward(p, x); })
      .def("input_jacobian",
           [](const MlpParams& p, const Vec& x) { return mlp_input_jacobian(p, x); })
      .def_property_readonly("layer_sizes", &MlpParams::layer_sizes)
      .def_readonly("weights", &MlpParams::weights)
      .def_readonly("biases", &MlpParams::biases)
      .def("save", [](const MlpParams& p, const std::filesystem::path& path) {
        save_mlp(p, path);
      });
  m.def("load_mlp", &load_mlp, py::arg("path"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lambda_mse", &TrainConfig::lambda_mse)
      .def_readwrite("lambda_sens", &TrainConfig::lambda_sens)
      .def_readwrite("lambda_reg", &TrainConfig::lambda_reg)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("init_seed", &TrainConfig::init_seed)
      .def_readwrite("shuffle_seed", &TrainConfig::shuffle_seed)
      .def_readwrite("hidden", &TrainConfig::hidden);

  m.def(
      "train",
      [](const Dataset& data, const TrainConfig& cfg, py::object validation) {
        const Dataset* vptr = nullptr;
        Dataset vset;
        if (!validation.is_none()) {
          vset = validation.cast<Dataset>();
          vptr = &vset;
        }
        auto [params, report] = train(data, vptr, cfg);
        py::dict rep;
        rep["final_epsilon_d"] = report.final_epsilon_d;
        rep["final_r2"] = report.final_r2;
        rep["epochs"] = report.history.size();
        std::vector<double> totals;
        for (const EpochRecord& r : report.history) totals.push_back(r.total);
        rep["loss"] = totals;
        return py::make_tuple(params, rep);
      },
      py::arg("data"), py::arg("config") = TrainConfig{},
      py::arg("validation") = py::none());

  m.def("loss_mse", &loss_mse);
  m.def("loss_sens", &loss_sens);
  m.def("loss_full", &loss_full);
  m.def("epsilon_d", &epsilon_d, py::arg("net"), py::arg("data"));
  m.def("r2_score", &r2_score, py::arg("net"), py::arg("validation"));

  m.def("spectral_norm", &spectral_norm, py::arg("matrix"));
  m.def("lipschitz_nn_upper", &lipschitz_nn_upper, py::arg("net"));
  m.def("lipschitz_nn_lower_sampled", &lipschitz_nn_lower_sampled, py::arg("net"),
        py::arg("domain"), py::arg("n_samples") = 2000, py::arg("seed") = 0);
  m.def("required_delta", &required_delta, py::arg("epsilon"), py::arg("epsilon_d"),
        py::arg("l_mpc"), py::arg("l_nn"));

  m.def(
      "certify",
      [](const MlpParams& net, const Dataset& data, const GridSpec& domain,
         const OcpSpec& spec, double epsilon, int probe_factor, int workers) {
        CertifyOptions opt;
        opt.epsilon = epsilon;
        opt.probe_factor = probe_factor;
        opt.workers = workers;
        const BoundReport r = certify(net, data, domain, spec, opt);
        py::dict out;
        out["epsilon"] = r.epsilon;
        out["epsilon_d"] = r.epsilon_d;
        out["l_mpc_upper"] = r.l_mpc.upper;
        out["l_mpc_lower"] = r.l_mpc.lower;
        out["l_nn_upper"] = r.l_nn.upper;
        out["l_nn_lower"] = r.l_nn.lower;
        out["delta_required"] = r.delta_required;
        out["delta_actual"] = r.delta_actual;
        out["certified"] = r.certified;
        if (r.infeasible_reason) out["infeasible_reason"] = *r.infeasible_reason;
        if (r.empirical_max_error) out["empirical_max_error"] = *r.empirical_max_error;
        return out;
      },
      py::arg("net"), py::arg("data"), py::arg("domain"), py::arg("spec"),
      py::arg("epsilon"), py::arg("probe_factor") = 0, py::arg("workers") = 0);

  py::enum_<ControllerKind>(m, "ControllerKind")
      .value("mpc", ControllerKind::mpc)
      .value("nn", ControllerKind::nn)
      .value("mpc_disturbed", ControllerKind::mpc_disturbed);

  m.def(
      "simulate",
      [](const OcpSpec& spec, ControllerKind kind, const Vec& x0, int steps,
         py::object net, double disturbance_epsilon, uint64_t seed) {
        SimOptions opt;
        opt.kind = kind;
        opt.x0 = x0;
        opt.steps = steps;
        MlpParams params;
        if (!net.is_none()) {
          params = net.cast<MlpParams>();
          opt.net = &params;
        }
        opt.disturbance_epsilon = disturbance_epsilon;
        opt.disturbance_seed = seed;
        const Trajectory traj = simulate_closed_loop(spec, opt);
        const ClMetrics metrics = compute_metrics(traj, spec);
        py::dict out;
        Mat states(traj.states.size(), spec.state_dim());
        for (size_t k = 0; k < traj.states.size(); ++k) states.row(k) = traj.states[k];
        Mat inputs(traj.inputs.size(), spec.input_dim());
        for (size_t k = 0; k < traj.inputs.size(); ++k) inputs.row(k) = traj.inputs[k];
        out["time"] = traj.time;
        out["states"] = states;
        out["inputs"] = inputs;
        out["divergence"] = traj.divergence;
        out["violation_pct"] = metrics.violation_pct;
        out["max_violation"] = metrics.max_violation;
        out["max_input_divergence"] = metrics.max_input_divergence;
        out["terminal_state_norm"] = metrics.terminal_state_norm;
        return out;
      },
      py::arg("spec"), py::arg("kind"), py::arg("x0"), py::arg("steps"),
      py::arg("net") = py::none(), py::arg("disturbance_epsilon") = 0.0,
      py::arg("seed") = 0);
}
