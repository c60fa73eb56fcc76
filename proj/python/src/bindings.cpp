#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "qsync/dataset_forge.hpp"
#include "qsync/errors.hpp"
#include "qsync/experiment_runner.hpp"
#include "qsync/neural_estimator.hpp"
#include "qsync/quantum_core.hpp"
#include "qsync/sync_analysis.hpp"

namespace py = pybind11;
using namespace qsync;

namespace {

// JSON crosses the boundary as text; the Python wrapper does the dict conversion.
json parse(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

TimeGrid grid_from(double start, double stop, std::size_t points) { return TimeGrid{start, stop, points}; }

Trajectory series(const std::vector<double>& times, const std::vector<double>& values) {
  return Trajectory{Observable::probe_x, times, values};
}

}  // namespace

PYBIND11_MODULE(_qsync, m) {
  m.doc() = "Two-qubit probe synchronization: master-equation simulation, spectra and learning experiments.";
  m.attr("__version__") = version();

  auto base = py::register_exception<Error>(m, "QsyncError", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<ProbeSetup>(m, "ProbeSetup")
      .def(py::init([](double omega_p, double lambda, double gamma0, double s, double rate_prefactor) {
             ProbeSetup p{omega_p, lambda, gamma0, s, rate_prefactor};
             p.validate();
             return p;
           }),
           py::arg("omega_p") = 1.0, py::arg("lam") = 0.2, py::arg("gamma0") = 0.01, py::arg("s") = 1.0,
           py::arg("rate_prefactor") = kGoldenRulePrefactor)
      .def_readwrite("omega_p", &ProbeSetup::omega_p)
      .def_readwrite("lam", &ProbeSetup::lambda)
      .def_readwrite("gamma0", &ProbeSetup::gamma0)
      .def_readwrite("s", &ProbeSetup::s)
      .def_readwrite("rate_prefactor", &ProbeSetup::rate_prefactor)
      .def("__repr__", [](const ProbeSetup& p) {
        return "ProbeSetup(omega_p=" + format_double(p.omega_p) + ", lam=" + format_double(p.lambda) +
               ", gamma0=" + format_double(p.gamma0) + ", s=" + format_double(p.s) + ")";
      });

  m.def(
      "eigensystem",
      [](const ProbeSetup& p) {
        const Eigensystem e = eigensystem(p);
        py::dict d;
        d["e1"] = e.e1;
        d["e2"] = e.e2;
        d["theta_plus"] = e.theta_plus;
        d["theta_minus"] = e.theta_minus;
        d["gamma1"] = e.gamma1;
        d["gamma2"] = e.gamma2;
        d["energies"] = std::vector<double>(e.energies.begin(), e.energies.end());
        return d;
      },
      py::arg("setup"), "Closed-form frequencies, mixing angles and decay rates.");

  m.def(
      "simulate",
      [](const ProbeSetup& p, double start, double stop, std::size_t points, bool asymptotic) {
        const Liouvillian L = build_liouvillian(p);
        const TimeGrid g = grid_from(start, stop, points);
        const TrajectoryPair tr = asymptotic ? asymptotic_trajectory(asymptotic_params(L, plus_plus_state()), g)
                                             : propagate(L, plus_plus_state(), g);
        return py::make_tuple(tr.system.times, tr.system.values, tr.probe.values);
      },
      py::arg("setup"), py::arg("start") = 0.0, py::arg("stop") = 100.0, py::arg("points") = 1001,
      py::arg("asymptotic") = false, "Returns (t, <sigma_q^x>, <sigma_p^x>) from the |++> initial state.");

  m.def("sync_boundary_s", &sync_boundary_s, py::arg("omega_p"), py::arg("lam") = 0.2);
  m.def("sync_boundary_omega_p", &sync_boundary_omega_p, py::arg("s"), py::arg("lam") = 0.2, py::arg("lo") = 0.5,
        py::arg("hi") = 2.0);

  m.def(
      "dominant_mode",
      [](const ProbeSetup& p) {
        const DominantMode d = dominant_mode(p, plus_plus_state());
        py::dict out;
        out["mode"] = d.mode;
        out["omega_sync"] = d.omega_sync;
        out["phase_difference"] = d.phase_difference;
        out["in_phase"] = d.in_phase();
        return out;
      },
      py::arg("setup"));

  m.def(
      "pearson_windowed",
      [](const std::vector<double>& t, const std::vector<double>& x, const std::vector<double>& y, double at,
         double window) { return pearson_windowed(series(t, x), series(t, y), at, window); },
      py::arg("t"), py::arg("x"), py::arg("y"), py::arg("at"), py::arg("window"));

  m.def(
      "classify_sync", [](double c, double sync, double null) { return to_string(classify_sync(c, {sync, null}).phase); },
      py::arg("c"), py::arg("sync") = 0.9, py::arg("null") = 0.3);

  m.def(
      "fourier_modulus",
      [](const std::vector<double>& values) {
        return fourier_modulus(series(TimeGrid::canonical().times(), values)).moduli;
      },
      py::arg("values"), "One-sided |DFT|/N of a 101-sample trajectory on the canonical grid.");

  m.def(
      "_generate_dataset",
      [](const std::string& config, unsigned jobs) {
        const LabeledDataset ds = generate(DatasetConfig::from_json(parse(config)), jobs);
        Eigen::MatrixXd labels(static_cast<Eigen::Index>(ds.size()), 3);
        for (std::size_t i = 0; i < ds.size(); ++i) {
          const auto r = static_cast<Eigen::Index>(i);
          labels(r, 0) = ds.examples[i].label.omega_p;
          labels(r, 1) = ds.examples[i].label.s;
          labels(r, 2) = ds.examples[i].label.gamma0;
        }
        return py::make_tuple(feature_matrix(ds), labels);
      },
      py::arg("config"), py::arg("jobs") = 1);

  m.def(
      "nme", [](const std::vector<double>& p, const std::vector<double>& t) { return nme(p, t); },
      py::arg("predictions"), py::arg("truths"));

  m.def(
      "_default_parameters",
      [](const std::string& id) { return default_parameters(experiment_from_string(id)).dump(); }, py::arg("experiment"));

  m.def(
      "_run_experiment",
      [](const std::string& id, const std::string& overrides, const std::vector<std::uint64_t>& seeds,
         const std::string& out_dir, unsigned jobs) {
        ExperimentSpec spec;
        spec.id = experiment_from_string(id);
        spec.overrides = parse(overrides);
        spec.seeds = seeds;
        spec.out_dir = out_dir;
        RunOutput out;
        {
          py::gil_scoped_release release;
          out = run_experiment(spec, jobs);
        }
        std::vector<std::string> files;
        for (const auto& f : out.files) files.push_back(f.string());
        return py::make_tuple(out.summary.dump(), files);
      },
      py::arg("experiment"), py::arg("overrides"), py::arg("seeds"), py::arg("out_dir"), py::arg("jobs") = 1);
}
