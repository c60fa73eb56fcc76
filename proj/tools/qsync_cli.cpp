// qsync command-line front end. Exit codes: 0 ok, 1 validation, 2 numerical, 3 I/O.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "qsync/dataset_forge.hpp"
#include "qsync/errors.hpp"
#include "qsync/experiment_runner.hpp"
#include "qsync/neural_estimator.hpp"
#include "qsync/quantum_core.hpp"
#include "qsync/sync_analysis.hpp"

namespace {

using namespace qsync;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "results";
  unsigned jobs = 1;
  std::string format = "csv";
};

// --seed beats QSYNC_SEED, which beats whatever the config file says.
std::optional<std::uint64_t> master_seed(const Globals& g) {
  if (g.seed) return g.seed;
  if (const char* env = std::getenv("QSYNC_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      return v;
    } catch (const std::exception&) {
      throw ValidationError(std::string("QSYNC_SEED is not an unsigned integer: ") + env);
    }
  }
  return std::nullopt;
}

json config_json(const Globals& g) { return g.config.empty() ? json::object() : read_json_file(g.config); }

TimeGrid grid_from(const std::string& name, double stop, std::size_t points) {
  if (name == "canonical") return TimeGrid::canonical();
  if (name == "dense") return TimeGrid::dense();
  if (name == "custom") return TimeGrid{0.0, stop, points};
  throw ValidationError("grid must be canonical, dense or custom");
}

std::filesystem::path out_path(const Globals& g, const std::string& name) { return std::filesystem::path(g.out_dir) / name; }

void announce(const std::vector<std::filesystem::path>& files) {
  for (const auto& f : files) std::cout << f.string() << "\n";
}

// An experiment spec from --config. The file may be a full spec
// ({"experiment", "parameters", "seeds"}) or just a parameter object.
ExperimentSpec experiment_spec(const Globals& g, std::optional<ExperimentId> id) {
  const json j = config_json(g);
  ExperimentSpec spec;
  if (j.contains("experiment")) {
    spec = ExperimentSpec::from_json(j);
    if (id && *id != spec.id) throw ValidationError("config describes a different experiment");
  } else {
    if (!id) throw ValidationError("sweep needs a config with an \"experiment\" field");
    spec.id = *id;
    spec.overrides = j;
    spec.parameters();
  }
  if (auto seed = master_seed(g)) {
    const std::size_t n = spec.seeds.size();
    spec.seeds.clear();
    for (std::size_t i = 0; i < n; ++i) spec.seeds.push_back(*seed + i);
  }
  spec.out_dir = g.out_dir;
  return spec;
}

int run(int argc, char** argv) {
  CLI::App app{"Quantum synchronization probe: simulation, datasets and learning experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON configuration file");
  app.add_option("--seed", g.seed, "Master seed (overrides QSYNC_SEED and the config)");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"csv"}));
  app.set_version_flag("--version", std::string(version()));

  // simulate
  ProbeSetup setup;
  std::string grid_name = "dense";
  double stop = 100.0;
  std::size_t points = 1001;
  std::string model_name = "master_equation";
  bool to_stdout = false;
  auto* sim = app.add_subcommand("simulate", "Propagate the two-qubit system and write both expectation values");
  sim->add_option("--omega-p", setup.omega_p, "Probe frequency");
  sim->add_option("--lambda", setup.lambda, "Qubit-probe coupling");
  sim->add_option("--gamma0", setup.gamma0, "Bath coupling strength");
  sim->add_option("-s,--ohmicity", setup.s, "Ohmicity index");
  sim->add_option("--rate-prefactor", setup.rate_prefactor, "Multiplier of J(omega) in the decay rates");
  sim->add_option("--grid", grid_name, "canonical, dense or custom")->check(CLI::IsMember({"canonical", "dense", "custom"}));
  sim->add_option("--stop", stop, "End time for --grid custom");
  sim->add_option("--points", points, "Samples for --grid custom");
  sim->add_option("--model", model_name, "master_equation or asymptotic")
      ->check(CLI::IsMember({"master_equation", "asymptotic"}));
  sim->add_flag("--stdout", to_stdout, "Print the CSV instead of writing simulate.csv");

  // boundary
  double lambda = 0.2;
  std::vector<double> omegas;
  std::vector<double> svals;
  auto* bnd = app.add_subcommand("boundary", "Analytic in-phase/anti-phase boundary");
  bnd->add_option("--lambda", lambda, "Qubit-probe coupling");
  bnd->add_option("--omega-p", omegas, "Probe frequencies: print s*(omega_p)");
  bnd->add_option("-s,--ohmicity", svals, "Ohmicity values: print omega_p*(s)");

  auto* pmap = app.add_subcommand("phase-map", "|C| over (omega_p, s) with the analytic boundary");

  // dataset
  std::string split_key = "s";
  auto* dset = app.add_subcommand("dataset", "Generate a labeled spectrum dataset (config: dataset fields)");
  dset->add_option("--stratify", split_key, "Label used to stratify the stored split")
      ->check(CLI::IsMember({"none", "s", "gamma0"}));

  // train / evaluate
  std::string dataset_path;
  std::string model_path;
  std::string head_name = "classification";
  std::string label_name = "s";
  auto* trn = app.add_subcommand("train", "Train a model on a dataset's training split (config: training fields)");
  trn->add_option("--dataset", dataset_path, "Dataset CSV")->required();
  trn->add_option("--head", head_name, "classification or regression")
      ->check(CLI::IsMember({"classification", "regression"}));
  trn->add_option("--label", label_name, "s or gamma0")->check(CLI::IsMember({"s", "gamma0"}));
  trn->add_option("--model", model_path, "Output model file (default <out-dir>/model.json)");
  auto* evl = app.add_subcommand("evaluate", "Evaluate a model on a dataset's test split");
  evl->add_option("--dataset", dataset_path, "Dataset CSV")->required();
  evl->add_option("--model", model_path, "Model file")->required();
  evl->add_option("--label", label_name, "s or gamma0")->check(CLI::IsMember({"s", "gamma0"}));

  auto* swp = app.add_subcommand("sweep", "Run the experiment described by --config");

  std::string figure;
  auto* rep = app.add_subcommand("reproduce", "Run a figure experiment with its defaults (--config: overrides)");
  rep->add_option("figure", figure, "fig2, fig3, fig4, fig5, fig6, phase_map or gamma0")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  auto label_key = [](const std::string& name) {
    if (name == "s") return LabelKey::s;
    if (name == "gamma0") return LabelKey::gamma0;
    return LabelKey::none;
  };

  if (*sim) {
    setup.validate();
    const TimeGrid grid = grid_from(grid_name, stop, points);
    const Liouvillian L = build_liouvillian(setup);
    const TrajectoryPair tr = model_name == "asymptotic"
                                  ? asymptotic_trajectory(asymptotic_params(L, plus_plus_state()), grid)
                                  : propagate(L, plus_plus_state(), grid);
    std::string csv = "t,sigma_q_x,sigma_p_x\n";
    for (std::size_t i = 0; i < tr.system.times.size(); ++i)
      csv += format_double(tr.system.times[i]) + "," + format_double(tr.system.values[i]) + "," +
             format_double(tr.probe.values[i]) + "\n";
    if (to_stdout) {
      std::cout << csv;
    } else {
      const auto path = out_path(g, "simulate.csv");
      write_text_file(path, csv);
      announce({path});
    }
  } else if (*bnd) {
    if (omegas.empty() && svals.empty()) omegas = {1.0};
    if (!omegas.empty()) {
      std::cout << "omega_p,s_boundary\n";
      for (double w : omegas) std::cout << format_double(w) << "," << format_double(sync_boundary_s(w, lambda)) << "\n";
    }
    if (!svals.empty()) {
      std::cout << "s,omega_p_boundary\n";
      for (double s : svals) std::cout << format_double(s) << "," << format_double(sync_boundary_omega_p(s, lambda)) << "\n";
    }
  } else if (*pmap) {
    announce(run_phase_map(experiment_spec(g, ExperimentId::phase_map), g.jobs).files);
  } else if (*dset) {
    json j = config_json(g);
    if (auto seed = master_seed(g)) j["master_seed"] = *seed;
    const DatasetConfig config = DatasetConfig::from_json(j);
    LabeledDataset ds = generate(config, g.jobs);
    ds.split = split(ds, config.train_fraction, config.master_seed, label_key(split_key));
    const auto path = out_path(g, "dataset.csv");
    save(ds, path);
    announce({path, manifest_path(path)});
  } else if (*trn) {
    const LabeledDataset ds = load(dataset_path);
    if (ds.split.train.empty()) throw ValidationError("dataset has no stored training split");
    TrainConfig tc = TrainConfig::from_json(config_json(g));
    if (auto seed = master_seed(g)) tc.seed = *seed;
    const Head head = head_from_string(head_name);
    MlpModel model;
    const auto& test = ds.split.test;
    const EvalReport r = fit_and_evaluate(ds, ds.split.train, test.empty() ? ds.split.train : test,
                                          label_key(label_name), head, tc, &model);
    model.manifest["dataset"] = dataset_path;
    model.manifest["label"] = label_name;
    const std::filesystem::path path = model_path.empty() ? out_path(g, "model.json") : std::filesystem::path(model_path);
    save_model(model, path);
    std::cout << "metric,value,test_size\n"
              << (head == Head::classification ? "P" : "NME") << "," << format_double(r.metric()) << ","
              << r.test_size << "\n";
  } else if (*evl) {
    const LabeledDataset ds = load(dataset_path);
    const MlpModel model = load_model(model_path);
    if (!model.feature_scaler) throw ValidationError("model file carries no feature scaler");
    const auto& rows = ds.split.test.empty() ? ds.split.train : ds.split.test;
    const auto x = model.feature_scaler->transform(feature_matrix(ds, rows));
    const auto y = label_values(ds, rows, label_key(label_name));
    if (model.head == Head::classification)
      std::cout << "metric,value,test_size\nP," << format_double(classify_error(model, x.values(), y)) << ","
                << rows.size() << "\n";
    else
      std::cout << "metric,value,test_size\nNME," << format_double(regress_nme(model, x.values(), y)) << ","
                << rows.size() << "\n";
  } else if (*swp) {
    announce(run_experiment(experiment_spec(g, std::nullopt), g.jobs).files);
  } else if (*rep) {
    const RunOutput out = run_experiment(experiment_spec(g, experiment_from_string(figure)), g.jobs);
    announce(out.files);
    std::cerr << out.summary.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const qsync::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const qsync::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const qsync::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
