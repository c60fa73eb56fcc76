// Acceptance gate: one PASS/FAIL line per criterion, details indented below.
// Exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Eigenvalues>

#include "oracles.hpp"
#include "qsync/dataset_forge.hpp"
#include "qsync/errors.hpp"
#include "qsync/experiment_runner.hpp"
#include "qsync/neural_estimator.hpp"
#include "qsync/quantum_core.hpp"
#include "qsync/sync_analysis.hpp"

namespace fs = std::filesystem;
using namespace qsync;

namespace {

struct Outcome {
  bool pass = false;
  std::vector<std::string> details;
  json data = json::object();

  template <class... T>
  void note(const T&... parts) {
    std::ostringstream os;
    (os << ... << parts);
    details.push_back(os.str());
  }
};

struct Context {
  fs::path out_dir;
  unsigned jobs = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double num(const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); }

ExperimentSpec make_spec(ExperimentId id, json overrides, const Context& ctx) {
  ExperimentSpec s;
  s.id = id;
  s.overrides = std::move(overrides);
  s.seeds = ctx.seeds;
  s.out_dir = ctx.out_dir;
  return s;
}

ProbeSetup random_setup(std::mt19937_64& rng, double wp_lo = 0.3, double wp_hi = 2.0) {
  std::uniform_real_distribution<double> wp(wp_lo, wp_hi), lam(0.01, 0.6), g0(0.001, 0.05), s(0.3, 3.0);
  return ProbeSetup{wp(rng), lam(rng), g0(rng), s(rng)};
}

Matrix4c random_density(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix4c a;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) a(i, j) = cplx(n(rng), n(rng));
  Matrix4c rho = a * a.adjoint();
  return rho / rho.trace();
}

// 1 ------------------------------------------------------------------------
Outcome physics_invariants(const Context&) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1001);
  double trace_err = 0, herm_err = 0, min_eig = 1, ground_err = 0, energy_err = 0;
  for (int n = 0; n < 200; ++n) {
    const ProbeSetup s = random_setup(rng);
    const Liouvillian L = build_liouvillian(s);
    const Eigensystem e = eigensystem(s);
    const Matrix4c rho0 = n % 2 ? random_density(rng) : plus_plus_state();
    for (const Matrix4c& r : evolve(L, rho0, TimeGrid::canonical())) {
      trace_err = std::max(trace_err, std::abs(r.trace() - 1.0));
      herm_err = std::max(herm_err, (r - r.adjoint()).cwiseAbs().maxCoeff());
      Eigen::SelfAdjointEigenSolver<Matrix4c> es((r + r.adjoint()) / 2.0);
      min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
    }
    const Matrix4c g = ground_state_projector(e);
    ground_err = std::max(ground_err, L.apply(g).cwiseAbs().maxCoeff());
    for (const Matrix4c& r : evolve(L, g, TimeGrid{0.0, 100.0, 11}))
      ground_err = std::max(ground_err, (r - g).cwiseAbs().maxCoeff());
    // Closed-form E1, E2 against a numerical diagonalization of H_S.
    const auto num_e = oracle::energies(s.omega_p, s.lambda);
    // Levels are -b/2 < -a/2 < a/2 < b/2; |E1| and |E2| are gaps from the lowest.
    const double closed_e1 = -(num_e[2] - num_e[0]);
    const double closed_e2 = -(num_e[1] - num_e[0]);
    energy_err = std::max({energy_err, std::abs(closed_e1 - e.e1), std::abs(closed_e2 - e.e2)});
  }
  const double elapsed = seconds_since(t0);
  o.pass = trace_err <= 1e-12 && herm_err <= 1e-12 && min_eig >= -1e-10 && ground_err <= 1e-12 && energy_err <= 1e-10 &&
           elapsed < 10.0;
  o.note("200 setups: max |tr-1| ", fmt(trace_err, 3), ", max |rho-rho^H| ", fmt(herm_err, 3), ", min eigenvalue ",
         fmt(min_eig, 3));
  o.note("ground state drift ", fmt(ground_err, 3), ", |E_closed - E_numeric| ", fmt(energy_err, 3), ", runtime ",
         fmt(elapsed, 3), " s");
  o.data = {{"trace", trace_err}, {"hermiticity", herm_err}, {"min_eigenvalue", min_eig},
            {"ground", ground_err}, {"energy", energy_err},  {"seconds", elapsed}};
  return o;
}

// 2 ------------------------------------------------------------------------
Outcome boundary_identity(const Context&) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const double s1 = sync_boundary_s(1.0, 0.2);
  double lo = 10, hi = -10;
  for (int i = 0; i <= 150; ++i) {
    const double w = sync_boundary_omega_p(0.5 + 0.01 * i, 0.2);
    lo = std::min(lo, w);
    hi = std::max(hi, w);
  }
  const double elapsed = seconds_since(t0);
  o.pass = std::abs(s1 - 1.0) <= 1e-9 && lo >= 0.90 && hi <= 1.15 && elapsed < 1.0;
  o.note("s*(1) - 1 = ", fmt(s1 - 1.0, 3), "; omega_p*(s) over s in [0.5, 2] spans [", fmt(lo, 5), ", ", fmt(hi, 5),
         "]; runtime ", fmt(elapsed, 3), " s");
  o.data = {{"s_star_at_1", s1}, {"omega_lo", lo}, {"omega_hi", hi}, {"seconds", elapsed}};
  return o;
}

// 3 ------------------------------------------------------------------------
Outcome fig2(const Context& ctx) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentSpec spec = make_spec(ExperimentId::fig2, json::object(), ctx);
  spec.seeds = {1};
  const RunOutput out = run_fig2(spec, ctx.jobs);
  const double elapsed = seconds_since(t0);
  const auto& p = out.summary.at("panels");
  const double a = p[0].at("pearson"), b = p[1].at("pearson"), c = p[2].at("pearson");
  o.pass = a > 0.8 && std::abs(b) < 0.5 && c < -0.8 && elapsed < 5.0;
  o.note("C(a) = ", fmt(a), ", C(b) = ", fmt(b), ", C(c) = ", fmt(c), "; runtime ", fmt(elapsed, 3), " s");

  // Phase map consistency (not a numbered criterion; reported alongside).
  const RunOutput map = run_phase_map(make_spec(ExperimentId::phase_map, json::object(), ctx), ctx.jobs);
  double worst = 0;
  for (const auto& row : map.summary.at("rows")) worst = std::max(worst, num(row.at("cells_off")));
  o.note("phase map: min-|C| cell within ", fmt(worst, 3), " grid cells of the analytic boundary on every s-row");
  o.data = {{"C", {a, b, c}}, {"seconds", elapsed}, {"phase_map_worst_cells_off", worst}};
  return o;
}

// 4 ------------------------------------------------------------------------
Outcome oracle_equivalence(const Context&) {
  Outcome o;
  std::mt19937_64 rng(2002);
  double freq_err = 0, rate_err = 0;
  int checked = 0;
  while (checked < 50) {
    ProbeSetup s = random_setup(rng, 0.3, 1.0);
    s.lambda = std::max(s.lambda, 0.05);
    const auto params = asymptotic_params(s, plus_plus_state());
    const auto sp = oracle::spectrum(s.omega_p, s.lambda);
    const double g[2] = {oracle::gamma1(s.omega_p, s.lambda, s.gamma0, s.s, s.rate_prefactor),
                         oracle::gamma2(s.omega_p, s.lambda, s.gamma0, s.s, s.rate_prefactor)};
    const double f[2] = {std::abs(sp.e1), std::abs(sp.e2)};
    for (int m = 0; m < 2; ++m) {
      freq_err = std::max(freq_err, std::abs(std::abs(params.modes[m].eigenvalue.imag()) - f[m]));
      rate_err = std::max(rate_err, std::abs(-params.modes[m].eigenvalue.real() - g[m] / 2) / (g[m] / 2));
    }
    ++checked;
  }
  o.pass = freq_err <= 1e-9 && rate_err <= 1e-8;
  o.note("50 setups with omega_p <= 1: max frequency error ", fmt(freq_err, 3), ", max relative rate error ",
         fmt(rate_err, 3));

  // Above resonance the arcsin form of theta- folds back below pi/4; the
  // generator follows the atan2 branch.
  double phys = 0, folded = 0;
  for (int i = 0; i < 20; ++i) {
    ProbeSetup s = random_setup(rng, 1.05, 2.0);
    s.lambda = std::max(s.lambda, 0.05);
    const auto params = asymptotic_params(s, plus_plus_state());
    const ClosedForm cf = closed_form(s.omega_p, s.lambda);
    const double g1_phys = oracle::gamma1(s.omega_p, s.lambda, s.gamma0, s.s, s.rate_prefactor);
    const double c = std::cos(cf.theta_plus + cf.theta_minus);
    const double g1_folded = s.rate_prefactor * c * c * spectral_density(std::abs(cf.e1), s.gamma0, s.s);
    const double r = -2 * params.modes[0].eigenvalue.real();
    phys = std::max(phys, std::abs(r - g1_phys) / g1_phys);
    folded = std::max(folded, std::abs(r - g1_folded) / g1_folded);
  }
  o.note("omega_p > 1 (20 setups): generator vs atan2-branch rate ", fmt(phys, 3), ", vs arcsin-branch rate ",
         fmt(folded, 3), " (relative)");
  o.data = {{"frequency", freq_err}, {"rate", rate_err}, {"above_physical", phys}, {"above_arcsin", folded}};
  return o;
}

// 5 ------------------------------------------------------------------------
Outcome gradient(const Context&) {
  Outcome o;
  std::mt19937_64 rng(3003);
  std::normal_distribution<double> n;
  auto vec = [&](Eigen::Index k, double scale) {
    Eigen::VectorXd v(k);
    for (Eigen::Index i = 0; i < k; ++i) v(i) = scale * n(rng);
    return v;
  };
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const bool cls = i % 2 == 0;
    const std::size_t outputs = cls ? 3 : 1;
    MlpModel m = init_model(kSpectrumBins, 10, cls ? Head::classification : Head::regression, outputs,
                            static_cast<std::uint64_t>(i));
    m.b1 = vec(m.b1.size(), 0.5);
    m.b2 = vec(m.b2.size(), 0.5);
    const Eigen::VectorXd x = vec(kSpectrumBins, 1.0);
    Eigen::VectorXd t = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(outputs));
    t(cls ? i % 3 : 0) = cls ? 1.0 : std::abs(n(rng));
    worst = std::max(worst, gradient_check(m, x, t));
  }
  MlpModel m = init_model(kSpectrumBins, 10, Head::classification, 3, 99);
  const Eigen::VectorXd x = vec(kSpectrumBins, 1.0);
  Eigen::VectorXd t = Eigen::VectorXd::Zero(3);
  t(2) = 1.0;
  const double mutated = gradient_check(m, x, t, [](const MlpModel& mm, const Eigen::VectorXd& xi, const Eigen::VectorXd& ti) {
    Gradients g = loss_gradient(mm, xi, ti);
    g.w1 = -g.w1;
    return g;
  });
  o.pass = worst < 1e-6 && mutated > 1e-3;
  o.note("100 random cases: max deviation ", fmt(worst, 3), "; sign-flipped W1 gradient: ", fmt(mutated, 3));
  o.data = {{"max_deviation", worst}, {"mutation", mutated}};
  return o;
}

// 6 ------------------------------------------------------------------------
Outcome fig3(const Context& ctx) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const RunOutput out = run_fig3_classification(make_spec(ExperimentId::fig3_classification, json::object(), ctx), ctx.jobs);
  const double elapsed = seconds_since(t0);
  const auto tr = out.summary.at("transition_interval").get<std::size_t>();
  bool structure = true;
  std::vector<double> aggregated;
  for (const auto& g : out.summary.at("by_gamma0")) {
    const double gamma0 = g.at("gamma0");
    std::vector<double> med;
    for (const auto& v : g.at("median_P")) med.push_back(num(v));
    aggregated.push_back(num(g.at("aggregated_P")));
    std::string row;
    for (double v : med) row += (row.empty() ? "" : " ") + fmt(v, 3);
    o.note("gamma0 = ", gamma0, ": median P per interval [", row, "], aggregated ", fmt(aggregated.back(), 3));
    if (gamma0 >= 0.01 - 1e-12) structure = structure && med[tr] < med.front() && med[tr] < med.back();
  }
  bool monotone = aggregated.size() >= 2 && aggregated.front() > aggregated.back();
  for (std::size_t i = 1; i < aggregated.size(); ++i) monotone = monotone && aggregated[i] <= aggregated[i - 1];
  o.pass = structure && monotone && out.sweep.failures.empty() && elapsed < 900.0;
  o.note("transition interval ", tr, " (0-based); transition below both ends for gamma0 in {0.01, 0.02}: ",
         structure ? "yes" : "no", "; aggregated P decreasing: ", monotone ? "yes" : "no", "; runtime ",
         fmt(elapsed, 4), " s");
  o.data = out.summary;
  o.data["seconds"] = elapsed;
  return o;
}

// 7 ------------------------------------------------------------------------
Outcome gamma0(const Context& ctx) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const RunOutput out =
      run_gamma0_classification(make_spec(ExperimentId::gamma0_classification, json::object(), ctx), ctx.jobs);
  const double elapsed = seconds_since(t0);
  const double p = num(out.summary.at("median_P"));
  o.pass = p < 0.05 && elapsed < 300.0;
  o.note("median P over 5 seeds ", fmt(p, 3), " (in-phase region ", fmt(num(out.summary.at("median_P_in_phase")), 3),
         ", anti-phase region ", fmt(num(out.summary.at("median_P_anti_phase")), 3), "); runtime ", fmt(elapsed, 4),
         " s");
  o.data = out.summary;
  o.data["seconds"] = elapsed;
  return o;
}

// 8 ------------------------------------------------------------------------
Outcome regression(const Context& ctx) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const RunOutput f4 = run_fig4_regression(make_spec(ExperimentId::fig4_regression, json::object(), ctx), ctx.jobs);
  const auto tr = f4.summary.at("transition_interval").get<std::size_t>();
  const auto argmin = f4.summary.at("argmin_interval").get<std::size_t>();
  std::string row;
  for (const auto& v : f4.summary.at("median_NME")) row += (row.empty() ? "" : " ") + fmt(num(v), 3);
  const bool minimal = argmin == tr;
  o.note("fig4: median NME per interval [", row, "]; minimum in interval ", argmin, ", transition interval ", tr, " (0-based)");

  // 5000 examples with 5-fold CV: 4000 training examples per fold.
  const RunOutput f5 =
      run_fig5_regression_vs_s(make_spec(ExperimentId::fig5_regression_vs_s, json{{"examples", 5000}}, ctx), ctx.jobs);
  const double elapsed = seconds_since(t0);
  const double all = num(f5.summary.at("median_NME"));
  const double all_err = num(f5.summary.at("median_NME_fold_std"));
  // Flat: every s-bin's NME lies within two error bars of the pooled NME.
  bool flat = true;
  row.clear();
  for (const auto& b : f5.summary.at("bins")) {
    const double v = num(b.at("NME"));
    const double err = std::max(num(b.at("NME_fold_std")), all_err);
    flat = flat && std::abs(v - all) <= 2 * err;
    row += (row.empty() ? "" : " ") + fmt(v, 3) + "+-" + fmt(num(b.at("NME_fold_std")), 2);
  }
  o.note("fig5 (4000 train per fold): pooled NME ", fmt(all, 3), " +- ", fmt(all_err, 2), "; per s-bin [", row, "]");
  o.pass = minimal && flat && all < 0.05 && elapsed < 1800.0;
  o.note("minimum at transition: ", minimal ? "yes" : "no", "; flat in s: ", flat ? "yes" : "no", "; mean < 0.05: ",
         all < 0.05 ? "yes" : "no", "; runtime ", fmt(elapsed, 4), " s");
  o.data = {{"fig4", f4.summary}, {"fig5", f5.summary}, {"seconds", elapsed}};
  return o;
}

// 9 ------------------------------------------------------------------------
Outcome noise(const Context& ctx) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const RunOutput main = run_fig6_noise(
      make_spec(ExperimentId::fig6_noise,
                json{{"classification", {{"train_sizes", {2000}}}}, {"regression", {{"train_sizes", {2000}}}}}, ctx),
      ctx.jobs);
  const auto levels = main.summary.at("noise_pct").get<std::vector<double>>();
  const auto at3 = static_cast<std::size_t>(std::find_if(levels.begin(), levels.end(),
                                                         [](double v) { return std::abs(v - 3.0) < 1e-9; }) -
                                            levels.begin());
  bool in_band = true;
  bool monotone = true;
  for (const auto& c : main.summary.at("curves")) {
    std::vector<double> v;
    for (const auto& x : c.at("median")) v.push_back(num(x));
    std::string row;
    for (double x : v) row += (row.empty() ? "" : " ") + fmt(x, 3);
    bool mono = true;
    for (std::size_t i = 1; i < v.size(); ++i) mono = mono && v[i] >= v[i - 1] - 0.02;
    monotone = monotone && mono;
    o.note(c.at("task").get<std::string>(), " N=", c.at("train_size").get<std::size_t>(), " ",
           c.at("metric").get<std::string>(), " vs noise [", row, "]", mono ? "" : " (not non-decreasing)");
    if (c.at("task") == "classification") {
      in_band = in_band && v.at(at3) >= 0.05 && v.at(at3) <= 0.20;
      o.note("classification N=", c.at("train_size").get<std::size_t>(), " at 3%: P = ", fmt(v.at(at3), 3));
    }
  }
  // Larger training set at the 3% point only.
  const RunOutput big = run_fig6_noise(
      make_spec(ExperimentId::fig6_noise,
                json{{"noise_pct", {3.0}},
                     {"classification", {{"train_sizes", {8000}}}},
                     {"regression", {{"enabled", false}}}},
                ctx),
      ctx.jobs);
  const double p8000 = num(big.summary.at("curves")[0].at("median")[0]);
  in_band = in_band && p8000 >= 0.05 && p8000 <= 0.20;
  const double elapsed = seconds_since(t0);
  o.note("classification N=8000 at 3%: P = ", fmt(p8000, 3));
  o.pass = in_band && monotone;
  o.note("P(3%) in [0.05, 0.20] for every N: ", in_band ? "yes" : "no", "; curves non-decreasing within 0.02: ",
         monotone ? "yes" : "no", "; runtime ", fmt(elapsed, 4), " s");
  o.data = {{"n2000", main.summary}, {"n8000_at_3pct", p8000}, {"seconds", elapsed}};
  return o;
}

// 10 -----------------------------------------------------------------------
std::vector<std::pair<fs::path, std::string>> csv_files(const fs::path& root) {
  std::vector<std::pair<fs::path, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".csv" &&
        e.path().string().find("/cache/") == std::string::npos)
      out.emplace_back(fs::relative(e.path(), root), read_text_file(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

Outcome determinism(const Context& ctx) {
  Outcome o;
  const json small_fig3{{"intervals", {{"count", 3}}}, {"omega_p_per_interval", 30}, {"gamma0_values", {0.01}}};
  const json small_fig6{{"omega_p", {{"min", 0.9}, {"max", 1.15}, {"count", 40}}},
                        {"noise_pct", {0.0, 2.0}},
                        {"classification", {{"train_sizes", {200}}}},
                        {"regression", {{"train_sizes", {200}}}}};
  bool identical = true;
  std::size_t compared = 0;
  std::vector<std::pair<fs::path, std::string>> first;
  for (int run = 0; run < 2; ++run) {
    Context c = ctx;
    c.out_dir = ctx.out_dir / "determinism" / (run ? "b" : "a");
    c.seeds = {1, 2};
    fs::remove_all(c.out_dir);
    // The second run uses a different worker count.
    const unsigned jobs = run ? std::max(2u, ctx.jobs) : 1u;
    run_fig2(make_spec(ExperimentId::fig2, json::object(), c), jobs);
    run_fig3_classification(make_spec(ExperimentId::fig3_classification, small_fig3, c), jobs);
    run_fig6_noise(make_spec(ExperimentId::fig6_noise, small_fig6, c), jobs);
    auto files = csv_files(c.out_dir);
    if (run == 0) {
      first = std::move(files);
    } else {
      identical = files == first;
      compared = files.size();
    }
  }
  o.note(compared, " CSV files from fig2, fig3 and fig6 reruns (1 vs ", std::max(2u, ctx.jobs),
         " workers): ", identical ? "bit-identical" : "DIFFER");

  // Dataset and model files.
  DatasetConfig dc;
  dc.omega_p_count = 30;
  dc.noise_pct = 2.0;
  LabeledDataset ds = generate(dc);
  ds.split = split(ds, 0.8, 3, LabelKey::s);
  const fs::path dpath = ctx.out_dir / "determinism" / "dataset.csv";
  save(ds, dpath);
  const LabeledDataset back = load(dpath);
  const bool dataset_ok = back == ds && to_csv(back) == to_csv(ds);

  TrainConfig tc;
  tc.hidden = 8;
  tc.max_epochs = 50;
  MlpModel model;
  fit_and_evaluate(ds, ds.split.train, ds.split.test, LabelKey::s, Head::classification, tc, &model);
  const fs::path mpath = ctx.out_dir / "determinism" / "model.json";
  save_model(model, mpath);
  const MlpModel mback = load_model(mpath);
  const auto x = model.feature_scaler->transform(feature_matrix(ds, ds.split.test)).values();
  const bool model_ok = mback == model && output_layer(mback, x) == output_layer(model, x);
  o.note("dataset round trip: ", dataset_ok ? "exact" : "MISMATCH", "; model round trip: ", model_ok ? "exact" : "MISMATCH");
  o.pass = identical && compared > 0 && dataset_ok && model_ok;
  o.data = {{"csv_files", compared}, {"identical", identical}, {"dataset", dataset_ok}, {"model", model_ok}};
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qsync acceptance checks"};
  Context ctx;
  std::string out = "acceptance_out";
  std::vector<int> only;
  ctx.jobs = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--out-dir", out, "Directory for experiment outputs");
  app.add_option("--jobs", ctx.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  ctx.out_dir = out;
  fs::create_directories(ctx.out_dir);

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria{
      {"physics invariants", physics_invariants},
      {"boundary identity", boundary_identity},
      {"three reference panels", fig2},
      {"oracle equivalence", oracle_equivalence},
      {"MLP gradient check", gradient},
      {"classification structure over intervals", fig3},
      {"gamma0 classification", gamma0},
      {"regression structure", regression},
      {"noise robustness", noise},
      {"determinism and persistence", determinism},
  };

  json report = json::object();
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome r;
    try {
      r = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      r.pass = false;
      r.note("exception: ", e.what());
    }
    failed += !r.pass;
    std::cout << "criterion " << id << " (" << criteria[i].first << "): " << (r.pass ? "PASS" : "FAIL") << "\n";
    for (const auto& d : r.details) std::cout << "    " << d << "\n";
    std::cout.flush();
    report[std::to_string(id)] = {{"name", criteria[i].first}, {"pass", r.pass}, {"details", r.details}, {"data", r.data}};
  }
  write_json_file(ctx.out_dir / "acceptance.json", report);
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << "\n";
  return failed ? 1 : 0;
}
