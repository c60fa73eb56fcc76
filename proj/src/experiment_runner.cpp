#include "qsync/experiment_runner.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "qsync/errors.hpp"
#include "qsync/parallel.hpp"
#include "qsync/quantum_core.hpp"
#include "qsync/sync_analysis.hpp"

namespace qsync {

namespace {

constexpr std::pair<ExperimentId, const char*> kExperimentNames[] = {
    {ExperimentId::fig2, "fig2"},
    {ExperimentId::phase_map, "phase_map"},
    {ExperimentId::fig3_classification, "fig3_classification"},
    {ExperimentId::gamma0_classification, "gamma0_classification"},
    {ExperimentId::fig4_regression, "fig4_regression"},
    {ExperimentId::fig5_regression_vs_s, "fig5_regression_vs_s"},
    {ExperimentId::fig6_noise, "fig6_noise"},
};

json train_defaults(std::size_t hidden) {
  TrainConfig tc;
  tc.hidden = hidden;
  json j = tc.to_json();
  j.erase("seed");
  return j;
}

json physics_defaults() {
  return json{{"lambda", 0.2}, {"gamma0", 0.01}, {"rate_prefactor", kGoldenRulePrefactor}};
}

json s_grid_default() { return json{{"min", 0.5}, {"step", 0.02}, {"count", 76}}; }

void merge_checked(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ValidationError("parameter overrides at '" + path + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string where = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ValidationError("unknown parameter '" + where + "'");
    json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object())
      merge_checked(slot, it.value(), where);
    else
      slot = it.value();
  }
}

template <class T>
T get(const json& p, const char* key) {
  try {
    return p.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("parameter '") + key + "': " + e.what());
  }
}

// Explicit list, or {"min", "step", "count"} / {"min", "max", "count"}.
std::vector<double> value_list(const json& v, const char* key) {
  try {
    if (v.is_array()) return v.get<std::vector<double>>();
    const auto count = v.at("count").get<std::size_t>();
    const double lo = v.at("min").get<double>();
    if (count < 1) throw ValidationError(std::string("parameter '") + key + "' needs count >= 1");
    std::vector<double> out(count);
    if (v.contains("step")) {
      const double step = v.at("step").get<double>();
      for (std::size_t i = 0; i < count; ++i) out[i] = lo + step * static_cast<double>(i);
    } else {
      const double hi = v.at("max").get<double>();
      for (std::size_t i = 0; i < count; ++i)
        out[i] = count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
      out.back() = hi;
    }
    return out;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("parameter '") + key + "': " + e.what());
  }
}

TrainConfig train_config(const json& p, std::uint64_t seed) {
  json t = p.at("train");
  t["seed"] = seed;
  return TrainConfig::from_json(t);
}

DatasetConfig base_dataset(const json& p) {
  DatasetConfig c;
  c.lambda = get<double>(p, "lambda");
  c.rate_prefactor = get<double>(p, "rate_prefactor");
  if (p.contains("gamma0")) c.gamma0_values = {get<double>(p, "gamma0")};
  return c;
}

void set_omega_range(DatasetConfig& c, const json& range) {
  c.omega_p_min = get<double>(range, "min");
  c.omega_p_max = get<double>(range, "max");
  c.omega_p_count = get<std::size_t>(range, "count");
}

// Computes each key once per process even when several jobs ask at the same time.
template <class T>
class Memo {
 public:
  std::shared_ptr<const T> get(const std::string& key, const std::function<T()>& make) {
    std::shared_future<std::shared_ptr<const T>> future;
    std::promise<std::shared_ptr<const T>> promise;
    bool owner = false;
    {
      std::lock_guard lock(mu_);
      auto it = entries_.find(key);
      if (it == entries_.end()) {
        future = promise.get_future().share();
        entries_.emplace(key, future);
        owner = true;
      } else {
        future = it->second;
      }
    }
    if (owner) {
      try {
        promise.set_value(std::make_shared<const T>(make()));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return future.get();
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::shared_future<std::shared_ptr<const T>>> entries_;
};

std::string config_key(const DatasetConfig& c) { return json_hash(c.to_json()); }

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> rows) {
  LabeledDataset out;
  out.manifest = ds.manifest;
  out.examples.reserve(rows.size());
  for (std::size_t r : rows) out.examples.push_back(ds.examples[r]);
  return out;
}

// --- CSV emission -----------------------------------------------------------

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? " " : "") + std::to_string(seeds[i]);
  return out;
}

class CsvWriter {
 public:
  CsvWriter(const ExperimentSpec& spec, std::vector<std::string> columns) : body_(provenance_header(spec)) {
    for (std::size_t i = 0; i < columns.size(); ++i) body_ += (i ? "," : "") + columns[i];
    body_ += '\n';
  }

  CsvWriter& field(double v) { return raw(std::isfinite(v) ? format_double(v) : std::string()); }
  CsvWriter& field(std::size_t v) { return raw(std::to_string(v)); }
  CsvWriter& field(std::uint64_t v, int) { return raw(std::to_string(v)); }
  CsvWriter& field(const std::string& v) { return raw(v); }
  CsvWriter& field(const char* v) { return raw(v); }
  void end_row() {
    body_ += '\n';
    first_ = true;
  }

  std::filesystem::path write(const std::filesystem::path& path) const {
    write_text_file(path, body_);
    return path;
  }

 private:
  CsvWriter& raw(const std::string& v) {
    if (!first_) body_ += ',';
    body_ += v;
    first_ = false;
    return *this;
  }

  std::string body_;
  bool first_ = true;
};

std::vector<std::string> cell_columns(const SweepResult& r) {
  const CellKey* cell = nullptr;
  if (!r.rows.empty()) cell = &r.rows.front().cell;
  else if (!r.failures.empty()) cell = &r.failures.front().cell;
  std::vector<std::string> cols;
  if (cell)
    for (const auto& [name, value] : *cell) cols.push_back(name);
  return cols;
}

void write_sweep_files(const ExperimentSpec& spec, const SweepResult& r, const std::filesystem::path& dir,
                       std::vector<std::filesystem::path>& files) {
  const std::string id = to_string(spec.id);
  const auto cols = cell_columns(r);

  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> all = cols;
    all.insert(all.end(), extra.begin(), extra.end());
    return all;
  };

  CsvWriter rows(spec, with({"seed", "metric", "value"}));
  for (const auto& row : r.rows) {
    for (const auto& kv : row.cell) rows.field(kv.second);
    rows.field(row.seed, 0).field(row.metric).field(row.value);
    rows.end_row();
  }
  files.push_back(rows.write(dir / (id + "_rows.csv")));

  CsvWriter agg(spec, with({"metric", "count", "median", "mean", "std", "min", "max"}));
  for (const auto& a : r.aggregate()) {
    for (const auto& kv : a.cell) agg.field(kv.second);
    agg.field(a.metric).field(a.count).field(a.median).field(a.mean).field(a.stddev).field(a.min).field(a.max);
    agg.end_row();
  }
  files.push_back(agg.write(dir / (id + "_aggregate.csv")));

  if (!r.failures.empty()) {
    CsvWriter fail(spec, with({"seed", "message"}));
    for (const auto& f : r.failures) {
      for (const auto& kv : f.cell) fail.field(kv.second);
      std::string msg = f.message;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      fail.field(f.seed, 0).field(msg);
      fail.end_row();
    }
    files.push_back(fail.write(dir / (id + "_failures.csv")));
  }
}

std::filesystem::path experiment_dir(const ExperimentSpec& spec) { return spec.out_dir / to_string(spec.id); }

std::filesystem::path cache_dir(const ExperimentSpec& spec) {
  return experiment_dir(spec) / "cache" / spec.hash();
}

RunOutput start(const ExperimentSpec& spec) {
  RunOutput out;
  out.id = spec.id;
  out.spec_hash = spec.hash();
  out.summary["experiment"] = to_string(spec.id);
  out.summary["spec_hash"] = out.spec_hash;
  out.summary["seeds"] = spec.seeds;
  return out;
}

void finish(const ExperimentSpec& spec, RunOutput& out) {
  write_sweep_files(spec, out.sweep, experiment_dir(spec), out.files);
  out.summary["failures"] = out.sweep.failures.size();
  const auto path = experiment_dir(spec) / (std::string(to_string(spec.id)) + "_summary.json");
  write_json_file(path, out.summary);
  out.files.push_back(path);
}

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double value_or_nan(const std::optional<double>& v) { return v ? *v : std::numeric_limits<double>::quiet_NaN(); }

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

// --- spec -------------------------------------------------------------------

const char* to_string(ExperimentId id) {
  for (const auto& [value, name] : kExperimentNames)
    if (value == id) return name;
  return "unknown";
}

ExperimentId experiment_from_string(const std::string& name) {
  for (const auto& [value, full] : kExperimentNames)
    if (name == full) return value;
  if (name == "fig3") return ExperimentId::fig3_classification;
  if (name == "fig4") return ExperimentId::fig4_regression;
  if (name == "fig5") return ExperimentId::fig5_regression_vs_s;
  if (name == "fig6") return ExperimentId::fig6_noise;
  if (name == "gamma0") return ExperimentId::gamma0_classification;
  throw ValidationError("unknown experiment '" + name + "'");
}

json default_parameters(ExperimentId id) {
  json p = physics_defaults();
  const json intervals{{"min", 0.8}, {"max", 1.25}, {"count", 7}, {"edges", nullptr}};
  switch (id) {
    case ExperimentId::fig2:
      p["panels"] = json::array({json{{"omega_p", 1.25}, {"s", 0.5}}, json{{"omega_p", 1.0}, {"s", 1.0}},
                                 json{{"omega_p", 0.75}, {"s", 2.0}}});
      p["grid"] = {{"start", 0.0}, {"stop", 100.0}, {"points", 1001}};
      p["pearson_time"] = 100.0;
      p["window"] = 50.0;
      p["thresholds"] = {{"sync", 0.9}, {"null", 0.3}};
      break;
    case ExperimentId::phase_map:
      p["omega_p"] = {{"min", 0.75}, {"max", 1.3}, {"count", 12}};
      p["s"] = {{"min", 0.5}, {"max", 2.0}, {"count", 31}};
      p["grid"] = {{"start", 0.0}, {"stop", 80.0}, {"points", 801}};
      p["pearson_time"] = 80.0;
      p["window"] = 20.0;
      p["boundary_points"] = 111;
      break;
    case ExperimentId::fig3_classification:
      p.erase("gamma0");
      p["intervals"] = intervals;
      p["omega_p_per_interval"] = 300;
      p["s_values"] = {0.5, 1.0, 2.0};
      p["gamma0_values"] = {0.005, 0.01, 0.02};
      p["train_fraction"] = 0.8;
      p["train"] = train_defaults(50);
      break;
    case ExperimentId::gamma0_classification:
      p.erase("gamma0");
      p["omega_p"] = {{"min", 0.8}, {"max", 1.25}, {"count", 100}};
      p["s_values"] = {0.5, 1.0, 2.0};
      p["gamma0_values"] = {0.005, 0.01, 0.02};
      p["train_fraction"] = 0.8;
      p["train"] = train_defaults(50);
      break;
    case ExperimentId::fig4_regression:
      p["intervals"] = intervals;
      p["omega_p_per_interval"] = 30;
      p["s_values"] = s_grid_default();
      p["folds"] = 5;
      p["train"] = train_defaults(20);
      break;
    case ExperimentId::fig5_regression_vs_s:
      p["omega_p"] = {{"min", 0.9}, {"max", 1.15}, {"count", 501}};
      p["s_values"] = s_grid_default();
      p["examples"] = 5000;
      p["folds"] = 5;
      p["s_bin_width"] = 0.1;
      p["train"] = train_defaults(50);
      break;
    case ExperimentId::fig6_noise:
      p["omega_p"] = {{"min", 0.9}, {"max", 1.15}, {"count", 501}};
      p["noise_pct"] = {{"min", 0.0}, {"step", 0.5}, {"count", 11}};
      p["noise_reference"] = "peak_to_peak";
      p["test_fraction"] = 0.2;
      p["classification"] = {{"enabled", true}, {"s_values", {0.5, 1.0, 2.0}}, {"train_sizes", {2000, 8000}},
                             {"train", train_defaults(50)}};
      p["regression"] = {{"enabled", true}, {"s_values", s_grid_default()}, {"train_sizes", {2000, 8000}},
                         {"train", train_defaults(50)}};
      break;
  }
  return p;
}

json ExperimentSpec::parameters() const {
  json p = default_parameters(id);
  merge_checked(p, overrides, "");
  return p;
}

json ExperimentSpec::to_json() const {
  return json{{"experiment", to_string(id)}, {"parameters", overrides}, {"seeds", seeds}, {"out_dir", out_dir.string()}};
}

ExperimentSpec ExperimentSpec::from_json(const json& j) {
  ExperimentSpec spec;
  try {
    if (!j.is_object()) throw ValidationError("experiment spec must be an object");
    spec.id = experiment_from_string(j.at("experiment").get<std::string>());
    spec.overrides = j.value("parameters", json::object());
    spec.seeds = j.value("seeds", spec.seeds);
    spec.out_dir = j.value("out_dir", spec.out_dir.string());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad experiment spec: ") + e.what());
  }
  if (spec.seeds.empty()) throw ValidationError("seeds list must be non-empty");
  spec.parameters();
  return spec;
}

std::string ExperimentSpec::hash() const {
  return json_hash(json{{"experiment", to_string(id)}, {"parameters", parameters()}, {"seeds", seeds}});
}

std::string provenance_header(const ExperimentSpec& spec) {
  std::ostringstream os;
  os << "# qsync " << version() << "\n"
     << "# experiment: " << to_string(spec.id) << "\n"
     << "# spec_hash: " << spec.hash() << "\n"
     << "# seeds: " << join_seeds(spec.seeds) << "\n";
  return os.str();
}

// --- sweep engine -----------------------------------------------------------

std::string cell_label(const CellKey& cell) {
  std::string out;
  for (std::size_t i = 0; i < cell.size(); ++i)
    out += (i ? ";" : "") + cell[i].first + "=" + format_double(cell[i].second);
  return out;
}

std::vector<SweepAggregate> SweepResult::aggregate() const {
  std::vector<SweepAggregate> out;
  std::map<std::pair<std::string, std::string>, std::size_t> slot;
  std::vector<std::vector<double>> values;
  for (const auto& row : rows) {
    const auto key = std::make_pair(cell_label(row.cell), row.metric);
    auto it = slot.find(key);
    if (it == slot.end()) {
      it = slot.emplace(key, out.size()).first;
      out.push_back({row.cell, row.metric});
      values.emplace_back();
    }
    values[it->second].push_back(row.value);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& v = values[i];
    auto& a = out[i];
    a.count = v.size();
    a.median = median_of(v);
    a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - a.mean) * (x - a.mean);
    a.stddev = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    a.min = *std::min_element(v.begin(), v.end());
    a.max = *std::max_element(v.begin(), v.end());
  }
  return out;
}

std::optional<double> SweepResult::median(const CellKey& cell, const std::string& metric) const {
  std::vector<double> v;
  for (const auto& row : rows)
    if (row.metric == metric && row.cell == cell) v.push_back(row.value);
  if (v.empty()) return std::nullopt;
  return median_of(std::move(v));
}

SweepResult run_sweep(const std::vector<CellKey>& cells, const std::vector<std::uint64_t>& seeds, const CellJob& job,
                      const std::optional<std::filesystem::path>& cache, unsigned jobs) {
  struct Outcome {
    Metrics metrics;
    std::optional<std::string> failure;
  };
  const std::size_t n = cells.size() * seeds.size();
  std::vector<Outcome> outcomes(n);

  parallel_for(n, jobs, [&](std::size_t i) {
    const CellKey& cell = cells[i / seeds.size()];
    const std::uint64_t seed = seeds[i % seeds.size()];
    std::filesystem::path file;
    if (cache) {
      file = *cache / (fnv1a_hex(cell_label(cell) + "|" + std::to_string(seed)) + ".json");
      if (std::filesystem::exists(file)) {
        const json j = read_json_file(file);
        if (j.contains("failure")) {
          outcomes[i].failure = j.at("failure").get<std::string>();
        } else {
          for (const auto& m : j.at("metrics"))
            outcomes[i].metrics.emplace_back(
                m.at(0).get<std::string>(),
                m.at(1).is_null() ? std::numeric_limits<double>::quiet_NaN() : m.at(1).get<double>());
        }
        return;
      }
    }
    try {
      outcomes[i].metrics = job(cell, seed);
    } catch (const ValidationError& e) {
      outcomes[i].failure = e.what();
    } catch (const NumericalError& e) {
      outcomes[i].failure = e.what();
    }
    if (cache) {
      json j{{"cell", cell_label(cell)}, {"seed", seed}};
      if (outcomes[i].failure) {
        j["failure"] = *outcomes[i].failure;
      } else {
        json metrics = json::array();
        for (const auto& [name, value] : outcomes[i].metrics) metrics.push_back({name, nan_to_null(value)});
        j["metrics"] = metrics;
      }
      auto tmp = file;
      tmp += ".tmp";
      write_text_file(tmp, j.dump());
      std::filesystem::rename(tmp, file);
    }
  });

  SweepResult result;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      Outcome& o = outcomes[c * seeds.size() + s];
      if (o.failure) {
        result.failures.push_back({cells[c], seeds[s], *o.failure});
        continue;
      }
      // Cells keep declaration order; within a cell, seed then metric name.
      std::sort(o.metrics.begin(), o.metrics.end());
      for (auto& [name, value] : o.metrics) result.rows.push_back({cells[c], seeds[s], name, value});
    }
  }
  return result;
}

std::vector<double> interval_edges(const json& intervals) {
  if (intervals.contains("edges") && !intervals.at("edges").is_null()) {
    auto edges = intervals.at("edges").get<std::vector<double>>();
    if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()))
      throw ValidationError("interval edges must be an increasing list of at least two values");
    return edges;
  }
  const double lo = get<double>(intervals, "min");
  const double hi = get<double>(intervals, "max");
  const auto count = get<std::size_t>(intervals, "count");
  if (count < 1 || !(hi > lo)) throw ValidationError("intervals need count >= 1 and max > min");
  std::vector<double> edges(count + 1);
  for (std::size_t i = 0; i <= count; ++i) edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count);
  edges.back() = hi;
  return edges;
}

std::size_t transition_interval(const std::vector<double>& edges, double lambda, double s_lo, double s_hi) {
  const double a = sync_boundary_omega_p(s_lo, lambda);
  const double b = sync_boundary_omega_p(s_hi, lambda);
  const double band_lo = std::min(a, b);
  const double band_hi = std::max(a, b);
  std::size_t best = 0;
  double best_overlap = -1.0;
  for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
    const double overlap = std::min(edges[k + 1], band_hi) - std::max(edges[k], band_lo);
    if (overlap > best_overlap) {
      best_overlap = overlap;
      best = k;
    }
  }
  return best;
}

// --- experiments ------------------------------------------------------------

RunOutput run_fig2(const ExperimentSpec& spec, unsigned jobs) {
  const json p = spec.parameters();
  RunOutput out = start(spec);
  const TimeGrid grid{get<double>(p["grid"], "start"), get<double>(p["grid"], "stop"),
                      get<std::size_t>(p["grid"], "points")};
  const double t_eval = get<double>(p, "pearson_time");
  const double window = get<double>(p, "window");
  const SyncThresholds thresholds{get<double>(p["thresholds"], "sync"), get<double>(p["thresholds"], "null")};
  const auto& panels = p.at("panels");

  struct Panel {
    ProbeSetup setup;
    TrajectoryPair traj;
    PearsonSeries series;
    double c = 0.0;
    SyncVerdict verdict;
    std::string predicted;
  };
  std::vector<Panel> result(panels.size());
  parallel_for(panels.size(), jobs, [&](std::size_t i) {
    Panel& r = result[i];
    r.setup = ProbeSetup{get<double>(panels[i], "omega_p"), get<double>(p, "lambda"), get<double>(p, "gamma0"),
                         get<double>(panels[i], "s"), get<double>(p, "rate_prefactor")};
    const Liouvillian L = build_liouvillian(r.setup);
    r.traj = propagate(L, plus_plus_state(), grid);
    r.series = pearson_series(r.traj.system, r.traj.probe, window);
    r.c = pearson_windowed(r.traj.system, r.traj.probe, t_eval, window);
    r.verdict = classify_sync(r.c, thresholds);
    try {
      r.predicted = dominant_mode(r.setup, plus_plus_state()).in_phase() ? "in_phase" : "anti_phase";
    } catch (const NoDominantModeError&) {
      r.predicted = "none";
    }
  });

  const auto dir = experiment_dir(spec);
  CsvWriter traj(spec, {"panel", "omega_p", "s", "t", "sigma_q_x", "sigma_p_x"});
  CsvWriter pearson(spec, {"panel", "t", "C"});
  CsvWriter summary(spec, {"panel", "omega_p", "s", "t", "window", "C", "verdict", "predicted_phase"});
  out.summary["panels"] = json::array();
  for (std::size_t i = 0; i < result.size(); ++i) {
    const Panel& r = result[i];
    for (std::size_t k = 0; k < r.traj.system.times.size(); ++k) {
      traj.field(i).field(r.setup.omega_p).field(r.setup.s).field(r.traj.system.times[k]);
      traj.field(r.traj.system.values[k]).field(r.traj.probe.values[k]);
      traj.end_row();
    }
    for (std::size_t k = 0; k < r.series.times.size(); ++k) {
      pearson.field(i).field(r.series.times[k]).field(r.series.values[k]);
      pearson.end_row();
    }
    summary.field(i).field(r.setup.omega_p).field(r.setup.s).field(t_eval).field(window).field(r.c);
    summary.field(to_string(r.verdict.phase)).field(r.predicted);
    summary.end_row();
    const CellKey cell{{"panel", static_cast<double>(i)}, {"omega_p", r.setup.omega_p}, {"s", r.setup.s}};
    out.sweep.rows.push_back({cell, 0, "pearson", r.c});
    out.summary["panels"].push_back({{"omega_p", r.setup.omega_p},
                                     {"s", r.setup.s},
                                     {"pearson", r.c},
                                     {"verdict", to_string(r.verdict.phase)},
                                     {"predicted_phase", r.predicted}});
  }
  out.files.push_back(traj.write(dir / "fig2_trajectories.csv"));
  out.files.push_back(pearson.write(dir / "fig2_pearson.csv"));
  out.files.push_back(summary.write(dir / "fig2_verdicts.csv"));
  finish(spec, out);
  return out;
}

RunOutput run_phase_map(const ExperimentSpec& spec, unsigned jobs) {
  const json p = spec.parameters();
  RunOutput out = start(spec);
  const auto omegas = value_list(p.at("omega_p"), "omega_p");
  const auto svals = value_list(p.at("s"), "s");
  const double lambda = get<double>(p, "lambda");
  const TimeGrid grid{get<double>(p["grid"], "start"), get<double>(p["grid"], "stop"),
                      get<std::size_t>(p["grid"], "points")};
  const double t_eval = get<double>(p, "pearson_time");
  const double window = get<double>(p, "window");

  std::vector<CellKey> cells;
  for (double s : svals)
    for (double w : omegas) cells.push_back({{"s", s}, {"omega_p", w}});
  const CellJob job = [&](const CellKey& cell, std::uint64_t) -> Metrics {
    const ProbeSetup setup{cell[1].second, lambda, get<double>(p, "gamma0"), cell[0].second,
                           get<double>(p, "rate_prefactor")};
    const TrajectoryPair tr = propagate(build_liouvillian(setup), plus_plus_state(), grid);
    const double c = pearson_windowed(tr.system, tr.probe, t_eval, window);
    return {{"C", c}, {"abs_C", std::abs(c)}};
  };
  out.sweep = run_sweep(cells, {0}, job, cache_dir(spec), jobs);

  const auto dir = experiment_dir(spec);
  CsvWriter map(spec, {"omega_p", "s", "C", "abs_C", "flag", "s_boundary"});
  for (const auto& cell : cells) {
    const double c = value_or_nan(out.sweep.median(cell, "C"));
    map.field(cell[1].second).field(cell[0].second).field(c).field(std::abs(c));
    map.field(std::isfinite(c) ? "" : "undefined").field(sync_boundary_s(cell[1].second, lambda));
    map.end_row();
  }
  out.files.push_back(map.write(dir / "phase_map.csv"));

  CsvWriter curve(spec, {"omega_p", "s_boundary"});
  const auto np = get<std::size_t>(p, "boundary_points");
  for (std::size_t i = 0; i < np; ++i) {
    const double w = omegas.front() + (omegas.back() - omegas.front()) * static_cast<double>(i) /
                                          static_cast<double>(std::max<std::size_t>(np - 1, 1));
    curve.field(w).field(sync_boundary_s(w, lambda));
    curve.end_row();
  }
  out.files.push_back(curve.write(dir / "phase_map_boundary.csv"));

  // Per s-row: where |C| is smallest versus where the analytic boundary sits.
  const double cell_width = omegas.size() > 1 ? omegas[1] - omegas[0] : 0.0;
  out.summary["rows"] = json::array();
  for (double s : svals) {
    double best_w = std::numeric_limits<double>::quiet_NaN();
    double best_c = std::numeric_limits<double>::infinity();
    for (double w : omegas) {
      const auto c = out.sweep.median({{"s", s}, {"omega_p", w}}, "abs_C");
      if (c && *c < best_c) {
        best_c = *c;
        best_w = w;
      }
    }
    double boundary = std::numeric_limits<double>::quiet_NaN();
    try {
      boundary = sync_boundary_omega_p(s, lambda, omegas.front(), omegas.back());
    } catch (const Error&) {
    }
    out.summary["rows"].push_back({{"s", s},
                                   {"omega_p_min_abs_C", nan_to_null(best_w)},
                                   {"min_abs_C", nan_to_null(best_c)},
                                   {"omega_p_boundary", nan_to_null(boundary)},
                                   {"cells_off", nan_to_null(cell_width > 0 ? std::abs(best_w - boundary) / cell_width
                                                                             : 0.0)}});
  }
  out.summary["cell_width"] = cell_width;
  finish(spec, out);
  return out;
}

RunOutput run_fig3_classification(const ExperimentSpec& spec, unsigned jobs) {
  const json p = spec.parameters();
  RunOutput out = start(spec);
  const auto edges = interval_edges(p.at("intervals"));
  const auto gammas = get<std::vector<double>>(p, "gamma0_values");
  const auto svals = value_list(p.at("s_values"), "s_values");
  const double lambda = get<double>(p, "lambda");

  std::vector<CellKey> cells;
  for (double g : gammas)
    for (std::size_t k = 0; k + 1 < edges.size(); ++k)
      cells.push_back({{"gamma0", g},
                       {"interval", static_cast<double>(k)},
                       {"omega_p_lo", edges[k]},
                       {"omega_p_hi", edges[k + 1]}});

  Memo<LabeledDataset> datasets;
  const CellJob job = [&](const CellKey& cell, std::uint64_t seed) -> Metrics {
    DatasetConfig c = base_dataset(p);
    c.gamma0_values = {cell[0].second};
    c.s_values = svals;
    c.omega_p_min = cell[2].second;
    c.omega_p_max = cell[3].second;
    c.omega_p_count = get<std::size_t>(p, "omega_p_per_interval");
    const auto ds = datasets.get(config_key(c), [&] { return generate(c); });
    const Split sp = split(*ds, get<double>(p, "train_fraction"), seed, LabelKey::s);
    MlpModel model;
    const EvalReport r = fit_and_evaluate(*ds, sp.train, sp.test, LabelKey::s, Head::classification,
                                          train_config(p, seed), &model);
    return {{"P", r.failure_rate}, {"train_size", static_cast<double>(sp.train.size())},
            {"epochs", model.manifest.at("epochs_run").get<double>()}};
  };
  out.sweep = run_sweep(cells, spec.seeds, job, cache_dir(spec), jobs);

  const std::size_t transition = transition_interval(edges, lambda);
  out.summary["edges"] = edges;
  out.summary["transition_interval"] = transition;
  out.summary["by_gamma0"] = json::array();
  for (double g : gammas) {
    std::vector<double> medians;
    for (const auto& cell : cells)
      if (cell[0].second == g) medians.push_back(value_or_nan(out.sweep.median(cell, "P")));
    const double aggregated = std::accumulate(medians.begin(), medians.end(), 0.0) / static_cast<double>(medians.size());
    json med = json::array();
    for (double m : medians) med.push_back(nan_to_null(m));
    out.summary["by_gamma0"].push_back({{"gamma0", g}, {"median_P", med}, {"aggregated_P", nan_to_null(aggregated)}});
  }
  finish(spec, out);
  return out;
}

RunOutput run_gamma0_classification(const ExperimentSpec& spec, unsigned jobs) {
  const json p = spec.parameters();
  RunOutput out = start(spec);
  const auto gammas = get<std::vector<double>>(p, "gamma0_values");
  const auto svals = value_list(p.at("s_values"), "s_values");
  const double lambda = get<double>(p, "lambda");

  DatasetConfig c = base_dataset(p);
  c.gamma0_values = gammas;
  c.s_values = svals;
  set_omega_range(c, p.at("omega_p"));

  Memo<LabeledDataset> datasets;
  const CellKey cell{{"omega_p_count", static_cast<double>(c.omega_p_count)}};
  const CellJob job = [&](const CellKey&, std::uint64_t seed) -> Metrics {
    const auto ds = datasets.get(config_key(c), [&] { return generate(c); });
    const Split sp = split(*ds, get<double>(p, "train_fraction"), seed, LabelKey::gamma0);
    MlpModel model;
    const EvalReport r = fit_and_evaluate(*ds, sp.train, sp.test, LabelKey::gamma0, Head::classification,
                                          train_config(p, seed), &model);
    const auto predicted = predict_labels(model, model.feature_scaler->transform(feature_matrix(*ds, sp.test)).values());

    Metrics m{{"P", r.failure_rate}};
    std::map<std::string, std::pair<std::size_t, std::size_t>> strata;  // name -> (wrong, total)
    for (std::size_t i = 0; i < sp.test.size(); ++i) {
      const SpectrumLabel& label = ds->examples[sp.test[i]].label;
      const bool wrong = std::abs(predicted[i] - label.gamma0) > 1e-12;
      auto& by_s = strata["P_s=" + format_double(label.s)];
      by_s.first += wrong;
      ++by_s.second;
      std::string region = "P_boundary";
      try {
        region = dominant_mode(ProbeSetup{label.omega_p, lambda, label.gamma0, label.s, c.rate_prefactor},
                               plus_plus_state())
                         .in_phase()
                     ? "P_in_phase"
                     : "P_anti_phase";
      } catch (const NoDominantModeError&) {
      }
      auto& by_region = strata[region];
      by_region.first += wrong;
      ++by_region.second;
    }
    for (const auto& [name, counts] : strata)
      m.emplace_back(name, static_cast<double>(counts.first) / static_cast<double>(counts.second));
    for (std::size_t a = 0; a < r.confusion.size(); ++a)
      for (std::size_t b = 0; b < r.confusion[a].size(); ++b)
        m.emplace_back("confusion_" + std::to_string(a) + "_" + std::to_string(b),
                       static_cast<double>(r.confusion[a][b]));
    m.emplace_back("test_size", static_cast<double>(r.test_size));
    return m;
  };
  out.sweep = run_sweep({cell}, spec.seeds, job, cache_dir(spec), jobs);
  out.summary["classes"] = gammas;
  out.summary["median_P"] = nan_to_null(value_or_nan(out.sweep.median(cell, "P")));
  for (double s : svals) {
    const std::string key = "P_s=" + format_double(s);
    out.summary["median_" + key] = nan_to_null(value_or_nan(out.sweep.median(cell, key)));
  }
  for (const char* key : {"P_in_phase", "P_anti_phase"})
    out.summary[std::string("median_") + key] = nan_to_null(value_or_nan(out.sweep.median(cell, key)));
  finish(spec, out);
  return out;
}

RunOutput run_fig4_regression(const ExperimentSpec& spec, unsigned jobs) {
  const json p = spec.parameters();
  RunOutput out = start(spec);
  const auto edges = interval_edges(p.at("intervals"));
  const auto svals = value_list(p.at("s_values"), "s_values");
  const double lambda = get<double>(p, "lambda");
  const auto folds = get<std::size_t>(p, "folds");

  std::vector<CellKey> cells;
  for (std::size_t k = 0; k + 1 < edges.size(); ++k)
    cells.push_back({{"interval", static_cast<double>(k)}, {"omega_p_lo", edges[k]}, {"omega_p_hi", edges[k + 1]}});

  Memo<LabeledDataset> datasets;
  const CellJob job = [&](const CellKey& cell, std::uint64_t seed) -> Metrics {
    DatasetConfig c = base_dataset(p);
    c.s_values = svals;
    c.omega_p_min = cell[1].second;
    c.omega_p_max = cell[2].second;
    c.omega_p_count = get<std::size_t>(p, "omega_p_per_interval");
    const auto ds = datasets.get(config_key(c), [&] { return generate(c); });
    std::vector<std::size_t> all(ds->size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto cv = cross_validate(*ds, all, LabelKey::s, Head::regression, folds, train_config(p, seed), seed);
    Metrics m{{"NME", cv.mean}, {"NME_fold_std", cv.stddev}};
    for (std::size_t f = 0; f < cv.folds.size(); ++f) m.emplace_back("NME_fold_" + std::to_string(f), cv.folds[f].nme);
    return m;
  };
  out.sweep = run_sweep(cells, spec.seeds, job, cache_dir(spec), jobs);

  const std::size_t transition = transition_interval(edges, lambda);
  json nme = json::array();
  json spread = json::array();
  std::size_t argmin = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const double v = value_or_nan(out.sweep.median(cells[k], "NME"));
    nme.push_back(nan_to_null(v));
    spread.push_back(nan_to_null(value_or_nan(out.sweep.median(cells[k], "NME_fold_std"))));
    if (v < best) {
      best = v;
      argmin = k;
    }
  }
  out.summary["edges"] = edges;
  out.summary["transition_interval"] = transition;
  out.summary["median_NME"] = nme;
  out.summary["median_NME_fold_std"] = spread;
  out.summary["argmin_interval"] = argmin;
  finish(spec, out);
  return out;
}

RunOutput run_fig5_regression_vs_s(const ExperimentSpec& spec, unsigned jobs) {
  const json p = spec.parameters();
  RunOutput out = start(spec);
  const auto svals = value_list(p.at("s_values"), "s_values");
  const auto folds = get<std::size_t>(p, "folds");
  const auto examples = get<std::size_t>(p, "examples");
  const double width = get<double>(p, "s_bin_width");
  if (!(width > 0.0)) throw ValidationError("s_bin_width must be > 0");

  DatasetConfig c = base_dataset(p);
  c.s_values = svals;
  set_omega_range(c, p.at("omega_p"));

  const double s_lo = *std::min_element(svals.begin(), svals.end());
  const double s_hi = *std::max_element(svals.begin(), svals.end());
  const auto bins = static_cast<std::size_t>(std::max(1.0, std::ceil((s_hi - s_lo) / width - 1e-9)));
  auto bin_of = [&](double s) {
    return std::min(bins - 1, static_cast<std::size_t>(std::floor((s - s_lo) / width + 1e-9)));
  };

  // Per seed: fold-by-bin NME, shared by every bin cell of that seed.
  struct CvBins {
    std::vector<std::vector<double>> nme;  // [fold][bin], NaN if the bin is empty in that fold
    std::vector<double> overall;           // [fold]
  };
  Memo<LabeledDataset> datasets;
  Memo<CvBins> cv_runs;
  auto run_cv = [&](std::uint64_t seed) {
    const auto ds = datasets.get(config_key(c), [&] { return generate(c); });
    const auto rows = subsample(*ds, std::min(examples, ds->size()), seed, LabelKey::s);
    const auto splits = kfold(rows.size(), folds, seed);
    CvBins r;
    for (const auto& f : splits) {
      std::vector<std::size_t> train_rows;
      std::vector<std::size_t> test_rows;
      for (std::size_t i : f.train) train_rows.push_back(rows[i]);
      for (std::size_t i : f.test) test_rows.push_back(rows[i]);
      MlpModel model;
      const EvalReport rep =
          fit_and_evaluate(*ds, train_rows, test_rows, LabelKey::s, Head::regression, train_config(p, seed), &model);
      const auto pred = predict_values(model, model.feature_scaler->transform(feature_matrix(*ds, test_rows)).values());
      std::vector<double> sum(bins, 0.0);
      std::vector<std::size_t> count(bins, 0);
      for (std::size_t i = 0; i < test_rows.size(); ++i) {
        const double truth = ds->examples[test_rows[i]].label.s;
        const std::size_t b = bin_of(truth);
        sum[b] += std::abs(pred[i] - truth) / truth;
        ++count[b];
      }
      std::vector<double> per_bin(bins);
      for (std::size_t b = 0; b < bins; ++b)
        per_bin[b] = count[b] ? sum[b] / static_cast<double>(count[b]) : std::numeric_limits<double>::quiet_NaN();
      r.nme.push_back(std::move(per_bin));
      r.overall.push_back(rep.nme);
    }
    return r;
  };

  std::vector<CellKey> cells;
  for (std::size_t b = 0; b < bins; ++b)
    cells.push_back({{"bin", static_cast<double>(b)},
                     {"s_lo", s_lo + width * static_cast<double>(b)},
                     {"s_hi", std::min(s_hi, s_lo + width * static_cast<double>(b + 1))}});
  const CellKey all_cell{{"bin", -1.0}, {"s_lo", s_lo}, {"s_hi", s_hi}};
  cells.push_back(all_cell);

  auto mean_std = [](const std::vector<double>& v) {
    std::vector<double> f;
    for (double x : v)
      if (std::isfinite(x)) f.push_back(x);
    if (f.empty()) return std::make_pair(std::numeric_limits<double>::quiet_NaN(), 0.0);
    const double mean = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
    double ss = 0.0;
    for (double x : f) ss += (x - mean) * (x - mean);
    return std::make_pair(mean, f.size() > 1 ? std::sqrt(ss / static_cast<double>(f.size() - 1)) : 0.0);
  };

  const CellJob job = [&](const CellKey& cell, std::uint64_t seed) -> Metrics {
    const auto cv = cv_runs.get(std::to_string(seed), [&] { return run_cv(seed); });
    std::vector<double> v;
    if (cell[0].second < 0) {
      v = cv->overall;
    } else {
      for (const auto& fold : cv->nme) v.push_back(fold[static_cast<std::size_t>(cell[0].second)]);
    }
    const auto [mean, sd] = mean_std(v);
    return {{"NME", mean}, {"NME_fold_std", sd}};
  };
  out.sweep = run_sweep(cells, spec.seeds, job, cache_dir(spec), jobs);

  json per_bin = json::array();
  for (std::size_t b = 0; b < bins; ++b)
    per_bin.push_back({{"s_lo", cells[b][1].second},
                       {"s_hi", cells[b][2].second},
                       {"NME", nan_to_null(value_or_nan(out.sweep.median(cells[b], "NME")))},
                       {"NME_fold_std", nan_to_null(value_or_nan(out.sweep.median(cells[b], "NME_fold_std")))}});
  out.summary["bins"] = per_bin;
  out.summary["median_NME"] = nan_to_null(value_or_nan(out.sweep.median(all_cell, "NME")));
  out.summary["median_NME_fold_std"] = nan_to_null(value_or_nan(out.sweep.median(all_cell, "NME_fold_std")));
  finish(spec, out);
  return out;
}

RunOutput run_fig6_noise(const ExperimentSpec& spec, unsigned jobs) {
  const json p = spec.parameters();
  RunOutput out = start(spec);
  const auto levels = value_list(p.at("noise_pct"), "noise_pct");
  const double test_fraction = get<double>(p, "test_fraction");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("test_fraction must lie in (0, 1)");
  const std::string reference = get<std::string>(p, "noise_reference");

  struct Task {
    Head head;
    const char* name;
    const char* metric;
    json params;
  };
  std::vector<Task> tasks;
  if (get<bool>(p.at("classification"), "enabled"))
    tasks.push_back({Head::classification, "classification", "P", p.at("classification")});
  if (get<bool>(p.at("regression"), "enabled"))
    tasks.push_back({Head::regression, "regression", "NME", p.at("regression")});

  auto task_config = [&](const Task& t) {
    DatasetConfig c = base_dataset(p);
    set_omega_range(c, p.at("omega_p"));
    c.s_values = value_list(t.params.at("s_values"), "s_values");
    c.noise_reference = DatasetConfig::from_json(json{{"noise_reference", reference}}).noise_reference;
    return c;
  };

  std::vector<CellKey> cells;
  for (std::size_t t = 0; t < tasks.size(); ++t)
    for (auto n : get<std::vector<std::size_t>>(tasks[t].params, "train_sizes"))
      for (double pct : levels)
        cells.push_back({{"task", static_cast<double>(tasks[t].head == Head::regression)},
                         {"train_size", static_cast<double>(n)},
                         {"noise_pct", pct}});

  Memo<std::vector<Trajectory>> clean_bank;
  const CellJob job = [&](const CellKey& cell, std::uint64_t seed) -> Metrics {
    const Task& task = *std::find_if(tasks.begin(), tasks.end(), [&](const Task& t) {
      return static_cast<double>(t.head == Head::regression) == cell[0].second;
    });
    DatasetConfig c = task_config(task);
    const auto clean = clean_bank.get(config_key(c), [&] { return clean_trajectories(c); });
    const auto n_train = static_cast<std::size_t>(cell[1].second);
    const auto total = static_cast<std::size_t>(std::llround(static_cast<double>(n_train) / (1.0 - test_fraction)));
    const std::size_t points = clean->size();
    c.realizations = (total + points - 1) / points;
    c.noise_pct = cell[2].second;
    c.master_seed = seed;
    const LabeledDataset full = generate(c, *clean);
    const LabeledDataset ds = subset(full, subsample(full, total, seed, LabelKey::s));
    const Split sp = split(ds, 1.0 - test_fraction, seed, LabelKey::s);
    const EvalReport r = fit_and_evaluate(ds, sp.train, sp.test, LabelKey::s, task.head,
                                          train_config(task.params, seed));
    return {{task.metric, r.metric()}, {"train_examples", static_cast<double>(sp.train.size())}};
  };
  out.sweep = run_sweep(cells, spec.seeds, job, cache_dir(spec), jobs);

  out.summary["noise_pct"] = levels;
  out.summary["noise_reference"] = reference;
  out.summary["curves"] = json::array();
  for (const Task& t : tasks) {
    for (auto n : get<std::vector<std::size_t>>(t.params, "train_sizes")) {
      json curve = json::array();
      for (double pct : levels)
        curve.push_back(nan_to_null(value_or_nan(out.sweep.median(
            {{"task", static_cast<double>(t.head == Head::regression)}, {"train_size", static_cast<double>(n)},
             {"noise_pct", pct}},
            t.metric))));
      out.summary["curves"].push_back({{"task", t.name}, {"metric", t.metric}, {"train_size", n}, {"median", curve}});
    }
  }
  finish(spec, out);
  return out;
}

RunOutput run_experiment(const ExperimentSpec& spec, unsigned jobs) {
  switch (spec.id) {
    case ExperimentId::fig2: return run_fig2(spec, jobs);
    case ExperimentId::phase_map: return run_phase_map(spec, jobs);
    case ExperimentId::fig3_classification: return run_fig3_classification(spec, jobs);
    case ExperimentId::gamma0_classification: return run_gamma0_classification(spec, jobs);
    case ExperimentId::fig4_regression: return run_fig4_regression(spec, jobs);
    case ExperimentId::fig5_regression_vs_s: return run_fig5_regression_vs_s(spec, jobs);
    case ExperimentId::fig6_noise: return run_fig6_noise(spec, jobs);
  }
  throw ValidationError("unknown experiment");
}

}  // namespace qsync
