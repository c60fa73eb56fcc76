#pragma once

// Figure-level experiments: each run is described by an ExperimentSpec,
// expands into (cell, seed) jobs, and writes CSVs under spec.out_dir/<id>/.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qsync/dataset_forge.hpp"
#include "qsync/io.hpp"
#include "qsync/neural_estimator.hpp"

namespace qsync {

enum class ExperimentId {
  fig2,
  phase_map,
  fig3_classification,
  gamma0_classification,
  fig4_regression,
  fig5_regression_vs_s,
  fig6_noise,
};

const char* to_string(ExperimentId id);
/// Accepts the full ids and the short forms fig3..fig6.
ExperimentId experiment_from_string(const std::string& name);

/// Default parameter object of an experiment. Overrides are merged onto it
/// and may only use keys that appear here.
json default_parameters(ExperimentId id);

struct ExperimentSpec {
  ExperimentId id = ExperimentId::fig2;
  json overrides = json::object();
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::filesystem::path out_dir = "results";

  /// Defaults with overrides merged in. Throws ValidationError on unknown keys.
  json parameters() const;
  json to_json() const;
  static ExperimentSpec from_json(const json& j);
  /// Hash of id, merged parameters and seeds; the output directory is excluded.
  std::string hash() const;
};

/// Ordered (name, value) pairs identifying one sweep cell.
using CellKey = std::vector<std::pair<std::string, double>>;

std::string cell_label(const CellKey& cell);

struct SweepRow {
  CellKey cell;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;

  bool operator==(const SweepRow&) const = default;
};

struct SweepAggregate {
  CellKey cell;
  std::string metric;
  std::size_t count = 0;
  double median = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct CellFailure {
  CellKey cell;
  std::uint64_t seed = 0;
  std::string message;

  bool operator==(const CellFailure&) const = default;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<CellFailure> failures;

  /// Rows by cell then seed then metric; the order cells were declared in is
  /// the cell order.
  std::vector<SweepAggregate> aggregate() const;
  /// Median over seeds of one metric in one cell; nullopt when absent.
  std::optional<double> median(const CellKey& cell, const std::string& metric) const;
};

using Metrics = std::vector<std::pair<std::string, double>>;
using CellJob = std::function<Metrics(const CellKey& cell, std::uint64_t seed)>;

/// Runs job(cell, seed) for every pair on `jobs` threads. Finished pairs are
/// cached as JSON under cache_dir, so an interrupted sweep resumes where it
/// stopped. A ValidationError or NumericalError in one pair is recorded as a
/// failure and the sweep continues.
SweepResult run_sweep(const std::vector<CellKey>& cells, const std::vector<std::uint64_t>& seeds, const CellJob& job,
                      const std::optional<std::filesystem::path>& cache_dir, unsigned jobs);

struct RunOutput {
  ExperimentId id = ExperimentId::fig2;
  std::string spec_hash;
  SweepResult sweep;
  /// Experiment-specific derived quantities (verdicts, transition interval...).
  json summary = json::object();
  std::vector<std::filesystem::path> files;
};

/// Lines starting with '#' recording code version, experiment, spec hash and seeds.
std::string provenance_header(const ExperimentSpec& spec);

/// Equal-width interval edges from {"min", "max", "count"}, or explicit "edges".
std::vector<double> interval_edges(const json& intervals);

/// Index of the interval with the largest overlap with the band of boundary
/// frequencies omega_p*(s) for s in [s_lo, s_hi].
std::size_t transition_interval(const std::vector<double>& edges, double lambda, double s_lo = 0.5,
                                double s_hi = 2.0);

RunOutput run_fig2(const ExperimentSpec& spec, unsigned jobs = 1);
RunOutput run_phase_map(const ExperimentSpec& spec, unsigned jobs = 1);
RunOutput run_fig3_classification(const ExperimentSpec& spec, unsigned jobs = 1);
RunOutput run_gamma0_classification(const ExperimentSpec& spec, unsigned jobs = 1);
RunOutput run_fig4_regression(const ExperimentSpec& spec, unsigned jobs = 1);
RunOutput run_fig5_regression_vs_s(const ExperimentSpec& spec, unsigned jobs = 1);
RunOutput run_fig6_noise(const ExperimentSpec& spec, unsigned jobs = 1);

RunOutput run_experiment(const ExperimentSpec& spec, unsigned jobs = 1);

}  // namespace qsync
