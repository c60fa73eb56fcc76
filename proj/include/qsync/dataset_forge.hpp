#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "qsync/io.hpp"
#include "qsync/quantum_core.hpp"

namespace qsync {

/// One-sided bins of the 101-sample probe trajectory: floor(101/2) + 1.
inline constexpr std::size_t kSpectrumBins = 51;
inline constexpr std::size_t kFeatureSamples = 101;

struct SpectrumLabel {
  double omega_p = 0.0;
  double s = 0.0;
  double gamma0 = 0.0;

  bool operator==(const SpectrumLabel&) const = default;
};

struct Spectrum {
  std::vector<double> moduli;
  SpectrumLabel label;
  double noise_pct = 0.0;
  std::uint64_t seed_index = 0;

  bool operator==(const Spectrum&) const = default;
};

/// |DFT| / N of a trajectory on the canonical grid (101 samples on [0, 100]).
/// Throws ShapeError for any other grid.
Spectrum fourier_modulus(const Trajectory& traj);

/// Angular frequency of DFT bin k for the canonical grid.
double bin_frequency(std::size_t k);

using RngStream = std::mt19937_64;

/// What "the amplitude of the function" means for relative noise levels.
enum class NoiseReference { peak_to_peak, max_abs };

/// Adds i.i.d. Gaussian noise with standard deviation pct/100 times the
/// reference amplitude of the clean trajectory. pct = 0 returns the input.
Trajectory add_noise(const Trajectory& traj, double pct, RngStream& rng,
                     NoiseReference reference = NoiseReference::peak_to_peak);

enum class TrajectoryModel { master_equation, asymptotic };

struct DatasetConfig {
  double omega_p_min = 0.8;
  double omega_p_max = 1.25;
  std::size_t omega_p_count = 300;
  std::vector<double> s_values{0.5, 1.0, 2.0};
  std::vector<double> gamma0_values{0.01};
  double lambda = 0.2;
  double rate_prefactor = kGoldenRulePrefactor;
  double noise_pct = 0.0;
  NoiseReference noise_reference = NoiseReference::peak_to_peak;
  /// Independent noise realizations per grid point.
  std::size_t realizations = 1;
  std::uint64_t master_seed = 1;
  double train_fraction = 0.8;
  TimeGrid grid = TimeGrid::canonical();
  TrajectoryModel model = TrajectoryModel::master_equation;

  void validate() const;
  std::vector<double> omega_p_values() const;
  std::size_t size() const;
  json to_json() const;
  static DatasetConfig from_json(const json& j);
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;

  bool operator==(const Split&) const = default;
};

struct LabeledDataset {
  std::vector<Spectrum> examples;
  json manifest;
  Split split;

  std::size_t size() const { return examples.size(); }
  bool operator==(const LabeledDataset&) const = default;
};

/// Propagates every (s, gamma0, omega_p, realization) grid point in that
/// nesting order, adds noise and takes the Fourier modulus. Example i draws
/// its noise from mix_seed(master_seed, i), so the content does not depend on
/// `jobs`.
LabeledDataset generate(const DatasetConfig& config, unsigned jobs = 1);

/// Noise-free probe trajectories of every grid point, in generate()'s order.
std::vector<Trajectory> clean_trajectories(const DatasetConfig& config, unsigned jobs = 1);

/// generate() from precomputed clean trajectories; lets noise sweeps reuse
/// one propagation pass.
LabeledDataset generate(const DatasetConfig& config, const std::vector<Trajectory>& clean, unsigned jobs = 1);

/// Clean probe trajectory for a single parameter point.
Trajectory probe_trajectory(const ProbeSetup& setup, const TimeGrid& grid,
                            TrajectoryModel model = TrajectoryModel::master_equation);

enum class LabelKey { none, s, gamma0, omega_p };

double label_value(const SpectrumLabel& label, LabelKey key);

/// Random disjoint train/test split; stratified by `stratify` when it is not
/// LabelKey::none. Throws DomainError unless 0 < train_fraction < 1.
Split split(const LabeledDataset& ds, double train_fraction, std::uint64_t seed,
            LabelKey stratify = LabelKey::none);

/// k disjoint, exhaustive folds over n examples; fold sizes differ by at most 1.
std::vector<Split> kfold(std::size_t n, std::size_t k, std::uint64_t seed);
std::vector<Split> kfold(const LabeledDataset& ds, std::size_t k, std::uint64_t seed);

/// Stratified random subsample of `count` example indices (sorted).
std::vector<std::size_t> subsample(const LabeledDataset& ds, std::size_t count, std::uint64_t seed,
                                   LabelKey stratify = LabelKey::none);

Eigen::MatrixXd feature_matrix(const LabeledDataset& ds, std::span<const std::size_t> indices);
Eigen::MatrixXd feature_matrix(const LabeledDataset& ds);
std::vector<double> label_values(const LabeledDataset& ds, std::span<const std::size_t> indices, LabelKey key);

class Scaler;

/// Features that have already been standardized. Scaler::transform does not
/// accept this type, so a scaler cannot be applied twice by accident.
class StandardizedFeatures {
 public:
  const Eigen::MatrixXd& values() const { return values_; }

 private:
  friend class Scaler;
  explicit StandardizedFeatures(Eigen::MatrixXd v) : values_(std::move(v)) {}
  Eigen::MatrixXd values_;
};

/// Per-column standardization fitted on training rows only.
class Scaler {
 public:
  Scaler() = default;
  Scaler(std::vector<double> mean, std::vector<double> scale);

  static Scaler fit(const Eigen::MatrixXd& train);

  StandardizedFeatures transform(const Eigen::MatrixXd& x) const;

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& scale() const { return scale_; }

  json to_json() const;
  static Scaler from_json(const json& j);

  bool operator==(const Scaler&) const = default;

 private:
  std::vector<double> mean_;
  std::vector<double> scale_;  // 1 and mean 0 on zero-variance columns
};

struct StandardizedSets {
  Scaler scaler;
  StandardizedFeatures train;
  std::vector<StandardizedFeatures> others;
};

StandardizedSets standardize(const Eigen::MatrixXd& train, std::span<const Eigen::MatrixXd> others = {});

/// CSV at `path` plus a JSON manifest at `manifest_path(path)`.
void save(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load(const std::filesystem::path& path);
std::filesystem::path manifest_path(const std::filesystem::path& dataset_path);

/// Exact CSV body for a dataset (header plus one row per example).
std::string to_csv(const LabeledDataset& ds);

}  // namespace qsync
