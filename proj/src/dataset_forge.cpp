#include "qsync/dataset_forge.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <map>
#include <numbers>
#include <sstream>
#include <string>

#include "qsync/errors.hpp"
#include "qsync/parallel.hpp"

namespace qsync {

namespace {

constexpr double kGridTolerance = 1e-9;

const char* to_string(NoiseReference r) {
  return r == NoiseReference::peak_to_peak ? "peak_to_peak" : "max_abs";
}

NoiseReference noise_reference_from(const std::string& s) {
  if (s == "peak_to_peak") return NoiseReference::peak_to_peak;
  if (s == "max_abs") return NoiseReference::max_abs;
  throw ValidationError("unknown noise reference '" + s + "'");
}

const char* to_string(TrajectoryModel m) {
  return m == TrajectoryModel::master_equation ? "master_equation" : "asymptotic";
}

TrajectoryModel trajectory_model_from(const std::string& s) {
  if (s == "master_equation") return TrajectoryModel::master_equation;
  if (s == "asymptotic") return TrajectoryModel::asymptotic;
  throw ValidationError("unknown trajectory model '" + s + "'");
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Twiddle table for the 101-point DFT, bins 0..50.
struct Twiddles {
  std::vector<double> cos_table;
  std::vector<double> sin_table;
  Twiddles() : cos_table(kFeatureSamples), sin_table(kFeatureSamples) {
    for (std::size_t n = 0; n < kFeatureSamples; ++n) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(kFeatureSamples);
      cos_table[n] = std::cos(angle);
      sin_table[n] = std::sin(angle);
    }
  }
};

const Twiddles& twiddles() {
  static const Twiddles table;
  return table;
}

}  // namespace

Spectrum fourier_modulus(const Trajectory& traj) {
  const auto& x = traj.values;
  if (x.size() != kFeatureSamples || traj.times.size() != kFeatureSamples)
    throw ShapeError("Fourier features need exactly 101 samples, got " + std::to_string(x.size()));
  if (std::abs(traj.times.front()) > kGridTolerance || std::abs(traj.times.back() - 100.0) > kGridTolerance)
    throw ShapeError("Fourier features need the canonical grid on [0, 100]");

  const auto& tw = twiddles();
  Spectrum out;
  out.moduli.resize(kSpectrumBins);
  const auto n = static_cast<double>(kFeatureSamples);
  for (std::size_t k = 0; k < kSpectrumBins; ++k) {
    double re = 0.0;
    double im = 0.0;
    for (std::size_t j = 0; j < kFeatureSamples; ++j) {
      const std::size_t idx = (k * j) % kFeatureSamples;
      re += x[j] * tw.cos_table[idx];
      im -= x[j] * tw.sin_table[idx];
    }
    out.moduli[k] = std::hypot(re, im) / n;
  }
  return out;
}

double bin_frequency(std::size_t k) {
  const TimeGrid g = TimeGrid::canonical();
  return 2.0 * std::numbers::pi * static_cast<double>(k) / (static_cast<double>(g.points) * g.step());
}

Trajectory add_noise(const Trajectory& traj, double pct, RngStream& rng, NoiseReference reference) {
  if (!(pct >= 0.0) || !std::isfinite(pct)) throw DomainError("noise percentage must be >= 0");
  if (pct == 0.0 || traj.values.empty()) return traj;
  const auto [lo, hi] = std::minmax_element(traj.values.begin(), traj.values.end());
  const double amplitude =
      reference == NoiseReference::peak_to_peak ? *hi - *lo : std::max(std::abs(*lo), std::abs(*hi));
  std::normal_distribution<double> normal(0.0, pct / 100.0 * amplitude);
  Trajectory out = traj;
  for (double& v : out.values) v += normal(rng);
  return out;
}

void DatasetConfig::validate() const {
  if (omega_p_count < 1) throw ValidationError("omega_p_count must be >= 1");
  if (!(omega_p_min > 0.0) || !(omega_p_max >= omega_p_min))
    throw ValidationError("omega_p interval must satisfy 0 < min <= max");
  if (s_values.empty() || gamma0_values.empty()) throw ValidationError("s_values and gamma0_values must be non-empty");
  for (double s : s_values)
    if (!(s > 0.0)) throw ValidationError("s values must be > 0");
  for (double g : gamma0_values)
    if (!(g > 0.0)) throw ValidationError("gamma0 values must be > 0");
  if (!(lambda > 0.0)) throw ValidationError("lambda must be > 0");
  if (!(rate_prefactor > 0.0)) throw ValidationError("rate_prefactor must be > 0");
  if (!(noise_pct >= 0.0)) throw ValidationError("noise_pct must be >= 0");
  if (realizations < 1) throw ValidationError("realizations must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train_fraction must lie in (0, 1)");
  if (grid.points < 2) throw ValidationError("time grid needs at least 2 points");
}

std::vector<double> DatasetConfig::omega_p_values() const {
  std::vector<double> out(omega_p_count);
  if (omega_p_count == 1) {
    out[0] = omega_p_min;
    return out;
  }
  const double step = (omega_p_max - omega_p_min) / static_cast<double>(omega_p_count - 1);
  for (std::size_t i = 0; i < omega_p_count; ++i) out[i] = omega_p_min + step * static_cast<double>(i);
  out.back() = omega_p_max;
  return out;
}

std::size_t DatasetConfig::size() const {
  return s_values.size() * gamma0_values.size() * omega_p_count * realizations;
}

json DatasetConfig::to_json() const {
  return json{{"omega_p_min", omega_p_min},
              {"omega_p_max", omega_p_max},
              {"omega_p_count", omega_p_count},
              {"s_values", s_values},
              {"gamma0_values", gamma0_values},
              {"lambda", lambda},
              {"rate_prefactor", rate_prefactor},
              {"noise_pct", noise_pct},
              {"noise_reference", to_string(noise_reference)},
              {"realizations", realizations},
              {"master_seed", master_seed},
              {"train_fraction", train_fraction},
              {"grid", {{"start", grid.start}, {"stop", grid.stop}, {"points", grid.points}}},
              {"model", to_string(model)}};
}

DatasetConfig DatasetConfig::from_json(const json& j) {
  DatasetConfig c;
  if (!j.is_object()) throw ValidationError("dataset config must be a JSON object");
  const json known = c.to_json();
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ValidationError("unknown dataset config key: " + key);
  try {
    c.omega_p_min = j.value("omega_p_min", c.omega_p_min);
    c.omega_p_max = j.value("omega_p_max", c.omega_p_max);
    c.omega_p_count = j.value("omega_p_count", c.omega_p_count);
    c.s_values = j.value("s_values", c.s_values);
    c.gamma0_values = j.value("gamma0_values", c.gamma0_values);
    c.lambda = j.value("lambda", c.lambda);
    c.rate_prefactor = j.value("rate_prefactor", c.rate_prefactor);
    c.noise_pct = j.value("noise_pct", c.noise_pct);
    c.noise_reference = noise_reference_from(j.value("noise_reference", std::string(to_string(c.noise_reference))));
    c.realizations = j.value("realizations", c.realizations);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      c.grid.start = g.value("start", c.grid.start);
      c.grid.stop = g.value("stop", c.grid.stop);
      c.grid.points = g.value("points", c.grid.points);
    }
    c.model = trajectory_model_from(j.value("model", std::string(to_string(c.model))));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad dataset config: ") + e.what());
  }
  c.validate();
  return c;
}

Trajectory probe_trajectory(const ProbeSetup& setup, const TimeGrid& grid, TrajectoryModel model) {
  const Matrix4c rho0 = plus_plus_state();
  const Liouvillian L = build_liouvillian(setup);
  if (model == TrajectoryModel::asymptotic) return asymptotic_trajectory(asymptotic_params(L, rho0), grid).probe;
  return propagate(L, rho0, grid).probe;
}

namespace {

struct GridPoint {
  double s;
  double gamma0;
  double omega_p;
};

std::vector<GridPoint> grid_points(const DatasetConfig& config) {
  const auto omegas = config.omega_p_values();
  std::vector<GridPoint> points;
  points.reserve(config.s_values.size() * config.gamma0_values.size() * omegas.size());
  for (double s : config.s_values)
    for (double g : config.gamma0_values)
      for (double w : omegas) points.push_back({s, g, w});
  return points;
}

}  // namespace

std::vector<Trajectory> clean_trajectories(const DatasetConfig& config, unsigned jobs) {
  config.validate();
  const auto points = grid_points(config);
  std::vector<Trajectory> out(points.size());
  parallel_for(points.size(), jobs, [&](std::size_t i) {
    const GridPoint& pt = points[i];
    ProbeSetup setup{pt.omega_p, config.lambda, pt.gamma0, pt.s, config.rate_prefactor};
    try {
      out[i] = probe_trajectory(setup, config.grid, config.model);
    } catch (const NumericalError& e) {
      std::ostringstream msg;
      msg << e.what() << " at omega_p=" << pt.omega_p << " s=" << pt.s << " gamma0=" << pt.gamma0;
      throw NumericalError(msg.str());
    } catch (const ValidationError& e) {
      std::ostringstream msg;
      msg << e.what() << " at omega_p=" << pt.omega_p << " s=" << pt.s << " gamma0=" << pt.gamma0;
      throw ValidationError(msg.str());
    }
  });
  return out;
}

LabeledDataset generate(const DatasetConfig& config, unsigned jobs) {
  return generate(config, clean_trajectories(config, jobs), jobs);
}

LabeledDataset generate(const DatasetConfig& config, const std::vector<Trajectory>& clean, unsigned jobs) {
  config.validate();
  const auto points = grid_points(config);
  if (clean.size() != points.size()) throw ShapeError("clean trajectory count does not match the dataset grid");
  const std::size_t reps = config.realizations;
  LabeledDataset ds;
  ds.examples.resize(points.size() * reps);
  parallel_for(points.size(), jobs, [&](std::size_t i) {
    const GridPoint& pt = points[i];
    for (std::size_t r = 0; r < reps; ++r) {
      const std::size_t index = i * reps + r;
      RngStream rng(mix_seed(config.master_seed, index));
      Spectrum sp = fourier_modulus(add_noise(clean[i], config.noise_pct, rng, config.noise_reference));
      sp.label = {pt.omega_p, pt.s, pt.gamma0};
      sp.noise_pct = config.noise_pct;
      sp.seed_index = index;
      ds.examples[index] = std::move(sp);
    }
  });

  ds.manifest = json{{"format", "qsync-dataset"},
                     {"format_version", 1},
                     {"bins", kSpectrumBins},
                     {"examples", ds.examples.size()},
                     {"config", config.to_json()},
                     {"code_version", version()},
                     {"generated_at", utc_timestamp()}};
  return ds;
}

double label_value(const SpectrumLabel& label, LabelKey key) {
  switch (key) {
    case LabelKey::s: return label.s;
    case LabelKey::gamma0: return label.gamma0;
    case LabelKey::omega_p: return label.omega_p;
    case LabelKey::none: return 0.0;
  }
  return 0.0;
}

namespace {

std::map<double, std::vector<std::size_t>> group_by(const LabeledDataset& ds, LabelKey key) {
  std::map<double, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ds.examples.size(); ++i) groups[label_value(ds.examples[i].label, key)].push_back(i);
  return groups;
}

}  // namespace

Split split(const LabeledDataset& ds, double train_fraction, std::uint64_t seed, LabelKey stratify) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DomainError("train_fraction must lie in (0, 1)");
  if (ds.examples.empty()) throw DomainError("cannot split an empty dataset");
  RngStream rng(mix_seed(seed, 0x5117));
  auto groups = group_by(ds, stratify);
  // Largest-remainder allocation: the train size is round(f n) overall and
  // each stratum gets its proportional share to within one example.
  const auto target =
      static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ds.examples.size())));
  std::vector<std::size_t> take;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t allocated = 0;
  for (const auto& [value, members] : groups) {
    const double share = train_fraction * static_cast<double>(members.size());
    take.push_back(static_cast<std::size_t>(std::floor(share)));
    remainders.emplace_back(share - std::floor(share), take.size() - 1);
    allocated += take.back();
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; allocated < target && i < remainders.size(); ++i, ++allocated) ++take[remainders[i].second];

  Split out;
  std::size_t g = 0;
  for (auto& [value, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = static_cast<std::ptrdiff_t>(take[g++]);
    out.train.insert(out.train.end(), members.begin(), members.begin() + n_train);
    out.test.insert(out.test.end(), members.begin() + n_train, members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::vector<Split> kfold(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2 || k > n) throw DomainError("k-fold needs 2 <= k <= dataset size");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  RngStream rng(mix_seed(seed, 0xf01d));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Split> folds(k);
  std::size_t begin = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    auto& fold = folds[f];
    fold.test.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                     order.begin() + static_cast<std::ptrdiff_t>(begin + size));
    fold.train.reserve(n - size);
    fold.train.insert(fold.train.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(begin));
    fold.train.insert(fold.train.end(), order.begin() + static_cast<std::ptrdiff_t>(begin + size), order.end());
    std::sort(fold.test.begin(), fold.test.end());
    std::sort(fold.train.begin(), fold.train.end());
    begin += size;
  }
  return folds;
}

std::vector<Split> kfold(const LabeledDataset& ds, std::size_t k, std::uint64_t seed) {
  return kfold(ds.examples.size(), k, seed);
}

std::vector<std::size_t> subsample(const LabeledDataset& ds, std::size_t count, std::uint64_t seed,
                                   LabelKey stratify) {
  const std::size_t n = ds.examples.size();
  if (count > n) throw DomainError("subsample larger than dataset");
  std::vector<std::size_t> out;
  if (count == n) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  RngStream rng(mix_seed(seed, 0x5ab5));
  const double fraction = static_cast<double>(count) / static_cast<double>(n);
  auto groups = group_by(ds, stratify);
  std::vector<std::size_t> leftovers;
  for (auto& [value, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(members.size())));
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    leftovers.insert(leftovers.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::shuffle(leftovers.begin(), leftovers.end(), rng);
  out.insert(out.end(), leftovers.begin(), leftovers.begin() + static_cast<std::ptrdiff_t>(count - out.size()));
  std::sort(out.begin(), out.end());
  return out;
}

Eigen::MatrixXd feature_matrix(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(kSpectrumBins));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& m = ds.examples.at(indices[r]).moduli;
    if (m.size() != kSpectrumBins) throw ShapeError("spectrum with wrong number of bins");
    for (std::size_t c = 0; c < kSpectrumBins; ++c)
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m[c];
  }
  return x;
}

Eigen::MatrixXd feature_matrix(const LabeledDataset& ds) {
  std::vector<std::size_t> all(ds.examples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return feature_matrix(ds, all);
}

std::vector<double> label_values(const LabeledDataset& ds, std::span<const std::size_t> indices, LabelKey key) {
  std::vector<double> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(label_value(ds.examples.at(i).label, key));
  return out;
}

Scaler::Scaler(std::vector<double> mean, std::vector<double> scale) : mean_(std::move(mean)), scale_(std::move(scale)) {
  if (mean_.size() != scale_.size()) throw ShapeError("scaler mean/scale length mismatch");
}

Scaler Scaler::fit(const Eigen::MatrixXd& train) {
  if (train.rows() == 0) throw DomainError("cannot fit a scaler on an empty training set");
  const auto cols = static_cast<std::size_t>(train.cols());
  std::vector<double> mean(cols, 0.0);
  std::vector<double> scale(cols, 1.0);
  for (Eigen::Index c = 0; c < train.cols(); ++c) {
    const double mu = train.col(c).mean();
    const double var = (train.col(c).array() - mu).square().mean();
    const double sd = std::sqrt(var);
    if (sd > 1e-12 * (1.0 + std::abs(mu))) {
      mean[static_cast<std::size_t>(c)] = mu;
      scale[static_cast<std::size_t>(c)] = sd;
    }
  }
  return {std::move(mean), std::move(scale)};
}

StandardizedFeatures Scaler::transform(const Eigen::MatrixXd& x) const {
  if (static_cast<std::size_t>(x.cols()) != mean_.size()) throw ShapeError("scaler applied to wrong number of columns");
  Eigen::MatrixXd out = x;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const auto k = static_cast<std::size_t>(c);
    out.col(c) = (x.col(c).array() - mean_[k]) / scale_[k];
  }
  return StandardizedFeatures(std::move(out));
}

json Scaler::to_json() const { return json{{"mean", mean_}, {"scale", scale_}}; }

Scaler Scaler::from_json(const json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("scale").get<std::vector<double>>()};
}

StandardizedSets standardize(const Eigen::MatrixXd& train, std::span<const Eigen::MatrixXd> others) {
  Scaler scaler = Scaler::fit(train);
  StandardizedFeatures scaled_train = scaler.transform(train);
  std::vector<StandardizedFeatures> scaled;
  scaled.reserve(others.size());
  for (const auto& m : others) scaled.push_back(scaler.transform(m));
  return {std::move(scaler), std::move(scaled_train), std::move(scaled)};
}

std::filesystem::path manifest_path(const std::filesystem::path& dataset_path) {
  std::filesystem::path p = dataset_path;
  p += ".manifest.json";
  return p;
}

namespace {

std::string csv_header() {
  std::string h = "omega_p,s,gamma0,noise_pct,seed_index";
  for (std::size_t k = 0; k < kSpectrumBins; ++k) h += ",bin_" + std::to_string(k);
  return h;
}

}  // namespace

std::string to_csv(const LabeledDataset& ds) {
  std::string out = csv_header() + "\n";
  for (const auto& ex : ds.examples) {
    if (ex.moduli.size() != kSpectrumBins) throw ShapeError("spectrum with wrong number of bins");
    out += format_double(ex.label.omega_p);
    out += ',' + format_double(ex.label.s);
    out += ',' + format_double(ex.label.gamma0);
    out += ',' + format_double(ex.noise_pct);
    out += ',' + std::to_string(ex.seed_index);
    for (double m : ex.moduli) out += ',' + format_double(m);
    out += '\n';
  }
  return out;
}

void save(const LabeledDataset& ds, const std::filesystem::path& path) {
  write_text_file(path, to_csv(ds));
  json manifest = ds.manifest;
  manifest["split"] = {{"train", ds.split.train}, {"test", ds.split.test}};
  write_json_file(manifest_path(path), manifest);
}

LabeledDataset load(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  LabeledDataset ds;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty dataset file", 1);
  ++line_no;
  if (line != csv_header()) throw ParseError(path.string() + ": unexpected header", line_no);
  const std::size_t fields_expected = 5 + kSpectrumBins;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != fields_expected)
      throw ParseError(path.string() + ": expected " + std::to_string(fields_expected) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    Spectrum sp;
    sp.label.omega_p = parse_double(fields[0], line_no);
    sp.label.s = parse_double(fields[1], line_no);
    sp.label.gamma0 = parse_double(fields[2], line_no);
    sp.noise_pct = parse_double(fields[3], line_no);
    {
      std::uint64_t idx = 0;
      const auto f = fields[4];
      const auto res = std::from_chars(f.data(), f.data() + f.size(), idx);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size())
        throw ParseError(path.string() + ": invalid seed_index", line_no);
      sp.seed_index = idx;
    }
    sp.moduli.reserve(kSpectrumBins);
    for (std::size_t k = 0; k < kSpectrumBins; ++k) {
      const double m = parse_double(fields[5 + k], line_no);
      if (m < 0.0) throw ParseError(path.string() + ": negative modulus", line_no);
      sp.moduli.push_back(m);
    }
    ds.examples.push_back(std::move(sp));
  }

  const auto mp = manifest_path(path);
  if (!std::filesystem::exists(mp)) throw IoError("missing manifest " + mp.string());
  ds.manifest = read_json_file(mp);
  if (ds.manifest.contains("split")) {
    const auto& sp = ds.manifest.at("split");
    ds.split.train = sp.value("train", std::vector<std::size_t>{});
    ds.split.test = sp.value("test", std::vector<std::size_t>{});
    ds.manifest.erase("split");
  }
  if (ds.manifest.value("bins", kSpectrumBins) != kSpectrumBins)
    throw ParseError(mp.string() + ": manifest bin count differs from " + std::to_string(kSpectrumBins), 0);
  return ds;
}

}  // namespace qsync
