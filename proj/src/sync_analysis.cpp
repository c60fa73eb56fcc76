#include "qsync/sync_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qsync/errors.hpp"

namespace qsync {

namespace {

void require_shared_grid(const Trajectory& x, const Trajectory& y) {
  if (x.times.size() != x.values.size() || y.times.size() != y.values.size())
    throw ShapeError("trajectory times and values differ in length");
  if (x.times != y.times) throw ShapeError("trajectories are not sampled on the same grid");
}

// Slack for comparing grid times against window edges.
double edge_slack(const std::vector<double>& times) {
  if (times.size() < 2) return 1e-12;
  return 1e-9 * std::abs(times[1] - times[0]);
}

double pearson_range(const std::vector<double>& x, const std::vector<double>& y, std::size_t begin,
                     std::size_t end) {
  const auto n = static_cast<double>(end - begin);
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double syy = 0.0;
  double sxy = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  // Relative to the window's magnitude so round-off noise on a constant
  // series is still treated as constant.
  auto negligible = [n](double ss, double mean) { return ss <= n * 1e-28 * (1.0 + mean * mean); };
  if (negligible(sxx, mx) || negligible(syy, my))
    throw UndefinedCorrelationError("zero variance on the correlation window");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

double pearson_windowed(const Trajectory& x, const Trajectory& y, double t, double window) {
  require_shared_grid(x, y);
  if (!(window > 0.0)) throw DomainError("Pearson window must be positive");
  const auto& times = x.times;
  const double slack = edge_slack(times);
  const auto begin = std::lower_bound(times.begin(), times.end(), t - window - slack);
  const auto end = std::upper_bound(times.begin(), times.end(), t + slack);
  if (end - begin < 3 || begin >= end) throw DomainError("fewer than 3 samples in the Pearson window");
  return pearson_range(x.values, y.values, static_cast<std::size_t>(begin - times.begin()),
                       static_cast<std::size_t>(end - times.begin()));
}

PearsonSeries pearson_series(const Trajectory& x, const Trajectory& y, double window) {
  require_shared_grid(x, y);
  PearsonSeries out;
  out.window = window;
  if (x.times.empty()) return out;
  const double slack = edge_slack(x.times);
  const double first = x.times.front();
  for (double t : x.times) {
    if (t - window < first - slack) continue;
    try {
      const double c = pearson_windowed(x, y, t, window);
      out.times.push_back(t);
      out.values.push_back(c);
    } catch (const UndefinedCorrelationError&) {
      out.undefined_times.push_back(t);
    } catch (const DomainError&) {
      out.undefined_times.push_back(t);
    }
  }
  return out;
}

const char* to_string(SyncPhase phase) {
  switch (phase) {
    case SyncPhase::in_phase: return "in_phase";
    case SyncPhase::anti_phase: return "anti_phase";
    case SyncPhase::unsynchronized: return "unsynchronized";
    case SyncPhase::indeterminate: return "indeterminate";
  }
  return "indeterminate";
}

SyncVerdict classify_sync(double c, const SyncThresholds& thresholds) {
  SyncVerdict v;
  v.c_value = c;
  v.thresholds = thresholds;
  if (c >= thresholds.sync)
    v.phase = SyncPhase::in_phase;
  else if (c <= -thresholds.sync)
    v.phase = SyncPhase::anti_phase;
  else if (std::abs(c) <= thresholds.null)
    v.phase = SyncPhase::unsynchronized;
  else
    v.phase = SyncPhase::indeterminate;
  return v;
}

}  // namespace qsync
