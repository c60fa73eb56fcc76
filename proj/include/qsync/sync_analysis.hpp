#pragma once

#include <vector>

#include "qsync/quantum_core.hpp"

namespace qsync {

/// Sample Pearson correlation of x and y restricted to the closed trailing
/// window [t - window, t]. Requires a shared time grid and at least three
/// samples in the window; throws UndefinedCorrelationError if either series
/// is constant there.
double pearson_windowed(const Trajectory& x, const Trajectory& y, double t, double window);

struct PearsonSeries {
  double window = 0.0;
  std::vector<double> times;
  std::vector<double> values;
  /// Admissible grid times where the correlation was undefined.
  std::vector<double> undefined_times;
};

/// pearson_windowed at every grid time t with t - window >= first sample.
PearsonSeries pearson_series(const Trajectory& x, const Trajectory& y, double window);

enum class SyncPhase { in_phase, anti_phase, unsynchronized, indeterminate };

const char* to_string(SyncPhase phase);

struct SyncThresholds {
  double sync = 0.9;
  double null = 0.3;
};

struct SyncVerdict {
  SyncPhase phase = SyncPhase::indeterminate;
  double c_value = 0.0;
  SyncThresholds thresholds;
};

SyncVerdict classify_sync(double c, const SyncThresholds& thresholds = {});

}  // namespace qsync
