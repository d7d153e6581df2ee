#pragma once

/// Trajectory accuracy metric, summary statistics, and result emission.
///
/// The error of an estimated position is its minimum distance to the
/// ground-truth polyline (closest point clamped to each segment). The metric
/// carries no temporal alignment: estimates are scored frame by frame against
/// the whole reference path, so a perfectly shaped but time-shifted
/// trajectory still scores zero.

#include <cstddef>
#include <string>
#include <vector>

#include "svloc/geo.hpp"
#include "svloc/trajectory.hpp"

namespace svloc {

/// Per-frame localization error in meters against a reference polyline.
/// `frames` and `values` always have the same length.
struct ErrorSeries {
  std::vector<int> frames;      // frame indices of the estimate
  std::vector<double> values;   // meters, >= 0

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }
};

/// Folding used by rmse(). kSquared is the conventional root-mean-square
/// (distances squared inside the mean) and is the headline metric.
/// kUnsquared takes the square root of the mean of the raw distances — an
/// alternate folding reported alongside for comparability; note its value
/// carries units of sqrt(meter), so the two agree only at 0 and on constant
/// series of 1 m.
enum class RmseMode { kSquared, kUnsquared };

/// Summary statistics of an error series. `count` is the number of frames;
/// when it is zero the remaining fields are meaningless and serialize as
/// null. `std_dev` uses the population form (divisor N).
struct ErrorSummary {
  std::size_t count = 0;
  double rmse = 0.0;             // sqrt(mean of squared errors), meters
  double root_mean_error = 0.0;  // sqrt(mean of errors), sqrt(meters)
  double mean = 0.0;             // meters
  double std_dev = 0.0;          // meters
  double min = 0.0;              // meters
  double max = 0.0;              // meters
};

/// Minimum distance from `p` (east, north) to the polyline through the truth
/// points, i.e. the minimum over consecutive point pairs of the
/// point-to-segment distance. Throws DomainError when the truth has fewer
/// than 2 points.
double point_to_polyline(const Vec2& p, const Trajectory& truth);

/// Per-frame point_to_polyline distances for every estimate point, indexed
/// 0..n-1 in estimate order. The parallel and serial variants are
/// bit-identical. Throws DomainError when the estimate is empty or the truth
/// has fewer than 2 points.
ErrorSeries error_series(const Trajectory& est, const Trajectory& truth);
ErrorSeries error_series_serial(const Trajectory& est, const Trajectory& truth);

/// Root-mean error of the estimate against the truth polyline under the
/// chosen folding; see RmseMode. Same preconditions as error_series.
double rmse(const Trajectory& est, const Trajectory& truth, RmseMode mode = RmseMode::kSquared);

/// Summary statistics over a series; an empty series yields count == 0.
ErrorSummary summarize(const ErrorSeries& series);

/// Serialize a summary as JSON. `indent` < 0 renders one compact line;
/// otherwise pretty-printed with that indent. A count of zero renders every
/// statistic as null.
std::string summary_to_json(const ErrorSummary& summary, int indent = -1);

/// Write the standard result set into `out_dir` (created if absent):
///   errors.csv            frame,err_m
///   trajectory_est.csv    t,east,north,lat,lon
///   trajectory_truth.csv  t,east,north,lat,lon
///   summary.json          summarize(series) per summary_to_json
///   error_plot.svg        per-frame error polyline with axes and labels
///   trajectory_plot.svg   est + truth paths, east/north axes, equal aspect
/// SVG data paths carry class="series" (error plot) or class="trajectory"
/// (one per non-empty trajectory). An empty series still produces valid
/// files: CSV headers with no rows, null summary fields, plots without data
/// paths. I/O failures throw IoError naming the path.
void emit_results(const ErrorSeries& series, const Trajectory& est, const Trajectory& truth,
                  const LocalFrame& frame, const std::string& out_dir);

}  // namespace svloc
