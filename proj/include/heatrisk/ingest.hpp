#pragma once

#include <span>
#include <string>
#include <vector>

#include "heatrisk/domain.hpp"

namespace heatrisk::ingest {

/// Station inclusion rule, evaluated on each season independently.
struct SelectionRule {
  enum class Mode { MaxConsecutiveMissing, MaxMissingFraction };
  Mode mode = Mode::MaxConsecutiveMissing;
  double limit = 7;

  /// At most `days` consecutive missing days in every season.
  static SelectionRule max_consecutive_missing(int days);
  /// Strictly less than `fraction` of each season missing.
  static SelectionRule max_missing_fraction(double fraction);

  void validate() const;
  bool accepts(std::span<const double> season_values) const;
  std::string describe() const;
};

std::vector<StationSeries> select_stations(std::span<const StationSeries> stations,
                                           const StudyPeriod& period, const SelectionRule& rule);

/// Natural cubic smoothing spline minimizing
///   sum (y_i - g(x_i))^2 + alpha * integral g''(x)^2 dx.
class SmoothingSpline {
 public:
  static SmoothingSpline fit(std::span<const double> x, std::span<const double> y, double alpha);
  /// Chooses alpha by generalized cross-validation.
  static SmoothingSpline fit_gcv(std::span<const double> x, std::span<const double> y);

  double operator()(double x) const;
  double alpha() const { return alpha_; }
  const std::vector<double>& fitted() const { return g_; }

 private:
  std::vector<double> x_, g_, gamma_;
  double alpha_ = 0.0;
};

/// Fills missing days of each season with a GCV smoothing spline over the
/// day-of-season index. Observed entries are copied unchanged.
StationSeries impute_spline(const StationSeries& series, const StudyPeriod& period);

struct HourlyRecord {
  CellId cell;
  Date date;  // UTC day
  int hour = 0;
  double temp = 0.0;
};

struct DailyMax {
  CellId cell;
  Date date;
  double tmax = 0.0;
};

/// Per-(cell, UTC day) maximum. Every day needs all 24 hours; otherwise
/// the error lists the incomplete days.
std::vector<DailyMax> daily_max_from_hourly(std::span<const HourlyRecord> hourly);

struct ReanalysisCell {
  CellId id;
  Rect rect;
  std::vector<double> tmax;  // aligned with ReanalysisGrid::dates
};

struct ReanalysisGrid {
  std::vector<Date> dates;
  std::vector<ReanalysisCell> cells;
  double resolution_km = 0.0;

  /// Cells must be non-degenerate, pairwise non-overlapping, and carry a
  /// finite value for every date.
  void validate() const;
  /// Assembles a grid from per-day maxima; `rects` gives each cell's extent.
  static ReanalysisGrid from_daily(std::span<const std::pair<CellId, Rect>> rects,
                                   std::span<const DailyMax> daily);
};

/// Overlap weights A_{mk} between municipality m and cell k.
struct OverlapWeights {
  struct Entry {
    std::size_t cell;
    double area;
  };
  std::vector<std::vector<Entry>> per_municipality;
};

OverlapWeights overlap_weights(const ReanalysisGrid& grid, const MunicipalityMap& map);

/// Area-weighted municipality means; weights are normalized by the summed
/// overlap so partially covered municipalities still average correctly.
ExposureSurface aggregate_cells(const ReanalysisGrid& grid, const MunicipalityMap& map);

}  // namespace heatrisk::ingest
