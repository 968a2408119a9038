#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "heatrisk/calendar.hpp"
#include "heatrisk/geometry.hpp"

namespace heatrisk {

using SiteId = std::string;
using MunicipalityId = std::string;
using CellId = std::string;

/// Daily maximum temperature at one monitoring station. `values` is aligned
/// to a StudyPeriod (flattened year-major); NaN marks a missing day.
struct StationSeries {
  SiteId id;
  Point location;
  double altitude = 0.0;  // metres
  std::vector<double> values;

  std::size_t missing_count() const;
};

struct Municipality {
  MunicipalityId id;
  MultiPolygon shape;
  Point centroid;
  double area_km2 = 0.0;
  double altitude_m = 0.0;
};

/// Immutable registry of municipalities; centroids and areas are derived
/// from the (normalized, validated) shapes at construction.
class MunicipalityMap {
 public:
  MunicipalityMap() = default;
  /// `shape`, `id` and `altitude_m` are read from each entry; centroid and
  /// area are recomputed.
  explicit MunicipalityMap(std::vector<Municipality> municipalities);

  std::size_t size() const { return items_.size(); }
  const Municipality& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<Municipality>& items() const { return items_; }
  std::optional<std::size_t> index_of(const MunicipalityId& id) const;
  std::vector<MunicipalityId> ids() const;
  Rect bounds() const { return bounds_; }
  /// Index of the municipality containing `p`, if any.
  std::optional<std::size_t> locate(Point p) const;
  bool in_region(Point p) const { return locate(p).has_value(); }

 private:
  std::vector<Municipality> items_;
  std::unordered_map<MunicipalityId, std::size_t> index_;
  std::vector<Rect> boxes_;
  Rect bounds_{};
};

/// Municipality x day matrix of daily maxima for one reconstruction method.
struct ExposureSurface {
  std::string method;  // "gqrm-0.50", "ggpm", "reanalysis"
  std::vector<MunicipalityId> municipalities;
  std::vector<Date> dates;
  Eigen::MatrixXd values;  // municipalities x dates
  std::map<std::string, std::string> provenance;

  /// Throws if dimensions mismatch or any entry is non-finite.
  void validate() const;
  std::optional<std::size_t> date_index(const Date& d) const;
  std::optional<std::size_t> municipality_index(const MunicipalityId& id) const;
  /// Builds the date/municipality lookup tables. Lookups fall back to a
  /// linear scan until this is called.
  void reindex();

 private:
  std::unordered_map<int, std::size_t> date_lookup_;
  std::unordered_map<MunicipalityId, std::size_t> muni_lookup_;
};

/// z-score transform fitted on station altitudes and reused at prediction
/// sites.
struct Standardizer {
  double mean = 0.0;
  double sd = 1.0;

  /// Sample (n-1) standard deviation; throws on constant input.
  static Standardizer fit(std::span<const double> values);
  double apply(double v) const { return (v - mean) / sd; }
  std::vector<double> apply(std::span<const double> values) const;
};

std::vector<double> standardize_altitude(std::span<const double> values);

/// Local equirectangular projection from lon/lat degrees to planar km.
/// `identity` treats input coordinates as already-projected km.
struct Projection {
  enum class Kind { Equirectangular, Identity };
  Kind kind = Kind::Equirectangular;
  double lon0 = 0.0;
  double lat0 = 0.0;

  Point forward(double lon, double lat) const;
  std::pair<double, double> inverse(Point p) const;
  std::string describe() const;
};

}  // namespace heatrisk
