#include "heatrisk/domain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "heatrisk/error.hpp"

namespace heatrisk {

std::size_t StationSeries::missing_count() const {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [](double v) { return std::isnan(v); }));
}

MunicipalityMap::MunicipalityMap(std::vector<Municipality> municipalities)
    : items_(std::move(municipalities)) {
  std::vector<Point> corners;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    auto& m = items_[i];
    m.shape = normalized(std::move(m.shape));
    validate(m.shape);
    m.area_km2 = area(m.shape);
    if (!(m.area_km2 > 0)) {
      throw Error("degenerate_polygon", "municipality " + m.id + " has non-positive area");
    }
    m.centroid = centroid(m.shape);
    if (!index_.emplace(m.id, i).second) {
      throw Error("duplicate_id", "duplicate municipality id " + m.id);
    }
    boxes_.push_back(bounding_box(m.shape));
    corners.push_back({boxes_.back().xmin, boxes_.back().ymin});
    corners.push_back({boxes_.back().xmax, boxes_.back().ymax});
  }
  if (!corners.empty()) bounds_ = bounding_box(corners);
}

std::optional<std::size_t> MunicipalityMap::index_of(const MunicipalityId& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<MunicipalityId> MunicipalityMap::ids() const {
  std::vector<MunicipalityId> out;
  out.reserve(items_.size());
  for (const auto& m : items_) out.push_back(m.id);
  return out;
}

std::optional<std::size_t> MunicipalityMap::locate(Point p) const {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (boxes_[i].contains(p) && contains(items_[i].shape, p)) return i;
  }
  return std::nullopt;
}

void ExposureSurface::reindex() {
  date_lookup_.clear();
  muni_lookup_.clear();
  for (std::size_t j = 0; j < dates.size(); ++j) date_lookup_.emplace(serial(dates[j]), j);
  for (std::size_t i = 0; i < municipalities.size(); ++i) muni_lookup_.emplace(municipalities[i], i);
}

void ExposureSurface::validate() const {
  if (static_cast<std::size_t>(values.rows()) != municipalities.size() ||
      static_cast<std::size_t>(values.cols()) != dates.size()) {
    throw Error("invalid_surface", "exposure surface dimensions do not match its registries");
  }
  if (!values.allFinite()) {
    throw Error("invalid_surface", "exposure surface '" + method + "' has non-finite entries");
  }
}

std::optional<std::size_t> ExposureSurface::date_index(const Date& d) const {
  if (date_lookup_.size() != dates.size()) {
    auto it = std::find(dates.begin(), dates.end(), d);
    if (it == dates.end()) return std::nullopt;
    return static_cast<std::size_t>(it - dates.begin());
  }
  auto it = date_lookup_.find(serial(d));
  if (it == date_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> ExposureSurface::municipality_index(const MunicipalityId& id) const {
  if (muni_lookup_.size() != municipalities.size()) {
    auto it = std::find(municipalities.begin(), municipalities.end(), id);
    if (it == municipalities.end()) return std::nullopt;
    return static_cast<std::size_t>(it - municipalities.begin());
  }
  auto it = muni_lookup_.find(id);
  if (it == muni_lookup_.end()) return std::nullopt;
  return it->second;
}

Standardizer Standardizer::fit(std::span<const double> values) {
  if (values.size() < 2) throw Error("constant_input", "standardization needs at least two values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  if (!(sd > 0.0) || !std::isfinite(sd)) {
    throw Error("constant_input", "cannot standardize constant values");
  }
  return {mean, sd};
}

std::vector<double> Standardizer::apply(std::span<const double> values) const {
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(apply(v));
  return out;
}

std::vector<double> standardize_altitude(std::span<const double> values) {
  return Standardizer::fit(values).apply(values);
}

namespace {
constexpr double kEarthRadiusKm = 6371.0088;
constexpr double kDeg = std::numbers::pi / 180.0;
}  // namespace

Point Projection::forward(double lon, double lat) const {
  if (kind == Kind::Identity) return {lon, lat};
  return {kEarthRadiusKm * (lon - lon0) * kDeg * std::cos(lat0 * kDeg),
          kEarthRadiusKm * (lat - lat0) * kDeg};
}

std::pair<double, double> Projection::inverse(Point p) const {
  if (kind == Kind::Identity) return {p.x, p.y};
  return {lon0 + p.x / (kEarthRadiusKm * kDeg * std::cos(lat0 * kDeg)),
          lat0 + p.y / (kEarthRadiusKm * kDeg)};
}

std::string Projection::describe() const {
  if (kind == Kind::Identity) return "identity(km)";
  std::ostringstream os;
  os.precision(17);
  os << "equirectangular(lon0=" << lon0 << ",lat0=" << lat0 << ",R=" << kEarthRadiusKm << ")";
  return os.str();
}

}  // namespace heatrisk
