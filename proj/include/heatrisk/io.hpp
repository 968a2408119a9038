#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "heatrisk/casecrossover.hpp"
#include "heatrisk/domain.hpp"
#include "heatrisk/epi.hpp"
#include "heatrisk/heatwave.hpp"
#include "heatrisk/ingest.hpp"

/// File formats. CSV artifacts start with `# key: value` provenance lines;
/// numbers are written in shortest round-trip form so reruns are byte-stable.
namespace heatrisk::io {

namespace fs = std::filesystem;
using Provenance = std::map<std::string, std::string>;

/// Shortest decimal that round-trips; empty for NaN.
std::string format_number(double v);
/// Parses a number; empty, "NA" and "nan" give NaN.
double parse_number(std::string_view s);

struct CsvTable {
  Provenance provenance;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index; throws "bad_input" naming the file when absent.
  std::size_t column(std::string_view name) const;
  std::string source;
};

CsvTable read_csv(const fs::path& path);
void write_csv(const fs::path& path, const CsvTable& table);
/// Only the provenance header of a CSV artifact.
Provenance read_provenance(const fs::path& path);

/// `station_id,lon,lat,alt_m,date,tmax`. Rows outside the study period are
/// ignored; days without a row are missing.
std::vector<StationSeries> read_stations(const fs::path& path, const StudyPeriod& period,
                                         const Projection& projection);
void write_stations(const fs::path& path, std::span<const StationSeries> stations,
                    const StudyPeriod& period, const Projection& projection,
                    const Provenance& provenance = {});

/// GeoJSON FeatureCollection of Polygon/MultiPolygon features with `id` and
/// `alt_m` properties, in lon/lat degrees.
MunicipalityMap read_municipalities(const fs::path& path, const Projection& projection);
void write_municipalities(const fs::path& path, const MunicipalityMap& map,
                          const Projection& projection);
/// Lon/lat bounding box of a GeoJSON file: {lon_min, lat_min, lon_max, lat_max}.
Rect geojson_lonlat_bounds(const fs::path& path);

/// Hourly `cell_id,lon_min,lat_min,lon_max,lat_max,date,hour,temp` or, when
/// `pre_aggregated`, `cell_id,lon_min,lat_min,lon_max,lat_max,date,tmax`.
ingest::ReanalysisGrid read_reanalysis(const fs::path& path, const Projection& projection,
                                       bool pre_aggregated);
void write_reanalysis_daily(const fs::path& path, const ingest::ReanalysisGrid& grid,
                            const Projection& projection, const Provenance& provenance = {});

/// `id,date,municipality_id,age,sex,icd10`.
std::vector<cco::MortalityRecord> read_mortality(const fs::path& path);
void write_mortality(const fs::path& path, std::span<const cco::MortalityRecord> records,
                     const Provenance& provenance = {});

/// One `date` column.
cco::HolidayCalendar read_holidays(const fs::path& path);
void write_holidays(const fs::path& path, const cco::HolidayCalendar& holidays);

/// `municipality_id,date,tmax,method`.
ExposureSurface read_surface(const fs::path& path);
void write_surface(const fs::path& path, const ExposureSurface& surface);

/// `municipality_id,date,heatwave,spec_id`; thresholds go in the header.
heatwave::HeatwaveCalendar read_heatwave(const fs::path& path);
void write_heatwave(const fs::path& path, const heatwave::HeatwaveCalendar& calendar,
                    const Provenance& provenance = {});

/// `stratum,case,date,municipality_id,exposure_<method>...,hw_<id>...,holiday`.
cco::Dataset read_dataset(const fs::path& path);
void write_dataset(const fs::path& path, const cco::Dataset& data, const Provenance& provenance = {});

/// `bin_mid,logrr_med,logrr_lo,logrr_hi,rr_norm`.
void write_curve(const fs::path& path, const epi::RiskCurve& curve, const Provenance& provenance = {});

/// Writes through a temporary file and a rename.
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace heatrisk::io
