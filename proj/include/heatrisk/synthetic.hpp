#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "heatrisk/casecrossover.hpp"
#include "heatrisk/domain.hpp"
#include "heatrisk/ggpm.hpp"
#include "heatrisk/heatwave.hpp"
#include "heatrisk/ingest.hpp"
#include "heatrisk/stats.hpp"

/// Synthetic study regions with known truths, for end-to-end checks.
namespace heatrisk::synthetic {

/// Effects injected into the cardio-respiratory death rate.
struct Effects {
  double holiday_rr = 0.89;
  double heatwave_rr = 1.05;
  double slope = 0.03;   // log-RR per degree above `knot`
  double knot = 28.0;
  std::string heatwave_spec = "q0.900_2dayslag";

  static Effects none() { return {1.0, 1.0, 0.0, 28.0, "q0.900_2dayslag"}; }
};

struct Scenario {
  // Region: nx x ny square municipalities centred on (lon0, lat0).
  int nx = 5;
  int ny = 4;
  double municipality_km = 20.0;
  double lon0 = 12.5;
  double lat0 = 42.0;

  int n_stations = 10;
  int first_year = 2010;
  int n_years = 2;
  ggpm::GgpmParams field{27.0, -0.8, 0.6, 4.0, 0.047, 1.0, 0.25};
  double seasonal_amplitude = 5.0;  // peak-to-mean, in degrees
  double missing_fraction = 0.02;   // isolated missing days

  double reanalysis_km = 10.0;
  double reanalysis_shrink = 0.75;  // cell = mean + shrink * (truth - mean) + bias
  double reanalysis_bias = -1.0;

  double population = 2.0e6;       // total, split across municipalities
  double daily_rate = 2.0e-5;      // cardio-respiratory deaths per person-day
  double neoplasm_rate = 1.0e-5;   // unaffected by heat
  double other_rate = 0.5e-5;
  Effects effects;

  void validate() const;
};

struct MortalityModel {
  double daily_rate = 2.0e-5;
  double neoplasm_rate = 0.0;
  double other_rate = 0.0;
  Effects effects;
  int exposure_window = 3;
  int heatwave_window = 3;
  SeasonWindow season = SeasonWindow::june_to_august();
};

/// Poisson deaths per municipality-day of `truth` inside the season window.
/// The cardio-respiratory rate is multiplied by exp(slope * max(T - knot, 0))
/// with T the mean of the three preceding days, by the holiday RR and, when
/// `heatwaves` is given, by the heatwave RR on linked days.
std::vector<cco::MortalityRecord> simulate_mortality(const ExposureSurface& truth,
                                                     std::span<const double> population,
                                                     const cco::HolidayCalendar& holidays,
                                                     const heatwave::HeatwaveCalendar* heatwaves,
                                                     const MortalityModel& model, Rng& rng);

struct Bundle {
  Scenario scenario;
  StudyPeriod period{2010, 2011};
  Projection projection;
  MunicipalityMap municipalities;
  std::vector<double> population;
  std::vector<StationSeries> stations;
  ingest::ReanalysisGrid reanalysis;
  ExposureSurface truth;  // field at municipality centroids
  heatwave::HeatwaveCalendar truth_heatwaves;
  cco::HolidayCalendar holidays;
  std::vector<cco::MortalityRecord> mortality;
};

Bundle make_synthetic(const Scenario& scenario, std::uint64_t seed);

/// JSON manifest of the scenario and realized counts.
std::string truths_json(const Bundle& bundle, std::uint64_t seed);

/// Writes stations.csv, municipalities.geojson, reanalysis.csv (daily),
/// mortality.csv, holidays.csv and truths.json into `dir`.
void write_bundle(const Bundle& bundle, std::uint64_t seed, const std::filesystem::path& dir);

}  // namespace heatrisk::synthetic
