#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "heatrisk/domain.hpp"

namespace heatrisk::heatwave {

/// Run rule: exceedance runs of at least `min_run` days are heatwaves; the
/// first `exclude_first` days of each run are not flagged.
struct DurationPreset {
  std::string name;
  int min_run = 1;
  int exclude_first = 0;

  static DurationPreset base() { return {"base", 1, 0}; }
  static DurationPreset one_day_lag() { return {"1daylag", 2, 1}; }
  static DurationPreset two_days_lag() { return {"2dayslag", 3, 2}; }
  static std::vector<DurationPreset> presets();
  /// Accepts "base", "1daylag", "2dayslag" with or without a "heatwave_" prefix.
  static DurationPreset by_name(std::string_view name);
  void validate() const;
};

struct Threshold {
  enum class Kind { Quantile, Fixed };
  Kind kind = Kind::Quantile;
  double value = 0.90;  // quantile level or degrees C

  static Threshold quantile(double q) { return {Kind::Quantile, q}; }
  static Threshold fixed(double celsius = 35.0) { return {Kind::Fixed, celsius}; }
  std::string id() const;  // "q0.900" or "fixed35.0"
  void validate() const;
};

struct HeatwaveSpec {
  Threshold threshold;
  DurationPreset preset;

  std::string id() const { return threshold.id() + "_" + preset.name; }
  void validate() const { threshold.validate(); preset.validate(); }
};

/// Inverse of HeatwaveSpec::id(), e.g. "q0.900_2dayslag" or "fixed35.0_base".
HeatwaveSpec parse_spec(std::string_view id);

/// Three quantile thresholds plus the fixed 35 C one, crossed with all presets.
std::vector<HeatwaveSpec> default_specs();

/// Type-7 quantile of the municipality's pooled summer series, or the fixed
/// value. Needs at least 30 summer days.
double threshold_for(const ExposureSurface& surface, std::size_t municipality,
                     const Threshold& threshold,
                     const SeasonWindow& summer = SeasonWindow::june_to_august());

/// Flags for one contiguous series; exceedance is strict (T > threshold).
std::vector<bool> detect(std::span<const double> series, double threshold,
                         const DurationPreset& preset);

/// Municipality x date flags. Runs never cross gaps between consecutive
/// surface dates, so each season is detected separately.
struct HeatwaveCalendar {
  std::string spec_id;
  std::string method;
  std::vector<MunicipalityId> municipalities;
  std::vector<Date> dates;
  std::vector<double> thresholds;     // per municipality
  std::vector<std::uint8_t> flags;    // row-major municipalities x dates

  bool flag(std::size_t municipality, std::size_t date_index) const {
    return flags[municipality * dates.size() + date_index] != 0;
  }
  /// Fraction of flagged municipality-days.
  double prevalence() const;
};

HeatwaveCalendar build_calendar(const ExposureSurface& surface, const HeatwaveSpec& spec,
                                const SeasonWindow& summer = SeasonWindow::june_to_august());

/// True when a heatwave day falls on the event date or on any of the
/// `window` preceding dates. Throws "outside_coverage" for uncovered dates.
bool link_exposure(const HeatwaveCalendar& calendar, std::size_t municipality, const Date& event,
                   int window = 3);

}  // namespace heatrisk::heatwave
