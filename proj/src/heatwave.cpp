#include "heatrisk/heatwave.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "heatrisk/error.hpp"
#include "heatrisk/stats.hpp"

namespace heatrisk::heatwave {

std::vector<DurationPreset> DurationPreset::presets() {
  return {base(), one_day_lag(), two_days_lag()};
}

DurationPreset DurationPreset::by_name(std::string_view name) {
  if (name.starts_with("heatwave_")) name.remove_prefix(9);
  for (auto p : presets()) {
    if (p.name == name) return p;
  }
  throw Error("invalid_config", "unknown heatwave preset '" + std::string(name) + "'");
}

void DurationPreset::validate() const {
  if (min_run < 1 || exclude_first < 0 || exclude_first >= min_run) {
    throw Error("invalid_config", "heatwave preset " + name + " needs 0 <= exclude_first < min_run");
  }
}

std::string Threshold::id() const {
  char buf[32];
  if (kind == Kind::Quantile) {
    std::snprintf(buf, sizeof buf, "q%.3f", value);
  } else {
    std::snprintf(buf, sizeof buf, "fixed%.1f", value);
  }
  return buf;
}

void Threshold::validate() const {
  if (kind == Kind::Quantile && !(value > 0.0 && value < 1.0)) {
    throw Error("invalid_config", "quantile threshold must lie in (0,1)");
  }
  if (!std::isfinite(value)) throw Error("invalid_config", "threshold must be finite");
}

HeatwaveSpec parse_spec(std::string_view id) {
  const auto us = id.find('_');
  if (us == std::string_view::npos) throw Error("invalid_config", "bad heatwave spec '" + std::string(id) + "'");
  const std::string thr(id.substr(0, us));
  HeatwaveSpec spec;
  try {
    if (thr.starts_with("q")) {
      spec.threshold = Threshold::quantile(std::stod(thr.substr(1)));
    } else if (thr.starts_with("fixed")) {
      spec.threshold = Threshold::fixed(std::stod(thr.substr(5)));
    } else {
      throw std::invalid_argument(thr);
    }
  } catch (const std::logic_error&) {
    throw Error("invalid_config", "bad heatwave threshold '" + thr + "'");
  }
  spec.preset = DurationPreset::by_name(id.substr(us + 1));
  spec.validate();
  return spec;
}

std::vector<HeatwaveSpec> default_specs() {
  std::vector<HeatwaveSpec> out;
  for (const auto& t : {Threshold::quantile(0.90), Threshold::quantile(0.925),
                        Threshold::quantile(0.95), Threshold::fixed(35.0)}) {
    for (const auto& p : DurationPreset::presets()) out.push_back({t, p});
  }
  return out;
}

double threshold_for(const ExposureSurface& surface, std::size_t municipality,
                     const Threshold& threshold, const SeasonWindow& summer) {
  threshold.validate();
  if (threshold.kind == Threshold::Kind::Fixed) return threshold.value;
  if (municipality >= surface.municipalities.size()) {
    throw Error("invalid_argument", "municipality index out of range");
  }
  std::vector<double> series;
  for (std::size_t j = 0; j < surface.dates.size(); ++j) {
    if (summer.contains(surface.dates[j])) {
      series.push_back(surface.values(static_cast<Eigen::Index>(municipality),
                                      static_cast<Eigen::Index>(j)));
    }
  }
  if (series.size() < 30) {
    throw Error("series_too_short", "need at least 30 summer days to set a quantile threshold");
  }
  return quantile_type7(series, threshold.value);
}

std::vector<bool> detect(std::span<const double> series, double threshold,
                         const DurationPreset& preset) {
  preset.validate();
  std::vector<bool> out(series.size(), false);
  std::size_t i = 0;
  while (i < series.size()) {
    if (!(series[i] > threshold)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < series.size() && series[j] > threshold) ++j;
    if (static_cast<int>(j - i) >= preset.min_run) {
      for (std::size_t k = i + static_cast<std::size_t>(preset.exclude_first); k < j; ++k) {
        out[k] = true;
      }
    }
    i = j;
  }
  return out;
}

double HeatwaveCalendar::prevalence() const {
  if (flags.empty()) return 0.0;
  std::size_t n = 0;
  for (auto f : flags) n += f;
  return static_cast<double>(n) / static_cast<double>(flags.size());
}

HeatwaveCalendar build_calendar(const ExposureSurface& surface, const HeatwaveSpec& spec,
                                const SeasonWindow& summer) {
  spec.validate();
  surface.validate();
  HeatwaveCalendar cal;
  cal.spec_id = spec.id();
  cal.method = surface.method;
  cal.municipalities = surface.municipalities;
  cal.dates = surface.dates;
  const std::size_t nd = surface.dates.size();
  cal.flags.assign(surface.municipalities.size() * nd, 0);
  // Contiguous blocks of consecutive dates.
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  for (std::size_t j = 0; j < nd;) {
    std::size_t k = j + 1;
    while (k < nd && days_between(surface.dates[k - 1], surface.dates[k]) == 1) ++k;
    blocks.emplace_back(j, k);
    j = k;
  }
  std::vector<double> series;
  for (std::size_t m = 0; m < surface.municipalities.size(); ++m) {
    const double thr = threshold_for(surface, m, spec.threshold, summer);
    cal.thresholds.push_back(thr);
    for (const auto& [b, e] : blocks) {
      series.resize(e - b);
      for (std::size_t j = b; j < e; ++j) {
        series[j - b] = surface.values(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j));
      }
      const auto f = detect(series, thr, spec.preset);
      for (std::size_t j = b; j < e; ++j) cal.flags[m * nd + j] = f[j - b] ? 1 : 0;
    }
  }
  return cal;
}

bool link_exposure(const HeatwaveCalendar& calendar, std::size_t municipality, const Date& event,
                   int window) {
  if (municipality >= calendar.municipalities.size()) {
    throw Error("invalid_argument", "municipality index out of range");
  }
  if (window < 0) throw Error("invalid_argument", "window must be non-negative");
  bool hit = false;
  for (int back = 0; back <= window; ++back) {
    const Date d = add_days(event, -back);
    // Dates are sorted; locate by binary search on the serial day number.
    auto it = std::lower_bound(calendar.dates.begin(), calendar.dates.end(), d,
                               [](const Date& a, const Date& b) { return serial(a) < serial(b); });
    if (it == calendar.dates.end() || *it != d) {
      throw Error("outside_coverage",
                  format_date(d) + " is not covered by heatwave calendar " + calendar.spec_id);
    }
    hit = hit || calendar.flag(municipality, static_cast<std::size_t>(it - calendar.dates.begin()));
  }
  return hit;
}

}  // namespace heatrisk::heatwave
