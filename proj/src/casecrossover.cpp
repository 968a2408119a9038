#include "heatrisk/casecrossover.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_map>

#include "heatrisk/error.hpp"

namespace heatrisk::cco {

namespace {

struct SurfaceIndex {
  const ExposureSurface* surface = nullptr;
  std::unordered_map<MunicipalityId, std::size_t> municipality;
  std::unordered_map<int, std::size_t> date;

  explicit SurfaceIndex(const ExposureSurface& s) : surface(&s) {
    for (std::size_t i = 0; i < s.municipalities.size(); ++i) municipality.emplace(s.municipalities[i], i);
    for (std::size_t j = 0; j < s.dates.size(); ++j) date.emplace(serial(s.dates[j]), j);
  }

  double lagged(std::size_t m, const Date& d, int window, bool include_event_day) const {
    double sum = 0.0;
    for (int k = 1; k <= window; ++k) {
      const Date day = add_days(d, include_event_day ? 1 - k : -k);
      auto it = date.find(serial(day));
      if (it == date.end()) {
        throw Error("coverage_gap", format_date(day) + " is not covered by surface " + surface->method);
      }
      sum += surface->values(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(it->second));
    }
    return sum / window;
  }
};

}  // namespace

CauseGroup classify(std::string_view icd10) {
  if (icd10.size() < 3) return CauseGroup::Other;
  const char chapter = static_cast<char>(std::toupper(static_cast<unsigned char>(icd10[0])));
  if (!std::isdigit(static_cast<unsigned char>(icd10[1])) ||
      !std::isdigit(static_cast<unsigned char>(icd10[2]))) {
    return CauseGroup::Other;
  }
  const int num = (icd10[1] - '0') * 10 + (icd10[2] - '0');
  if (chapter == 'I' || chapter == 'J') return CauseGroup::CardioRespiratory;
  if (chapter == 'C' && num <= 97) return CauseGroup::Neoplasm;
  return CauseGroup::Other;
}

std::string to_string(CauseGroup g) {
  switch (g) {
    case CauseGroup::CardioRespiratory: return "cardiorespiratory";
    case CauseGroup::Neoplasm: return "neoplasm";
    case CauseGroup::Other: return "other";
  }
  return "other";
}

CauseGroup parse_cause_group(std::string_view s) {
  if (s == "cardiorespiratory") return CauseGroup::CardioRespiratory;
  if (s == "neoplasm") return CauseGroup::Neoplasm;
  if (s == "other") return CauseGroup::Other;
  throw Error("invalid_config", "unknown cause group '" + std::string(s) + "'");
}

std::string AgeBand::label() const {
  return std::to_string(lower) + (upper ? "-" + std::to_string(*upper - 1) : "+");
}

std::vector<AgeBand> AgeBand::standard() { return {{18, 65}, {65, 80}, {80, std::nullopt}}; }

bool RecordFilter::accepts(const MortalityRecord& r) const {
  if (r.age < min_age) return false;
  if (classify(r.icd10) != cause) return false;
  if (sex && r.sex != *sex) return false;
  if (age && !age->contains(r.age)) return false;
  return season.contains(r.date);
}

std::string RecordFilter::describe() const {
  std::string s = "cause=" + to_string(cause) + ";min_age=" + std::to_string(min_age);
  if (sex) s += std::string(";sex=") + *sex;
  if (age) s += ";age=" + age->label();
  return s;
}

HolidayCalendar::HolidayCalendar(std::vector<Date> dates) : dates_(std::move(dates)) {
  for (const auto& d : dates_) {
    if (!d.ok()) throw Error("invalid_date", "invalid holiday date");
  }
  auto less = [](const Date& a, const Date& b) { return serial(a) < serial(b); };
  std::sort(dates_.begin(), dates_.end(), less);
  dates_.erase(std::unique(dates_.begin(), dates_.end()), dates_.end());
}

HolidayCalendar HolidayCalendar::italian_summer(int first_year, int last_year) {
  std::vector<Date> d;
  for (int y = first_year; y <= last_year; ++y) {
    d.push_back(make_date(y, 6, 2));
    d.push_back(make_date(y, 8, 15));
  }
  return HolidayCalendar(std::move(d));
}

bool HolidayCalendar::contains(const Date& d) const {
  return std::binary_search(dates_.begin(), dates_.end(), d,
                            [](const Date& a, const Date& b) { return serial(a) < serial(b); });
}

double lagged_exposure(const ExposureSurface& surface, std::size_t municipality, const Date& date,
                       int window, bool include_event_day) {
  if (window < 1) throw Error("invalid_argument", "exposure window must be at least one day");
  if (municipality >= surface.municipalities.size()) {
    throw Error("invalid_argument", "municipality index out of range");
  }
  return SurfaceIndex(surface).lagged(municipality, date, window, include_event_day);
}

double Dataset::mean_controls() const {
  if (strata.empty()) return 0.0;
  return static_cast<double>(n_controls()) / static_cast<double>(n_strata());
}

std::optional<std::size_t> Dataset::method_index(std::string_view method) const {
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (methods[i] == method) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> Dataset::heatwave_index(std::string_view id) const {
  for (std::size_t i = 0; i < heatwave_ids.size(); ++i) {
    if (heatwave_ids[i] == id) return i;
  }
  return std::nullopt;
}

void Dataset::validate() const {
  for (std::size_t j = 0; j < strata.size(); ++j) {
    const auto& s = strata[j];
    if (s.n_rows < 2 || s.first_row + s.n_rows > rows.size()) {
      throw Error("invalid_dataset", "stratum " + std::to_string(j) + " is malformed");
    }
    int cases = 0;
    const Date ref = rows[s.first_row].date;
    std::vector<int> seen;
    for (std::size_t r = s.first_row; r < s.first_row + s.n_rows; ++r) {
      const auto& row = rows[r];
      cases += row.is_case ? 1 : 0;
      if (row.stratum != j || row.date.year() != ref.year() || row.date.month() != ref.month() ||
          iso_weekday(row.date) != iso_weekday(ref)) {
        throw Error("invalid_dataset", "stratum " + std::to_string(j) + " mixes reference days");
      }
      seen.push_back(serial(row.date));
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
      throw Error("invalid_dataset", "stratum " + std::to_string(j) + " has duplicate dates");
    }
    if (cases != 1) {
      throw Error("invalid_dataset", "stratum " + std::to_string(j) + " must have one case");
    }
  }
}

Dataset build_strata(std::span<const MortalityRecord> records,
                     std::span<const ExposureSurface> surfaces,
                     std::span<const heatwave::HeatwaveCalendar> calendars,
                     const HolidayCalendar& holidays, const RecordFilter& filter,
                     const ExposureOptions& options) {
  if (options.window < 1 || options.heatwave_window < 0) {
    throw Error("invalid_config", "exposure windows must be positive");
  }
  Dataset out;
  std::vector<SurfaceIndex> index;
  for (const auto& s : surfaces) {
    out.methods.push_back(s.method);
    index.emplace_back(s);
  }
  std::vector<std::unordered_map<MunicipalityId, std::size_t>> cal_index;
  for (const auto& c : calendars) {
    out.heatwave_ids.push_back(c.method + "/" + c.spec_id);
    auto& m = cal_index.emplace_back();
    for (std::size_t i = 0; i < c.municipalities.size(); ++i) m.emplace(c.municipalities[i], i);
  }

  std::vector<const MortalityRecord*> kept;
  for (const auto& r : records) {
    if (filter.accepts(r)) kept.push_back(&r);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const MortalityRecord* a, const MortalityRecord* b) {
    const int da = serial(a->date), db = serial(b->date);
    return da != db ? da < db : a->id < b->id;
  });

  for (const MortalityRecord* rec : kept) {
    std::vector<Date> days = controls_for(rec->date);
    days.push_back(rec->date);
    std::sort(days.begin(), days.end(),
              [](const Date& a, const Date& b) { return serial(a) < serial(b); });
    std::vector<Row> rows(days.size());
    try {
      for (std::size_t k = 0; k < days.size(); ++k) {
        rows[k].stratum = out.strata.size();
        rows[k].date = days[k];
        rows[k].is_case = days[k] == rec->date;
        rows[k].holiday = holidays.contains(days[k]);
      }
      for (const auto& si : index) {
        auto m = si.municipality.find(rec->municipality);
        if (m == si.municipality.end()) {
          throw Error("missing_municipality",
                      "municipality " + rec->municipality + " missing from surface " + si.surface->method);
        }
        for (auto& row : rows) {
          row.exposure.push_back(si.lagged(m->second, row.date, options.window, options.include_event_day));
        }
      }
      for (std::size_t c = 0; c < calendars.size(); ++c) {
        auto m = cal_index[c].find(rec->municipality);
        if (m == cal_index[c].end()) {
          throw Error("missing_municipality", "municipality " + rec->municipality +
                                                  " missing from heatwave calendar " + out.heatwave_ids[c]);
        }
        for (auto& row : rows) {
          row.heatwave.push_back(
              heatwave::link_exposure(calendars[c], m->second, row.date, options.heatwave_window) ? 1 : 0);
        }
      }
    } catch (const Error& e) {
      out.dropped.push_back(rec->id + ": " + e.what());
      continue;
    }
    out.strata.push_back({rec->id, rec->municipality, out.rows.size(), rows.size()});
    for (auto& row : rows) out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace heatrisk::cco
