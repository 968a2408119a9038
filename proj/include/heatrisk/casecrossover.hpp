#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "heatrisk/domain.hpp"
#include "heatrisk/heatwave.hpp"

/// Time-stratified case-crossover datasets: one stratum per death, with
/// control days sharing weekday, month and year.
namespace heatrisk::cco {

struct MortalityRecord {
  std::string id;
  Date date{};
  MunicipalityId municipality;
  int age = 0;
  char sex = 'F';  // 'F' or 'M'
  std::string icd10;
};

enum class CauseGroup { CardioRespiratory, Neoplasm, Other };

/// I00-I99 and J00-J99 are cardio-respiratory; C00-C97 are neoplasms.
CauseGroup classify(std::string_view icd10);
std::string to_string(CauseGroup g);
CauseGroup parse_cause_group(std::string_view s);

/// Half-open age interval [lower, upper).
struct AgeBand {
  int lower = 18;
  std::optional<int> upper;

  bool contains(int age) const { return age >= lower && (!upper || age < *upper); }
  std::string label() const;
  static std::vector<AgeBand> standard();  // [18,65), [65,80), [80,inf)
};

struct RecordFilter {
  CauseGroup cause = CauseGroup::CardioRespiratory;
  int min_age = 18;
  std::optional<char> sex;
  std::optional<AgeBand> age;
  SeasonWindow season = SeasonWindow::june_to_august();

  bool accepts(const MortalityRecord& r) const;
  std::string describe() const;
};

class HolidayCalendar {
 public:
  HolidayCalendar() = default;
  explicit HolidayCalendar(std::vector<Date> dates);
  /// Jun 2 and Aug 15 of every year in [first_year, last_year].
  static HolidayCalendar italian_summer(int first_year, int last_year);

  bool contains(const Date& d) const;
  const std::vector<Date>& dates() const { return dates_; }

 private:
  std::vector<Date> dates_;  // sorted, unique
};

/// Mean of the surface on the `window` days strictly before `date`, or the
/// `window` days ending at `date` when `include_event_day` is set. Throws
/// "coverage_gap" when a day is missing.
double lagged_exposure(const ExposureSurface& surface, std::size_t municipality, const Date& date,
                       int window = 3, bool include_event_day = false);

struct ExposureOptions {
  int window = 3;
  bool include_event_day = false;
  int heatwave_window = 3;  // event day plus this many preceding days
};

struct Row {
  std::size_t stratum = 0;
  bool is_case = false;
  Date date{};
  std::vector<double> exposure;       // per surface
  std::vector<std::uint8_t> heatwave; // per calendar
  bool holiday = false;
};

struct Stratum {
  std::string record_id;
  MunicipalityId municipality;
  std::size_t first_row = 0;
  std::size_t n_rows = 0;
};

struct Dataset {
  std::vector<std::string> methods;        // exposure column per surface
  std::vector<std::string> heatwave_ids;   // "<method>/<spec id>" per calendar
  std::vector<Stratum> strata;
  std::vector<Row> rows;
  std::vector<std::string> dropped;        // "<record id>: <reason>"

  std::size_t n_strata() const { return strata.size(); }
  std::size_t n_controls() const { return rows.size() - strata.size(); }
  double mean_controls() const;
  std::optional<std::size_t> method_index(std::string_view method) const;
  std::optional<std::size_t> heatwave_index(std::string_view id) const;
  /// Throws unless every stratum has one case, shares weekday/month/year
  /// and has no duplicate dates.
  void validate() const;
};

/// Strata are ordered by (event date, record id). Records whose exposure or
/// heatwave windows are not covered are dropped with a reason.
Dataset build_strata(std::span<const MortalityRecord> records,
                     std::span<const ExposureSurface> surfaces,
                     std::span<const heatwave::HeatwaveCalendar> calendars,
                     const HolidayCalendar& holidays, const RecordFilter& filter,
                     const ExposureOptions& options = {});

}  // namespace heatrisk::cco
