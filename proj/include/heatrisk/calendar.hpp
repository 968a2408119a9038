#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace heatrisk {

using Date = std::chrono::year_month_day;

Date make_date(int year, unsigned month, unsigned day);
Date parse_date(std::string_view iso);  // YYYY-MM-DD
std::string format_date(const Date& d);
Date add_days(const Date& d, int n);
/// Signed number of days from `a` to `b`.
int days_between(const Date& a, const Date& b);
/// Days since 1970-01-01; a stable integer key for hashing dates.
int serial(const Date& d);
/// ISO weekday, Monday = 1 ... Sunday = 7.
unsigned iso_weekday(const Date& d);

struct MonthDay {
  unsigned month = 1;
  unsigned day = 1;
};

/// Inclusive within-year window, e.g. May 1 to Sep 30.
struct SeasonWindow {
  MonthDay start{5, 1};
  MonthDay end{9, 30};

  static SeasonWindow may_to_september() { return {{5, 1}, {9, 30}}; }
  static SeasonWindow june_to_august() { return {{6, 1}, {8, 31}}; }

  int length(int year) const;
  bool contains(const Date& d) const;
  /// 1-based index of `d` within its year's window; throws if outside.
  int day_of_season(const Date& d) const;
  Date date_of(int year, int day_of_season) const;
};

/// A study day: calendar year, 1-based day within the season window, and
/// the calendar date itself.
struct DayKey {
  int year = 0;
  int day_of_season = 0;
  Date date{};
};

/// Consecutive years restricted to one season window. Days are flattened
/// year-major into a single index so that per-station series can be plain
/// vectors.
class StudyPeriod {
 public:
  StudyPeriod(int first_year, int last_year,
              SeasonWindow window = SeasonWindow::may_to_september());

  int first_year() const { return first_year_; }
  int last_year() const { return last_year_; }
  const SeasonWindow& window() const { return window_; }
  std::size_t n_years() const { return offsets_.size() - 1; }
  std::size_t n_days() const { return offsets_.back(); }
  /// First flattened index of the year with 0-based index `year_index`.
  std::size_t year_offset(std::size_t year_index) const { return offsets_[year_index]; }
  int season_length(std::size_t year_index) const;

  std::optional<std::size_t> index_of(const Date& d) const;
  DayKey key(std::size_t index) const;
  DayKey key(const Date& d) const;
  Date date(std::size_t index) const { return key(index).date; }
  std::vector<Date> dates() const;

 private:
  int first_year_;
  int last_year_;
  SeasonWindow window_;
  std::vector<std::size_t> offsets_;
};

/// Time-stratified control days: every other date in the same calendar
/// month and year sharing the event's weekday.
std::vector<Date> controls_for(const Date& event);

}  // namespace heatrisk
