#include "heatrisk/calendar.hpp"

#include <charconv>
#include <cstdio>

#include "heatrisk/error.hpp"

namespace heatrisk {

using namespace std::chrono;

Date make_date(int y, unsigned m, unsigned d) {
  Date out{year{y}, month{m}, day{d}};
  if (!out.ok()) {
    throw Error("invalid_date", "invalid calendar date " + std::to_string(y) + "-" +
                                    std::to_string(m) + "-" + std::to_string(d));
  }
  return out;
}

Date parse_date(std::string_view iso) {
  auto field = [&](std::size_t pos, std::size_t len) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(iso.data() + pos, iso.data() + pos + len, v);
    if (ec != std::errc{} || ptr != iso.data() + pos + len) {
      throw Error("invalid_date", "cannot parse date '" + std::string(iso) + "'");
    }
    return v;
  };
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') {
    throw Error("invalid_date", "expected YYYY-MM-DD, got '" + std::string(iso) + "'");
  }
  return make_date(field(0, 4), static_cast<unsigned>(field(5, 2)),
                   static_cast<unsigned>(field(8, 2)));
}

std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

Date add_days(const Date& d, int n) { return Date{sys_days{d} + days{n}}; }

int days_between(const Date& a, const Date& b) {
  return static_cast<int>((sys_days{b} - sys_days{a}).count());
}

int serial(const Date& d) { return static_cast<int>(sys_days{d}.time_since_epoch().count()); }

unsigned iso_weekday(const Date& d) { return weekday{sys_days{d}}.iso_encoding(); }

int SeasonWindow::length(int y) const {
  return days_between(make_date(y, start.month, start.day), make_date(y, end.month, end.day)) + 1;
}

bool SeasonWindow::contains(const Date& d) const {
  const int y = static_cast<int>(d.year());
  const int from = days_between(make_date(y, start.month, start.day), d);
  const int to = days_between(d, make_date(y, end.month, end.day));
  return from >= 0 && to >= 0;
}

int SeasonWindow::day_of_season(const Date& d) const {
  if (!contains(d)) {
    throw Error("outside_season", format_date(d) + " is outside the season window");
  }
  return days_between(make_date(static_cast<int>(d.year()), start.month, start.day), d) + 1;
}

Date SeasonWindow::date_of(int y, int ell) const {
  if (ell < 1 || ell > length(y)) {
    throw Error("outside_season", "day of season " + std::to_string(ell) + " out of range");
  }
  return add_days(make_date(y, start.month, start.day), ell - 1);
}

StudyPeriod::StudyPeriod(int first_year, int last_year, SeasonWindow window)
    : first_year_(first_year), last_year_(last_year), window_(window) {
  if (last_year < first_year) {
    throw Error("invalid_period", "last year precedes first year");
  }
  if (window.length(first_year) <= 0) {
    throw Error("invalid_period", "season window is empty");
  }
  offsets_.push_back(0);
  for (int y = first_year; y <= last_year; ++y) {
    offsets_.push_back(offsets_.back() + static_cast<std::size_t>(window.length(y)));
  }
}

int StudyPeriod::season_length(std::size_t year_index) const {
  return static_cast<int>(offsets_[year_index + 1] - offsets_[year_index]);
}

std::optional<std::size_t> StudyPeriod::index_of(const Date& d) const {
  const int y = static_cast<int>(d.year());
  if (y < first_year_ || y > last_year_ || !window_.contains(d)) return std::nullopt;
  return offsets_[static_cast<std::size_t>(y - first_year_)] +
         static_cast<std::size_t>(window_.day_of_season(d) - 1);
}

DayKey StudyPeriod::key(std::size_t index) const {
  if (index >= n_days()) throw Error("outside_period", "day index out of range");
  std::size_t yi = 0;
  while (offsets_[yi + 1] <= index) ++yi;
  const int y = first_year_ + static_cast<int>(yi);
  const int ell = static_cast<int>(index - offsets_[yi]) + 1;
  return {y, ell, window_.date_of(y, ell)};
}

DayKey StudyPeriod::key(const Date& d) const {
  auto idx = index_of(d);
  if (!idx) throw Error("outside_period", format_date(d) + " is outside the study period");
  return key(*idx);
}

std::vector<Date> StudyPeriod::dates() const {
  std::vector<Date> out;
  out.reserve(n_days());
  for (int y = first_year_; y <= last_year_; ++y) {
    const int len = window_.length(y);
    for (int ell = 1; ell <= len; ++ell) out.push_back(window_.date_of(y, ell));
  }
  return out;
}

std::vector<Date> controls_for(const Date& event) {
  std::vector<Date> out;
  const year_month ym{event.year(), event.month()};
  const unsigned wd = iso_weekday(event);
  const Date first{ym / day{1}};
  const unsigned first_wd = iso_weekday(first);
  const unsigned offset = (wd + 7 - first_wd) % 7;
  const unsigned month_len = static_cast<unsigned>((ym / std::chrono::last).day());
  for (unsigned dd = 1 + offset; dd <= month_len; dd += 7) {
    const Date candidate{ym / day{dd}};
    if (candidate != event) out.push_back(candidate);
  }
  return out;
}

}  // namespace heatrisk
