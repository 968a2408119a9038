#include <doctest.h>

#include <set>

#include "heatrisk/calendar.hpp"
#include "heatrisk/casecrossover.hpp"
#include "heatrisk/error.hpp"
#include "heatrisk/stats.hpp"

using namespace heatrisk;
using namespace heatrisk::cco;

namespace {

// May to September so that early-June lags are covered.
ExposureSurface surface(int first_year, int last_year, std::size_t n_muni, double (*f)(std::size_t, int)) {
  ExposureSurface s;
  s.method = "test";
  const auto w = SeasonWindow::may_to_september();
  for (int y = first_year; y <= last_year; ++y) {
    for (int d = 1; d <= w.length(y); ++d) s.dates.push_back(w.date_of(y, d));
  }
  s.values.resize(Eigen::Index(n_muni), Eigen::Index(s.dates.size()));
  for (std::size_t m = 0; m < n_muni; ++m) {
    s.municipalities.push_back("M" + std::to_string(m));
    for (std::size_t t = 0; t < s.dates.size(); ++t) s.values(Eigen::Index(m), Eigen::Index(t)) = f(m, int(t));
  }
  s.reindex();
  return s;
}

std::vector<MortalityRecord> one_death_per_day(int first_year, int last_year, std::size_t n_muni) {
  std::vector<MortalityRecord> out;
  const auto w = SeasonWindow::june_to_august();
  int id = 0;
  for (int y = first_year; y <= last_year; ++y) {
    for (int d = 1; d <= w.length(y); ++d) {
      for (std::size_t m = 0; m < n_muni; ++m) {
        MortalityRecord r;
        r.id = "R" + std::to_string(100000 + id);
        r.date = w.date_of(y, d);
        r.municipality = "M" + std::to_string(m);
        r.age = 18 + (id * 7) % 80;
        r.sex = id % 2 ? 'M' : 'F';
        r.icd10 = id % 5 == 0 ? "J18" : "I21";
        out.push_back(r);
        ++id;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("cause groups and age bands") {
  CHECK(classify("I21.9") == CauseGroup::CardioRespiratory);
  CHECK(classify("J99") == CauseGroup::CardioRespiratory);
  CHECK(classify("C34") == CauseGroup::Neoplasm);
  CHECK(classify("C97") == CauseGroup::Neoplasm);
  CHECK(classify("D10") == CauseGroup::Other);
  CHECK(classify("K50") == CauseGroup::Other);
  CHECK(parse_cause_group(to_string(CauseGroup::Neoplasm)) == CauseGroup::Neoplasm);
  const auto bands = AgeBand::standard();
  REQUIRE(bands.size() == 3);
  CHECK(bands[0].contains(64));
  CHECK_FALSE(bands[0].contains(65));
  CHECK(bands[1].contains(65));
  CHECK(bands[2].contains(80));
  CHECK(bands[2].contains(110));
}

TEST_CASE("holiday calendar") {
  const auto h = HolidayCalendar::italian_summer(2010, 2011);
  CHECK(h.dates().size() == 4);
  CHECK(h.contains(make_date(2011, 8, 15)));
  CHECK_FALSE(h.contains(make_date(2011, 8, 16)));
}

TEST_CASE("lagged exposure") {
  const auto c = surface(2010, 2010, 1, [](std::size_t, int) { return 30.0; });
  CHECK(lagged_exposure(c, 0, make_date(2010, 7, 10)) == 30.0);
  // Day index t has value t, so the three days before index k average to k - 2.
  const auto r = surface(2010, 2010, 2, [](std::size_t m, int t) { return double(t) + 100.0 * double(m); });
  const auto date = make_date(2010, 7, 10);
  const double k = double(*r.date_index(date));
  CHECK(lagged_exposure(r, 0, date) == doctest::Approx(k - 2));
  CHECK(lagged_exposure(r, 1, date, 1) == doctest::Approx(100 + k - 1));
  CHECK(lagged_exposure(r, 0, date, 3, true) == doctest::Approx(k - 1));
  CHECK(lagged_exposure(r, 0, make_date(2010, 6, 1)) == doctest::Approx(29.0));
  CHECK_THROWS_AS(lagged_exposure(r, 0, make_date(2010, 5, 2)), Error);
  CHECK_THROWS_AS(lagged_exposure(r, 0, date, 0), Error);
}

TEST_CASE("strata structure on a full-summer population") {
  const auto s = surface(2010, 2013, 3, [](std::size_t m, int t) { return 25 + double(m) + 0.01 * t; });
  const auto records = one_death_per_day(2010, 2013, 3);
  const std::vector<ExposureSurface> surfaces{s};
  const auto ds = build_strata(records, surfaces, {}, HolidayCalendar::italian_summer(2010, 2013), {});
  CHECK(ds.n_strata() == records.size());
  CHECK(ds.dropped.empty());
  CHECK_NOTHROW(ds.validate());
  std::size_t bad = 0;
  for (const auto& st : ds.strata) {
    const auto n_controls = st.n_rows - 1;
    if (n_controls < 3 || n_controls > 4) ++bad;
    Date event{};
    std::set<int> seen;
    int cases = 0;
    for (std::size_t r = st.first_row; r < st.first_row + st.n_rows; ++r) {
      if (ds.rows[r].is_case) {
        event = ds.rows[r].date;
        ++cases;
      }
      seen.insert(serial(ds.rows[r].date));
    }
    if (cases != 1 || seen.size() != st.n_rows) ++bad;
    for (std::size_t r = st.first_row; r < st.first_row + st.n_rows; ++r) {
      const Date d = ds.rows[r].date;
      if ((serial(d) - serial(event)) % 7 != 0 || d.month() != event.month() || d.year() != event.year()) ++bad;
    }
  }
  CHECK(bad == 0);
  CHECK(ds.mean_controls() >= 3.3);
  CHECK(ds.mean_controls() <= 3.5);

  // Holiday rows are flagged wherever the date is a holiday.
  for (const auto& row : ds.rows) {
    const bool h = (unsigned(row.date.month()) == 6 && unsigned(row.date.day()) == 2) ||
                   (unsigned(row.date.month()) == 8 && unsigned(row.date.day()) == 15);
    CHECK(row.holiday == h);
  }

  // Rebuilding from shuffled input gives the same ordering.
  auto shuffled = records;
  Rng rng(3);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto again = build_strata(shuffled, surfaces, {}, HolidayCalendar::italian_summer(2010, 2013), {});
  REQUIRE(again.rows.size() == ds.rows.size());
  for (std::size_t i = 0; i < ds.strata.size(); ++i) CHECK(again.strata[i].record_id == ds.strata[i].record_id);
  for (std::size_t i = 0; i < ds.rows.size(); ++i) CHECK(again.rows[i].exposure == ds.rows[i].exposure);
}

TEST_CASE("filters and drops") {
  const auto s = surface(2010, 2010, 2, [](std::size_t, int t) { return 20.0 + 0.1 * t; });
  auto records = one_death_per_day(2010, 2010, 2);
  MortalityRecord away = records.front();
  away.id = "Z";
  away.municipality = "elsewhere";
  records.push_back(away);
  MortalityRecord child = records.front();
  child.id = "Y";
  child.age = 12;
  records.push_back(child);
  MortalityRecord may = records.front();
  may.id = "X";
  may.date = make_date(2010, 5, 20);
  records.push_back(may);
  const std::vector<ExposureSurface> surfaces{s};

  RecordFilter f;
  f.sex = 'F';
  f.age = AgeBand{80, std::nullopt};
  const auto ds = build_strata(records, surfaces, {}, {}, f);
  CHECK(ds.n_strata() > 0);
  for (const auto& st : ds.strata) {
    const auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.id == st.record_id; });
    REQUIRE(it != records.end());
    CHECK(it->sex == 'F');
    CHECK(it->age >= 80);
    CHECK(classify(it->icd10) == CauseGroup::CardioRespiratory);
  }

  const auto all = build_strata(records, surfaces, {}, {}, {});
  CHECK(all.dropped.size() == 1);
  CHECK(all.dropped.front().rfind("Z: ", 0) == 0);
  for (const auto& st : all.strata) {
    CHECK(st.record_id != "Y");
    CHECK(st.record_id != "X");
  }
  RecordFilter neo;
  neo.cause = CauseGroup::Neoplasm;
  CHECK(build_strata(records, surfaces, {}, {}, neo).n_strata() == 0);
}
