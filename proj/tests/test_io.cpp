#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include <unistd.h>

#include "heatrisk/calendar.hpp"
#include "heatrisk/error.hpp"
#include "heatrisk/io.hpp"
#include "heatrisk/synthetic.hpp"

using namespace heatrisk;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("heatrisk-io-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

std::string code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

synthetic::Bundle small_bundle() {
  synthetic::Scenario s;
  s.nx = 3;
  s.ny = 2;
  s.n_stations = 5;
  s.population = 2e5;
  return synthetic::make_synthetic(s, 3);
}

}  // namespace

TEST_CASE("number formatting round trips") {
  CHECK(io::format_number(0.1) == "0.1");
  CHECK(io::format_number(25.0) == "25");
  CHECK(io::format_number(NAN).empty());
  CHECK(std::isnan(io::parse_number("")));
  CHECK(std::isnan(io::parse_number("NA")));
  CHECK_THROWS_AS(io::parse_number("abc"), Error);
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double v = std::ldexp(sample_normal(rng), int(sample_uniform(rng) * 40) - 20);
    CHECK(io::parse_number(io::format_number(v)) == v);
  }
}

TEST_CASE("csv tables and provenance") {
  TempDir dir;
  io::CsvTable t;
  t.provenance = {{"seed", "7"}, {"stage", "test"}};
  t.header = {"a", "b"};
  t.rows = {{"1", "x"}, {"2", "y"}};
  io::write_csv(dir / "t.csv", t);
  const auto back = io::read_csv(dir / "t.csv");
  CHECK(back.provenance == t.provenance);
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
  CHECK(back.column("b") == 1);
  CHECK(code_of([&] { (void)back.column("zzz"); }) == "bad_input");
  CHECK(io::read_provenance(dir / "t.csv").at("stage") == "test");
  CHECK(code_of([&] { io::read_csv(dir / "absent.csv"); }) == "missing_artifact");
  io::write_text(dir / "ragged.csv", "a,b\n1\n");
  CHECK(code_of([&] { io::read_csv(dir / "ragged.csv"); }) == "bad_input");
}

TEST_CASE("input bundle round trips") {
  TempDir dir;
  const auto b = small_bundle();

  io::write_stations(dir / "stations.csv", b.stations, b.period, b.projection);
  const auto st = io::read_stations(dir / "stations.csv", b.period, b.projection);
  REQUIRE(st.size() == b.stations.size());
  for (std::size_t i = 0; i < st.size(); ++i) {
    CHECK(st[i].id == b.stations[i].id);
    CHECK(st[i].altitude == b.stations[i].altitude);
    CHECK(std::abs(st[i].location.x - b.stations[i].location.x) < 1e-6);
    for (std::size_t t = 0; t < st[i].values.size(); ++t) {
      const double u = st[i].values[t], v = b.stations[i].values[t];
      CHECK(((std::isnan(u) && std::isnan(v)) || u == v));
    }
  }

  io::write_municipalities(dir / "m.geojson", b.municipalities, b.projection);
  const auto m = io::read_municipalities(dir / "m.geojson", b.projection);
  REQUIRE(m.size() == b.municipalities.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(m[i].id == b.municipalities[i].id);
    CHECK(m[i].area_km2 == doctest::Approx(b.municipalities[i].area_km2).epsilon(1e-9));
  }

  io::write_reanalysis_daily(dir / "r.csv", b.reanalysis, b.projection);
  const auto r = io::read_reanalysis(dir / "r.csv", b.projection, true);
  CHECK(r.cells.size() == b.reanalysis.cells.size());
  CHECK(r.dates == b.reanalysis.dates);
  CHECK(r.cells[1].tmax == b.reanalysis.cells[1].tmax);

  io::write_mortality(dir / "d.csv", b.mortality);
  const auto d = io::read_mortality(dir / "d.csv");
  REQUIRE(d.size() == b.mortality.size());
  CHECK(d.back().id == b.mortality.back().id);
  CHECK(d.back().date == b.mortality.back().date);
  CHECK(d.back().icd10 == b.mortality.back().icd10);

  io::write_holidays(dir / "h.csv", b.holidays);
  CHECK(io::read_holidays(dir / "h.csv").dates() == b.holidays.dates());
}

TEST_CASE("artifact round trips") {
  TempDir dir;
  const auto b = small_bundle();
  auto s = b.truth;
  s.provenance = {{"stage", "surface"}};
  io::write_surface(dir / "s.csv", s);
  const auto s2 = io::read_surface(dir / "s.csv");
  CHECK(s2.method == s.method);
  CHECK(s2.municipalities == s.municipalities);
  CHECK(s2.dates == s.dates);
  CHECK(s2.values == s.values);
  CHECK(s2.provenance.at("stage") == "surface");

  io::write_heatwave(dir / "hw.csv", b.truth_heatwaves);
  const auto hw = io::read_heatwave(dir / "hw.csv");
  CHECK(hw.spec_id == b.truth_heatwaves.spec_id);
  CHECK(hw.flags == b.truth_heatwaves.flags);
  CHECK(hw.thresholds == b.truth_heatwaves.thresholds);

  const std::vector<ExposureSurface> surfaces{b.truth};
  const std::vector<heatwave::HeatwaveCalendar> cals{b.truth_heatwaves};
  const auto ds = cco::build_strata(b.mortality, surfaces, cals, b.holidays, {});
  io::write_dataset(dir / "ds.csv", ds);
  const auto ds2 = io::read_dataset(dir / "ds.csv");
  CHECK(ds2.methods == ds.methods);
  CHECK(ds2.heatwave_ids == ds.heatwave_ids);
  REQUIRE(ds2.rows.size() == ds.rows.size());
  for (std::size_t i = 0; i < ds.rows.size(); ++i) {
    CHECK(ds2.rows[i].exposure == ds.rows[i].exposure);
    CHECK(ds2.rows[i].heatwave == ds.rows[i].heatwave);
    CHECK(ds2.rows[i].is_case == ds.rows[i].is_case);
  }
  // Rewriting is byte-identical.
  io::write_dataset(dir / "ds2.csv", ds2);
  CHECK(io::read_text(dir / "ds.csv") == io::read_text(dir / "ds2.csv"));

  epi::RiskCurve rc;
  rc.bin_mid = {20.5, 21.5};
  rc.logrr_median = {0.0, 0.1};
  rc.logrr_lower = {-0.1, 0.0};
  rc.logrr_upper = {0.1, 0.2};
  rc.rr = {1.0, std::exp(0.1)};
  io::write_curve(dir / "c.csv", rc, {{"seed", "1"}});
  const auto c = io::read_csv(dir / "c.csv");
  CHECK(c.header == std::vector<std::string>{"bin_mid", "logrr_med", "logrr_lo", "logrr_hi", "rr_norm"});
  CHECK(c.rows.size() == 2);
}
