#include "heatrisk/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "heatrisk/error.hpp"
#include "heatrisk/io.hpp"

namespace heatrisk::synthetic {

using nlohmann::json;

namespace {

const char* const kCardio[] = {"I219", "I500", "I639", "J189", "J449"};
const char* const kNeoplasm[] = {"C349", "C189", "C509", "C61"};
const char* const kOther[] = {"E119", "G309", "K703", "N189"};

template <std::size_t N>
const char* pick(const char* const (&codes)[N], Rng& rng) {
  return codes[std::min<std::size_t>(N - 1, static_cast<std::size_t>(sample_uniform(rng) * N))];
}

int sample_age(Rng& rng) {
  const double u = sample_uniform(rng);
  const double v = sample_uniform(rng);
  if (u < 0.15) return 18 + static_cast<int>(v * 47);   // 18-64
  if (u < 0.50) return 65 + static_cast<int>(v * 15);   // 65-79
  return 80 + static_cast<int>(v * 21);                 // 80-100
}

std::string record_id(std::size_t n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "d%07zu", n);
  return buf;
}

}  // namespace

void Scenario::validate() const {
  if (nx < 1 || ny < 1 || !(municipality_km > 0)) throw Error("invalid_config", "bad synthetic region");
  if (n_stations < 3) throw Error("invalid_config", "synthetic scenario needs at least 3 stations");
  if (n_years < 1) throw Error("invalid_config", "synthetic scenario needs at least one year");
  field.validate();
  if (!(missing_fraction >= 0 && missing_fraction < 0.2)) {
    throw Error("invalid_config", "missing fraction must lie in [0, 0.2)");
  }
  if (!(reanalysis_km > 0)) throw Error("invalid_config", "reanalysis cell size must be positive");
  if (!(population > 0) || !(daily_rate >= 0) || !(neoplasm_rate >= 0) || !(other_rate >= 0)) {
    throw Error("invalid_config", "population and rates must be non-negative");
  }
  if (!(effects.holiday_rr > 0) || !(effects.heatwave_rr > 0)) {
    throw Error("invalid_config", "rate ratios must be positive");
  }
}

std::vector<cco::MortalityRecord> simulate_mortality(const ExposureSurface& truth,
                                                     std::span<const double> population,
                                                     const cco::HolidayCalendar& holidays,
                                                     const heatwave::HeatwaveCalendar* heatwaves,
                                                     const MortalityModel& model, Rng& rng) {
  if (population.size() != truth.municipalities.size()) {
    throw Error("invalid_argument", "one population per municipality is required");
  }
  std::vector<cco::MortalityRecord> out;
  const auto nd = truth.dates.size();
  for (std::size_t m = 0; m < truth.municipalities.size(); ++m) {
    for (std::size_t d = 0; d < nd; ++d) {
      const Date date = truth.dates[d];
      if (!model.season.contains(date)) continue;
      double rr = 1.0;
      if (model.effects.slope != 0.0) {
        double t;
        try {
          t = cco::lagged_exposure(truth, m, date, model.exposure_window);
        } catch (const Error&) {
          continue;
        }
        rr *= std::exp(model.effects.slope * std::max(t - model.effects.knot, 0.0));
      }
      if (holidays.contains(date)) rr *= model.effects.holiday_rr;
      if (heatwaves && model.effects.heatwave_rr != 1.0) {
        try {
          if (heatwave::link_exposure(*heatwaves, m, date, model.heatwave_window)) rr *= model.effects.heatwave_rr;
        } catch (const Error&) {
          continue;
        }
      }
      auto emit = [&](double mean, auto& codes) {
        const auto n = sample_poisson(rng, mean);
        for (std::uint64_t i = 0; i < n; ++i) {
          cco::MortalityRecord r;
          r.id = record_id(out.size() + 1);
          r.date = date;
          r.municipality = truth.municipalities[m];
          r.age = sample_age(rng);
          r.sex = sample_uniform(rng) < 0.52 ? 'F' : 'M';
          r.icd10 = pick(codes, rng);
          out.push_back(std::move(r));
        }
      };
      emit(population[m] * model.daily_rate * rr, kCardio);
      if (model.neoplasm_rate > 0) emit(population[m] * model.neoplasm_rate, kNeoplasm);
      if (model.other_rate > 0) emit(population[m] * model.other_rate, kOther);
    }
  }
  return out;
}

Bundle make_synthetic(const Scenario& sc, std::uint64_t seed) {
  sc.validate();
  const RngStreams streams(seed);
  Bundle b;
  b.scenario = sc;
  b.period = StudyPeriod(sc.first_year, sc.first_year + sc.n_years - 1);
  b.projection = Projection{Projection::Kind::Equirectangular, sc.lon0, sc.lat0};

  // Region centred on the projection origin.
  const double w = sc.nx * sc.municipality_km, h = sc.ny * sc.municipality_km;
  const double x0 = -w / 2, y0 = -h / 2;
  Rng geo = streams.stream("synthetic/geometry");
  std::vector<Municipality> munis;
  for (int j = 0; j < sc.ny; ++j) {
    for (int i = 0; i < sc.nx; ++i) {
      Municipality m;
      char id[32];
      std::snprintf(id, sizeof id, "M%02d%02d", j, i);
      m.id = id;
      const Rect r{x0 + i * sc.municipality_km, y0 + j * sc.municipality_km, x0 + (i + 1) * sc.municipality_km,
                   y0 + (j + 1) * sc.municipality_km};
      m.shape = rectangle_polygon(r);
      m.altitude_m = std::round(800.0 * sample_uniform(geo));
      munis.push_back(std::move(m));
    }
  }
  b.municipalities = MunicipalityMap(std::move(munis));
  const std::size_t nm = b.municipalities.size();
  double wsum = 0.0;
  for (std::size_t m = 0; m < nm; ++m) {
    b.population.push_back(0.5 + sample_uniform(geo));
    wsum += b.population.back();
  }
  for (auto& p : b.population) p = std::round(p / wsum * sc.population);

  // Stations scattered away from the outer edge.
  std::vector<Point> sites;
  std::vector<double> site_alt;
  for (int s = 0; s < sc.n_stations; ++s) {
    StationSeries st;
    char id[16];
    std::snprintf(id, sizeof id, "S%03d", s + 1);
    st.id = id;
    st.location = {x0 + w * (0.05 + 0.9 * sample_uniform(geo)), y0 + h * (0.05 + 0.9 * sample_uniform(geo))};
    st.altitude = std::round(800.0 * sample_uniform(geo));
    sites.push_back(st.location);
    site_alt.push_back(st.altitude);
    b.stations.push_back(std::move(st));
  }
  const Standardizer stdz = Standardizer::fit(site_alt);

  // Reanalysis cells.
  const int cx = std::max(1, static_cast<int>(std::lround(w / sc.reanalysis_km)));
  const int cy = std::max(1, static_cast<int>(std::lround(h / sc.reanalysis_km)));
  std::vector<Rect> cells;
  for (int j = 0; j < cy; ++j) {
    for (int i = 0; i < cx; ++i) {
      cells.push_back({x0 + i * w / cx, y0 + j * h / cy, x0 + (i + 1) * w / cx, y0 + (j + 1) * h / cy});
    }
  }

  // Joint field over stations, municipality centroids and cell centres.
  std::vector<Point> pts = sites;
  std::vector<double> alt_std = stdz.apply(site_alt);
  for (std::size_t m = 0; m < nm; ++m) {
    pts.push_back(b.municipalities[m].centroid);
    alt_std.push_back(stdz.apply(b.municipalities[m].altitude_m));
  }
  for (const auto& c : cells) {
    pts.push_back(c.center());
    const auto m = b.municipalities.locate(c.center());
    alt_std.push_back(stdz.apply(m ? b.municipalities[*m].altitude_m : 400.0));
  }
  const std::size_t ns = sites.size();
  const auto dates = b.period.dates();
  for (auto& st : b.stations) st.values.assign(dates.size(), 0.0);
  b.truth.method = "truth";
  b.truth.municipalities = b.municipalities.ids();
  b.truth.dates = dates;
  b.truth.values.resize(static_cast<Eigen::Index>(nm), static_cast<Eigen::Index>(dates.size()));
  b.reanalysis.dates = dates;
  b.reanalysis.resolution_km = sc.reanalysis_km;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    char id[32];
    std::snprintf(id, sizeof id, "C%03zu", k + 1);
    b.reanalysis.cells.push_back({id, cells[k], std::vector<double>(dates.size(), 0.0)});
  }
  Rng field_rng = streams.stream("synthetic/field");
  for (std::size_t t = 0; t < b.period.n_years(); ++t) {
    const int len = b.period.season_length(t);
    const auto sim = ggpm::simulate(sc.field, pts, alt_std, len, field_rng);
    const std::size_t off = b.period.year_offset(t);
    for (int l = 0; l < len; ++l) {
      const double season = sc.seasonal_amplitude * (std::sin(std::numbers::pi * (l + 0.5) / len) - 2.0 / std::numbers::pi);
      const std::size_t d = off + static_cast<std::size_t>(l);
      for (std::size_t s = 0; s < ns; ++s) {
        b.stations[s].values[d] = sim.y(static_cast<Eigen::Index>(s), l) + season;
      }
      for (std::size_t m = 0; m < nm; ++m) {
        const auto row = static_cast<Eigen::Index>(ns + m);
        b.truth.values(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d)) =
            sc.field.beta0 + sc.field.beta1 * alt_std[ns + m] + sim.latent(row, l) + season;
      }
      double mean = 0.0;
      for (std::size_t k = 0; k < cells.size(); ++k) mean += sim.latent(static_cast<Eigen::Index>(ns + nm + k), l);
      mean /= static_cast<double>(cells.size());
      for (std::size_t k = 0; k < cells.size(); ++k) {
        const auto row = static_cast<Eigen::Index>(ns + nm + k);
        const double latent = mean + sc.reanalysis_shrink * (sim.latent(row, l) - mean);
        b.reanalysis.cells[k].tmax[d] =
            sc.field.beta0 + sc.field.beta1 * alt_std[ns + nm + k] + latent + season + sc.reanalysis_bias;
      }
    }
  }
  b.truth.provenance["kind"] = "synthetic truth at municipality centroids";
  b.truth.reindex();

  // Isolated missing days.
  Rng miss = streams.stream("synthetic/missing");
  for (auto& st : b.stations) {
    bool prev = false;
    for (std::size_t d = 0; d < st.values.size(); ++d) {
      const bool drop = !prev && sample_uniform(miss) < sc.missing_fraction;
      if (drop) st.values[d] = std::numeric_limits<double>::quiet_NaN();
      prev = drop;
    }
  }

  b.holidays = cco::HolidayCalendar::italian_summer(b.period.first_year(), b.period.last_year());
  b.truth_heatwaves = heatwave::build_calendar(b.truth, heatwave::parse_spec(sc.effects.heatwave_spec));
  MortalityModel mm;
  mm.daily_rate = sc.daily_rate;
  mm.neoplasm_rate = sc.neoplasm_rate;
  mm.other_rate = sc.other_rate;
  mm.effects = sc.effects;
  Rng deaths = streams.stream("synthetic/mortality");
  b.mortality = simulate_mortality(b.truth, b.population, b.holidays, &b.truth_heatwaves, mm, deaths);
  return b;
}

std::string truths_json(const Bundle& b, std::uint64_t seed) {
  const auto& sc = b.scenario;
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& r : b.mortality) ++counts[static_cast<int>(cco::classify(r.icd10))];
  json pop = json::object();
  for (std::size_t m = 0; m < b.population.size(); ++m) pop[b.municipalities[m].id] = b.population[m];
  json j = {
      {"seed", seed},
      {"region", {{"nx", sc.nx}, {"ny", sc.ny}, {"municipality_km", sc.municipality_km},
                  {"lon0", sc.lon0}, {"lat0", sc.lat0}, {"projection", b.projection.describe()}}},
      {"period", {{"first_year", b.period.first_year()}, {"last_year", b.period.last_year()}}},
      {"field", {{"beta0", sc.field.beta0}, {"beta1", sc.field.beta1}, {"a", sc.field.a},
                 {"sigma2_omega", sc.field.sigma2_omega}, {"k", sc.field.k}, {"nu", sc.field.nu},
                 {"sigma2_eps", sc.field.sigma2_eps}, {"seasonal_amplitude", sc.seasonal_amplitude}}},
      {"stations", {{"n", sc.n_stations}, {"missing_fraction", sc.missing_fraction}}},
      {"reanalysis", {{"cell_km", sc.reanalysis_km}, {"shrink", sc.reanalysis_shrink},
                      {"bias", sc.reanalysis_bias}, {"cells", b.reanalysis.cells.size()}}},
      {"mortality", {{"population", pop}, {"daily_rate", sc.daily_rate}, {"neoplasm_rate", sc.neoplasm_rate},
                     {"other_rate", sc.other_rate},
                     {"events", {{"cardiorespiratory", counts[0]}, {"neoplasm", counts[1]}, {"other", counts[2]}}}}},
      {"effects", {{"holiday_rr", sc.effects.holiday_rr}, {"heatwave_rr", sc.effects.heatwave_rr},
                   {"log_rr_slope", sc.effects.slope}, {"knot_celsius", sc.effects.knot},
                   {"heatwave_spec", sc.effects.heatwave_spec}}},
  };
  return j.dump(2) + "\n";
}

void write_bundle(const Bundle& b, std::uint64_t seed, const std::filesystem::path& dir) {
  io::Provenance prov{{"generator", "synthetic"}, {"seed", std::to_string(seed)},
                      {"projection", b.projection.describe()}};
  io::write_stations(dir / "stations.csv", b.stations, b.period, b.projection, prov);
  io::write_municipalities(dir / "municipalities.geojson", b.municipalities, b.projection);
  io::write_reanalysis_daily(dir / "reanalysis.csv", b.reanalysis, b.projection, prov);
  io::write_mortality(dir / "mortality.csv", b.mortality, prov);
  io::write_holidays(dir / "holidays.csv", b.holidays);
  io::write_text(dir / "truths.json", truths_json(b, seed));
}

}  // namespace heatrisk::synthetic
