#include "heatrisk/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <map>
#include <ostream>
#include <set>
#include <thread>

#include <json.hpp>

#include "heatrisk/casecrossover.hpp"
#include "heatrisk/epi.hpp"
#include "heatrisk/error.hpp"
#include "heatrisk/ggpm.hpp"
#include "heatrisk/gqrm.hpp"
#include "heatrisk/heatwave.hpp"
#include "heatrisk/io.hpp"
#include "heatrisk/stats.hpp"
#include "heatrisk/surface.hpp"

#ifndef HEATRISK_GIT_REVISION
#define HEATRISK_GIT_REVISION "unknown"
#endif

namespace heatrisk::pipeline {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string month_day(const MonthDay& md) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%02u-%02u", md.month, md.day);
  return buf;
}

MonthDay parse_month_day(const std::string& s) {
  unsigned m = 0, d = 0;
  if (std::sscanf(s.c_str(), "%u-%u", &m, &d) != 2 || m < 1 || m > 12 || d < 1 || d > 31) {
    throw Error("invalid_config", "expected MM-DD, got '" + s + "'");
  }
  return {m, d};
}

json window_json(const SeasonWindow& w) { return {{"start", month_day(w.start)}, {"end", month_day(w.end)}}; }

// Reads keys from a JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error("invalid_config", path_ + " must be an object");
  }
  ~Section() = default;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error("invalid_config", path_ + "." + key + ": " + e.what());
    }
  }
  template <typename T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }
  void get_path(const char* key, fs::path& out) {
    std::string s;
    get(key, s);
    if (!s.empty()) out = s;
  }
  void get_window(const char* key, SeasonWindow& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    Section w(j_.at(key), path_ + "." + key);
    std::string a = month_day(out.start), b = month_day(out.end);
    w.get("start", a);
    w.get("end", b);
    w.finish();
    out = {parse_month_day(a), parse_month_day(b)};
  }
  Section sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }
  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw Error("invalid_config", "unknown key " + path_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

struct Context {
  const PipelineConfig& config;
  Logger& log;
  std::uint64_t seed = 0;
  StudyPeriod period;
  Projection projection;
  std::string hash;

  Context(const PipelineConfig& c, Logger& l)
      : config(c), log(l), seed(*c.seed), period(c.study.first_year, c.study.last_year, c.study.season),
        hash(c.hash()) {}

  fs::path out(const fs::path& rel) const { return config.output_dir / rel; }

  io::Provenance provenance(const std::string& stage) const {
    return {{"config_hash", hash},
            {"seed", std::to_string(seed)},
            {"git_revision", HEATRISK_GIT_REVISION},
            {"stage", stage},
            {"heatrisk_version", kVersion},
            {"projection", projection.describe()}};
  }

  json provenance_json(const std::string& stage) const {
    json j = json::object();
    for (const auto& [k, v] : provenance(stage)) j[k] = v;
    return j;
  }

  fs::path require(const fs::path& rel, const std::string& producer) const {
    const fs::path p = out(rel);
    if (!fs::exists(p)) {
      throw Error("missing_artifact", "missing artifact " + rel.generic_string() + " (run `" + producer + "` first)");
    }
    return p;
  }

  Rng stream(const std::string& name) const { return RngStreams(seed).stream(name); }
};

Projection resolve_projection(const PipelineConfig& c) {
  Projection p;
  if (c.lon0 && c.lat0) {
    p.lon0 = *c.lon0;
    p.lat0 = *c.lat0;
    return p;
  }
  const Rect b = io::geojson_lonlat_bounds(c.inputs.municipalities);
  p.lon0 = c.lon0.value_or(0.5 * (b.xmin + b.xmax));
  p.lat0 = c.lat0.value_or(0.5 * (b.ymin + b.ymax));
  return p;
}

std::string tau_label(double tau) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", tau);
  return buf;
}

std::vector<double> selected_taus(const PipelineConfig& c, const RunOptions& o) {
  if (!o.tau) return c.gqrm.taus;
  for (double t : c.gqrm.taus) {
    if (tau_label(t) == tau_label(*o.tau)) return {t};
  }
  throw Error("invalid_argument", "tau " + tau_label(*o.tau) + " is not configured");
}

bool method_selected(const RunOptions& o, const std::string& method) {
  if (!o.method) return true;
  return method == *o.method || (method.starts_with("gqrm-") && *o.method == "gqrm");
}

std::vector<std::string> epi_methods(const PipelineConfig& c, const RunOptions& o) {
  std::vector<std::string> out;
  for (const auto& m : c.epi.methods) {
    if (method_selected(o, m)) out.push_back(m);
  }
  if (out.empty()) throw Error("invalid_argument", "no configured method matches --method");
  return out;
}

std::vector<heatwave::HeatwaveSpec> heatwave_specs(const PipelineConfig& c) {
  std::vector<heatwave::Threshold> thresholds;
  for (double q : c.heatwave.quantiles) thresholds.push_back(heatwave::Threshold::quantile(q));
  if (c.heatwave.fixed_celsius) thresholds.push_back(heatwave::Threshold::fixed(*c.heatwave.fixed_celsius));
  std::vector<heatwave::HeatwaveSpec> out;
  for (const auto& t : thresholds) {
    for (const auto& p : c.heatwave.presets) out.push_back({t, heatwave::DurationPreset::by_name(p)});
  }
  return out;
}

fs::path surface_path(const std::string& method) { return fs::path("surfaces") / (method + ".csv"); }

std::string surface_producer(const std::string& method) {
  if (method.starts_with("gqrm")) return "surface";
  if (method == "ggpm") return "fit-ggpm";
  return "aggregate";
}

Standardizer altitude_standardizer(std::span<const StationSeries> stations) {
  std::vector<double> alt;
  for (const auto& s : stations) alt.push_back(s.altitude);
  return Standardizer::fit(alt);
}

// ---------------------------------------------------------------- stages

void stage_prep(Context& ctx) {
  const auto& c = ctx.config;
  const auto stations = io::read_stations(c.inputs.stations, ctx.period, ctx.projection);
  const auto rule_q = ingest::SelectionRule::max_consecutive_missing(c.selection.gqrm_max_consecutive_missing);
  const auto rule_g = ingest::SelectionRule::max_missing_fraction(c.selection.ggpm_max_missing_fraction);
  const auto sel_q = ingest::select_stations(stations, ctx.period, rule_q);
  const auto sel_g = ingest::select_stations(stations, ctx.period, rule_g);
  std::vector<StationSeries> imputed;
  for (const auto& s : sel_q) imputed.push_back(ingest::impute_spline(s, ctx.period));
  auto prov = ctx.provenance("prep");
  prov["selection"] = rule_q.describe();
  prov["stations"] = std::to_string(imputed.size()) + " of " + std::to_string(stations.size());
  prov["imputation"] = "GCV smoothing spline per station-season";
  io::write_stations(ctx.out("prep/stations_gqrm.csv"), imputed, ctx.period, ctx.projection, prov);
  prov.erase("imputation");
  prov["selection"] = rule_g.describe();
  prov["stations"] = std::to_string(sel_g.size()) + " of " + std::to_string(stations.size());
  io::write_stations(ctx.out("prep/stations_ggpm.csv"), sel_g, ctx.period, ctx.projection, prov);
  ctx.log.info("prep", std::to_string(imputed.size()) + " stations for gqrm, " + std::to_string(sel_g.size()) +
                           " for ggpm");
}

gqrm::GqrmData load_gqrm_data(Context& ctx, Standardizer* stdz_out = nullptr) {
  const auto path = ctx.require("prep/stations_gqrm.csv", "prep");
  const auto stations = io::read_stations(path, ctx.period, ctx.projection);
  const Standardizer stdz = altitude_standardizer(stations);
  if (stdz_out) *stdz_out = stdz;
  return gqrm::GqrmData::from_stations(stations, ctx.period, stdz);
}

void stage_fit_gqrm(Context& ctx, const RunOptions& opt) {
  const auto& c = ctx.config;
  const gqrm::GqrmData data = load_gqrm_data(ctx);
  std::vector<std::function<void()>> tasks;
  for (double tau : selected_taus(c, opt)) {
    tasks.push_back([&ctx, &c, &data, tau] {
      gqrm::McmcConfig mc;
      mc.burn_in = c.gqrm.burn_in;
      mc.draws = c.gqrm.draws;
      mc.thin = c.gqrm.thin;
      mc.seed = ctx.stream("gqrm/tau" + tau_label(tau))();
      const auto fit = gqrm::fit(data, tau, mc);
      const Eigen::VectorXd med = fit.posterior_median.flatten();
      json values = json::object();
      for (std::size_t i = 0; i < fit.names.size(); ++i) values[fit.names[i]] = med(static_cast<Eigen::Index>(i));
      json ess = json::object(), acc = json::object();
      for (const auto& [k, v] : fit.diagnostics.ess) ess[k] = v;
      for (const auto& [k, v] : fit.diagnostics.acceptance) acc[k] = v;
      json j = {{"provenance", ctx.provenance_json("fit-gqrm")},
                {"tau", tau},
                {"sites", data.sites},
                {"years", data.years},
                {"draws", fit.draws.rows()},
                {"posterior_median", values},
                {"diagnostics",
                 {{"max_rhat", fit.diagnostics.max_rhat},
                  {"max_rhat_parameter", fit.diagnostics.max_rhat_parameter},
                  {"ess", ess},
                  {"acceptance", acc},
                  {"diverged", fit.diagnostics.diverged},
                  {"warnings", fit.diagnostics.warnings}}}};
      const auto q = gqrm::plugin_quantiles(fit, data);
      j["empirical_coverage"] = gqrm::empirical_coverage(q, data);
      io::write_text(ctx.out("gqrm/fit_tau" + tau_label(tau) + ".json"), j.dump(2) + "\n");
      for (const auto& w : fit.diagnostics.warnings) ctx.log.warn("fit-gqrm", w);
      ctx.log.info("fit-gqrm", "tau " + tau_label(tau) + " done, max rhat " + io::format_number(fit.diagnostics.max_rhat));
    });
  }
  run_parallel(std::move(tasks), c.workers);
}

void stage_surface(Context& ctx, const RunOptions& opt) {
  const auto& c = ctx.config;
  const gqrm::GqrmData data = load_gqrm_data(ctx);
  const MunicipalityMap map = io::read_municipalities(c.inputs.municipalities, ctx.projection);
  const auto grid = surface::build_grid(map, {static_cast<std::size_t>(c.surface.n_grid), std::nullopt});
  const auto frame = surface::CoordinateFrame::unit_diameter(map.bounds());
  std::vector<std::function<void()>> tasks;
  for (double tau : selected_taus(c, opt)) {
    tasks.push_back([&, tau] {
      const auto path = ctx.require("gqrm/fit_tau" + tau_label(tau) + ".json", "fit-gqrm");
      const json j = json::parse(io::read_text(path));
      const auto names = gqrm::GqrmParams::names(data.n_sites(), static_cast<std::size_t>(data.n_years()));
      Eigen::VectorXd v(static_cast<Eigen::Index>(names.size()));
      for (std::size_t i = 0; i < names.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) = j.at("posterior_median").at(names[i]).get<double>();
      }
      const auto params = gqrm::GqrmParams::unflatten(v, data.n_sites(), static_cast<std::size_t>(data.n_years()));
      const auto q = gqrm::plugin_quantiles(params, tau, data);
      auto surf = surface::interpolate_surface(q, data, ctx.period, grid, map, frame, c.surface.lambda);
      for (const auto& [k, val] : ctx.provenance("surface")) surf.provenance[k] = val;
      io::write_surface(ctx.out(surface_path(surf.method)), surf);
      ctx.log.info("surface", surf.method + ": " + std::to_string(surf.dates.size()) + " days");
    });
  }
  run_parallel(std::move(tasks), c.workers);
}

void stage_fit_ggpm(Context& ctx, const RunOptions& opt) {
  const auto& c = ctx.config;
  const auto path = ctx.require("prep/stations_ggpm.csv", "prep");
  const auto stations = io::read_stations(path, ctx.period, ctx.projection);
  const Standardizer stdz = altitude_standardizer(stations);
  const MunicipalityMap map = io::read_municipalities(c.inputs.municipalities, ctx.projection);
  const auto grid = surface::build_grid(map, {static_cast<std::size_t>(c.surface.n_grid), std::nullopt});
  std::vector<double> grid_alt;
  for (std::size_t i = 0; i < grid.size(); ++i) grid_alt.push_back(stdz.apply(map[grid.membership[i]].altitude_m));

  std::vector<std::size_t> years;
  for (std::size_t t = 0; t < ctx.period.n_years(); ++t) {
    if (!opt.year || *opt.year == ctx.period.first_year() + static_cast<int>(t)) years.push_back(t);
  }
  if (years.empty()) throw Error("invalid_argument", "year outside the study period");
  std::vector<std::function<void()>> tasks;
  for (std::size_t t : years) {
    tasks.push_back([&, t] {
      const auto data = ggpm::GgpmData::from_stations(stations, ctx.period, t, stdz);
      ggpm::FitConfig fc;
      fc.nu = c.ggpm.nu;
      fc.max_iterations = c.ggpm.max_iterations;
      const auto fit = ggpm::fit(data, fc);
      json summary = json::array();
      for (const auto& s : fit.summary) {
        summary.push_back({{"name", s.name}, {"estimate", s.estimate}, {"lower", s.lower}, {"upper", s.upper}});
      }
      const json j = {{"provenance", ctx.provenance_json("fit-ggpm")},
                      {"year", data.year},
                      {"converged", fit.converged},
                      {"iterations", fit.iterations},
                      {"log_posterior", fit.log_posterior},
                      {"message", fit.message},
                      {"summary", summary}};
      io::write_text(ctx.out("ggpm/fit_" + std::to_string(data.year) + ".json"), j.dump(2) + "\n");
      if (!fit.converged) ctx.log.warn("fit-ggpm", "year " + std::to_string(data.year) + ": " + fit.message);
      const auto pred = ggpm::predict(fit.params, data, grid.points, grid_alt);
      ExposureSurface s;
      s.method = "ggpm";
      s.municipalities = map.ids();
      s.dates = data.dates;
      s.values.resize(static_cast<Eigen::Index>(map.size()), static_cast<Eigen::Index>(data.dates.size()));
      for (Eigen::Index d = 0; d < pred.mean.cols(); ++d) {
        const Eigen::VectorXd col = pred.mean.col(d);
        const auto avg = surface::municipality_average(grid, std::span<const double>(col.data(), col.size()));
        for (std::size_t m = 0; m < avg.size(); ++m) s.values(static_cast<Eigen::Index>(m), d) = avg[m];
      }
      s.provenance = {{"year", std::to_string(data.year)}};
      io::write_surface(ctx.out("ggpm/surface_" + std::to_string(data.year) + ".csv"), s);
      ctx.log.info("fit-ggpm", "year " + std::to_string(data.year) + " done");
    });
  }
  run_parallel(std::move(tasks), c.workers);

  // Merge yearly pieces once every year is present.
  ExposureSurface merged;
  merged.method = "ggpm";
  std::vector<Eigen::MatrixXd> blocks;
  for (std::size_t t = 0; t < ctx.period.n_years(); ++t) {
    const auto p = ctx.out("ggpm/surface_" + std::to_string(ctx.period.first_year() + static_cast<int>(t)) + ".csv");
    if (!fs::exists(p)) {
      ctx.log.info("fit-ggpm", "surface not merged yet: missing " + p.filename().string());
      return;
    }
    const auto s = io::read_surface(p);
    merged.municipalities = s.municipalities;
    merged.dates.insert(merged.dates.end(), s.dates.begin(), s.dates.end());
    blocks.push_back(s.values);
  }
  Eigen::Index cols = 0;
  for (const auto& b : blocks) cols += b.cols();
  merged.values.resize(static_cast<Eigen::Index>(merged.municipalities.size()), cols);
  cols = 0;
  for (const auto& b : blocks) {
    merged.values.middleCols(cols, b.cols()) = b;
    cols += b.cols();
  }
  merged.provenance = ctx.provenance("fit-ggpm");
  merged.provenance["prediction"] = "plug-in posterior mode, grid average";
  io::write_surface(ctx.out(surface_path("ggpm")), merged);
}

void stage_aggregate(Context& ctx) {
  const auto& c = ctx.config;
  const MunicipalityMap map = io::read_municipalities(c.inputs.municipalities, ctx.projection);
  auto grid = io::read_reanalysis(c.inputs.reanalysis, ctx.projection, c.inputs.reanalysis_pre_aggregated);
  // Keep study days only.
  ingest::ReanalysisGrid g = grid;
  g.dates.clear();
  for (auto& cell : g.cells) cell.tmax.clear();
  for (std::size_t d = 0; d < grid.dates.size(); ++d) {
    if (!ctx.period.index_of(grid.dates[d])) continue;
    g.dates.push_back(grid.dates[d]);
    for (std::size_t k = 0; k < g.cells.size(); ++k) g.cells[k].tmax.push_back(grid.cells[k].tmax[d]);
  }
  if (g.dates.size() != ctx.period.n_days()) {
    throw Error("bad_input", "reanalysis covers " + std::to_string(g.dates.size()) + " of " +
                                 std::to_string(ctx.period.n_days()) + " study days");
  }
  auto s = ingest::aggregate_cells(g, map);
  for (const auto& [k, v] : ctx.provenance("aggregate")) s.provenance[k] = v;
  s.provenance["day_boundary"] = "UTC";
  io::write_surface(ctx.out(surface_path("reanalysis")), s);
  ctx.log.info("aggregate", std::to_string(g.cells.size()) + " cells onto " + std::to_string(map.size()) +
                                " municipalities");
}

void stage_heatwave(Context& ctx, const RunOptions& opt) {
  const auto& c = ctx.config;
  const auto specs = heatwave_specs(c);
  std::vector<std::function<void()>> tasks;
  for (const auto& method : epi_methods(c, opt)) {
    const auto path = ctx.require(surface_path(method), surface_producer(method));
    tasks.push_back([&, method, path] {
      const auto surf = io::read_surface(path);
      for (const auto& spec : specs) {
        const auto cal = heatwave::build_calendar(surf, spec, c.study.summer);
        auto prov = ctx.provenance("heatwave");
        prov["prevalence"] = io::format_number(cal.prevalence());
        io::write_heatwave(ctx.out(fs::path("heatwave") / method / (spec.id() + ".csv")), cal, prov);
      }
      ctx.log.info("heatwave", method + ": " + std::to_string(specs.size()) + " calendars");
    });
  }
  run_parallel(std::move(tasks), c.workers);
}

struct DatasetSpec {
  std::string label;
  cco::RecordFilter filter;
  bool heatwaves = false;
};

std::vector<DatasetSpec> dataset_specs(const PipelineConfig& c) {
  cco::RecordFilter base;
  base.min_age = c.cco.min_age;
  base.season = c.study.summer;
  std::vector<DatasetSpec> out{{"all", base, true}};
  if (c.epi.stratified) {
    for (char sex : {'F', 'M'}) {
      auto f = base;
      f.sex = sex;
      out.push_back({std::string("sex-") + sex, f, false});
    }
    for (const auto& band : cco::AgeBand::standard()) {
      auto f = base;
      f.age = band;
      out.push_back({"age-" + band.label(), f, false});
    }
  }
  if (c.epi.negative_control) {
    auto f = base;
    f.cause = cco::CauseGroup::Neoplasm;
    out.push_back({"neoplasm", f, false});
  }
  return out;
}

void stage_build_cco(Context& ctx, const RunOptions& opt) {
  const auto& c = ctx.config;
  const auto methods = epi_methods(c, opt);
  std::vector<ExposureSurface> surfaces;
  for (const auto& m : methods) surfaces.push_back(io::read_surface(ctx.require(surface_path(m), surface_producer(m))));
  std::vector<heatwave::HeatwaveCalendar> calendars;
  for (const auto& m : methods) {
    for (const auto& spec : heatwave_specs(c)) {
      auto cal = io::read_heatwave(ctx.require(fs::path("heatwave") / m / (spec.id() + ".csv"), "heatwave"));
      cal.method = m;
      calendars.push_back(std::move(cal));
    }
  }
  const auto records = io::read_mortality(c.inputs.mortality);
  const auto holidays = io::read_holidays(c.inputs.holidays);
  cco::ExposureOptions eo;
  eo.window = c.cco.window;
  eo.heatwave_window = c.cco.heatwave_window;
  for (const auto& ds : dataset_specs(c)) {
    const std::span<const heatwave::HeatwaveCalendar> cals =
        ds.heatwaves ? std::span<const heatwave::HeatwaveCalendar>(calendars)
                     : std::span<const heatwave::HeatwaveCalendar>();
    const auto data = cco::build_strata(records, surfaces, cals, holidays, ds.filter, eo);
    data.validate();
    auto prov = ctx.provenance("build-cco");
    prov["filter"] = ds.filter.describe();
    prov["strata"] = std::to_string(data.n_strata());
    prov["mean_controls"] = io::format_number(data.mean_controls());
    io::write_dataset(ctx.out(fs::path("cco") / (ds.label + ".csv")), data, prov);
    if (!data.dropped.empty()) {
      ctx.log.warn("build-cco", ds.label + ": dropped " + std::to_string(data.dropped.size()) + " records, first: " +
                                    data.dropped.front());
    }
    ctx.log.info("build-cco", ds.label + ": " + std::to_string(data.n_strata()) + " strata");
  }
}

json summary_json(const epi::Summary& s) {
  return {{"mean", s.mean}, {"median", s.median}, {"lower", s.lower}, {"upper", s.upper}};
}

void stage_fit_epi(Context& ctx, const RunOptions& opt) {
  const auto& c = ctx.config;
  const auto methods = epi_methods(c, opt);
  for (const auto& m : methods) ctx.require(surface_path(m), surface_producer(m));
  const auto specs = dataset_specs(c);
  std::vector<cco::Dataset> datasets;
  for (const auto& ds : specs) {
    datasets.push_back(io::read_dataset(ctx.require(fs::path("cco") / (ds.label + ".csv"), "build-cco")));
  }
  epi::EpiSpec es;
  es.n_bins = c.epi.n_bins;
  es.pc_u = c.epi.pc_u;
  es.pc_alpha = c.epi.pc_alpha;
  es.tau_points = c.epi.tau_points;

  struct CurveResult {
    json entry;
  };
  std::vector<CurveResult> curves(specs.size() * methods.size());
  std::vector<std::function<void()>> tasks;
  for (std::size_t d = 0; d < specs.size(); ++d) {
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      tasks.push_back([&, d, mi] {
        const auto& data = datasets[d];
        const auto col = data.method_index(methods[mi]);
        if (!col) throw Error("missing_artifact", "dataset " + specs[d].label + " lacks exposure " + methods[mi]);
        const auto ed = epi::EpiData::from_dataset(data, *col);
        const auto fit = epi::fit(ed, es);
        const auto curve = epi::risk_curve(fit);
        const fs::path rel = fs::path("epi") / specs[d].label / (methods[mi] + "_curve.csv");
        auto prov = ctx.provenance("fit-epi");
        prov["method"] = methods[mi];
        prov["dataset"] = specs[d].label;
        io::write_curve(ctx.out(rel), curve, prov);
        json coefs = json::object();
        for (std::size_t i = 0; i < fit.fixed_names.size(); ++i) coefs[fit.fixed_names[i]] = summary_json(fit.fixed[i]);
        const auto& hol = fit.coefficient("holiday");
        curves[d * methods.size() + mi].entry = {
            {"dataset", specs[d].label},
            {"method", methods[mi]},
            {"strata", fit.n_strata},
            {"rows", fit.n_rows},
            {"coefficients", coefs},
            {"holiday_rr", {{"median", std::exp(hol.median)}, {"lower", std::exp(hol.lower)}, {"upper", std::exp(hol.upper)}}},
            {"mmt", curve.mmt},
            {"tau_mode", fit.tau_mode},
            {"separation", fit.separation},
            {"warnings", fit.warnings},
            {"curve", rel.generic_string()}};
        ctx.log.info("fit-epi", specs[d].label + "/" + methods[mi] + ": MMT " + io::format_number(curve.mmt));
      });
    }
  }
  run_parallel(std::move(tasks), c.workers);

  // Heatwave models on the main dataset.
  const auto& main = datasets.front();
  std::vector<json> hw(methods.size() * 2);
  std::vector<std::function<void()>> hw_tasks;
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    for (int with_t = 0; with_t < 2; ++with_t) {
      hw_tasks.push_back([&, mi, with_t] {
        std::vector<std::size_t> cols;
        for (std::size_t h = 0; h < main.heatwave_ids.size(); ++h) {
          if (main.heatwave_ids[h].starts_with(methods[mi] + "/")) cols.push_back(h);
        }
        const auto col = main.method_index(methods[mi]);
        const auto res = epi::fit_heatwave_models(main, *col, cols, with_t == 1, es);
        json arr = json::array();
        for (const auto& r : res) {
          arr.push_back({{"method", r.method},
                         {"heatwave", r.heatwave_id},
                         {"with_temperature", r.with_temperature},
                         {"prevalence", r.prevalence},
                         {"skipped", r.skipped},
                         {"warning", r.warning},
                         {"beta", summary_json(r.beta)},
                         {"rr", r.rr},
                         {"rr_lower", r.rr_lower},
                         {"rr_upper", r.rr_upper}});
        }
        hw[mi * 2 + static_cast<std::size_t>(with_t)] = arr;
      });
    }
  }
  run_parallel(std::move(hw_tasks), c.workers);

  json report = {{"provenance", ctx.provenance_json("fit-epi")},
                 {"model",
                  {{"likelihood", "poisson with stratum effects"},
                   {"n_bins", es.n_bins},
                   {"pc_prior", {{"u", es.pc_u}, {"alpha", es.pc_alpha}, {"rate", epi::pc_prior_rate(es.pc_u, es.pc_alpha)}}},
                   {"beta_variance", es.beta_variance},
                   {"stratum_variance", es.stratum_variance},
                   {"tau_points", es.tau_points}}},
                 {"curves", json::array()},
                 {"heatwave_models", json::array()}};
  for (auto& r : curves) report["curves"].push_back(std::move(r.entry));
  for (auto& arr : hw) {
    for (auto& e : arr) report["heatwave_models"].push_back(std::move(e));
  }
  io::write_text(ctx.out("epi/report.json"), report.dump(2) + "\n");
}

void stage_diagnose_qq(Context& ctx) {
  const auto& c = ctx.config;
  const auto stations = io::read_stations(c.inputs.stations, ctx.period, ctx.projection);
  const auto grid = io::read_reanalysis(c.inputs.reanalysis, ctx.projection, c.inputs.reanalysis_pre_aggregated);
  const auto qq = diagnose_qq(stations, ctx.period, grid);
  io::CsvTable t;
  t.provenance = ctx.provenance("diagnose-qq");
  t.header = {"station_id", "cell_id", "prob", "station_q", "cell_q"};
  for (const auto& p : qq) {
    t.rows.push_back({p.station, p.cell, io::format_number(p.prob), io::format_number(p.station_q),
                      io::format_number(p.cell_q)});
  }
  io::write_csv(ctx.out("diagnostics/qq.csv"), t);
  ctx.log.info("diagnose-qq", std::to_string(stations.size()) + " stations matched");
}

}  // namespace

// ---------------------------------------------------------------- config

PipelineConfig PipelineConfig::defaults() { return PipelineConfig{}; }

PipelineConfig PipelineConfig::from_json(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("invalid_config", std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  Section root(j, "config");
  root.get_optional("seed", c.seed);
  root.get_path("output_dir", c.output_dir);
  root.get("workers", c.workers);
  root.get_optional("lon0", c.lon0);
  root.get_optional("lat0", c.lat0);
  {
    auto s = root.sub("inputs");
    s.get_path("stations", c.inputs.stations);
    s.get_path("municipalities", c.inputs.municipalities);
    s.get_path("reanalysis", c.inputs.reanalysis);
    s.get_path("mortality", c.inputs.mortality);
    s.get_path("holidays", c.inputs.holidays);
    s.get("reanalysis_pre_aggregated", c.inputs.reanalysis_pre_aggregated);
    s.finish();
  }
  {
    auto s = root.sub("study");
    s.get("first_year", c.study.first_year);
    s.get("last_year", c.study.last_year);
    s.get_window("season", c.study.season);
    s.get_window("summer", c.study.summer);
    s.finish();
  }
  {
    auto s = root.sub("selection");
    s.get("gqrm_max_consecutive_missing", c.selection.gqrm_max_consecutive_missing);
    s.get("ggpm_max_missing_fraction", c.selection.ggpm_max_missing_fraction);
    s.finish();
  }
  {
    auto s = root.sub("gqrm");
    s.get("taus", c.gqrm.taus);
    s.get("burn_in", c.gqrm.burn_in);
    s.get("draws", c.gqrm.draws);
    s.get("thin", c.gqrm.thin);
    s.finish();
  }
  {
    auto s = root.sub("surface");
    s.get("lambda", c.surface.lambda);
    s.get("n_grid", c.surface.n_grid);
    s.finish();
  }
  {
    auto s = root.sub("ggpm");
    s.get("nu", c.ggpm.nu);
    s.get("max_iterations", c.ggpm.max_iterations);
    s.finish();
  }
  {
    auto s = root.sub("heatwave");
    s.get("quantiles", c.heatwave.quantiles);
    s.get_optional("fixed_celsius", c.heatwave.fixed_celsius);
    s.get("presets", c.heatwave.presets);
    s.finish();
  }
  {
    auto s = root.sub("cco");
    s.get("min_age", c.cco.min_age);
    s.get("window", c.cco.window);
    s.get("heatwave_window", c.cco.heatwave_window);
    s.finish();
  }
  {
    auto s = root.sub("epi");
    s.get("methods", c.epi.methods);
    s.get("n_bins", c.epi.n_bins);
    s.get("pc_u", c.epi.pc_u);
    s.get("pc_alpha", c.epi.pc_alpha);
    s.get("tau_points", c.epi.tau_points);
    s.get("stratified", c.epi.stratified);
    s.get("negative_control", c.epi.negative_control);
    s.finish();
  }
  root.finish();
  if (!base_dir.empty()) {
    for (fs::path* p : {&c.output_dir, &c.inputs.stations, &c.inputs.municipalities, &c.inputs.reanalysis,
                        &c.inputs.mortality, &c.inputs.holidays}) {
      if (!p->empty() && p->is_relative()) *p = base_dir / *p;
    }
  }
  return c;
}

std::string PipelineConfig::to_json() const {
  auto path = [](const fs::path& p) { return p.generic_string(); };
  json j = {
      {"seed", seed ? json(*seed) : json(nullptr)},
      {"output_dir", path(output_dir)},
      {"workers", workers},
      {"lon0", lon0 ? json(*lon0) : json(nullptr)},
      {"lat0", lat0 ? json(*lat0) : json(nullptr)},
      {"inputs",
       {{"stations", path(inputs.stations)},
        {"municipalities", path(inputs.municipalities)},
        {"reanalysis", path(inputs.reanalysis)},
        {"mortality", path(inputs.mortality)},
        {"holidays", path(inputs.holidays)},
        {"reanalysis_pre_aggregated", inputs.reanalysis_pre_aggregated}}},
      {"study",
       {{"first_year", study.first_year},
        {"last_year", study.last_year},
        {"season", window_json(study.season)},
        {"summer", window_json(study.summer)}}},
      {"selection",
       {{"gqrm_max_consecutive_missing", selection.gqrm_max_consecutive_missing},
        {"ggpm_max_missing_fraction", selection.ggpm_max_missing_fraction}}},
      {"gqrm", {{"taus", gqrm.taus}, {"burn_in", gqrm.burn_in}, {"draws", gqrm.draws}, {"thin", gqrm.thin}}},
      {"surface", {{"lambda", surface.lambda}, {"n_grid", surface.n_grid}}},
      {"ggpm", {{"nu", ggpm.nu}, {"max_iterations", ggpm.max_iterations}}},
      {"heatwave",
       {{"quantiles", heatwave.quantiles},
        {"fixed_celsius", heatwave.fixed_celsius ? json(*heatwave.fixed_celsius) : json(nullptr)},
        {"presets", heatwave.presets}}},
      {"cco", {{"min_age", cco.min_age}, {"window", cco.window}, {"heatwave_window", cco.heatwave_window}}},
      {"epi",
       {{"methods", epi.methods},
        {"n_bins", epi.n_bins},
        {"pc_u", epi.pc_u},
        {"pc_alpha", epi.pc_alpha},
        {"tau_points", epi.tau_points},
        {"stratified", epi.stratified},
        {"negative_control", epi.negative_control}}},
  };
  return j.dump(2) + "\n";
}

std::string PipelineConfig::hash() const {
  // Paths and worker count do not change results; leave them out.
  PipelineConfig c = *this;
  c.output_dir.clear();
  c.workers = 1;
  c.inputs.stations = c.inputs.stations.filename();
  c.inputs.municipalities = c.inputs.municipalities.filename();
  c.inputs.reanalysis = c.inputs.reanalysis.filename();
  c.inputs.mortality = c.inputs.mortality.filename();
  c.inputs.holidays = c.inputs.holidays.filename();
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(c.to_json())));
  return buf;
}

std::vector<std::string> PipelineConfig::surface_methods() const {
  std::vector<std::string> out;
  for (double t : gqrm.taus) out.push_back("gqrm-" + tau_label(t));
  out.push_back("ggpm");
  out.push_back("reanalysis");
  return out;
}

void PipelineConfig::validate(bool check_inputs) const {
  if (!seed) throw Error("invalid_config", "seed is mandatory");
  if (workers < 1) throw Error("invalid_config", "workers must be at least 1");
  if (study.last_year < study.first_year) throw Error("invalid_config", "last_year precedes first_year");
  if (selection.gqrm_max_consecutive_missing < 1) throw Error("invalid_config", "consecutive-missing limit must be positive");
  if (!(selection.ggpm_max_missing_fraction > 0 && selection.ggpm_max_missing_fraction < 1)) {
    throw Error("invalid_config", "missing fraction must lie in (0,1)");
  }
  if (gqrm.taus.empty()) throw Error("invalid_config", "at least one quantile level is required");
  for (double t : gqrm.taus) {
    if (!(t > 0 && t < 1)) throw Error("invalid_config", "quantile levels must lie in (0,1)");
  }
  if (gqrm.burn_in < 0 || gqrm.draws < 1 || gqrm.thin < 1) throw Error("invalid_config", "bad MCMC sizes");
  if (!(surface.lambda >= 0) || surface.n_grid < 0) throw Error("invalid_config", "bad surface settings");
  if (!(ggpm.nu > 0) || ggpm.max_iterations < 1) throw Error("invalid_config", "bad ggpm settings");
  heatwave_specs(*this);
  if (epi.n_bins < 10) throw Error("invalid_config", "epi.n_bins must be at least 10");
  epi::EpiSpec es;
  es.n_bins = epi.n_bins;
  es.pc_u = epi.pc_u;
  es.pc_alpha = epi.pc_alpha;
  es.tau_points = epi.tau_points;
  es.validate();
  const auto known = surface_methods();
  for (const auto& m : epi.methods) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw Error("invalid_config", "epi method '" + m + "' is not produced by this configuration");
    }
  }
  if (check_inputs) {
    const std::pair<const char*, const fs::path*> inputs_list[] = {
        {"stations", &inputs.stations},   {"municipalities", &inputs.municipalities},
        {"reanalysis", &inputs.reanalysis}, {"mortality", &inputs.mortality},
        {"holidays", &inputs.holidays}};
    for (const auto& [name, p] : inputs_list) {
      if (p->empty()) throw Error("missing_input", std::string("inputs.") + name + " is not set");
      if (!fs::exists(*p)) throw Error("missing_input", std::string("inputs.") + name + " not found: " + p->string());
    }
  }
}

// ---------------------------------------------------------------- runtime

void Logger::log(std::string_view level, std::string_view stage, std::string_view message) {
  const json j = {{"level", level}, {"stage", stage}, {"msg", message}};
  std::lock_guard lock(mu_);
  os_ << j.dump() << '\n';
  os_.flush();
}

void run_parallel(std::vector<std::function<void()>> tasks, int workers) {
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        tasks[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), tasks.size());
  if (n <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<std::string> subcommands() {
  return {"prep", "fit-gqrm", "surface", "fit-ggpm", "aggregate", "heatwave",
          "build-cco", "fit-epi", "diagnose-qq", "all"};
}

void run(const std::string& subcommand, const PipelineConfig& config, const RunOptions& options, Logger& log) {
  const auto names = subcommands();
  if (std::find(names.begin(), names.end(), subcommand) == names.end()) {
    throw Error("invalid_argument", "unknown subcommand '" + subcommand + "'");
  }
  config.validate(true);
  Context ctx(config, log);
  ctx.projection = resolve_projection(config);
  if (subcommand == "all") {
    for (const auto& s : {"prep", "aggregate", "fit-gqrm", "surface", "fit-ggpm", "heatwave", "build-cco", "fit-epi",
                          "diagnose-qq"}) {
      run(s, config, options, log);
    }
    return;
  }
  log.info(subcommand, "start");
  if (subcommand == "prep") stage_prep(ctx);
  else if (subcommand == "fit-gqrm") stage_fit_gqrm(ctx, options);
  else if (subcommand == "surface") stage_surface(ctx, options);
  else if (subcommand == "fit-ggpm") stage_fit_ggpm(ctx, options);
  else if (subcommand == "aggregate") stage_aggregate(ctx);
  else if (subcommand == "heatwave") stage_heatwave(ctx, options);
  else if (subcommand == "build-cco") stage_build_cco(ctx, options);
  else if (subcommand == "fit-epi") stage_fit_epi(ctx, options);
  else if (subcommand == "diagnose-qq") stage_diagnose_qq(ctx);
  log.info(subcommand, "done");
}

PipelineConfig simulate(const synthetic::Scenario& scenario, std::uint64_t seed, const fs::path& out, Logger& log) {
  const auto bundle = synthetic::make_synthetic(scenario, seed);
  synthetic::write_bundle(bundle, seed, out / "input");
  PipelineConfig c;
  c.seed = seed;
  c.output_dir = ".";
  c.inputs.stations = "input/stations.csv";
  c.inputs.municipalities = "input/municipalities.geojson";
  c.inputs.reanalysis = "input/reanalysis.csv";
  c.inputs.mortality = "input/mortality.csv";
  c.inputs.holidays = "input/holidays.csv";
  c.study.first_year = bundle.period.first_year();
  c.study.last_year = bundle.period.last_year();
  io::write_text(out / "config.json", c.to_json());
  log.info("simulate", std::to_string(bundle.mortality.size()) + " deaths across " +
                           std::to_string(bundle.municipalities.size()) + " municipalities");
  return PipelineConfig::from_json(c.to_json(), out);
}

std::vector<QQPoint> diagnose_qq(std::span<const StationSeries> stations, const StudyPeriod& period,
                                 const ingest::ReanalysisGrid& grid) {
  if (grid.cells.empty()) throw Error("invalid_argument", "reanalysis grid has no cells");
  std::vector<QQPoint> out;
  for (const auto& st : stations) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < grid.cells.size(); ++k) {
      const double d = distance(st.location, grid.cells[k].rect.center());
      if (d < bd) {
        bd = d;
        best = k;
      }
    }
    std::vector<double> a, b;
    for (std::size_t d = 0; d < grid.dates.size(); ++d) {
      const auto idx = period.index_of(grid.dates[d]);
      if (!idx || std::isnan(st.values[*idx])) continue;
      a.push_back(st.values[*idx]);
      b.push_back(grid.cells[best].tmax[d]);
    }
    if (a.empty()) throw Error("no_overlap", "station " + st.id + " shares no days with the reanalysis grid");
    for (int p = 1; p <= 99; ++p) {
      const double prob = p / 100.0;
      out.push_back({st.id, grid.cells[best].id, prob, quantile_type7(a, prob), quantile_type7(b, prob)});
    }
  }
  return out;
}

}  // namespace heatrisk::pipeline
