// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "heatrisk/calendar.hpp"
#include "heatrisk/casecrossover.hpp"
#include "heatrisk/epi.hpp"
#include "heatrisk/error.hpp"
#include "heatrisk/ggpm.hpp"
#include "heatrisk/gqrm.hpp"
#include "heatrisk/heatwave.hpp"
#include "heatrisk/ingest.hpp"
#include "heatrisk/io.hpp"
#include "heatrisk/pipeline.hpp"
#include "heatrisk/surface.hpp"
#include "heatrisk/synthetic.hpp"
#include "support.hpp"

using namespace heatrisk;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [out of tolerance]");
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1 -------------------------------------------------------------------------
Outcome gqrm_coverage() {
  Outcome o;
  const auto bundle = synthetic::make_synthetic({}, 11);
  std::vector<StationSeries> stations;
  for (const auto& s : bundle.stations) stations.push_back(ingest::impute_spline(s, bundle.period));
  std::vector<double> alt;
  for (const auto& s : stations) alt.push_back(s.altitude);
  const auto data = gqrm::GqrmData::from_stations(stations, bundle.period, Standardizer::fit(alt));
  for (double tau : {0.5, 0.9, 0.95}) {
    gqrm::McmcConfig mc;
    mc.seed = 100 + std::uint64_t(tau * 100);
    const auto t0 = std::chrono::steady_clock::now();
    const auto fit = gqrm::fit(data, tau, mc);
    const double cov = gqrm::empirical_coverage(gqrm::plugin_quantiles(fit, data), data);
    const double secs = seconds_since(t0);
    o.require(std::abs(cov - tau) <= 0.03 && secs <= 600,
              "tau " + fmt("%.2f", tau) + " coverage " + fmt("%.4f", cov) + " in " + fmt("%.1f", secs) + "s");
  }
  o.detail = std::to_string(data.sites.size()) + " stations x " + std::to_string(data.years.size()) + " seasons; " +
             o.detail;
  return o;
}

// 2 -------------------------------------------------------------------------
Outcome gqrm_recovery() {
  Outcome o;
  const auto data = testing::quantile_panel(10, 2, 153, {}, 21);
  gqrm::McmcConfig mc;
  mc.seed = 5;
  const auto fit = gqrm::fit(data, 0.5, mc);
  double worst = 0;
  for (std::size_t s = 0; s < data.sites.size(); ++s) {
    worst = std::max(worst, std::abs(fit.posterior_median.rho(s) - 0.4));
  }
  o.require(worst <= 0.1, "max |rho(s) - 0.4| = " + fmt("%.4f", worst));
  gqrm::McmcConfig shortc = mc;
  shortc.burn_in = 500;
  shortc.draws = 500;
  const auto a = gqrm::fit(data, 0.5, shortc), b = gqrm::fit(data, 0.5, shortc);
  const bool same = a.draws.size() == b.draws.size() &&
                    std::memcmp(a.draws.data(), b.draws.data(), sizeof(double) * std::size_t(a.draws.size())) == 0;
  o.require(same, same ? "seeded chains byte-identical" : "seeded chains differ");
  return o;
}

// 3 -------------------------------------------------------------------------
Outcome tps() {
  Outcome o;
  Rng rng(3);
  auto knots = [&](std::size_t n, double extent) {
    std::vector<Point> k;
    for (std::size_t i = 0; i < n; ++i) k.push_back({extent * sample_uniform(rng), extent * sample_uniform(rng)});
    return k;
  };
  const auto k = knots(30, 50.0);
  const auto probe = knots(50, 50.0);
  const auto frame = surface::CoordinateFrame::unit_diameter(bounding_box(k));

  double affine_err = 0;
  std::vector<double> z;
  for (const auto& p : k) z.push_back(3.0 - 0.2 * p.x + 0.07 * p.y);
  for (double lambda : {0.0, 1e-9, 1e-3, 1.0, 1e3, 1e8}) {
    const auto m = surface::tps_fit(k, z, lambda, frame);
    for (const auto& p : probe) affine_err = std::max(affine_err, std::abs(m(p) - (3.0 - 0.2 * p.x + 0.07 * p.y)));
  }
  o.require(affine_err <= 1e-8, "affine max error " + fmt("%.2e", affine_err));

  // Exact interpolation oracle on a smooth field over unit-scale knots.
  const auto ku = knots(30, 1.0);
  std::vector<double> zs;
  for (const auto& p : ku) zs.push_back(25 + 2 * std::sin(3 * p.x) * std::cos(2 * p.y) - 1.5 * p.y * p.y);
  const auto n = Eigen::Index(ku.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + 3, n + 3);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = surface::tps_kernel(distance(ku[std::size_t(i)], ku[std::size_t(j)]));
    a(i, n) = a(n, i) = 1;
    a(i, n + 1) = a(n + 1, i) = ku[std::size_t(i)].x;
    a(i, n + 2) = a(n + 2, i) = ku[std::size_t(i)].y;
    rhs(i) = zs[std::size_t(i)];
  }
  const Eigen::VectorXd sol = a.fullPivLu().solve(rhs);
  const auto m = surface::tps_fit(ku, zs, 1e-9);
  double interp_err = 0;
  for (std::size_t i = 0; i < ku.size(); ++i) interp_err = std::max(interp_err, std::abs(m(ku[i]) - zs[i]));
  for (const auto& p : knots(30, 1.0)) {
    double v = sol(n) + sol(n + 1) * p.x + sol(n + 2) * p.y;
    for (Eigen::Index i = 0; i < n; ++i) v += sol(i) * surface::tps_kernel(distance(p, ku[std::size_t(i)]));
    interp_err = std::max(interp_err, std::abs(m(p) - v));
  }
  o.require(interp_err <= 1e-6, "lambda=1e-9 vs exact system " + fmt("%.2e", interp_err));

  std::vector<double> noisy;
  Eigen::MatrixXd x(k.size(), 3);
  Eigen::VectorXd y(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) {
    noisy.push_back(10 + 0.1 * k[i].x + 2 * sample_normal(rng));
    x.row(Eigen::Index(i)) << 1.0, k[i].x, k[i].y;
    y(Eigen::Index(i)) = noisy.back();
  }
  const Eigen::Vector3d beta = (x.transpose() * x).ldlt().solve(x.transpose() * y);
  const auto big = surface::tps_fit(k, noisy, 1e12, frame);
  double ls_err = 0;
  for (const auto& p : probe) ls_err = std::max(ls_err, std::abs(big(p) - (beta(0) + beta(1) * p.x + beta(2) * p.y)));
  o.require(ls_err <= 1e-6, "large-lambda vs planar least squares " + fmt("%.2e", ls_err));
  return o;
}

// 4 -------------------------------------------------------------------------
Outcome ggpm_recovery() {
  Outcome o;
  ggpm::GgpmParams truth{27.0, -0.8, 0.6, 2.0, 0.08, 1.0, 0.3};
  ggpm::GgpmData d;
  Rng rng(41);
  for (int i = 0; i < 10; ++i) {
    d.sites.push_back("G" + std::to_string(i));
    d.locations.push_back({60 * sample_uniform(rng), 60 * sample_uniform(rng)});
    d.altitude_std.push_back(-1.5 + 3.0 * i / 9.0);
  }
  d.year = 2015;
  for (int t = 0; t < 150; ++t) d.dates.push_back(add_days(make_date(2015, 5, 1), t));
  d.y = ggpm::simulate(truth, d.locations, d.altitude_std, 150, rng).y;
  const auto fit = ggpm::fit(d);
  o.require(std::abs(fit.params.a - 0.6) <= 0.15, "a = " + fmt("%.4f", fit.params.a));
  o.require(std::abs(fit.params.beta1 + 0.8) <= 0.2, "beta1 = " + fmt("%.4f", fit.params.beta1));

  double worst = 0;
  for (int point = 0; point < 3; ++point) {
    Eigen::VectorXd theta = ggpm::to_unconstrained(truth);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) += 0.2 * sample_normal(rng);
    const Eigen::VectorXd g = ggpm::marginal_loglik_gradient(ggpm::from_unconstrained(theta, 1.0), d);
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double h = 1e-5;
      Eigen::VectorXd up = theta, dn = theta;
      up(i) += h;
      dn(i) -= h;
      const double fd = (ggpm::marginal_loglik(ggpm::from_unconstrained(up, 1.0), d) -
                         ggpm::marginal_loglik(ggpm::from_unconstrained(dn, 1.0), d)) /
                        (2 * h);
      worst = std::max(worst, std::abs(g(i) - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  o.require(worst < 1e-5, "gradient relative error " + fmt("%.2e", worst));
  double merr = 0;
  for (double h = 0; h <= 50; h += 0.25) merr = std::max(merr, std::abs(ggpm::matern(h, 0.3, 0.5) - std::exp(-0.3 * h)));
  o.require(merr <= 1e-12, "matern(nu=0.5) vs exp " + fmt("%.1e", merr));
  return o;
}

// 5 -------------------------------------------------------------------------
Outcome aggregation() {
  Outcome o;
  ingest::ReanalysisGrid g;
  g.dates = {make_date(2010, 7, 1), make_date(2010, 7, 2)};
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      g.cells.push_back({"C" + std::to_string(i * 8 + j), {10.0 * i, 10.0 * j, 10.0 * (i + 1), 10.0 * (j + 1)},
                         {17.25, 17.25}});
    }
  }
  // A tilted partition of the region's interior.
  const auto map = testing::square_map(6, 5, 12.0, 3.3, 4.1);
  const auto s = ingest::aggregate_cells(g, map);
  const double const_err = (s.values.array() - 17.25).abs().maxCoeff();
  o.require(const_err <= 1e-12, "constant field error " + fmt("%.1e", const_err));
  const auto w = ingest::overlap_weights(g, map);
  double area_err = 0;
  for (std::size_t m = 0; m < map.size(); ++m) {
    double total = 0;
    for (const auto& e : w.per_municipality[m]) total += e.area;
    area_err = std::max(area_err, std::abs(total - map[m].area_km2) / map[m].area_km2);
  }
  o.require(area_err <= 1e-9, "overlap area relative error " + fmt("%.1e", area_err));
  return o;
}

// 6 -------------------------------------------------------------------------
Outcome heatwave_oracle() {
  Outcome o;
  Rng rng(6);
  std::size_t mismatches = 0, nesting = 0, cases = 0;
  for (int s = 0; s < 1000; ++s) {
    const std::size_t n = 30 + std::size_t(sample_uniform(rng) * 90);
    std::vector<double> t(n);
    for (auto& v : t) v = 30 + 8 * sample_uniform(rng);
    for (double thr : {32.0, 34.5, 36.0}) {
      std::vector<std::vector<bool>> got;
      for (const auto& p : heatwave::DurationPreset::presets()) {
        got.push_back(heatwave::detect(t, thr, p));
        std::vector<bool> ref(n, false);
        for (std::size_t i = 0; i < n;) {
          if (!(t[i] > thr)) {
            ++i;
            continue;
          }
          std::size_t j = i;
          while (j < n && t[j] > thr) ++j;
          if (int(j - i) >= p.min_run) {
            for (std::size_t k = i + std::size_t(p.exclude_first); k < j; ++k) ref[k] = true;
          }
          i = j;
        }
        mismatches += got.back() != ref;
        ++cases;
      }
      for (std::size_t i = 0; i < n; ++i) nesting += (got[1][i] && !got[0][i]) || (got[2][i] && !got[1][i]);
    }
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " mismatches in " + std::to_string(cases) + " cases");
  o.require(nesting == 0, std::to_string(nesting) + " nesting violations");
  return o;
}

// 7 -------------------------------------------------------------------------
Outcome cco_structure() {
  Outcome o;
  const auto b = synthetic::make_synthetic({}, 17);
  const std::vector<ExposureSurface> surfaces{b.truth};
  const auto ds = cco::build_strata(b.mortality, surfaces, {}, b.holidays, {});
  std::size_t bad_identity = 0, bad_count = 0;
  for (const auto& st : ds.strata) {
    if (st.n_rows - 1 < 3 || st.n_rows - 1 > 4) ++bad_count;
    Date event{};
    for (std::size_t r = st.first_row; r < st.first_row + st.n_rows; ++r) {
      if (ds.rows[r].is_case) event = ds.rows[r].date;
    }
    std::set<int> seen;
    for (std::size_t r = st.first_row; r < st.first_row + st.n_rows; ++r) {
      const Date d = ds.rows[r].date;
      const bool ok = (serial(d) - serial(event)) % 7 == 0 && d.month() == event.month() && d.year() == event.year();
      bad_identity += !ok || !seen.insert(serial(d)).second;
    }
  }
  o.require(bad_identity == 0, std::to_string(ds.n_strata()) + " strata, " + std::to_string(bad_identity) +
                                   " rows break weekday/month/year identity");
  o.require(bad_count == 0, std::to_string(bad_count) + " strata outside 3-4 controls");
  const double mean = ds.mean_controls();
  o.require(mean >= 3.3 && mean <= 3.5, "mean controls per case " + fmt("%.4f", mean));
  return o;
}

// 8 and 9 -------------------------------------------------------------------
struct EpiScenario {
  ExposureSurface surface;
  heatwave::HeatwaveCalendar calendar;
  cco::HolidayCalendar holidays;
  cco::Dataset dataset;
};

// 24 municipalities over six May-September seasons with daily maxima
// spanning roughly 18-40 C.
EpiScenario epi_scenario(const synthetic::Effects& effects, std::uint64_t seed) {
  EpiScenario sc;
  Rng rng(seed);
  const int first = 2010, last = 2015;
  const std::size_t n_muni = 24;
  auto& s = sc.surface;
  s.method = "truth";
  const auto w = SeasonWindow::may_to_september();
  for (int y = first; y <= last; ++y) {
    for (int d = 1; d <= w.length(y); ++d) s.dates.push_back(w.date_of(y, d));
  }
  s.values.resize(Eigen::Index(n_muni), Eigen::Index(s.dates.size()));
  for (std::size_t m = 0; m < n_muni; ++m) {
    s.municipalities.push_back("E" + std::to_string(m));
    const double offset = -2.5 + 5.0 * double(m) / double(n_muni - 1);
    double ar = 0;
    for (std::size_t t = 0; t < s.dates.size(); ++t) {
      const int doy = w.day_of_season(s.dates[t]);
      ar = 0.75 * ar + 1.8 * sample_normal(rng);
      s.values(Eigen::Index(m), Eigen::Index(t)) = 28.0 + offset + 5.0 * std::sin(M_PI * (doy - 10) / 150.0) - 2.0 + ar;
    }
  }
  s.reindex();
  sc.calendar = heatwave::build_calendar(s, heatwave::parse_spec(effects.heatwave_spec));
  sc.holidays = cco::HolidayCalendar::italian_summer(first, last);
  synthetic::MortalityModel mm;
  mm.daily_rate = 2.0e-5;
  mm.effects = effects;
  const std::vector<double> population(n_muni, 150000.0);
  const auto deaths = synthetic::simulate_mortality(s, population, sc.holidays, &sc.calendar, mm, rng);
  const std::vector<ExposureSurface> surfaces{s};
  const std::vector<heatwave::HeatwaveCalendar> cals{sc.calendar};
  sc.dataset = cco::build_strata(deaths, surfaces, cals, sc.holidays, {});
  return sc;
}

Outcome epi_null() {
  Outcome o;
  const auto sc = epi_scenario(synthetic::Effects::none(), 801);
  const auto data = epi::EpiData::from_dataset(sc.dataset, 0);
  const auto fit = epi::fit(data, {});
  int covered = 0;
  for (const auto& c : fit.curve) covered += c.lower <= 0.0 && c.upper >= 0.0;
  const double frac = double(covered) / double(fit.curve.size());
  o.require(sc.dataset.n_strata() >= 5000, std::to_string(sc.dataset.n_strata()) + " strata");
  o.require(frac >= 0.90, fmt("%.0f%%", 100 * frac) + " of bins cover log-RR 0");
  const std::vector<std::size_t> cols{0};
  const auto hw = epi::fit_heatwave_models(sc.dataset, 0, cols, false)[0];
  o.require(!hw.skipped && hw.beta.lower <= 0.0 && hw.beta.upper >= 0.0,
            "heatwave log-RR interval [" + fmt("%.4f", hw.beta.lower) + ", " + fmt("%.4f", hw.beta.upper) + "]");
  return o;
}

Outcome epi_recovery() {
  Outcome o;
  const synthetic::Effects effects;  // slope 0.03 above 28 C, holiday 0.89, heatwave 1.05
  const auto sc = epi_scenario(effects, 901);
  const auto data = epi::EpiData::from_dataset(sc.dataset, 0);
  const auto fit = epi::fit(data, {});
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  for (int b = 0; b < fit.binning.n; ++b) {
    const double x = fit.binning.midpoint(b);
    if (x < 28.0 || x > 34.0) continue;
    const double y = fit.curve[std::size_t(b)].median;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    n += 1;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  o.require(std::abs(slope - effects.slope) <= 0.02,
            std::to_string(sc.dataset.n_strata()) + " strata; slope on [28,34] " + fmt("%.4f", slope) + "/C");
  const auto& hol = fit.coefficient("holiday");
  const double lh = std::log(effects.holiday_rr);
  o.require(hol.lower <= lh && lh <= hol.upper,
            "holiday log-RR [" + fmt("%.4f", hol.lower) + ", " + fmt("%.4f", hol.upper) + "] vs " + fmt("%.4f", lh));
  const std::vector<std::size_t> cols{0};
  const auto hw = epi::fit_heatwave_models(sc.dataset, 0, cols, true)[0];
  const double lw = std::log(effects.heatwave_rr);
  o.require(!hw.skipped && hw.beta.lower <= lw && lw <= hw.beta.upper,
            "heatwave log-RR [" + fmt("%.4f", hw.beta.lower) + ", " + fmt("%.4f", hw.beta.upper) + "] vs " +
                fmt("%.4f", lw));
  return o;
}

// 10 ------------------------------------------------------------------------
Outcome conditional_oracle() {
  Outcome o;
  Rng rng(10);
  double gap_spread = 0, grad_err = 0;
  for (int s = 0; s < 200; ++s) {
    const std::size_t n = 2 + std::size_t(4 * sample_uniform(rng));
    std::vector<double> x(n);
    for (auto& v : x) v = sample_normal(rng);
    const std::size_t c = std::min(n - 1, std::size_t(sample_uniform(rng) * double(n)));
    auto profiled = [&](double beta) {
      double u = 0;
      for (int it = 0; it < 100; ++it) {
        double tot = 0;
        for (double xi : x) tot += std::exp(beta * xi + u);
        const double step = (1 - tot) / tot;
        u += step;
        if (std::abs(step) < 1e-15) break;
      }
      double ll = 0;
      for (std::size_t r = 0; r < n; ++r) ll += (r == c ? beta * x[r] + u : 0.0) - std::exp(beta * x[r] + u);
      return ll;
    };
    auto conditional = [&](double beta) {
      std::vector<double> eta(n);
      for (std::size_t r = 0; r < n; ++r) eta[r] = beta * x[r];
      return epi::conditional_loglik(eta, c);
    };
    // The additive constant must not depend on the parameter.
    double lo = INFINITY, hi = -INFINITY;
    for (double beta : {-1.5, -0.3, 0.0, 0.8, 2.0}) {
      const double gap = profiled(beta) - conditional(beta);
      lo = std::min(lo, gap);
      hi = std::max(hi, gap);
    }
    gap_spread = std::max(gap_spread, hi - lo);
    const double beta = sample_normal(rng), h = 1e-5;
    const double gp = (profiled(beta + h) - profiled(beta - h)) / (2 * h);
    const double gc = (conditional(beta + h) - conditional(beta - h)) / (2 * h);
    grad_err = std::max(grad_err, std::abs(gp - gc));
  }
  o.require(gap_spread <= 1e-9, "200 strata; constant offset spread " + fmt("%.1e", gap_spread));
  o.require(grad_err <= 1e-6, "gradient difference " + fmt("%.1e", grad_err));
  const double rate = epi::pc_prior_rate(0.1, 0.01);
  o.require(std::abs(rate - 46.0517) <= 1e-3, "pc_prior_rate(0.1, 0.01) = " + fmt("%.4f", rate));
  return o;
}

// 11 ------------------------------------------------------------------------
std::map<std::string, std::string> result_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = io::read_text(e.path());
  }
  return out;
}

Outcome end_to_end(const fs::path& work) {
  Outcome o;
  fs::remove_all(work);
  fs::create_directories(work);
  std::ostringstream sink;
  pipeline::Logger log(sink);
  const auto t0 = std::chrono::steady_clock::now();
  auto config = pipeline::simulate({}, 7, work / "sim", log);
  config.output_dir = work / "run1";
  pipeline::run("all", config, {}, log);
  config.output_dir = work / "run2";
  pipeline::run("all", config, {}, log);
  const double secs = seconds_since(t0);
  const auto a = result_tree(work / "run1"), b = result_tree(work / "run2");
  std::size_t differing = 0;
  for (const auto& [name, bytes] : a) differing += !b.count(name) || b.at(name) != bytes;
  differing += b.size() > a.size() ? b.size() - a.size() : 0;
  o.require(differing == 0 && !a.empty(),
            std::to_string(a.size()) + " artifacts, " + std::to_string(differing) + " differ between reruns");
  o.require(secs <= 1800, "two full runs in " + fmt("%.0f", secs) + "s");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heatrisk acceptance suite"};
  fs::path work = fs::temp_directory_path() / "heatrisk-acceptance";
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory for the end-to-end run");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gqrm quantile coverage", gqrm_coverage},
      {"gqrm parameter recovery", gqrm_recovery},
      {"thin-plate spline correctness", tps},
      {"ggpm recovery and gradient", ggpm_recovery},
      {"aggregation exactness", aggregation},
      {"heatwave detection oracle", heatwave_oracle},
      {"case-crossover structure", cco_structure},
      {"epi null simulation", epi_null},
      {"epi effect recovery", epi_recovery},
      {"conditional likelihood oracle", conditional_oracle},
      {"end-to-end determinism", [&] { return end_to_end(work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    failed += !out.pass;
    std::printf("%s %2d %s (%.1fs): %s\n", out.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                seconds_since(t0), out.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
