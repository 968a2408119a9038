#include "heatrisk/ingest.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "heatrisk/error.hpp"

namespace heatrisk::ingest {

SelectionRule SelectionRule::max_consecutive_missing(int days) {
  SelectionRule r{Mode::MaxConsecutiveMissing, static_cast<double>(days)};
  r.validate();
  return r;
}

SelectionRule SelectionRule::max_missing_fraction(double fraction) {
  SelectionRule r{Mode::MaxMissingFraction, fraction};
  r.validate();
  return r;
}

void SelectionRule::validate() const {
  if (!(limit > 0)) throw Error("invalid_rule", "selection limit must be positive");
  if (mode == Mode::MaxMissingFraction && !(limit < 1.0)) {
    throw Error("invalid_rule", "missing fraction limit must lie in (0,1)");
  }
}

bool SelectionRule::accepts(std::span<const double> season) const {
  if (mode == Mode::MaxConsecutiveMissing) {
    std::size_t run = 0, longest = 0;
    for (double v : season) {
      run = std::isnan(v) ? run + 1 : 0;
      longest = std::max(longest, run);
    }
    return static_cast<double>(longest) <= limit;
  }
  const auto missing = std::count_if(season.begin(), season.end(), [](double v) { return std::isnan(v); });
  return static_cast<double>(missing) < limit * static_cast<double>(season.size());
}

std::string SelectionRule::describe() const {
  std::ostringstream os;
  if (mode == Mode::MaxConsecutiveMissing) {
    os << "max-consecutive-missing(" << limit << ")";
  } else {
    os << "max-missing-fraction(" << limit << ")";
  }
  return os.str();
}

std::vector<StationSeries> select_stations(std::span<const StationSeries> stations,
                                           const StudyPeriod& period, const SelectionRule& rule) {
  rule.validate();
  std::vector<StationSeries> out;
  for (const auto& st : stations) {
    if (st.values.size() != period.n_days()) {
      throw Error("invalid_series", "station " + st.id + " is not aligned with the study period");
    }
    bool ok = true;
    for (std::size_t y = 0; y < period.n_years() && ok; ++y) {
      std::span<const double> season(st.values.data() + period.year_offset(y),
                                     static_cast<std::size_t>(period.season_length(y)));
      ok = rule.accepts(season);
    }
    if (ok) out.push_back(st);
  }
  if (out.empty()) {
    throw Error("no_stations", "no station satisfies " + rule.describe());
  }
  return out;
}

namespace {

struct SplineSystem {
  Eigen::MatrixXd Q;  // n x (n-2)
  Eigen::MatrixXd R;  // (n-2) x (n-2)
};

SplineSystem spline_system(std::span<const double> x) {
  const auto n = static_cast<Eigen::Index>(x.size());
  SplineSystem s{Eigen::MatrixXd::Zero(n, n - 2), Eigen::MatrixXd::Zero(n - 2, n - 2)};
  std::vector<double> h(x.size() - 1);
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    h[i] = x[i + 1] - x[i];
    if (!(h[i] > 0)) throw Error("invalid_argument", "spline abscissae must be strictly increasing");
  }
  for (Eigen::Index j = 0; j < n - 2; ++j) {
    const double h0 = h[static_cast<std::size_t>(j)], h1 = h[static_cast<std::size_t>(j) + 1];
    s.Q(j, j) = 1.0 / h0;
    s.Q(j + 1, j) = -1.0 / h0 - 1.0 / h1;
    s.Q(j + 2, j) = 1.0 / h1;
    s.R(j, j) = (h0 + h1) / 3.0;
    if (j + 1 < n - 2) s.R(j, j + 1) = s.R(j + 1, j) = h1 / 6.0;
  }
  return s;
}

}  // namespace

SmoothingSpline SmoothingSpline::fit(std::span<const double> x, std::span<const double> y,
                                     double alpha) {
  if (x.size() != y.size() || x.size() < 4) {
    throw Error("too_few_points", "smoothing spline needs at least four points");
  }
  const auto n = static_cast<Eigen::Index>(x.size());
  const SplineSystem sys = spline_system(x);
  // Reinsch form: (R + alpha Q'Q) gamma = Q'y, g = y - alpha Q gamma.
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  const Eigen::MatrixXd A = sys.R + alpha * sys.Q.transpose() * sys.Q;
  const Eigen::VectorXd gamma = A.llt().solve(sys.Q.transpose() * yv);
  const Eigen::VectorXd g = yv - alpha * (sys.Q * gamma);

  SmoothingSpline s;
  s.alpha_ = alpha;
  s.x_.assign(x.begin(), x.end());
  s.g_.assign(g.data(), g.data() + n);
  s.gamma_.assign(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index j = 0; j < n - 2; ++j) s.gamma_[static_cast<std::size_t>(j) + 1] = gamma(j);
  return s;
}

SmoothingSpline SmoothingSpline::fit_gcv(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 4) {
    throw Error("too_few_points", "smoothing spline needs at least four points");
  }
  const auto n = static_cast<Eigen::Index>(x.size());
  const SplineSystem sys = spline_system(x);
  const Eigen::MatrixXd K = sys.Q * sys.R.llt().solve(sys.Q.transpose());
  // Demmler-Reinsch basis: every candidate alpha is O(n) in this basis.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(K);
  const Eigen::VectorXd d = eig.eigenvalues().cwiseMax(0.0);
  const Eigen::VectorXd yt =
      eig.eigenvectors().transpose() * Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  const double nn = static_cast<double>(n);
  auto gcv = [&](double log10_alpha) {
    const double a = std::pow(10.0, log10_alpha);
    double rss = 0.0, tr = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double shrink = 1.0 / (1.0 + a * d(i));
      const double r = (1.0 - shrink) * yt(i);
      rss += r * r;
      tr += shrink;
    }
    const double denom = nn - tr;
    return nn * rss / (denom * denom);
  };
  constexpr double lo = -6.0, hi = 10.0;
  constexpr int steps = 81;
  double best = lo;
  double best_val = gcv(lo);
  for (int i = 1; i < steps; ++i) {
    const double la = lo + (hi - lo) * i / (steps - 1);
    const double v = gcv(la);
    if (v < best_val) {
      best_val = v;
      best = la;
    }
  }
  const double step = (hi - lo) / (steps - 1);
  double a = std::max(lo, best - step), b = std::min(hi, best + step);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - phi * (b - a), e = a + phi * (b - a);
  double fc = gcv(c), fe = gcv(e);
  for (int it = 0; it < 60; ++it) {
    if (fc < fe) {
      b = e;
      e = c;
      fe = fc;
      c = b - phi * (b - a);
      fc = gcv(c);
    } else {
      a = c;
      c = e;
      fc = fe;
      e = a + phi * (b - a);
      fe = gcv(e);
    }
  }
  const double chosen = (fc < fe ? c : e);
  return fit(x, y, std::pow(10.0, gcv(chosen) <= best_val ? chosen : best));
}

double SmoothingSpline::operator()(double x) const {
  const std::size_t n = x_.size();
  if (x <= x_.front()) {
    const double h = x_[1] - x_[0];
    const double slope = (g_[1] - g_[0]) / h - h * gamma_[1] / 6.0;
    return g_[0] - (x_[0] - x) * slope;
  }
  if (x >= x_.back()) {
    const double h = x_[n - 1] - x_[n - 2];
    const double slope = (g_[n - 1] - g_[n - 2]) / h + h * gamma_[n - 2] / 6.0;
    return g_[n - 1] + (x - x_[n - 1]) * slope;
  }
  const auto it = std::upper_bound(x_.begin(), x_.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - x_.begin()) - 1;
  const double h = x_[i + 1] - x_[i];
  const double dl = x - x_[i], dr = x_[i + 1] - x;
  return (dl * g_[i + 1] + dr * g_[i]) / h -
         dl * dr / 6.0 * ((1.0 + dl / h) * gamma_[i + 1] + (1.0 + dr / h) * gamma_[i]);
}

StationSeries impute_spline(const StationSeries& series, const StudyPeriod& period) {
  if (series.values.size() != period.n_days()) {
    throw Error("invalid_series", "station " + series.id + " is not aligned with the study period");
  }
  StationSeries out = series;
  for (std::size_t y = 0; y < period.n_years(); ++y) {
    const std::size_t off = period.year_offset(y);
    const int len = period.season_length(y);
    std::vector<double> xs, ys;
    bool any_missing = false;
    for (int l = 0; l < len; ++l) {
      const double v = series.values[off + static_cast<std::size_t>(l)];
      if (std::isnan(v)) {
        any_missing = true;
      } else {
        xs.push_back(l + 1);
        ys.push_back(v);
      }
    }
    if (!any_missing) continue;
    if (xs.size() < 4) {
      throw Error("too_few_points", "station " + series.id + " has fewer than four observed days in " +
                                        std::to_string(period.first_year() + static_cast<int>(y)));
    }
    const SmoothingSpline spline = SmoothingSpline::fit_gcv(xs, ys);
    for (int l = 0; l < len; ++l) {
      double& v = out.values[off + static_cast<std::size_t>(l)];
      if (std::isnan(v)) v = spline(l + 1);
    }
  }
  return out;
}

std::vector<DailyMax> daily_max_from_hourly(std::span<const HourlyRecord> hourly) {
  struct Acc {
    std::set<int> hours;
    double tmax = -std::numeric_limits<double>::infinity();
  };
  std::map<std::pair<CellId, int>, Acc> acc;
  for (const auto& r : hourly) {
    if (r.hour < 0 || r.hour > 23) throw Error("invalid_hour", "hour outside 0..23 in cell " + r.cell);
    auto& a = acc[{r.cell, serial(r.date)}];
    a.hours.insert(r.hour);
    a.tmax = std::max(a.tmax, r.temp);
  }
  std::vector<DailyMax> out;
  std::vector<std::string> incomplete;
  for (const auto& [key, a] : acc) {
    const Date d{std::chrono::sys_days{std::chrono::days{key.second}}};
    if (a.hours.size() != 24) {
      incomplete.push_back(key.first + "@" + format_date(d));
      continue;
    }
    out.push_back({key.first, d, a.tmax});
  }
  if (!incomplete.empty()) {
    std::string msg = "missing hourly values for:";
    for (const auto& s : incomplete) msg += " " + s;
    throw Error("missing_hours", msg);
  }
  return out;
}

void ReanalysisGrid::validate() const {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    if (!(c.rect.xmax > c.rect.xmin) || !(c.rect.ymax > c.rect.ymin)) {
      throw Error("invalid_grid", "cell " + c.id + " has non-positive extent");
    }
    if (c.tmax.size() != dates.size()) {
      throw Error("invalid_grid", "cell " + c.id + " does not cover every study day");
    }
    for (double v : c.tmax) {
      if (!std::isfinite(v)) throw Error("invalid_grid", "cell " + c.id + " has a missing daily maximum");
    }
    for (std::size_t j = i + 1; j < cells.size(); ++j) {
      const Rect& a = c.rect;
      const Rect& b = cells[j].rect;
      const double ox = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
      const double oy = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
      const double tol = 1e-9 * std::max(a.area(), b.area());
      if (ox > 0 && oy > 0 && ox * oy > tol) {
        throw Error("invalid_grid", "cells " + c.id + " and " + cells[j].id + " overlap");
      }
    }
  }
}

ReanalysisGrid ReanalysisGrid::from_daily(std::span<const std::pair<CellId, Rect>> rects,
                                          std::span<const DailyMax> daily) {
  ReanalysisGrid grid;
  std::set<int> day_set;
  for (const auto& d : daily) day_set.insert(serial(d.date));
  std::map<int, std::size_t> day_index;
  for (int s : day_set) {
    day_index.emplace(s, grid.dates.size());
    grid.dates.push_back(Date{std::chrono::sys_days{std::chrono::days{s}}});
  }
  std::map<CellId, std::size_t> cell_index;
  std::vector<double> widths;
  for (const auto& [id, rect] : rects) {
    cell_index.emplace(id, grid.cells.size());
    grid.cells.push_back({id, rect, std::vector<double>(grid.dates.size(), std::nan(""))});
    widths.push_back(rect.width());
  }
  for (const auto& d : daily) {
    auto it = cell_index.find(d.cell);
    if (it == cell_index.end()) throw Error("invalid_grid", "daily value for unknown cell " + d.cell);
    grid.cells[it->second].tmax[day_index.at(serial(d.date))] = d.tmax;
  }
  if (!widths.empty()) {
    std::nth_element(widths.begin(), widths.begin() + static_cast<long>(widths.size() / 2), widths.end());
    grid.resolution_km = widths[widths.size() / 2];
  }
  grid.validate();
  return grid;
}

OverlapWeights overlap_weights(const ReanalysisGrid& grid, const MunicipalityMap& map) {
  OverlapWeights w;
  w.per_municipality.resize(map.size());
  for (std::size_t m = 0; m < map.size(); ++m) {
    const Rect box = bounding_box(map[m].shape);
    for (std::size_t k = 0; k < grid.cells.size(); ++k) {
      const Rect& c = grid.cells[k].rect;
      if (c.xmax <= box.xmin || c.xmin >= box.xmax || c.ymax <= box.ymin || c.ymin >= box.ymax) continue;
      const double a = overlap_area(map[m].shape, c);
      if (a > 0.0) w.per_municipality[m].push_back({k, a});
    }
    if (w.per_municipality[m].empty()) {
      throw Error("no_overlap", "municipality " + map[m].id + " does not overlap any reanalysis cell");
    }
  }
  return w;
}

ExposureSurface aggregate_cells(const ReanalysisGrid& grid, const MunicipalityMap& map) {
  const OverlapWeights w = overlap_weights(grid, map);
  ExposureSurface s;
  s.method = "reanalysis";
  s.municipalities = map.ids();
  s.dates = grid.dates;
  s.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(map.size()),
                                   static_cast<Eigen::Index>(grid.dates.size()));
  for (std::size_t m = 0; m < map.size(); ++m) {
    double total = 0.0;
    for (const auto& e : w.per_municipality[m]) total += e.area;
    for (const auto& e : w.per_municipality[m]) {
      const double weight = e.area / total;
      const auto& tmax = grid.cells[e.cell].tmax;
      for (std::size_t d = 0; d < tmax.size(); ++d) {
        s.values(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d)) += weight * tmax[d];
      }
    }
  }
  s.provenance["aggregation"] = "overlap-normalized area weights";
  s.provenance["resolution_km"] = std::to_string(grid.resolution_km);
  s.reindex();
  s.validate();
  return s;
}

}  // namespace heatrisk::ingest
