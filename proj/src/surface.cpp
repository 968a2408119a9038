#include "heatrisk/surface.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "heatrisk/error.hpp"

namespace heatrisk::surface {

namespace {

std::vector<Point> lattice(const Rect& box, double h) {
  auto axis = [h](double lo, double width) {
    const int n = std::max(1, static_cast<int>(std::floor(width / h + 1e-9)));
    const double start = lo + 0.5 * (width - (n - 1) * h);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = start + i * h;
    return v;
  };
  const auto xs = axis(box.xmin, box.width());
  const auto ys = axis(box.ymin, box.height());
  std::vector<Point> out;
  out.reserve(xs.size() * ys.size());
  for (double y : ys) {
    for (double x : xs) out.push_back({x, y});
  }
  return out;
}

struct Located {
  std::vector<Point> points;
  std::vector<std::size_t> owner;
};

Located clip_lattice(const MunicipalityMap& map, double h) {
  Located out;
  for (const auto& p : lattice(map.bounds(), h)) {
    if (auto m = map.locate(p)) {
      out.points.push_back(p);
      out.owner.push_back(*m);
    }
  }
  return out;
}

struct TpsSystem {
  Eigen::MatrixXd basis_map;   // n x n: z -> basis coefficients
  Eigen::MatrixXd affine_map;  // 3 x n: z -> affine coefficients
};

TpsSystem solve_system(std::span<const Point> u, double lambda) {
  const auto n = static_cast<Eigen::Index>(u.size());
  if (n < 3) throw Error("collinear_stations", "thin-plate spline needs at least 3 knots");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error("invalid_lambda", "smoothing parameter must be finite and non-negative");
  }
  Eigen::MatrixXd e(n, n);
  Eigen::MatrixXd t(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    t.row(i) << 1.0, u[static_cast<std::size_t>(i)].x, u[static_cast<std::size_t>(i)].y;
    for (Eigen::Index j = 0; j < n; ++j) {
      e(i, j) = tps_kernel(distance(u[static_cast<std::size_t>(i)], u[static_cast<std::size_t>(j)]));
    }
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(t);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  const Eigen::Matrix3d r = qr.matrixQR().topRows(3).triangularView<Eigen::Upper>();
  const double rmax = r.diagonal().cwiseAbs().maxCoeff();
  if (r.diagonal().cwiseAbs().minCoeff() <= 1e-10 * std::max(rmax, 1.0)) {
    throw Error("collinear_stations", "thin-plate knots are collinear");
  }
  const Eigen::MatrixXd q1 = q.leftCols(3);
  TpsSystem sys;
  if (n > 3) {
    const Eigen::MatrixXd q2 = q.rightCols(n - 3);
    Eigen::MatrixXd m = q2.transpose() * e * q2;
    m.diagonal().array() += lambda;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
    if (ldlt.info() != Eigen::Success) {
      throw Error("singular_system", "thin-plate system could not be factorized");
    }
    sys.basis_map = q2 * ldlt.solve(q2.transpose());
  } else {
    sys.basis_map = Eigen::MatrixXd::Zero(n, n);
  }
  // T d = z - (E + lambda I) c; the lambda c term lies in the complement of T.
  const Eigen::MatrixXd residual_map = Eigen::MatrixXd::Identity(n, n) - e * sys.basis_map;
  sys.affine_map = r.triangularView<Eigen::Upper>().solve(q1.transpose() * residual_map);
  return sys;
}

std::vector<Point> transform(std::span<const Point> pts, const CoordinateFrame& frame) {
  std::vector<Point> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(frame.apply(p));
  return out;
}

}  // namespace

std::string PredictionGrid::composition() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "centroids=%zu;lattice=%zu;spacing_km=%.6g", n_centroids,
                n_lattice, spacing);
  return buf;
}

Point interior_point(const MultiPolygon& shape) {
  const Point c = centroid(shape);
  if (contains(shape, c)) return c;
  const Rect box = bounding_box(shape);
  for (double y : {c.y, box.center().y}) {
    std::vector<double> xs;
    for (const auto& part : shape.parts) {
      std::vector<const Ring*> rings{&part.outer};
      for (const auto& h : part.holes) rings.push_back(&h);
      for (const Ring* ring : rings) {
        const std::size_t n = ring->size();
        for (std::size_t i = 0; i < n; ++i) {
          const Point a = (*ring)[i];
          const Point b = (*ring)[(i + 1) % n];
          if ((a.y > y) != (b.y > y)) xs.push_back(a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x));
        }
      }
    }
    std::sort(xs.begin(), xs.end());
    double best = -1.0;
    Point out = c;
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      if (xs[i + 1] - xs[i] > best) {
        best = xs[i + 1] - xs[i];
        out = {0.5 * (xs[i] + xs[i + 1]), y};
      }
    }
    if (best > 0.0) return out;
  }
  return c;
}

PredictionGrid build_grid(const MunicipalityMap& map, const GridOptions& options) {
  if (map.size() == 0) throw Error("empty_map", "no municipalities to build a grid for");
  PredictionGrid g;
  g.members.resize(map.size());
  for (std::size_t m = 0; m < map.size(); ++m) {
    g.ids.push_back("c:" + map[m].id);
    g.points.push_back(interior_point(map[m].shape));
    g.membership.push_back(m);
    g.members[m].push_back(m);
  }
  g.n_centroids = map.size();

  Located lat;
  if (options.spacing) {
    if (!(*options.spacing > 0.0)) throw Error("invalid_config", "grid spacing must be positive");
    g.spacing = *options.spacing;
    lat = clip_lattice(map, g.spacing);
  } else if (options.n_extra > 0) {
    double region = 0.0;
    for (const auto& m : map.items()) region += m.area_km2;
    const double target = static_cast<double>(options.n_extra);
    const double h0 = std::sqrt(region / target);
    // Walk outwards from the area-based guess for the smallest lattice with
    // at least the target count, then thin it evenly to the exact count.
    constexpr int kSteps = 200;
    std::size_t best_gap = std::numeric_limits<std::size_t>::max();
    for (int k = 0; k <= kSteps && best_gap > 0; ++k) {
      for (int sign : {1, -1}) {
        if (k == 0 && sign < 0) continue;
        const double h = h0 * (1.0 + sign * 0.3 * k / kSteps);
        Located cand = clip_lattice(map, h);
        if (cand.points.size() < options.n_extra) continue;
        const std::size_t gap = cand.points.size() - options.n_extra;
        if (gap < best_gap) {
          best_gap = gap;
          g.spacing = h;
          lat = std::move(cand);
          if (gap == 0) break;
        }
      }
    }
    if (best_gap > 0 && best_gap != std::numeric_limits<std::size_t>::max()) {
      const std::size_t n = lat.points.size();
      std::vector<bool> drop(n, false);
      for (std::size_t i = 0; i < best_gap; ++i) drop[(2 * i + 1) * n / (2 * best_gap)] = true;
      Located thinned;
      for (std::size_t i = 0; i < n; ++i) {
        if (drop[i]) continue;
        thinned.points.push_back(lat.points[i]);
        thinned.owner.push_back(lat.owner[i]);
      }
      lat = std::move(thinned);
    }
  }
  for (std::size_t k = 0; k < lat.points.size(); ++k) {
    g.ids.push_back("g:" + std::to_string(k + 1));
    g.points.push_back(lat.points[k]);
    g.membership.push_back(lat.owner[k]);
    g.members[lat.owner[k]].push_back(g.points.size() - 1);
  }
  g.n_lattice = lat.points.size();
  if (g.n_lattice == 0) g.spacing = 0.0;

  g.fallback.assign(map.size(), std::nullopt);
  for (std::size_t m = 0; m < map.size(); ++m) {
    if (!g.members[m].empty()) continue;
    const Point c = map[m].centroid;
    std::size_t best = 0;
    for (std::size_t k = 1; k < g.points.size(); ++k) {
      if (distance(g.points[k], c) < distance(g.points[best], c)) best = k;
    }
    g.fallback[m] = best;
  }
  return g;
}

CoordinateFrame CoordinateFrame::unit_diameter(const Rect& region) {
  const double diameter = std::hypot(region.width(), region.height());
  if (!(diameter > 0.0)) throw Error("degenerate_region", "region has zero extent");
  return {{region.xmin, region.ymin}, diameter};
}

double tps_kernel(double r) {
  if (r <= 0.0) return 0.0;
  return r * r * std::log(r) / (8.0 * std::numbers::pi);
}

double TpsModel::operator()(Point p) const {
  const Point u = frame.apply(p);
  double v = affine(0) + affine(1) * u.x + affine(2) * u.y;
  for (std::size_t i = 0; i < knots.size(); ++i) {
    v += basis(static_cast<Eigen::Index>(i)) * tps_kernel(distance(u, knots[i]));
  }
  return v;
}

TpsModel tps_fit(std::span<const Point> knots, std::span<const double> z, double lambda,
                 const CoordinateFrame& frame) {
  if (knots.size() != z.size()) throw Error("invalid_argument", "knots and values differ in length");
  for (double v : z) {
    if (!std::isfinite(v)) throw Error("invalid_argument", "thin-plate data must be finite");
  }
  TpsModel m;
  m.knots = transform(knots, frame);
  m.lambda = lambda;
  m.frame = frame;
  const TpsSystem sys = solve_system(m.knots, lambda);
  const Eigen::Map<const Eigen::VectorXd> zv(z.data(), static_cast<Eigen::Index>(z.size()));
  m.basis = sys.basis_map * zv;
  m.affine = sys.affine_map * zv;
  return m;
}

std::vector<double> tps_predict(const TpsModel& model, std::span<const Point> points) {
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(model(p));
  return out;
}

std::vector<double> municipality_average(const PredictionGrid& grid,
                                         std::span<const double> values) {
  if (values.size() != grid.size()) {
    throw Error("invalid_argument", "grid values do not match the grid size");
  }
  std::vector<double> out(grid.members.size());
  for (std::size_t m = 0; m < grid.members.size(); ++m) {
    const auto& mem = grid.members[m];
    if (mem.empty()) {
      if (!grid.fallback[m]) throw Error("empty_municipality", "municipality has no grid points");
      out[m] = values[*grid.fallback[m]];
      continue;
    }
    double s = 0.0;
    for (std::size_t k : mem) s += values[k];
    out[m] = s / static_cast<double>(mem.size());
  }
  return out;
}

TpsInterpolator::TpsInterpolator(std::span<const Point> knots, const PredictionGrid& grid,
                                 double lambda, const CoordinateFrame& frame) {
  const auto u = transform(knots, frame);
  const TpsSystem sys = solve_system(u, lambda);
  const auto n = static_cast<Eigen::Index>(u.size());
  // Row g of the grid operator: kernel(g, knots) * basis_map + [1 gx gy] * affine_map.
  auto grid_row = [&](std::size_t k) {
    const Point g = frame.apply(grid.points[k]);
    Eigen::RowVectorXd kr(n);
    for (Eigen::Index i = 0; i < n; ++i) kr(i) = tps_kernel(distance(g, u[static_cast<std::size_t>(i)]));
    Eigen::RowVector3d tr(1.0, g.x, g.y);
    return Eigen::RowVectorXd(kr * sys.basis_map + tr * sys.affine_map);
  };
  op_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(grid.members.size()), n);
  for (std::size_t m = 0; m < grid.members.size(); ++m) {
    const auto& mem = grid.members[m];
    const auto row = static_cast<Eigen::Index>(m);
    if (mem.empty()) {
      if (!grid.fallback[m]) throw Error("empty_municipality", "municipality has no grid points");
      op_.row(row) = grid_row(*grid.fallback[m]);
      continue;
    }
    for (std::size_t k : mem) op_.row(row) += grid_row(k);
    op_.row(row) /= static_cast<double>(mem.size());
  }
}

std::vector<double> TpsInterpolator::apply(std::span<const double> station_values) const {
  if (static_cast<Eigen::Index>(station_values.size()) != op_.cols()) {
    throw Error("invalid_argument", "station values do not match the knots");
  }
  const Eigen::Map<const Eigen::VectorXd> z(station_values.data(), op_.cols());
  const Eigen::VectorXd r = op_ * z;
  return {r.data(), r.data() + r.size()};
}

Eigen::MatrixXd TpsInterpolator::apply(const Eigen::MatrixXd& station_values) const {
  if (station_values.rows() != op_.cols()) {
    throw Error("invalid_argument", "station values do not match the knots");
  }
  return op_ * station_values;
}

std::vector<double> interpolate_day(const gqrm::QStarTable& q, const gqrm::GqrmData& data, int t,
                                    int ell, const PredictionGrid& grid,
                                    const CoordinateFrame& frame, double lambda) {
  std::vector<double> z(data.n_sites());
  for (std::size_t s = 0; s < z.size(); ++s) z[s] = q.at(s, t, ell);
  const TpsModel model = tps_fit(data.locations, z, lambda, frame);
  return municipality_average(grid, tps_predict(model, grid.points));
}

ExposureSurface interpolate_surface(const gqrm::QStarTable& q, const gqrm::GqrmData& data,
                                    const StudyPeriod& period, const PredictionGrid& grid,
                                    const MunicipalityMap& map, const CoordinateFrame& frame,
                                    double lambda) {
  if (grid.members.size() != map.size()) {
    throw Error("invalid_argument", "grid was built for a different municipality map");
  }
  const TpsInterpolator interp(data.locations, grid, lambda, frame);
  const int per = data.season_length - 1;
  ExposureSurface out;
  char method[32];
  std::snprintf(method, sizeof method, "gqrm-%.2f", q.tau);
  out.method = method;
  out.municipalities = map.ids();
  for (int t = 1; t <= data.n_years(); ++t) {
    for (int ell = 2; ell <= data.season_length; ++ell) {
      out.dates.push_back(period.window().date_of(data.years[static_cast<std::size_t>(t - 1)], ell));
    }
  }
  out.values = interp.apply(q.values);
  if (out.values.cols() != data.n_years() * per) {
    throw Error("invalid_argument", "quantile table does not match the station panel");
  }
  char lam[32];
  std::snprintf(lam, sizeof lam, "%.17g", lambda);
  out.provenance["lambda"] = lam;
  out.provenance["grid"] = grid.composition();
  out.validate();
  out.reindex();
  return out;
}

}  // namespace heatrisk::surface
