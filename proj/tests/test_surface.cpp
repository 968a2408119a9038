#include <doctest.h>

#include <cmath>
#include <random>

#include "heatrisk/error.hpp"
#include "heatrisk/surface.hpp"
#include "support.hpp"

using namespace heatrisk;
using namespace heatrisk::surface;

namespace {

std::vector<Point> random_knots(std::size_t n, std::uint64_t seed, double extent = 50.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, extent);
  std::vector<Point> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({u(rng), u(rng)});
  return out;
}

// Exact interpolation system [K P; P' 0][w; c] = [z; 0].
Eigen::VectorXd interpolation_oracle(const std::vector<Point>& k, const std::vector<double>& z) {
  const auto n = Eigen::Index(k.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + 3, n + 3);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n + 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = tps_kernel(distance(k[std::size_t(i)], k[std::size_t(j)]));
    a(i, n) = a(n, i) = 1.0;
    a(i, n + 1) = a(n + 1, i) = k[std::size_t(i)].x;
    a(i, n + 2) = a(n + 2, i) = k[std::size_t(i)].y;
    b(i) = z[std::size_t(i)];
  }
  return a.fullPivLu().solve(b);
}

double oracle_eval(const Eigen::VectorXd& sol, const std::vector<Point>& k, Point p) {
  const auto n = Eigen::Index(k.size());
  double v = sol(n) + sol(n + 1) * p.x + sol(n + 2) * p.y;
  for (Eigen::Index i = 0; i < n; ++i) v += sol(i) * tps_kernel(distance(p, k[std::size_t(i)]));
  return v;
}

}  // namespace

TEST_CASE("thin-plate kernel") {
  CHECK(tps_kernel(0.0) == 0.0);
  CHECK(tps_kernel(1.0) == 0.0);
  CHECK(tps_kernel(std::exp(1.0)) == doctest::Approx(std::exp(2.0) / (8 * M_PI)));
}

TEST_CASE("affine fields are reproduced for any lambda") {
  const auto k = random_knots(25, 1);
  std::vector<double> z;
  for (const auto& p : k) z.push_back(3.0 - 0.2 * p.x + 0.07 * p.y);
  const auto off = random_knots(40, 2);
  for (double lambda : {0.0, 1e-9, 1e-3, 1.0, 1e3, 1e8}) {
    const auto frame = CoordinateFrame::unit_diameter(bounding_box(k));
    const auto m = tps_fit(k, z, lambda, frame);
    for (const auto& p : off) CHECK(std::abs(m(p) - (3.0 - 0.2 * p.x + 0.07 * p.y)) < 1e-8);
  }
}

TEST_CASE("small lambda interpolates like the exact system") {
  // Smooth field at scattered knots, as station temperatures would be.
  const auto k = random_knots(30, 3, 1.0);
  std::vector<double> z;
  for (const auto& p : k) z.push_back(25 + 2 * std::sin(3 * p.x) * std::cos(2 * p.y) - 1.5 * p.y * p.y);
  const auto m = tps_fit(k, z, 1e-9);
  const auto sol = interpolation_oracle(k, z);
  for (std::size_t i = 0; i < k.size(); ++i) CHECK(std::abs(m(k[i]) - z[i]) < 1e-6);
  for (const auto& p : random_knots(20, 5, 1.0)) CHECK(std::abs(m(p) - oracle_eval(sol, k, p)) < 1e-6);

  // Side conditions: basis coefficients orthogonal to the affine space.
  for (double lambda : {0.0, 1e-3, 10.0}) {
    const auto f = tps_fit(k, z, lambda);
    double s0 = 0, sx = 0, sy = 0;
    for (std::size_t i = 0; i < k.size(); ++i) {
      s0 += f.basis(Eigen::Index(i));
      sx += f.basis(Eigen::Index(i)) * f.knots[i].x;
      sy += f.basis(Eigen::Index(i)) * f.knots[i].y;
    }
    CHECK(std::abs(s0) < 1e-8);
    CHECK(std::abs(sx) < 1e-8);
    CHECK(std::abs(sy) < 1e-8);
  }
}

TEST_CASE("large lambda tends to planar least squares") {
  const auto k = random_knots(40, 6);
  std::vector<double> z;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 2);
  for (const auto& p : k) z.push_back(10 + 0.1 * p.x + n(rng));
  Eigen::MatrixXd x(k.size(), 3);
  Eigen::VectorXd y(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) {
    x.row(Eigen::Index(i)) << 1.0, k[i].x, k[i].y;
    y(Eigen::Index(i)) = z[i];
  }
  const Eigen::Vector3d beta = (x.transpose() * x).ldlt().solve(x.transpose() * y);
  const auto frame = CoordinateFrame::unit_diameter(bounding_box(k));
  const auto m = tps_fit(k, z, 1e12, frame);
  for (const auto& p : random_knots(20, 8)) CHECK(std::abs(m(p) - (beta(0) + beta(1) * p.x + beta(2) * p.y)) < 1e-6);
}

TEST_CASE("prediction is the basis expansion") {
  const auto k = random_knots(12, 9);
  std::vector<double> z;
  for (const auto& p : k) z.push_back(std::sin(p.x / 7) + std::cos(p.y / 5));
  const auto frame = CoordinateFrame::unit_diameter(bounding_box(k));
  const auto m = tps_fit(k, z, 0.01, frame);
  const Point p{17.0, 31.0};
  const Point u = frame.apply(p);
  double v = m.affine(0) + m.affine(1) * u.x + m.affine(2) * u.y;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const Point ki = frame.apply(k[i]);
    const double r = std::hypot(u.x - ki.x, u.y - ki.y);
    if (r > 0) v += m.basis(Eigen::Index(i)) * r * r * std::log(r) / (8 * M_PI);
  }
  CHECK(m(p) == doctest::Approx(v).epsilon(1e-12));

  const auto c = tps_fit(k, std::vector<double>(k.size(), 21.5), 0.001, frame);
  for (const auto& q : random_knots(10, 10)) CHECK(c(q) == doctest::Approx(21.5).epsilon(1e-12));
}

TEST_CASE("collinear knots are rejected") {
  std::vector<Point> k{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  try {
    tps_fit(k, std::vector<double>{1, 2, 3, 4}, 0.001);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == "collinear_stations");
  }
}

TEST_CASE("prediction grid") {
  const auto map = testing::square_map(4, 3, 10.0);
  const auto g0 = build_grid(map, {0, std::nullopt});
  CHECK(g0.size() == map.size());
  for (std::size_t m = 0; m < map.size(); ++m) {
    CHECK(g0.points[m].x == doctest::Approx(map[m].centroid.x));
    CHECK(g0.points[m].y == doctest::Approx(map[m].centroid.y));
  }
  const auto g = build_grid(map, {100, std::nullopt});
  CHECK(g.n_centroids == 12);
  CHECK(g.n_lattice == 100);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(map.in_region(g.points[i]));
    CHECK(map.locate(g.points[i]).has_value());
  }
}

TEST_CASE("prediction grid at the published size") {
  // 378 municipalities plus 1000 lattice points.
  const auto map = testing::square_map(21, 18, 5.0);
  const auto g = build_grid(map, {1000, std::nullopt});
  CHECK(g.size() == 1378);
}

TEST_CASE("municipality averages") {
  const auto map = testing::square_map(2, 1, 10.0);
  PredictionGrid g;
  g.points = {{5, 5}, {15, 5}, {12, 5}, {18, 5}};
  g.membership = {0, 1, 1, 1};
  g.members = {{0}, {1, 2, 3}};
  g.fallback = {std::nullopt, std::nullopt};
  const std::vector<double> v{30.0, 20.0, 22.0, 24.0};
  const auto avg = municipality_average(g, v);
  CHECK(avg == std::vector<double>{30.0, 22.0});
  std::vector<double> w;
  for (double x : v) w.push_back(2.5 * x - 4.0);
  const auto aw = municipality_average(g, w);
  for (std::size_t m = 0; m < 2; ++m) CHECK(aw[m] == doctest::Approx(2.5 * avg[m] - 4.0));
  CHECK_THROWS_AS(municipality_average(g, std::vector<double>{1.0}), Error);
}

TEST_CASE("exposure surface from quantile tables") {
  CHECK(kDefaultLambda == 0.001);
  const auto map = testing::square_map(3, 3, 10.0);
  const auto grid = build_grid(map, {60, std::nullopt});
  const auto frame = CoordinateFrame::unit_diameter(map.bounds());
  auto data = testing::quantile_panel(6, 2, 10, {}, 3);
  for (std::size_t s = 0; s < 6; ++s) data.locations[s] = {3.0 + 4.5 * double(s % 3) + double(s), 4.0 + 12.0 * double(s / 3)};
  gqrm::QStarTable q;
  q.tau = 0.5;
  q.sites = data.sites;
  q.years = data.years;
  q.season_length = 10;
  q.values = Eigen::MatrixXd::Constant(6, 2 * 9, 27.25);
  const StudyPeriod period(2010, 2011, SeasonWindow{{5, 1}, {5, 10}});
  const auto s = interpolate_surface(q, data, period, grid, map, frame);
  CHECK(s.method == "gqrm-0.50");
  CHECK(s.values.rows() == 9);
  CHECK(s.values.cols() == 18);
  CHECK((s.values.array() - 27.25).abs().maxCoeff() < 1e-9);
  CHECK(s.dates.front() == make_date(2010, 5, 2));

  // Shared operator matches per-day fits, and repeated calls are identical.
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(25, 2);
  for (Eigen::Index i = 0; i < q.values.size(); ++i) q.values(i) = n(rng);
  const auto a = interpolate_surface(q, data, period, grid, map, frame);
  const auto b = interpolate_surface(q, data, period, grid, map, frame);
  CHECK(a.values == b.values);
  CHECK(a.values.allFinite());
  for (int ell : {2, 7}) {
    const auto day = interpolate_day(q, data, 2, ell, grid, frame);
    for (std::size_t m = 0; m < map.size(); ++m) {
      CHECK(day[m] == doctest::Approx(a.values(Eigen::Index(m), 9 + ell - 2)).epsilon(1e-9));
    }
  }
}
