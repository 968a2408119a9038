#include <doctest.h>

#include <cmath>
#include <random>

#include "heatrisk/domain.hpp"
#include "heatrisk/error.hpp"
#include "heatrisk/geometry.hpp"

using namespace heatrisk;

namespace {

MultiPolygon poly(Ring outer, std::vector<Ring> holes = {}) { return normalized({{{std::move(outer), std::move(holes)}}}); }

}  // namespace

TEST_CASE("overlap_area basic cases") {
  const Rect cell{0, 0, 1, 1};
  CHECK(overlap_area(poly({{-1, -1}, {2, -1}, {2, 2}, {-1, 2}}), cell) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(overlap_area(poly({{3, 3}, {4, 3}, {4, 4}, {3, 4}}), cell) == 0.0);
  CHECK(overlap_area(poly({{0, 0}, {0.5, 0}, {0.5, 1}, {0, 1}}), cell) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("orientation, holes and containment") {
  // Clockwise input is normalized.
  const auto sq = poly({{0, 0}, {0, 4}, {4, 4}, {4, 0}, {0, 0}});
  CHECK(signed_area(sq.parts[0].outer) > 0);
  CHECK(sq.parts[0].outer.size() == 4);
  const auto holed = poly({{0, 0}, {4, 0}, {4, 4}, {0, 4}}, {{{1, 1}, {3, 1}, {3, 3}, {1, 3}}});
  CHECK(area(holed) == doctest::Approx(12.0));
  CHECK_FALSE(contains(holed, {2, 2}));
  CHECK(contains(holed, {0.5, 2}));
  CHECK(overlap_area(holed, Rect{0, 0, 2, 2}) == doctest::Approx(3.0));
  const Point c = centroid(sq);
  CHECK(c.x == doctest::Approx(2.0));
  CHECK(c.y == doctest::Approx(2.0));
}

TEST_CASE("degenerate polygons are rejected") {
  CHECK_THROWS_AS(validate(MultiPolygon{{{{{0, 0}, {1, 1}, {2, 2}}, {}}}}), Error);
  CHECK_THROWS_AS(validate(MultiPolygon{{{{{0, 0}, {1, 0}}, {}}}}), Error);
  CHECK_THROWS_AS(validate(MultiPolygon{{{{{0, 0}, {NAN, 0}, {1, 1}}, {}}}}), Error);
  try {
    validate(MultiPolygon{{{{{0, 0}, {1, 1}, {2, 2}}, {}}}});
  } catch (const Error& e) {
    CHECK(e.code() == "degenerate_polygon");
  }
}

TEST_CASE("overlap over a grid partition sums to polygon area") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.3, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    // Random star-shaped (non-convex) polygon around (5, 5).
    Ring ring;
    const int n = 7 + trial % 9;
    for (int i = 0; i < n; ++i) {
      const double a = 2 * M_PI * i / n;
      const double r = 4 * u(rng);
      ring.push_back({5 + r * std::cos(a), 5 + r * std::sin(a)});
    }
    const auto mp = poly(ring);
    const double h = 0.37 + 0.01 * trial;
    double total = 0;
    for (double x = -0.5; x < 10.5; x += h) {
      for (double y = -0.2; y < 10.5; y += h) total += overlap_area(mp, Rect{x, y, x + h, y + h});
    }
    CHECK(std::abs(total - area(mp)) / area(mp) < 1e-9);
  }
}

TEST_CASE("altitude standardization") {
  const auto a = standardize_altitude(std::vector<double>{0, 100});
  CHECK(a[0] == doctest::Approx(-std::sqrt(0.5)).epsilon(1e-4));
  CHECK(a[1] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-4));
  const auto b = standardize_altitude(std::vector<double>{100, 200, 300});
  CHECK(b == std::vector<double>{-1, 0, 1});
  const auto c = standardize_altitude(b);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(std::abs(c[i] - b[i]) < 1e-12);
  CHECK_THROWS_AS(standardize_altitude(std::vector<double>{5, 5, 5}), Error);
}

TEST_CASE("municipality map lookups") {
  std::vector<Municipality> ms;
  for (int i = 0; i < 3; ++i) {
    Municipality m;
    m.id = "M" + std::to_string(i);
    m.shape = rectangle_polygon({double(i), 0, double(i + 1), 1});
    ms.push_back(m);
  }
  const MunicipalityMap map(ms);
  CHECK(map.size() == 3);
  CHECK(map.index_of("M2") == 2u);
  CHECK(map.locate({1.5, 0.5}) == 1u);
  CHECK_FALSE(map.in_region({5, 5}));
  CHECK(map[1].area_km2 == doctest::Approx(1.0));
  CHECK(map.bounds().xmax == 3.0);
}

TEST_CASE("projection round trip") {
  const Projection p{Projection::Kind::Equirectangular, 12.5, 42.0};
  const Point q = p.forward(12.7, 41.9);
  const auto [lon, lat] = p.inverse(q);
  CHECK(lon == doctest::Approx(12.7).epsilon(1e-12));
  CHECK(lat == doctest::Approx(41.9).epsilon(1e-12));
  CHECK(p.forward(12.5, 42.0).x == 0.0);
}
