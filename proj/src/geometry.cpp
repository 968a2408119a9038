#include "heatrisk/geometry.hpp"

#include <algorithm>
#include <limits>

#include "heatrisk/error.hpp"

namespace heatrisk {

namespace {

struct RingMoments {
  double area = 0.0;  // signed
  double cx = 0.0;    // signed first moments
  double cy = 0.0;
};

RingMoments moments(std::span<const Point> ring) {
  RingMoments m;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = ring[i];
    const Point& q = ring[(i + 1) % n];
    const double cross = p.x * q.y - q.x * p.y;
    m.area += cross;
    m.cx += (p.x + q.x) * cross;
    m.cy += (p.y + q.y) * cross;
  }
  m.area *= 0.5;
  m.cx /= 6.0;
  m.cy /= 6.0;
  return m;
}

bool ring_contains(std::span<const Point> ring, Point p) {
  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = ring[i];
    const Point& b = ring[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

void validate_ring(std::span<const Point> ring) {
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const Point& p = ring[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw Error("degenerate_polygon", "polygon has non-finite coordinates");
    }
    const Point& q = ring[(i + 1) % ring.size()];
    if (p.x != q.x || p.y != q.y) ++distinct;
  }
  if (distinct < 3) {
    throw Error("degenerate_polygon", "polygon ring has fewer than three distinct vertices");
  }
  if (std::abs(signed_area(ring)) <= 0.0) {
    throw Error("degenerate_polygon", "polygon ring has zero area");
  }
}

Ring close_open(Ring r) {
  if (r.size() > 1 && r.front().x == r.back().x && r.front().y == r.back().y) r.pop_back();
  return r;
}

template <typename Inside, typename Intersect>
Ring clip_edge(const Ring& in, Inside inside, Intersect intersect) {
  Ring out;
  if (in.empty()) return out;
  out.reserve(in.size() + 4);
  Point prev = in.back();
  bool prev_in = inside(prev);
  for (const Point& cur : in) {
    const bool cur_in = inside(cur);
    if (cur_in) {
      if (!prev_in) out.push_back(intersect(prev, cur));
      out.push_back(cur);
    } else if (prev_in) {
      out.push_back(intersect(prev, cur));
    }
    prev = cur;
    prev_in = cur_in;
  }
  return out;
}

}  // namespace

double signed_area(std::span<const Point> ring) { return moments(ring).area; }

double area(const Polygon& poly) {
  double a = std::abs(signed_area(poly.outer));
  for (const auto& h : poly.holes) a -= std::abs(signed_area(h));
  return a;
}

double area(const MultiPolygon& mp) {
  double a = 0.0;
  for (const auto& p : mp.parts) a += area(p);
  return a;
}

Point centroid(const MultiPolygon& mp) {
  double a = 0.0, cx = 0.0, cy = 0.0;
  auto add = [&](std::span<const Point> ring, double sign) {
    RingMoments m = moments(ring);
    const double s = (m.area >= 0 ? 1.0 : -1.0) * sign;
    a += s * m.area;
    cx += s * m.cx;
    cy += s * m.cy;
  };
  for (const auto& p : mp.parts) {
    add(p.outer, 1.0);
    for (const auto& h : p.holes) add(h, -1.0);
  }
  if (a == 0.0) throw Error("degenerate_polygon", "centroid of zero-area polygon");
  return {cx / a, cy / a};
}

Rect bounding_box(std::span<const Point> points) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Rect r{inf, inf, -inf, -inf};
  for (const Point& p : points) {
    r.xmin = std::min(r.xmin, p.x);
    r.ymin = std::min(r.ymin, p.y);
    r.xmax = std::max(r.xmax, p.x);
    r.ymax = std::max(r.ymax, p.y);
  }
  return r;
}

Rect bounding_box(const MultiPolygon& mp) {
  std::vector<Point> all;
  for (const auto& p : mp.parts) all.insert(all.end(), p.outer.begin(), p.outer.end());
  return bounding_box(all);
}

bool contains(const MultiPolygon& mp, Point p) {
  bool inside = false;
  for (const auto& poly : mp.parts) {
    if (ring_contains(poly.outer, p)) inside = !inside;
    for (const auto& h : poly.holes) {
      if (ring_contains(h, p)) inside = !inside;
    }
  }
  return inside;
}

void validate(const MultiPolygon& mp) {
  if (mp.parts.empty()) throw Error("degenerate_polygon", "polygon has no parts");
  for (const auto& p : mp.parts) {
    validate_ring(p.outer);
    for (const auto& h : p.holes) validate_ring(h);
  }
}

MultiPolygon normalized(MultiPolygon mp) {
  for (auto& p : mp.parts) {
    p.outer = close_open(std::move(p.outer));
    if (signed_area(p.outer) < 0) std::reverse(p.outer.begin(), p.outer.end());
    for (auto& h : p.holes) {
      h = close_open(std::move(h));
      if (signed_area(h) > 0) std::reverse(h.begin(), h.end());
    }
  }
  return mp;
}

Ring clip_to_rect(std::span<const Point> ring, const Rect& c) {
  Ring r(ring.begin(), ring.end());
  auto lerp_x = [](Point a, Point b, double x) {
    const double t = (x - a.x) / (b.x - a.x);
    return Point{x, a.y + t * (b.y - a.y)};
  };
  auto lerp_y = [](Point a, Point b, double y) {
    const double t = (y - a.y) / (b.y - a.y);
    return Point{a.x + t * (b.x - a.x), y};
  };
  r = clip_edge(r, [&](Point p) { return p.x >= c.xmin; },
                [&](Point a, Point b) { return lerp_x(a, b, c.xmin); });
  r = clip_edge(r, [&](Point p) { return p.x <= c.xmax; },
                [&](Point a, Point b) { return lerp_x(a, b, c.xmax); });
  r = clip_edge(r, [&](Point p) { return p.y >= c.ymin; },
                [&](Point a, Point b) { return lerp_y(a, b, c.ymin); });
  r = clip_edge(r, [&](Point p) { return p.y <= c.ymax; },
                [&](Point a, Point b) { return lerp_y(a, b, c.ymax); });
  return r;
}

double overlap_area(const MultiPolygon& mp, const Rect& cell) {
  validate(mp);
  if (!(cell.xmax > cell.xmin) || !(cell.ymax > cell.ymin)) {
    throw Error("degenerate_cell", "cell has non-positive extent");
  }
  double a = 0.0;
  for (const auto& p : mp.parts) {
    a += std::abs(signed_area(clip_to_rect(p.outer, cell)));
    for (const auto& h : p.holes) a -= std::abs(signed_area(clip_to_rect(h, cell)));
  }
  return std::max(a, 0.0);
}

MultiPolygon rectangle_polygon(const Rect& r) {
  Polygon p;
  p.outer = {{r.xmin, r.ymin}, {r.xmax, r.ymin}, {r.xmax, r.ymax}, {r.xmin, r.ymax}};
  return MultiPolygon{{p}};
}

}  // namespace heatrisk
