#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace heatrisk {

/// Planar point in projected kilometres.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point a, Point b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

/// Open ring: the closing vertex is not repeated.
using Ring = std::vector<Point>;

struct Polygon {
  Ring outer;
  std::vector<Ring> holes;
};

struct MultiPolygon {
  std::vector<Polygon> parts;
};

/// Axis-aligned rectangle.
struct Rect {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return width() * height(); }
  Point center() const { return {(xmin + xmax) / 2, (ymin + ymax) / 2}; }
  bool contains(Point p) const { return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax; }
};

/// Shoelace area; positive for counter-clockwise rings.
double signed_area(std::span<const Point> ring);
double area(const Polygon& poly);
double area(const MultiPolygon& mp);
Point centroid(const MultiPolygon& mp);
Rect bounding_box(const MultiPolygon& mp);
Rect bounding_box(std::span<const Point> points);

/// Even-odd rule over every ring, so holes are excluded.
bool contains(const MultiPolygon& mp, Point p);

/// Throws Error("degenerate_polygon") for rings with fewer than three
/// distinct vertices, non-finite coordinates or zero area.
void validate(const MultiPolygon& mp);

/// Normalizes orientation (outer rings CCW, holes CW) and drops a repeated
/// closing vertex.
MultiPolygon normalized(MultiPolygon mp);

/// Sutherland-Hodgman clip of a ring against a rectangle. The subject may be
/// non-convex; the result keeps the ring's orientation.
Ring clip_to_rect(std::span<const Point> ring, const Rect& cell);

/// Area of the intersection of a polygon and an axis-aligned cell.
double overlap_area(const MultiPolygon& mp, const Rect& cell);

MultiPolygon rectangle_polygon(const Rect& r);

}  // namespace heatrisk
