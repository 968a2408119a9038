#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "heatrisk/domain.hpp"
#include "heatrisk/gqrm.hpp"

/// Thin-plate spline interpolation of station values onto a prediction grid
/// and averaging of grid values within municipalities.
namespace heatrisk::surface {

/// Centroids of every municipality followed by lattice points clipped to the
/// region. `members[m]` lists the grid points inside municipality m; when it
/// is empty `fallback[m]` holds the nearest grid point.
struct PredictionGrid {
  std::vector<std::string> ids;
  std::vector<Point> points;
  std::vector<std::size_t> membership;  // municipality index per point
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::optional<std::size_t>> fallback;
  std::size_t n_centroids = 0;
  std::size_t n_lattice = 0;
  double spacing = 0.0;  // 0 when there are no lattice points

  std::size_t size() const { return points.size(); }
  std::string composition() const;
};

struct GridOptions {
  std::size_t n_extra = 1000;
  /// Fixed lattice spacing in km; searched when unset.
  std::optional<double> spacing;
};

PredictionGrid build_grid(const MunicipalityMap& map, const GridOptions& options);

/// A point inside the polygon: the centroid when it is interior, otherwise
/// the midpoint of the widest horizontal chord through the centroid's row.
Point interior_point(const MultiPolygon& shape);

/// Affine change of coordinates applied before fitting: u = (p - origin) / scale.
struct CoordinateFrame {
  Point origin{};
  double scale = 1.0;

  static CoordinateFrame identity() { return {}; }
  /// Rescales the region's bounding box to unit diameter.
  static CoordinateFrame unit_diameter(const Rect& region);
  Point apply(Point p) const { return {(p.x - origin.x) / scale, (p.y - origin.y) / scale}; }
};

/// Thin-plate radial basis r^2 log(r) / (8 pi), zero at r = 0.
double tps_kernel(double r);

struct TpsModel {
  std::vector<Point> knots;  // in fitted (transformed) coordinates
  Eigen::VectorXd basis;     // n coefficients, orthogonal to the affine space
  Eigen::Vector3d affine;    // intercept, x, y
  double lambda = 0.0;
  CoordinateFrame frame;

  double operator()(Point p) const;
};

/// Minimizes sum (z_i - f(s_i))^2 + lambda * J(f). Throws "collinear_stations"
/// when the knots do not span the plane.
TpsModel tps_fit(std::span<const Point> knots, std::span<const double> z, double lambda,
                 const CoordinateFrame& frame = CoordinateFrame::identity());

std::vector<double> tps_predict(const TpsModel& model, std::span<const Point> points);

/// Mean over member grid points; nearest-point fallback for empty members.
std::vector<double> municipality_average(const PredictionGrid& grid, std::span<const double> values);

/// Linear map from station values to municipality averages for a fixed set of
/// knots, grid and lambda, so that many days can share one factorization.
class TpsInterpolator {
 public:
  TpsInterpolator(std::span<const Point> knots, const PredictionGrid& grid, double lambda,
                  const CoordinateFrame& frame);

  /// Rows are municipalities, columns stations.
  const Eigen::MatrixXd& operator_matrix() const { return op_; }
  std::vector<double> apply(std::span<const double> station_values) const;
  /// Columns of `station_values` are days.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& station_values) const;

 private:
  Eigen::MatrixXd op_;
};

constexpr double kDefaultLambda = 0.001;

/// One day of the quantile-based surface: fit, predict and average.
std::vector<double> interpolate_day(const gqrm::QStarTable& q, const gqrm::GqrmData& data, int t,
                                    int ell, const PredictionGrid& grid,
                                    const CoordinateFrame& frame, double lambda = kDefaultLambda);

/// Full quantile-based exposure surface over days l = 2..L of every year.
ExposureSurface interpolate_surface(const gqrm::QStarTable& q, const gqrm::GqrmData& data,
                                    const StudyPeriod& period, const PredictionGrid& grid,
                                    const MunicipalityMap& map, const CoordinateFrame& frame,
                                    double lambda = kDefaultLambda);

}  // namespace heatrisk::surface
