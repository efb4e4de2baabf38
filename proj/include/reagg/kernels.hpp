#pragma once

// Data-parallel kernels. Each has an OpenMP implementation used by the
// library and a plain serial reference kept for tests and benchmarks.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "reagg/geometry.hpp"

namespace reagg::kernels {

struct Box {
  double xmin, ymin, xmax, ymax;
};

Box bounding_box(std::span<const Point> ring);

// Area of the ring clipped to an axis-aligned box (Sutherland-Hodgman; the
// clip window is convex so the area is exact for any simple ring).
double clipped_area(std::span<const Point> ring, const Box& box);

// Uniform bucket grid over region bounding boxes.
class RegionIndex {
 public:
  explicit RegionIndex(std::span<const Polygon> regions);
  // Candidate regions for a point, ascending.
  std::span<const std::size_t> candidates(double x, double y) const;

 private:
  Box extent_{};
  int nx_ = 1;
  int ny_ = 1;
  double cw_ = 1.0;
  double ch_ = 1.0;
  std::vector<std::vector<std::size_t>> buckets_;
};

std::vector<std::int64_t> assign_points_serial(std::span<const PointRecord> points,
                                               std::span<const Polygon> regions);
std::vector<std::int64_t> assign_points_parallel(std::span<const PointRecord> points,
                                                 std::span<const Polygon> regions);

std::vector<Intersection> clip_to_grid_serial(std::span<const Polygon> regions,
                                              const GridSpec& grid);
std::vector<Intersection> clip_to_grid_parallel(std::span<const Polygon> regions,
                                                const GridSpec& grid);

// y_g = sum of x over the members of group g.
Eigen::VectorXd aggregate_serial(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& x);
Eigen::VectorXd aggregate_parallel(const std::vector<std::vector<Eigen::Index>>& members,
                                   const Eigen::VectorXd& x);

// Row-wise aggregation of a sample matrix (samples x base) to (samples x groups).
Eigen::MatrixXd aggregate_samples_serial(const Eigen::MatrixXd& samples,
                                         const Eigen::SparseMatrix<double>& A);
Eigen::MatrixXd aggregate_samples_parallel(const Eigen::MatrixXd& samples,
                                           const std::vector<std::vector<Eigen::Index>>& members);

// Type-7 (linear interpolation) quantile of each column.
Eigen::VectorXd column_quantiles_serial(const Eigen::MatrixXd& samples, double q);
Eigen::VectorXd column_quantiles_parallel(const Eigen::MatrixXd& samples, double q);

// Type-7 quantile of an unsorted vector (copied).
double quantile_type7(std::vector<double> values, double q);

}  // namespace reagg::kernels
