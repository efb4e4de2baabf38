#include "reagg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <omp.h>

namespace reagg::kernels {

namespace {

// Keeps the part of `in` on the inner side of one axis-aligned boundary.
// axis 0 = x, 1 = y; keep_above selects coord >= bound, otherwise coord <= bound.
void clip_half_plane(const std::vector<Point>& in, std::vector<Point>& out, int axis,
                     double bound, bool keep_above) {
  out.clear();
  const std::size_t n = in.size();
  if (n == 0) return;
  auto coord = [axis](const Point& p) { return axis == 0 ? p.x : p.y; };
  auto inside = [&](const Point& p) {
    return keep_above ? coord(p) >= bound : coord(p) <= bound;
  };
  auto crossing = [&](const Point& a, const Point& b) {
    const double t = (bound - coord(a)) / (coord(b) - coord(a));
    Point r{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
    if (axis == 0) r.x = bound; else r.y = bound;
    return r;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const Point& cur = in[i];
    const Point& prev = in[(i + n - 1) % n];
    const bool cin = inside(cur);
    const bool pin = inside(prev);
    if (cin) {
      if (!pin) out.push_back(crossing(prev, cur));
      out.push_back(cur);
    } else if (pin) {
      out.push_back(crossing(prev, cur));
    }
  }
}

double ring_area(const std::vector<Point>& r) {
  return std::abs(signed_area(r));
}

std::int64_t first_containing(const PointRecord& p, std::span<const Polygon> regions,
                              std::span<const std::size_t> candidates) {
  for (std::size_t r : candidates)
    if (point_in_polygon(p, regions[r])) return static_cast<std::int64_t>(r);
  return kNoRegion;
}

// Relative cut-off below which an overlap is treated as a shared edge.
constexpr double kSliverFraction = 1e-12;

std::vector<Intersection> clip_region(std::size_t r, const Polygon& poly, const GridSpec& grid,
                                      int c0, int c1, int r0, int r1) {
  std::vector<Intersection> rows;
  const double area = std::abs(signed_area(poly.ring));
  for (int row = r0; row <= r1; ++row) {
    for (int col = c0; col <= c1; ++col) {
      const Box cell{grid.x0 + col * grid.cell_width, grid.y0 + row * grid.cell_height,
                     grid.x0 + (col + 1) * grid.cell_width, grid.y0 + (row + 1) * grid.cell_height};
      const double a = clipped_area(poly.ring, cell);
      if (a > kSliverFraction * area) rows.push_back({r, grid.cell_id(col, row), a});
    }
  }
  return rows;
}

}  // namespace

Box bounding_box(std::span<const Point> ring) {
  Box b{ring[0].x, ring[0].y, ring[0].x, ring[0].y};
  for (const auto& p : ring) {
    b.xmin = std::min(b.xmin, p.x);
    b.ymin = std::min(b.ymin, p.y);
    b.xmax = std::max(b.xmax, p.x);
    b.ymax = std::max(b.ymax, p.y);
  }
  return b;
}

double clipped_area(std::span<const Point> ring, const Box& box) {
  const Box bb = bounding_box(ring);
  if (bb.xmax <= box.xmin || bb.xmin >= box.xmax || bb.ymax <= box.ymin || bb.ymin >= box.ymax)
    return 0.0;
  std::vector<Point> a(ring.begin(), ring.end());
  std::vector<Point> b;
  b.reserve(a.size() + 8);
  clip_half_plane(a, b, 0, box.xmin, true);
  clip_half_plane(b, a, 0, box.xmax, false);
  clip_half_plane(a, b, 1, box.ymin, true);
  clip_half_plane(b, a, 1, box.ymax, false);
  return ring_area(a);
}

RegionIndex::RegionIndex(std::span<const Polygon> regions) {
  if (regions.empty()) {
    buckets_.resize(1);
    extent_ = {0, 0, 1, 1};
    return;
  }
  std::vector<Box> boxes;
  boxes.reserve(regions.size());
  for (const auto& poly : regions) boxes.push_back(bounding_box(poly.ring));
  extent_ = boxes.front();
  for (const auto& b : boxes) {
    extent_.xmin = std::min(extent_.xmin, b.xmin);
    extent_.ymin = std::min(extent_.ymin, b.ymin);
    extent_.xmax = std::max(extent_.xmax, b.xmax);
    extent_.ymax = std::max(extent_.ymax, b.ymax);
  }
  const int side = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(regions.size()))));
  nx_ = side;
  ny_ = side;
  cw_ = std::max((extent_.xmax - extent_.xmin) / nx_, 1e-300);
  ch_ = std::max((extent_.ymax - extent_.ymin) / ny_, 1e-300);
  buckets_.resize(static_cast<std::size_t>(nx_) * ny_);
  auto clamp_x = [this](double x) {
    return std::clamp(static_cast<int>(std::floor((x - extent_.xmin) / cw_)), 0, nx_ - 1);
  };
  auto clamp_y = [this](double y) {
    return std::clamp(static_cast<int>(std::floor((y - extent_.ymin) / ch_)), 0, ny_ - 1);
  };
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    const auto& b = boxes[r];
    for (int iy = clamp_y(b.ymin); iy <= clamp_y(b.ymax); ++iy)
      for (int ix = clamp_x(b.xmin); ix <= clamp_x(b.xmax); ++ix)
        buckets_[static_cast<std::size_t>(iy) * nx_ + ix].push_back(r);
  }
}

std::span<const std::size_t> RegionIndex::candidates(double x, double y) const {
  if (x < extent_.xmin || x > extent_.xmax || y < extent_.ymin || y > extent_.ymax) return {};
  const int ix = std::clamp(static_cast<int>(std::floor((x - extent_.xmin) / cw_)), 0, nx_ - 1);
  const int iy = std::clamp(static_cast<int>(std::floor((y - extent_.ymin) / ch_)), 0, ny_ - 1);
  return buckets_[static_cast<std::size_t>(iy) * nx_ + ix];
}

std::vector<std::int64_t> assign_points_serial(std::span<const PointRecord> points,
                                               std::span<const Polygon> regions) {
  std::vector<std::int64_t> out(points.size(), kNoRegion);
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t r = 0; r < regions.size(); ++r)
      if (point_in_polygon(points[i], regions[r])) {
        out[i] = static_cast<std::int64_t>(r);
        break;
      }
  return out;
}

std::vector<std::int64_t> assign_points_parallel(std::span<const PointRecord> points,
                                                 std::span<const Polygon> regions) {
  const RegionIndex index(regions);
  std::vector<std::int64_t> out(points.size(), kNoRegion);
  const auto n = static_cast<std::int64_t>(points.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    out[i] = first_containing(points[i], regions, index.candidates(points[i].x, points[i].y));
  return out;
}

std::vector<Intersection> clip_to_grid_serial(std::span<const Polygon> regions,
                                              const GridSpec& grid) {
  std::vector<Intersection> rows;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    auto part = clip_region(r, regions[r], grid, 0, grid.n_cols - 1, 0, grid.n_rows - 1);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

std::vector<Intersection> clip_to_grid_parallel(std::span<const Polygon> regions,
                                                const GridSpec& grid) {
  std::vector<std::vector<Intersection>> per_region(regions.size());
  const auto n = static_cast<std::int64_t>(regions.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t r = 0; r < n; ++r) {
    const Box b = bounding_box(regions[r].ring);
    auto col = [&](double x) {
      return std::clamp(static_cast<int>(std::floor((x - grid.x0) / grid.cell_width)), 0,
                        grid.n_cols - 1);
    };
    auto row = [&](double y) {
      return std::clamp(static_cast<int>(std::floor((y - grid.y0) / grid.cell_height)), 0,
                        grid.n_rows - 1);
    };
    per_region[r] = clip_region(static_cast<std::size_t>(r), regions[r], grid, col(b.xmin),
                                col(b.xmax), row(b.ymin), row(b.ymax));
  }
  std::vector<Intersection> rows;
  for (auto& part : per_region) rows.insert(rows.end(), part.begin(), part.end());
  return rows;
}

Eigen::VectorXd aggregate_serial(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& x) {
  return A * x;
}

Eigen::VectorXd aggregate_parallel(const std::vector<std::vector<Eigen::Index>>& members,
                                   const Eigen::VectorXd& x) {
  const auto n = static_cast<std::int64_t>(members.size());
  Eigen::VectorXd out(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t g = 0; g < n; ++g) {
    double s = 0.0;
    for (Eigen::Index b : members[g]) s += x[b];
    out[g] = s;
  }
  return out;
}

Eigen::MatrixXd aggregate_samples_serial(const Eigen::MatrixXd& samples,
                                         const Eigen::SparseMatrix<double>& A) {
  return samples * A.transpose();
}

Eigen::MatrixXd aggregate_samples_parallel(const Eigen::MatrixXd& samples,
                                           const std::vector<std::vector<Eigen::Index>>& members) {
  const auto n = static_cast<std::int64_t>(members.size());
  Eigen::MatrixXd out(samples.rows(), n);
#pragma omp parallel for schedule(static)
  for (std::int64_t g = 0; g < n; ++g) {
    auto col = out.col(g);
    col.setZero();
    for (Eigen::Index b : members[g]) col += samples.col(b);
  }
  return out;
}

double quantile_type7(std::vector<double> values, double q) {
  const std::size_t n = values.size();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  const double h = (static_cast<double>(n) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, n - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double vlo = values[lo];
  double vhi = vlo;
  if (hi != lo) vhi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(hi), values.end());
  return vlo + (h - static_cast<double>(lo)) * (vhi - vlo);
}

Eigen::VectorXd column_quantiles_serial(const Eigen::MatrixXd& samples, double q) {
  Eigen::VectorXd out(samples.cols());
  for (Eigen::Index c = 0; c < samples.cols(); ++c) {
    std::vector<double> v(samples.col(c).data(), samples.col(c).data() + samples.rows());
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    out[c] = v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
  }
  return out;
}

Eigen::VectorXd column_quantiles_parallel(const Eigen::MatrixXd& samples, double q) {
  const auto n = static_cast<std::int64_t>(samples.cols());
  Eigen::VectorXd out(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < n; ++c) {
    std::vector<double> v(samples.col(c).data(), samples.col(c).data() + samples.rows());
    out[c] = quantile_type7(std::move(v), q);
  }
  return out;
}

}  // namespace reagg::kernels
