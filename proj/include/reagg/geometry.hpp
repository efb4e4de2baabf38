#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace reagg {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Simple polygon without holes. The ring is implicitly closed: the first
// vertex is not repeated at the end. Multi-part regions are several Polygon
// rows sharing one id.
struct Polygon {
  std::string id;
  std::vector<Point> ring;
};

struct PointRecord {
  double x = 0.0;
  double y = 0.0;
  double weight = 1.0;
};

struct GridSpec {
  double x0 = 0.0;
  double y0 = 0.0;
  double cell_width = 1.0;
  double cell_height = 1.0;
  int n_cols = 1;
  int n_rows = 1;

  void validate() const;
  std::int64_t cell_id(int col, int row) const { return std::int64_t{row} * n_cols + col; }
  std::int64_t n_cells() const { return std::int64_t{n_rows} * n_cols; }
};

inline constexpr std::int64_t kNoRegion = -1;

// Shoelace formula; positive for counter-clockwise rings.
double signed_area(std::span<const Point> ring);

// Rejects rings with fewer than 3 vertices, zero area or self-intersections.
void validate_polygon(const Polygon& poly);

// Boundary points count as inside.
bool point_in_polygon(const PointRecord& p, const Polygon& poly);

// Index of the first region containing each point, or kNoRegion.
std::vector<std::int64_t> assign_points(std::span<const PointRecord> points,
                                        std::span<const Polygon> regions);

struct PopulationCount {
  Eigen::VectorXd counts;  // one entry per region row
  std::size_t unassigned = 0;
  double unassigned_weight = 0.0;
};

PopulationCount synthesize_population(std::span<const PointRecord> points,
                                      std::span<const Polygon> regions);

struct Intersection {
  std::size_t region = 0;  // row index into the region list
  std::int64_t cell = 0;   // GridSpec::cell_id
  double area = 0.0;
};

// One row per (region, cell) pair with positive overlap, ordered by region
// then cell.
std::vector<Intersection> grid_base_geometry(std::span<const Polygon> regions,
                                             const GridSpec& grid);

// Distinct ids in first-appearance order and the per-row -> per-id index map.
struct IdGrouping {
  std::vector<std::string> ids;
  std::vector<std::size_t> row_to_id;
};
IdGrouping group_by_id(std::span<const Polygon> regions);

// Structural hierarchy of geometry levels. An edge (child, parent) says the
// child level is composed of units of the parent level, so parents are finer.
// The single root is the finest level.
class HierarchyTree {
 public:
  HierarchyTree(std::vector<std::string> levels,
                std::vector<std::pair<std::string, std::string>> edges);

  const std::vector<std::string>& levels() const { return levels_; }
  const std::string& finest() const { return levels_[root_]; }
  bool contains(const std::string& level) const { return index_.count(level) > 0; }

  // Finer levels (including itself) the given level is built from.
  std::vector<std::size_t> ancestors(std::size_t level) const;
  std::size_t index(const std::string& level) const;
  // Longest composition path from the finest level.
  std::size_t depth(std::size_t level) const { return depth_[level]; }

 private:
  std::vector<std::string> levels_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::size_t> depth_;
  std::size_t root_ = 0;
};

// The coarsest level both inputs are composed of: a valid base geometry.
std::string common_ancestor_base(const std::string& level_a, const std::string& level_b,
                                 const HierarchyTree& tree);

}  // namespace reagg
