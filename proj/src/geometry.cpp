#include "reagg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <sstream>

#include "reagg/error.hpp"
#include "reagg/kernels.hpp"

namespace reagg {

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

int orientation(const Point& o, const Point& a, const Point& b) {
  const double c = cross(o, a, b);
  if (c > 0.0) return 1;
  if (c < 0.0) return -1;
  return 0;
}

bool within_box(const Point& a, const Point& b, const Point& p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

bool segments_intersect(const Point& p1, const Point& p2, const Point& q1, const Point& q2) {
  const int o1 = orientation(p1, p2, q1);
  const int o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1);
  const int o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && within_box(p1, p2, q1)) return true;
  if (o2 == 0 && within_box(p1, p2, q2)) return true;
  if (o3 == 0 && within_box(q1, q2, p1)) return true;
  if (o4 == 0 && within_box(q1, q2, p2)) return true;
  return false;
}

bool on_segment(const Point& a, const Point& b, const Point& p) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  const double c = cross(a, b, p);
  // Collinearity tolerance scales with the edge so the test is unit-free.
  if (c * c > 1e-24 * len2 * std::max(len2, 1.0)) return false;
  return within_box(a, b, p);
}

}  // namespace

void GridSpec::validate() const {
  if (!(cell_width > 0.0) || !(cell_height > 0.0))
    throw ValidationError("grid cell dimensions must be positive");
  if (n_cols <= 0 || n_rows <= 0) throw ValidationError("grid must have at least one row and column");
  if (!std::isfinite(x0) || !std::isfinite(y0)) throw ValidationError("grid origin must be finite");
}

double signed_area(std::span<const Point> ring) {
  const std::size_t n = ring.size();
  if (n < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = ring[i];
    const Point& b = ring[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * twice;
}

void validate_polygon(const Polygon& poly) {
  const auto& r = poly.ring;
  const std::size_t n = r.size();
  if (n < 3)
    throw ValidationError("polygon '" + poly.id + "' has fewer than 3 vertices");
  for (const auto& p : r)
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw ValidationError("polygon '" + poly.id + "' has a non-finite vertex");
  if (signed_area(r) == 0.0) throw ValidationError("polygon '" + poly.id + "' has zero area");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(r[i], r[(i + 1) % n], r[j], r[(j + 1) % n])) {
        std::ostringstream msg;
        msg << "polygon '" << poly.id << "' is self-intersecting (edges " << i << " and " << j << ")";
        throw ValidationError(msg.str());
      }
    }
  }
}

bool point_in_polygon(const PointRecord& p, const Polygon& poly) {
  const auto& r = poly.ring;
  if (r.size() < 3 || signed_area(r) == 0.0)
    throw ValidationError("polygon '" + poly.id + "' is degenerate");
  const Point q{p.x, p.y};
  const std::size_t n = r.size();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = r[j];
    const Point& b = r[i];
    if (on_segment(a, b, q)) return true;
    if ((b.y > q.y) != (a.y > q.y)) {
      const double x_cross = b.x + (q.y - b.y) * (a.x - b.x) / (a.y - b.y);
      if (q.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

std::vector<std::int64_t> assign_points(std::span<const PointRecord> points,
                                        std::span<const Polygon> regions) {
  for (const auto& poly : regions) validate_polygon(poly);
  return kernels::assign_points_parallel(points, regions);
}

PopulationCount synthesize_population(std::span<const PointRecord> points,
                                      std::span<const Polygon> regions) {
  for (const auto& p : points)
    if (!(p.weight >= 0.0)) throw ValidationError("point weights must be nonnegative");
  const auto assignment = assign_points(points, regions);
  PopulationCount out;
  out.counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(regions.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (assignment[i] == kNoRegion) {
      ++out.unassigned;
      out.unassigned_weight += points[i].weight;
    } else {
      out.counts[assignment[i]] += points[i].weight;
    }
  }
  return out;
}

std::vector<Intersection> grid_base_geometry(std::span<const Polygon> regions,
                                             const GridSpec& grid) {
  grid.validate();
  for (const auto& poly : regions) validate_polygon(poly);
  return kernels::clip_to_grid_parallel(regions, grid);
}

IdGrouping group_by_id(std::span<const Polygon> regions) {
  IdGrouping g;
  std::map<std::string, std::size_t> seen;
  g.row_to_id.reserve(regions.size());
  for (const auto& poly : regions) {
    auto [it, inserted] = seen.emplace(poly.id, g.ids.size());
    if (inserted) g.ids.push_back(poly.id);
    g.row_to_id.push_back(it->second);
  }
  return g;
}

HierarchyTree::HierarchyTree(std::vector<std::string> levels,
                             std::vector<std::pair<std::string, std::string>> edges)
    : levels_(std::move(levels)) {
  if (levels_.empty()) throw ValidationError("hierarchy has no levels");
  for (std::size_t i = 0; i < levels_.size(); ++i)
    if (!index_.emplace(levels_[i], i).second)
      throw ValidationError("duplicate hierarchy level '" + levels_[i] + "'");
  parents_.resize(levels_.size());
  std::vector<std::vector<std::size_t>> children(levels_.size());
  for (const auto& [child, parent] : edges) {
    const std::size_t c = index(child);
    const std::size_t p = index(parent);
    if (c == p) throw ValidationError("hierarchy edge from '" + child + "' to itself");
    parents_[c].push_back(p);
    children[p].push_back(c);
  }
  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < levels_.size(); ++i)
    if (parents_[i].empty()) roots.push_back(i);
  if (roots.size() != 1)
    throw ValidationError("hierarchy must have exactly one finest level, found " +
                          std::to_string(roots.size()));
  root_ = roots.front();

  // Kahn's algorithm: detects cycles and yields longest-path depths.
  std::vector<std::size_t> pending(levels_.size());
  for (std::size_t i = 0; i < levels_.size(); ++i) pending[i] = parents_[i].size();
  depth_.assign(levels_.size(), 0);
  std::queue<std::size_t> ready;
  ready.push(root_);
  std::size_t visited = 0;
  while (!ready.empty()) {
    const std::size_t u = ready.front();
    ready.pop();
    ++visited;
    for (std::size_t c : children[u]) {
      depth_[c] = std::max(depth_[c], depth_[u] + 1);
      if (--pending[c] == 0) ready.push(c);
    }
  }
  if (visited != levels_.size())
    throw ValidationError("hierarchy contains a cycle or levels unreachable from '" +
                          levels_[root_] + "'");
}

std::size_t HierarchyTree::index(const std::string& level) const {
  auto it = index_.find(level);
  if (it == index_.end()) throw ValidationError("unknown hierarchy level '" + level + "'");
  return it->second;
}

std::vector<std::size_t> HierarchyTree::ancestors(std::size_t level) const {
  std::vector<bool> seen(levels_.size(), false);
  std::vector<std::size_t> stack{level};
  std::vector<std::size_t> out;
  seen[level] = true;
  while (!stack.empty()) {
    const std::size_t u = stack.back();
    stack.pop_back();
    out.push_back(u);
    for (std::size_t p : parents_[u])
      if (!seen[p]) {
        seen[p] = true;
        stack.push_back(p);
      }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string common_ancestor_base(const std::string& level_a, const std::string& level_b,
                                 const HierarchyTree& tree) {
  const auto a = tree.ancestors(tree.index(level_a));
  const auto b = tree.ancestors(tree.index(level_b));
  std::vector<std::size_t> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  if (common.empty())
    throw ValidationError("levels '" + level_a + "' and '" + level_b + "' share no base level");
  // Deepest shared level; ties resolve to declaration order.
  std::size_t best = common.front();
  for (std::size_t c : common)
    if (tree.depth(c) > tree.depth(best)) best = c;
  return tree.levels()[best];
}

}  // namespace reagg
