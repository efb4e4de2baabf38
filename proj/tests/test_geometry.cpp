#include <gtest/gtest.h>

#include <random>

#include "reagg/error.hpp"
#include "reagg/geometry.hpp"
#include "reagg/io.hpp"
#include "reagg/kernels.hpp"
#include "support.hpp"

using namespace reagg;

namespace {

Polygon square(const std::string& id, double x, double y, double side = 1.0) {
  return {id, {{x, y}, {x + side, y}, {x + side, y + side}, {x, y + side}}};
}

HierarchyTree asgs() { return io::hierarchy_from_json(io::read_json(REAGG_DATA_DIR "/asgs_hierarchy.json")); }

}  // namespace

TEST(Geometry, SignedAreaOrientation) {
  const Polygon sq = square("a", 0, 0);
  EXPECT_DOUBLE_EQ(signed_area(sq.ring), 1.0);
  std::vector<Point> cw(sq.ring.rbegin(), sq.ring.rend());
  EXPECT_DOUBLE_EQ(signed_area(cw), -1.0);
}

TEST(Geometry, ValidatePolygonRejectsDegenerateRings) {
  EXPECT_THROW(validate_polygon({"a", {{0, 0}, {1, 0}}}), ValidationError);
  EXPECT_THROW(validate_polygon({"a", {{0, 0}, {1, 0}, {2, 0}}}), ValidationError);
  EXPECT_THROW(validate_polygon({"bowtie", {{0, 0}, {1, 1}, {1, 0}, {0, 1}}}), ValidationError);
  EXPECT_NO_THROW(validate_polygon(square("a", 0, 0)));
}

TEST(Geometry, PointInPolygon) {
  const Polygon sq = square("a", 0, 0);
  EXPECT_TRUE(point_in_polygon({0.5, 0.5}, sq));
  EXPECT_FALSE(point_in_polygon({2, 2}, sq));
  EXPECT_TRUE(point_in_polygon({0.5, 0.0}, sq));
  EXPECT_TRUE(point_in_polygon({1.0, 1.0}, sq));
  const Polygon concave{"c", {{0, 0}, {2, 0}, {2, 2}, {1, 1}, {0, 2}}};
  EXPECT_FALSE(point_in_polygon({1.0, 1.5}, concave));
  EXPECT_TRUE(point_in_polygon({0.5, 1.2}, concave));
}

TEST(Geometry, AssignPointsFirstMatchWins) {
  const std::vector<Polygon> regions{square("a", 0, 0), square("b", 1, 0)};
  const std::vector<PointRecord> pts{{0.5, 0.5}, {1.5, 0.5}, {1.0, 0.5}, {5, 5}};
  const auto got = assign_points(pts, regions);
  EXPECT_EQ(got, (std::vector<std::int64_t>{0, 1, 0, kNoRegion}));
  const std::vector<Polygon> one{square("a", 0, 0)};
  const std::vector<PointRecord> single{{0.5, 0.5}};
  EXPECT_EQ(assign_points(single, one), (std::vector<std::int64_t>{0}));
}

TEST(Geometry, SynthesizePopulation) {
  const std::vector<Polygon> regions{square("a", 0, 0), square("b", 1, 0)};
  const std::vector<PointRecord> pts{{0.1, 0.1}, {0.2, 0.2}, {0.3, 0.3}, {1.5, 0.5}, {9, 9}};
  const auto pop = synthesize_population(pts, regions);
  EXPECT_DOUBLE_EQ(pop.counts[0], 3.0);
  EXPECT_DOUBLE_EQ(pop.counts[1], 1.0);
  EXPECT_EQ(pop.unassigned, 1u);

  const auto empty = synthesize_population({}, regions);
  EXPECT_EQ(empty.counts, Eigen::VectorXd::Zero(2));

  const std::vector<Polygon> one{square("a", 0, 0)};
  const std::vector<PointRecord> heavy{{0.2, 0.2, 2.5}, {0.7, 0.7, 2.5}};
  EXPECT_DOUBLE_EQ(synthesize_population(heavy, one).counts[0], 5.0);
}

TEST(Geometry, GridBaseGeometryExamples) {
  const std::vector<Polygon> sq{square("a", 0, 0)};
  const GridSpec half{0, 0, 0.5, 0.5, 2, 2};
  const auto rows = grid_base_geometry(sq, half);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) EXPECT_NEAR(r.area, 0.25, 1e-15);

  const auto whole = grid_base_geometry(sq, GridSpec{0, 0, 1, 1, 1, 1});
  ASSERT_EQ(whole.size(), 1u);
  EXPECT_NEAR(whole[0].area, 1.0, 1e-15);

  const std::vector<Polygon> tri{{"t", {{0, 0}, {1, 0}, {0, 1}}}};
  double total = 0.0;
  for (const auto& r : grid_base_geometry(tri, half)) total += r.area;
  EXPECT_NEAR(total, 0.5, 1e-15);
}

TEST(Geometry, ClippedAreaMatchesShoelaceOfClippedSquare) {
  const Polygon sq = square("a", 0, 0, 2.0);
  EXPECT_NEAR(kernels::clipped_area(sq.ring, {1.0, 1.0, 3.0, 3.0}), 1.0, 1e-15);
  EXPECT_NEAR(kernels::clipped_area(sq.ring, {5.0, 5.0, 6.0, 6.0}), 0.0, 1e-15);
}

TEST(Geometry, GridAreaConservationOnRandomPolygons) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Polygon poly = fixture::random_star_polygon(rng, 5.0, 5.0, 4.0);
    const std::vector<Polygon> regions{poly};
    const auto rows = grid_base_geometry(regions, GridSpec{0, 0, 0.37, 0.53, 28, 20});
    double total = 0.0;
    for (const auto& r : rows) total += r.area;
    const double oracle = std::abs(signed_area(poly.ring));
    EXPECT_NEAR(total, oracle, 1e-9 * oracle) << "trial " << trial;
  }
}

TEST(Geometry, SerialAndParallelKernelsAgree) {
  std::mt19937_64 rng(5);
  std::vector<Polygon> regions;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) regions.push_back(square(std::to_string(i * 6 + j), i, j));
  std::uniform_real_distribution<double> u(-0.5, 6.5);
  std::vector<PointRecord> pts(4000);
  for (auto& p : pts) p = {u(rng), u(rng), 1.0};
  EXPECT_EQ(kernels::assign_points_serial(pts, regions), kernels::assign_points_parallel(pts, regions));

  std::vector<Polygon> stars;
  for (int i = 0; i < 10; ++i) stars.push_back(fixture::random_star_polygon(rng, 3.0 + i % 3, 3.0 + i / 3, 2.0));
  const GridSpec grid{0, 0, 0.25, 0.25, 32, 32};
  const auto a = kernels::clip_to_grid_serial(stars, grid);
  const auto b = kernels::clip_to_grid_parallel(stars, grid);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].region, b[i].region);
    EXPECT_EQ(a[i].cell, b[i].cell);
    EXPECT_EQ(a[i].area, b[i].area);
  }
}

TEST(Geometry, GroupById) {
  const std::vector<Polygon> regions{square("x", 0, 0), square("y", 1, 0), square("x", 2, 0)};
  const auto g = group_by_id(regions);
  EXPECT_EQ(g.ids, (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(g.row_to_id, (std::vector<std::size_t>{0, 1, 0}));
}

TEST(Geometry, CommonAncestorBase) {
  const HierarchyTree tree = asgs();
  EXPECT_EQ(common_ancestor_base("SA2", "RA", tree), "SA1");
  EXPECT_EQ(common_ancestor_base("SA2", "LGA", tree), "MB");
  EXPECT_EQ(common_ancestor_base("SA2", "SA2", tree), "SA2");
  EXPECT_EQ(common_ancestor_base("SA4", "SA2", tree), "SA2");
  EXPECT_THROW(common_ancestor_base("SA2", "nowhere", tree), ValidationError);
}

TEST(Geometry, HierarchyRejectsCycles) {
  EXPECT_THROW(HierarchyTree({"a", "b"}, {{"a", "b"}, {"b", "a"}}), ValidationError);
}
