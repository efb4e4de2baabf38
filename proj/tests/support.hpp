#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "reagg/aggregation.hpp"
#include "reagg/geometry.hpp"

namespace reagg::fixture {

// Every group gets at least one member; the rest are scattered at random.
inline AggregationMatrix random_aggregation(std::mt19937_64& rng, Index n_base, Index n_groups) {
  std::vector<Index> assignment(n_base);
  for (Index i = 0; i < n_groups; ++i) assignment[i] = i;
  std::uniform_int_distribution<Index> pick(0, n_groups - 1);
  for (Index i = n_groups; i < n_base; ++i) assignment[i] = pick(rng);
  std::shuffle(assignment.begin(), assignment.end(), rng);
  return build_aggregation_matrix(std::move(assignment), n_groups);
}

// Star-shaped around its centre, hence simple.
inline Polygon random_star_polygon(std::mt19937_64& rng, double cx, double cy, double radius) {
  std::uniform_int_distribution<int> count(3, 14);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int k = count(rng);
  std::vector<double> angles(k);
  for (double& a : angles) a = unit(rng) * 2.0 * std::numbers::pi;
  std::sort(angles.begin(), angles.end());
  Polygon poly;
  poly.id = "p";
  for (int i = 0; i < k; ++i) {
    const double r = radius * (0.3 + 0.7 * unit(rng));
    poly.ring.push_back({cx + r * std::cos(angles[i]), cy + r * std::sin(angles[i])});
  }
  return poly;
}

// Null space via full QR of A^T (the trailing columns of Q).
inline Eigen::MatrixXd dense_null_space(const Eigen::MatrixXd& A) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A.transpose());
  const Eigen::MatrixXd Q = qr.householderQ();
  const Index rank = A.rows();
  return Q.rightCols(A.cols() - rank);
}

inline double normal_pdf(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

}  // namespace reagg::fixture
