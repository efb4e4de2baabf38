#pragma once

#include <span>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "reagg/aggregation.hpp"

namespace reagg {

// Nonnegative per-base weighting (e.g. total population), X_b W.
struct WeightedFeature {
  Eigen::VectorXd values;
  Index clipped = 0;  // entries that were negative and set to zero
};

WeightedFeature weighted_feature(const Eigen::MatrixXd& covariates, const Eigen::VectorXd& weights);

// Population-weighted correspondence C (n_dest x n_source): each source
// count is split over destinations in proportion to the weighted population
// the two regions share. Columns sum to one.
//
// Throws ValidationError naming the first source region with zero weighted
// population; `source_ids` supplies names for the message when given.
SparseMatrix build_correspondence(const AggregationMatrix& dest, const AggregationMatrix& source,
                                  const Eigen::VectorXd& x_star,
                                  std::span<const std::string> source_ids = {});

Eigen::VectorXd apply_correspondence(const SparseMatrix& C, const Eigen::VectorXd& y_s);

}  // namespace reagg
