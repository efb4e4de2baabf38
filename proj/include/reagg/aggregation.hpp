#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace reagg {

using Index = Eigen::Index;
using SparseMatrix = Eigen::SparseMatrix<double>;

// Values labelled with region ids.
struct CountVector {
  std::vector<std::string> ids;
  Eigen::VectorXd values;
};

// Sparse unit-entry matrix (n_groups x n_base) with exactly one entry per
// column (unit allocation) and no empty rows (complete allocation).
class AggregationMatrix {
 public:
  AggregationMatrix() = default;

  // Throws ValidationError on out-of-range indices or empty groups.
  static AggregationMatrix from_assignment(std::vector<Index> assignment, Index n_groups);

  Index n_groups() const { return static_cast<Index>(members_.size()); }
  Index n_base() const { return static_cast<Index>(assignment_.size()); }
  const std::vector<Index>& assignment() const { return assignment_; }
  // Base indices of each group, ascending.
  const std::vector<std::vector<Index>>& members() const { return members_; }
  const SparseMatrix& sparse() const { return sparse_; }
  Eigen::MatrixXd dense() const { return Eigen::MatrixXd(sparse_); }
  Eigen::VectorXd group_sizes() const;

 private:
  std::vector<Index> assignment_;
  std::vector<std::vector<Index>> members_;
  SparseMatrix sparse_;
};

AggregationMatrix build_aggregation_matrix(std::vector<Index> assignment, Index n_groups);

Eigen::VectorXd aggregate(const AggregationMatrix& A, const Eigen::VectorXd& y);

struct AllocationReport {
  std::vector<Index> incomplete_columns;  // no entry
  std::vector<Index> non_unit_columns;    // two or more entries
  std::vector<Index> non_unit_entries;    // columns holding a value other than 1
  std::vector<Index> empty_rows;

  bool valid() const {
    return incomplete_columns.empty() && non_unit_columns.empty() && non_unit_entries.empty() &&
           empty_rows.empty();
  }
  std::string describe() const;
};

AllocationReport validate_allocation(const SparseMatrix& A);
AllocationReport validate_allocation(const AggregationMatrix& A);

// Orthonormal basis (n_base x n_free) of the null space of A.
SparseMatrix null_space(const AggregationMatrix& A);

// A^T (A A^T)^{-1} y_s. Spreads each group total evenly over its members.
Eigen::VectorXd particular_solution(const AggregationMatrix& A, const Eigen::VectorXd& y_s);

// Affine parameterisation of every y with A y = y_s: y = particular + N v.
//
// The basis is block-structured: each group of k base regions contributes
// k - 1 Helmert contrasts over its members, so N is orthonormal, A N = 0
// exactly in exact arithmetic, and products with N or N^T cost O(n_base).
class NullSpaceFrame {
 public:
  struct Block {
    Index group = 0;
    Index offset = 0;  // first coordinate of this block in v
    std::vector<Index> base;
    Index size() const { return static_cast<Index>(base.size()) - 1; }
  };

  NullSpaceFrame() = default;
  NullSpaceFrame(const AggregationMatrix& A, const Eigen::VectorXd& y_s);

  Index n_base() const { return particular_.size(); }
  Index n_free() const { return n_free_; }
  const Eigen::VectorXd& particular() const { return particular_; }
  const Eigen::VectorXd& observed() const { return observed_; }
  const AggregationMatrix& constraint() const { return constraint_; }
  // Blocks with at least one free coordinate.
  const std::vector<Block>& blocks() const { return blocks_; }

  Eigen::VectorXd embed(const Eigen::VectorXd& v) const;        // N v
  Eigen::VectorXd coordinates(const Eigen::VectorXd& y) const;  // N^T y
  Eigen::VectorXd point(const Eigen::VectorXd& v) const;        // particular + N v
  // Orthogonal projection onto the affine solution set.
  Eigen::VectorXd project(const Eigen::VectorXd& y) const;
  SparseMatrix basis() const;

 private:
  AggregationMatrix constraint_;
  Eigen::VectorXd observed_;
  Eigen::VectorXd particular_;
  std::vector<Block> blocks_;
  Index n_free_ = 0;
};

Eigen::VectorXd parameterize(const NullSpaceFrame& frame, const Eigen::VectorXd& v);

// Helmert contrasts for one block of k values (v has k - 1 entries).
void helmert_embed_add(const double* v, Index k, double* y, double scale = 1.0);
void helmert_coordinates(const double* y, Index k, double* v);

}  // namespace reagg
