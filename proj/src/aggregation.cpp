#include "reagg/aggregation.hpp"

#include <cmath>
#include <sstream>

#include "reagg/error.hpp"
#include "reagg/kernels.hpp"

namespace reagg {

AggregationMatrix AggregationMatrix::from_assignment(std::vector<Index> assignment,
                                                     Index n_groups) {
  if (n_groups <= 0) throw ValidationError("aggregation needs at least one group");
  AggregationMatrix A;
  A.members_.resize(static_cast<std::size_t>(n_groups));
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(assignment.size());
  for (std::size_t j = 0; j < assignment.size(); ++j) {
    const Index g = assignment[j];
    if (g < 0 || g >= n_groups) {
      std::ostringstream msg;
      msg << "base region " << j << " assigned to group " << g << ", outside [0, " << n_groups
          << ")";
      throw ValidationError(msg.str());
    }
    A.members_[static_cast<std::size_t>(g)].push_back(static_cast<Index>(j));
    entries.emplace_back(g, static_cast<Index>(j), 1.0);
  }
  for (Index g = 0; g < n_groups; ++g)
    if (A.members_[static_cast<std::size_t>(g)].empty())
      throw ValidationError("group " + std::to_string(g) + " contains no base regions");
  A.sparse_.resize(n_groups, static_cast<Index>(assignment.size()));
  A.sparse_.setFromTriplets(entries.begin(), entries.end());
  A.sparse_.makeCompressed();
  A.assignment_ = std::move(assignment);
  return A;
}

Eigen::VectorXd AggregationMatrix::group_sizes() const {
  Eigen::VectorXd s(n_groups());
  for (Index g = 0; g < n_groups(); ++g)
    s[g] = static_cast<double>(members_[static_cast<std::size_t>(g)].size());
  return s;
}

AggregationMatrix build_aggregation_matrix(std::vector<Index> assignment, Index n_groups) {
  return AggregationMatrix::from_assignment(std::move(assignment), n_groups);
}

Eigen::VectorXd aggregate(const AggregationMatrix& A, const Eigen::VectorXd& y) {
  if (y.size() != A.n_base()) {
    std::ostringstream msg;
    msg << "aggregate: vector has " << y.size() << " entries, matrix has " << A.n_base()
        << " base regions";
    throw ValidationError(msg.str());
  }
  return kernels::aggregate_parallel(A.members(), y);
}

std::string AllocationReport::describe() const {
  if (valid()) return "valid";
  std::ostringstream out;
  auto list = [&out](const char* what, const std::vector<Index>& idx) {
    if (idx.empty()) return;
    out << what << ":";
    for (Index i : idx) out << ' ' << i;
    out << "; ";
  };
  list("incomplete allocation (columns)", incomplete_columns);
  list("non-unit allocation (columns)", non_unit_columns);
  list("non-unit entries (columns)", non_unit_entries);
  list("empty groups (rows)", empty_rows);
  std::string s = out.str();
  return s.substr(0, s.size() - 2);
}

AllocationReport validate_allocation(const SparseMatrix& A) {
  AllocationReport report;
  std::vector<bool> row_used(static_cast<std::size_t>(A.rows()), false);
  for (Index c = 0; c < A.outerSize(); ++c) {
    int count = 0;
    bool bad_value = false;
    for (SparseMatrix::InnerIterator it(A, c); it; ++it) {
      if (it.value() == 0.0) continue;
      ++count;
      row_used[static_cast<std::size_t>(it.row())] = true;
      if (it.value() != 1.0) bad_value = true;
    }
    if (count == 0) report.incomplete_columns.push_back(c);
    if (count >= 2) report.non_unit_columns.push_back(c);
    if (bad_value) report.non_unit_entries.push_back(c);
  }
  for (Index r = 0; r < A.rows(); ++r)
    if (!row_used[static_cast<std::size_t>(r)]) report.empty_rows.push_back(r);
  return report;
}

AllocationReport validate_allocation(const AggregationMatrix& A) {
  return validate_allocation(A.sparse());
}

void helmert_embed_add(const double* v, Index k, double* y, double scale) {
  // Column j (0-based) is (1, ..., 1, -(j+1), 0, ...) / sqrt((j+1)(j+2))
  // with j + 1 leading ones.
  double suffix = 0.0;
  for (Index i = k - 1; i >= 0; --i) {
    double yi = suffix;
    if (i >= 1) {
      const double c = std::sqrt(static_cast<double>(i) * static_cast<double>(i + 1));
      yi -= static_cast<double>(i) * v[i - 1] / c;
      suffix += v[i - 1] / c;
    }
    y[i] += scale * yi;
  }
}

void helmert_coordinates(const double* y, Index k, double* v) {
  double prefix = 0.0;
  for (Index j = 0; j + 1 < k; ++j) {
    prefix += y[j];
    const double c = std::sqrt(static_cast<double>(j + 1) * static_cast<double>(j + 2));
    v[j] = (prefix - static_cast<double>(j + 1) * y[j + 1]) / c;
  }
}

Eigen::VectorXd particular_solution(const AggregationMatrix& A, const Eigen::VectorXd& y_s) {
  if (y_s.size() != A.n_groups()) {
    std::ostringstream msg;
    msg << "particular_solution: " << y_s.size() << " observations for " << A.n_groups()
        << " groups";
    throw ValidationError(msg.str());
  }
  // A A^T = diag(group sizes); from_assignment already rejects empty groups.
  Eigen::VectorXd out(A.n_base());
  for (Index g = 0; g < A.n_groups(); ++g) {
    const auto& m = A.members()[static_cast<std::size_t>(g)];
    const double share = y_s[g] / static_cast<double>(m.size());
    for (Index b : m) out[b] = share;
  }
  return out;
}

NullSpaceFrame::NullSpaceFrame(const AggregationMatrix& A, const Eigen::VectorXd& y_s)
    : constraint_(A), observed_(y_s), particular_(particular_solution(A, y_s)) {
  Index offset = 0;
  for (Index g = 0; g < A.n_groups(); ++g) {
    const auto& m = A.members()[static_cast<std::size_t>(g)];
    if (m.size() < 2) continue;
    Block b{g, offset, m};
    offset += b.size();
    blocks_.push_back(std::move(b));
  }
  n_free_ = offset;
}

Eigen::VectorXd NullSpaceFrame::embed(const Eigen::VectorXd& v) const {
  if (v.size() != n_free_) throw ValidationError("frame coordinates have the wrong dimension");
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n_base());
  std::vector<double> local;
  for (const auto& b : blocks_) {
    const Index k = b.size() + 1;
    local.assign(static_cast<std::size_t>(k), 0.0);
    helmert_embed_add(v.data() + b.offset, k, local.data());
    for (Index i = 0; i < k; ++i) y[b.base[static_cast<std::size_t>(i)]] = local[i];
  }
  return y;
}

Eigen::VectorXd NullSpaceFrame::coordinates(const Eigen::VectorXd& y) const {
  if (y.size() != n_base()) throw ValidationError("vector length does not match the frame");
  Eigen::VectorXd v(n_free_);
  std::vector<double> local;
  for (const auto& b : blocks_) {
    const Index k = b.size() + 1;
    local.resize(static_cast<std::size_t>(k));
    for (Index i = 0; i < k; ++i) local[i] = y[b.base[static_cast<std::size_t>(i)]];
    helmert_coordinates(local.data(), k, v.data() + b.offset);
  }
  return v;
}

Eigen::VectorXd NullSpaceFrame::point(const Eigen::VectorXd& v) const {
  return particular_ + embed(v);
}

Eigen::VectorXd NullSpaceFrame::project(const Eigen::VectorXd& y) const {
  return particular_ + embed(coordinates(y - particular_));
}

SparseMatrix NullSpaceFrame::basis() const {
  std::vector<Eigen::Triplet<double>> entries;
  for (const auto& b : blocks_) {
    for (Index j = 0; j < b.size(); ++j) {
      const double c = std::sqrt(static_cast<double>(j + 1) * static_cast<double>(j + 2));
      for (Index i = 0; i <= j; ++i)
        entries.emplace_back(b.base[static_cast<std::size_t>(i)], b.offset + j, 1.0 / c);
      entries.emplace_back(b.base[static_cast<std::size_t>(j + 1)], b.offset + j,
                           -static_cast<double>(j + 1) / c);
    }
  }
  SparseMatrix N(n_base(), n_free_);
  N.setFromTriplets(entries.begin(), entries.end());
  N.makeCompressed();
  return N;
}

SparseMatrix null_space(const AggregationMatrix& A) {
  return NullSpaceFrame(A, Eigen::VectorXd::Zero(A.n_groups())).basis();
}

Eigen::VectorXd parameterize(const NullSpaceFrame& frame, const Eigen::VectorXd& v) {
  return frame.point(v);
}

}  // namespace reagg
