#include "reagg/correspondence.hpp"

#include <sstream>

#include "reagg/error.hpp"

namespace reagg {

WeightedFeature weighted_feature(const Eigen::MatrixXd& covariates, const Eigen::VectorXd& weights) {
  if (covariates.cols() != weights.size()) {
    std::ostringstream msg;
    msg << "weighted_feature: " << covariates.cols() << " covariate columns but "
        << weights.size() << " weights";
    throw ValidationError(msg.str());
  }
  WeightedFeature out;
  out.values = covariates * weights;
  for (Index i = 0; i < out.values.size(); ++i) {
    if (out.values[i] < 0.0) {
      out.values[i] = 0.0;
      ++out.clipped;
    }
  }
  return out;
}

SparseMatrix build_correspondence(const AggregationMatrix& dest, const AggregationMatrix& source,
                                  const Eigen::VectorXd& x_star,
                                  std::span<const std::string> source_ids) {
  if (dest.n_base() != source.n_base() || x_star.size() != source.n_base()) {
    std::ostringstream msg;
    msg << "build_correspondence: base dimensions differ (dest " << dest.n_base() << ", source "
        << source.n_base() << ", weights " << x_star.size() << ")";
    throw ValidationError(msg.str());
  }
  for (Index i = 0; i < x_star.size(); ++i)
    if (!(x_star[i] >= 0.0)) throw ValidationError("weighted population must be nonnegative");

  // X_s = A_sb X_b*
  Eigen::VectorXd source_pop = Eigen::VectorXd::Zero(source.n_groups());
  for (Index b = 0; b < x_star.size(); ++b) source_pop[source.assignment()[b]] += x_star[b];
  for (Index s = 0; s < source.n_groups(); ++s) {
    if (source_pop[s] > 0.0) continue;
    std::string name = source_ids.empty() ? std::to_string(s) : source_ids[static_cast<std::size_t>(s)];
    throw ValidationError("source region '" + name + "' has zero weighted population");
  }

  // P_ds = A_db D(X_b*) A_sb^T: one triplet per base region, duplicates
  // summed by setFromTriplets. Then C = P_ds D(X_s)^{-1}.
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(x_star.size()));
  for (Index b = 0; b < x_star.size(); ++b)
    if (x_star[b] != 0.0) entries.emplace_back(dest.assignment()[b], source.assignment()[b], x_star[b]);
  SparseMatrix C(dest.n_groups(), source.n_groups());
  C.setFromTriplets(entries.begin(), entries.end());
  C.makeCompressed();
  for (Index s = 0; s < C.outerSize(); ++s)
    for (SparseMatrix::InnerIterator it(C, s); it; ++it) it.valueRef() /= source_pop[s];
  return C;
}

Eigen::VectorXd apply_correspondence(const SparseMatrix& C, const Eigen::VectorXd& y_s) {
  if (C.cols() != y_s.size()) {
    std::ostringstream msg;
    msg << "apply_correspondence: matrix has " << C.cols() << " source columns, vector has "
        << y_s.size() << " entries";
    throw ValidationError(msg.str());
  }
  return C * y_s;
}

}  // namespace reagg
