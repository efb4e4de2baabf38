#include "reagg/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/tools/minima.hpp>

#include "reagg/error.hpp"
#include "reagg/numeric.hpp"

namespace reagg {

namespace {

struct LinkValue {
  double r;
  double dr;
  double d2r;
};

// Base-level mean outcome and its first two derivatives in eta.
LinkValue link_value(Link link, LikelihoodFamily family, double eta, double trials, double floor) {
  switch (link) {
    case Link::identity:
      if (family == LikelihoodFamily::poisson && eta <= floor) return {floor, 0.0, 0.0};
      return {eta, 1.0, 0.0};
    case Link::log: {
      const double e = std::exp(eta);
      return {e, e, e};
    }
    case Link::logit: {
      const double p = logistic(eta);
      const double v = p * (1.0 - p);
      return {trials * p, trials * v, trials * v * (1.0 - 2.0 * p)};
    }
  }
  return {0.0, 0.0, 0.0};
}

struct GroupTerm {
  double l;
  double dl;
  double d2l;
};

// log P(y | group mean mu) and derivatives in mu.
GroupTerm group_term(LikelihoodFamily family, double y, double mu, double members,
                     double group_trials, double noise_variance) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (family) {
    case LikelihoodFamily::gaussian: {
      const double v = noise_variance * members;
      const double r = y - mu;
      return {-0.5 * (kLog2Pi + std::log(v) + r * r / v), r / v, -1.0 / v};
    }
    case LikelihoodFamily::poisson: {
      if (!(mu > 0.0)) return {y == 0.0 && mu == 0.0 ? 0.0 : -inf, 0.0, 0.0};
      const double l = (y > 0.0 ? y * std::log(mu) : 0.0) - mu - log_factorial(y);
      return {l, y / mu - 1.0, -y / (mu * mu)};
    }
    case LikelihoodFamily::binomial: {
      const double n = group_trials;
      if (!(mu > 0.0) || !(mu < n)) {
        const bool ok = (mu <= 0.0 && y == 0.0) || (mu >= n && y == n);
        return {ok ? 0.0 : -inf, 0.0, 0.0};
      }
      const double q = mu / n;
      const double l = log_choose(n, y) + (y > 0.0 ? y * std::log(q) : 0.0) +
                       (n - y > 0.0 ? (n - y) * std::log1p(-q) : 0.0);
      const double a = n - mu;
      return {l, y / mu - (n - y) / a, -y / (mu * mu) - (n - y) / (a * a)};
    }
  }
  return {0.0, 0.0, 0.0};
}

// Row sums of F over each group: the aggregated design A F.
Eigen::MatrixXd aggregate_rows(const AggregationMatrix& A, const Eigen::MatrixXd& F) {
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(A.n_groups(), F.cols());
  for (Index b = 0; b < F.rows(); ++b) G.row(A.assignment()[b]) += F.row(b);
  return G;
}

void check_fit_inputs(const Eigen::MatrixXd& X, const Eigen::VectorXd& y_s,
                      const AggregationMatrix& A, const LikelihoodKind& kind) {
  if (X.rows() != A.n_base()) {
    std::ostringstream msg;
    msg << "covariates have " << X.rows() << " rows for " << A.n_base() << " base regions";
    throw ValidationError(msg.str());
  }
  if (y_s.size() != A.n_groups()) {
    std::ostringstream msg;
    msg << y_s.size() << " observations for " << A.n_groups() << " source regions";
    throw ValidationError(msg.str());
  }
  if (!y_s.allFinite()) throw ValidationError("observations must be finite");
  const auto family = family_of(kind);
  if (family != LikelihoodFamily::gaussian) {
    for (Index i = 0; i < y_s.size(); ++i)
      if (y_s[i] < 0.0 || y_s[i] != std::floor(y_s[i]))
        throw ValidationError("count likelihoods need nonnegative integer observations");
  }
  if (const auto* g = std::get_if<GaussianLikelihood>(&kind); g && !(g->noise_variance > 0.0))
    throw ValidationError("Gaussian noise variance must be positive");
  if (const auto* b = std::get_if<BinomialLikelihood>(&kind)) {
    if (b->trials.size() != A.n_base())
      throw ValidationError("binomial trials must have one entry per base region");
    for (Index i = 0; i < b->trials.size(); ++i)
      if (!(b->trials[i] > 0.0) || b->trials[i] != std::floor(b->trials[i]))
        throw ValidationError("binomial trials must be positive integers");
    const Eigen::VectorXd n_s = aggregate(A, b->trials);
    for (Index s = 0; s < y_s.size(); ++s)
      if (y_s[s] > n_s[s]) throw ValidationError("binomial observation exceeds its trials");
  }
}

Link resolve_link(LikelihoodFamily family, const FitOptions& options) {
  const Link link = options.link.value_or(default_link(family));
  const bool ok = (family == LikelihoodFamily::gaussian && link == Link::identity) ||
                  (family == LikelihoodFamily::poisson &&
                   (link == Link::log || link == Link::identity)) ||
                  (family == LikelihoodFamily::binomial && link == Link::logit);
  if (!ok)
    throw ValidationError(std::string("link '") + to_string(link) + "' is not available for the " +
                          to_string(family) + " likelihood");
  return link;
}

struct NewtonResult {
  Eigen::VectorXd w;
  ObjectiveValue objective;
  int iterations = 0;
};

// Damped Newton ascent on a concave-near-optimum objective with Armijo
// backtracking. Converges when the gradient norm drops below `tol`, or when
// the Newton decrement is at the floating-point floor.
template <typename Objective>
NewtonResult newton_ascent(Objective&& objective, Eigen::VectorXd w, int max_iterations,
                           double tol) {
  ObjectiveValue cur = objective(w);
  if (!std::isfinite(cur.value)) throw NumericalError("MAP objective is not finite at the start point");
  const Index d = w.size();
  for (int it = 0; it < max_iterations; ++it) {
    const double gnorm = cur.gradient.norm();
    if (gnorm <= tol) return {std::move(w), std::move(cur), it};
    const Eigen::MatrixXd M = -cur.hessian;
    const double diag_scale = std::max(1e-12, M.diagonal().cwiseAbs().maxCoeff());
    double damping = 0.0;
    bool moved = false;
    double decrement = 0.0;
    for (int attempt = 0; attempt < 40 && !moved; ++attempt) {
      Eigen::LLT<Eigen::MatrixXd> llt(M + damping * Eigen::MatrixXd::Identity(d, d));
      if (llt.info() != Eigen::Success) {
        damping = damping == 0.0 ? 1e-8 * diag_scale : damping * 10.0;
        continue;
      }
      const Eigen::VectorXd step = llt.solve(cur.gradient);
      decrement = cur.gradient.dot(step);
      if (damping == 0.0 && decrement <= 1e-13 * (1.0 + std::abs(cur.value)))
        return {std::move(w), std::move(cur), it};
      double alpha = 1.0;
      for (int ls = 0; ls < 30; ++ls, alpha *= 0.5) {
        Eigen::VectorXd cand = w + alpha * step;
        ObjectiveValue next = objective(cand);
        if (std::isfinite(next.value) && next.value >= cur.value + 1e-4 * alpha * decrement) {
          w = std::move(cand);
          cur = std::move(next);
          moved = true;
          break;
        }
      }
      if (!moved) damping = damping == 0.0 ? 1e-8 * diag_scale : damping * 10.0;
    }
    if (!moved) {
      // No representable ascent left.
      if (decrement <= 1e-20 * (1.0 + std::abs(cur.value))) return {std::move(w), std::move(cur), it};
      std::ostringstream msg;
      msg << "MAP optimisation stalled at iteration " << it << " (gradient norm " << gnorm << ")";
      throw NumericalError(msg.str());
    }
  }
  const double gnorm = cur.gradient.norm();
  if (gnorm <= tol || gnorm <= 1e-10 * (1.0 + std::abs(cur.value))) return {std::move(w), std::move(cur), max_iterations};
  std::ostringstream msg;
  msg << "MAP optimisation did not converge in " << max_iterations
      << " iterations (gradient norm " << gnorm << ", objective " << cur.value << ")";
  throw NumericalError(msg.str());
}

Eigen::VectorXd glm_start(LikelihoodFamily family, Link link, const LikelihoodKind& kind,
                          const Eigen::VectorXd& y_s, const Standardization& st, Index n_base) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(st.n_features());
  if (!st.intercept) return w;
  const double total = y_s.sum();
  if (family == LikelihoodFamily::poisson && link == Link::log) {
    w[w.size() - 1] = std::log(std::max(total, 1e-3) / static_cast<double>(n_base));
  } else if (family == LikelihoodFamily::poisson) {
    w[w.size() - 1] = std::max(total / static_cast<double>(n_base), 1.0);
  } else if (family == LikelihoodFamily::binomial) {
    const double n = std::get<BinomialLikelihood>(kind).trials.sum();
    const double q = std::clamp(total / n, 1e-6, 1.0 - 1e-6);
    w[w.size() - 1] = std::log(q / (1.0 - q));
  }
  return w;
}

struct GaussianFit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  double lambda;
  double noise_variance;
  double log_evidence;
};

// Precomputed spectral form of the Gaussian evidence for a fixed design.
class GaussianEvidence {
 public:
  GaussianEvidence(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                   const Eigen::VectorXd& sizes)
      : n_(static_cast<double>(y.size())) {
    const Eigen::VectorXd w = sizes.cwiseSqrt().cwiseInverse();
    scaled_design_ = w.asDiagonal() * design;
    scaled_y_ = w.asDiagonal() * y;
    log_det_sizes_ = sizes.array().log().sum();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(scaled_design_, Eigen::ComputeThinU);
    s2_ = svd.singularValues().array().square();
    proj_ = svd.matrixU().transpose() * scaled_y_;
    yy_ = scaled_y_.squaredNorm();
  }

  double operator()(double lambda, double noise) const {
    double log_det = (n_ - static_cast<double>(s2_.size())) * std::log(noise);
    double quad = (yy_ - proj_.squaredNorm()) / noise;
    for (Index i = 0; i < s2_.size(); ++i) {
      const double c = noise + s2_[i] / lambda;
      log_det += std::log(c);
      quad += proj_[i] * proj_[i] / c;
    }
    return -0.5 * (n_ * kLog2Pi + log_det_sizes_ + log_det + std::max(quad, 0.0));
  }

  // Maximises over the noise variance for a fixed lambda.
  std::pair<double, double> profile(double lambda) const {
    const double v = std::max(yy_ / n_, 1e-300);
    const double lo = std::log(v * 1e-10);
    const double hi = std::log(v * 10.0);
    constexpr int kScan = 41;
    int best_i = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < kScan; ++i) {
      const double t = lo + (hi - lo) * i / (kScan - 1);
      const double val = (*this)(lambda, std::exp(t));
      if (val > best) {
        best = val;
        best_i = i;
      }
    }
    const double step = (hi - lo) / (kScan - 1);
    const double a = lo + step * std::max(best_i - 1, 0);
    const double b = lo + step * std::min(best_i + 1, kScan - 1);
    auto neg = [&](double t) { return -(*this)(lambda, std::exp(t)); };
    auto [t, f] = boost::math::tools::brent_find_minima(neg, a, b, 52);
    if (-f < best) return {std::exp(lo + step * best_i), best};
    return {std::exp(t), -f};
  }

  GaussianFit posterior(double lambda, double noise) const {
    const Index d = scaled_design_.cols();
    Eigen::MatrixXd precision = scaled_design_.transpose() * scaled_design_ / noise;
    precision.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) throw NumericalError("posterior precision is not positive definite");
    GaussianFit fit;
    fit.cov = llt.solve(Eigen::MatrixXd::Identity(d, d));
    fit.mean = fit.cov * (scaled_design_.transpose() * scaled_y_) / noise;
    fit.lambda = lambda;
    fit.noise_variance = noise;
    fit.log_evidence = (*this)(lambda, noise);
    return fit;
  }

 private:
  double n_;
  Eigen::MatrixXd scaled_design_;
  Eigen::VectorXd scaled_y_;
  Eigen::VectorXd s2_;
  Eigen::VectorXd proj_;
  double yy_ = 0.0;
  double log_det_sizes_ = 0.0;
};

GaussianFit fit_gaussian_design(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& sizes, const FitOptions& options) {
  const GaussianEvidence evidence(design, y, sizes);
  std::vector<double> grid = options.fixed_lambda ? std::vector<double>{*options.fixed_lambda}
                             : options.lambda_grid.empty() ? default_lambda_grid()
                                                           : options.lambda_grid;
  double best_val = -std::numeric_limits<double>::infinity();
  double best_lambda = grid.front();
  double best_noise = options.fixed_noise_variance.value_or(1.0);
  for (double lambda : grid) {
    if (!(lambda > 0.0)) throw ValidationError("prior precision must be positive");
    double noise;
    double val;
    if (options.fixed_noise_variance) {
      noise = *options.fixed_noise_variance;
      val = evidence(lambda, noise);
    } else {
      std::tie(noise, val) = evidence.profile(lambda);
    }
    if (val > best_val) {
      best_val = val;
      best_lambda = lambda;
      best_noise = noise;
    }
  }
  return evidence.posterior(best_lambda, best_noise);
}

double log_normal_density(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + r * r / var);
}

}  // namespace

LikelihoodFamily family_of(const LikelihoodKind& kind) {
  return static_cast<LikelihoodFamily>(kind.index());
}

LikelihoodFamily family_of(const LatentDistribution& latent) {
  return static_cast<LikelihoodFamily>(latent.index());
}

Index latent_size(const LatentDistribution& latent) {
  return std::visit(
      [](const auto& l) -> Index {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, GaussianLatent>) return l.size();
        else if constexpr (std::is_same_v<T, PoissonLatent>) return l.rates.size();
        else return l.probabilities.size();
      },
      latent);
}

Link default_link(LikelihoodFamily family) {
  switch (family) {
    case LikelihoodFamily::gaussian: return Link::identity;
    case LikelihoodFamily::poisson: return Link::log;
    case LikelihoodFamily::binomial: return Link::logit;
  }
  return Link::identity;
}

const char* to_string(LikelihoodFamily family) {
  switch (family) {
    case LikelihoodFamily::gaussian: return "gaussian";
    case LikelihoodFamily::poisson: return "poisson";
    case LikelihoodFamily::binomial: return "binomial";
  }
  return "?";
}

const char* to_string(Link link) {
  switch (link) {
    case Link::identity: return "identity";
    case Link::log: return "log";
    case Link::logit: return "logit";
  }
  return "?";
}

Standardization Standardization::fit(const Eigen::MatrixXd& X, bool standardize, bool intercept) {
  Standardization st;
  st.intercept = intercept;
  st.mean = Eigen::VectorXd::Zero(X.cols());
  st.scale = Eigen::VectorXd::Ones(X.cols());
  if (!standardize || X.rows() == 0) return st;
  for (Index j = 0; j < X.cols(); ++j) {
    const double m = X.col(j).mean();
    const double sd = std::sqrt((X.col(j).array() - m).square().mean());
    if (sd > 1e-12 * (1.0 + std::abs(m))) {
      st.mean[j] = m;
      st.scale[j] = sd;
    }
  }
  return st;
}

Eigen::MatrixXd Standardization::apply(const Eigen::MatrixXd& X) const {
  if (X.cols() != n_inputs()) {
    std::ostringstream msg;
    msg << "model expects " << n_inputs() << " covariate columns, got " << X.cols();
    throw ValidationError(msg.str());
  }
  Eigen::MatrixXd F(X.rows(), n_features());
  for (Index j = 0; j < X.cols(); ++j)
    F.col(j) = (X.col(j).array() - mean[j]) / scale[j];
  if (intercept) F.col(F.cols() - 1).setOnes();
  return F;
}

Eigen::MatrixXd GaussianLatent::covariance() const {
  Eigen::MatrixXd cov = noise.asDiagonal();
  if (factor.cols() > 0) cov += factor * factor_cov * factor.transpose();
  return cov;
}

GaussianLatent GaussianLatent::diagonal(Eigen::VectorXd mean, Eigen::VectorXd variance) {
  if (variance.size() != mean.size()) throw ValidationError("variance length does not match the mean");
  if (!(variance.array() >= 0.0).all() || !variance.allFinite())
    throw ValidationError("variances must be finite and nonnegative");
  GaussianLatent g;
  g.factor = Eigen::MatrixXd(mean.size(), 0);
  g.factor_cov = Eigen::MatrixXd(0, 0);
  g.mean = std::move(mean);
  g.noise = std::move(variance);
  return g;
}

GaussianLatent GaussianLatent::dense(Eigen::VectorXd mean, const Eigen::MatrixXd& cov) {
  const Index n = mean.size();
  if (cov.rows() != n || cov.cols() != n) throw ValidationError("covariance shape does not match the mean");
  const Eigen::MatrixXd off = cov - Eigen::MatrixXd(cov.diagonal().asDiagonal());
  if (off.cwiseAbs().maxCoeff() == 0.0) return diagonal(std::move(mean), cov.diagonal());
  GaussianLatent g;
  g.mean = std::move(mean);
  g.factor = Eigen::MatrixXd::Identity(n, n);
  g.factor_cov = 0.5 * (cov + cov.transpose());
  g.noise = Eigen::VectorXd::Zero(n);
  return g;
}

void validate_latent(const LatentDistribution& latent) {
  if (const auto* g = std::get_if<GaussianLatent>(&latent)) {
    const Index n = g->mean.size();
    if (g->noise.size() != n || g->factor.rows() != n || g->factor_cov.rows() != g->factor.cols() ||
        g->factor_cov.cols() != g->factor.cols())
      throw ValidationError("Gaussian latent has inconsistent dimensions");
    if (!g->mean.allFinite() || !g->factor.allFinite() || !g->factor_cov.allFinite())
      throw ValidationError("Gaussian latent must be finite");
    if (!g->noise.allFinite() || (g->noise.array() < 0.0).any())
      throw ValidationError("Gaussian latent variances must be finite and nonnegative");
  } else if (const auto* p = std::get_if<PoissonLatent>(&latent)) {
    if (!p->rates.allFinite() || (p->rates.array() < 0.0).any())
      throw ValidationError("Poisson rates must be finite and nonnegative");
  } else {
    const auto& b = std::get<BinomialLatent>(latent);
    if (b.trials.size() != b.probabilities.size())
      throw ValidationError("binomial latent needs one probability per trial count");
    for (Index i = 0; i < b.trials.size(); ++i) {
      if (!(b.trials[i] >= 0.0) || b.trials[i] != std::floor(b.trials[i]))
        throw ValidationError("binomial trials must be nonnegative integers");
      if (!(b.probabilities[i] >= 0.0 && b.probabilities[i] <= 1.0))
        throw ValidationError("binomial probabilities must lie in [0, 1]");
    }
  }
}

LatentDistribution predict_latent(const LinearModel& model, const Eigen::MatrixXd& covariates) {
  if (model.family == LikelihoodFamily::binomial)
    throw ValidationError("binomial predictions need per-region trials");
  return predict_latent(model, covariates, Eigen::VectorXd());
}

LatentDistribution predict_latent(const LinearModel& model, const Eigen::MatrixXd& covariates,
                                  const Eigen::VectorXd& trials) {
  const Eigen::MatrixXd F = model.standardization.apply(covariates);
  if (F.cols() != model.weight_mean.size()) throw ValidationError("weight dimension mismatch");
  const Eigen::VectorXd eta = F * model.weight_mean;
  if (!eta.allFinite()) throw NumericalError("linear predictor is not finite");
  switch (model.family) {
    case LikelihoodFamily::gaussian: {
      GaussianLatent g;
      g.mean = eta;
      g.noise = Eigen::VectorXd::Constant(F.rows(), model.noise_variance);
      if (model.has_posterior()) {
        g.factor = F;
        g.factor_cov = model.weight_cov;
      } else {
        g.factor = Eigen::MatrixXd(F.rows(), 0);
        g.factor_cov = Eigen::MatrixXd(0, 0);
      }
      return g;
    }
    case LikelihoodFamily::poisson: {
      PoissonLatent p;
      if (model.link == Link::log) p.rates = eta.array().exp();
      else p.rates = eta.cwiseMax(model.rate_floor);
      if (!p.rates.allFinite()) throw NumericalError("Poisson rates overflow");
      return p;
    }
    case LikelihoodFamily::binomial: {
      if (trials.size() != F.rows()) throw ValidationError("binomial trials must match the base regions");
      BinomialLatent b;
      b.trials = trials;
      b.probabilities = eta.unaryExpr([](double e) { return logistic(e); });
      return b;
    }
  }
  throw ValidationError("unknown likelihood");
}

GaussianMoments aggregate_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                   const AggregationMatrix& A) {
  if (mean.size() != A.n_base() || cov.rows() != A.n_base() || cov.cols() != A.n_base())
    throw ValidationError("aggregate_gaussian: dimension mismatch");
  const SparseMatrix& S = A.sparse();
  GaussianMoments out;
  out.mean = S * mean;
  const Eigen::MatrixXd left = S * cov;
  out.cov = left * S.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

GaussianMoments aggregate_gaussian(const GaussianLatent& latent, const AggregationMatrix& A) {
  if (latent.size() != A.n_base()) throw ValidationError("aggregate_gaussian: dimension mismatch");
  GaussianMoments out;
  out.mean = aggregate(A, latent.mean);
  out.cov = Eigen::MatrixXd(aggregate(A, latent.noise).asDiagonal());
  if (latent.factor.cols() > 0) {
    const Eigen::MatrixXd AF = A.sparse() * latent.factor;
    out.cov += AF * latent.factor_cov * AF.transpose();
  }
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

Eigen::VectorXd aggregate_poisson(const Eigen::VectorXd& rates, const AggregationMatrix& A) {
  for (Index i = 0; i < rates.size(); ++i)
    if (!(rates[i] >= 0.0)) throw ValidationError("Poisson rates must be nonnegative");
  return aggregate(A, rates);
}

BinomialParameters aggregate_binomial_approx(const Eigen::VectorXd& trials,
                                             const Eigen::VectorXd& probabilities,
                                             const AggregationMatrix& A) {
  if (trials.size() != A.n_base() || probabilities.size() != A.n_base())
    throw ValidationError("aggregate_binomial_approx: dimension mismatch");
  for (Index i = 0; i < trials.size(); ++i) {
    if (!(trials[i] >= 0.0)) throw ValidationError("binomial trials must be nonnegative");
    if (!(probabilities[i] >= 0.0 && probabilities[i] <= 1.0))
      throw ValidationError("binomial probabilities must lie in [0, 1]");
  }
  BinomialParameters out;
  out.trials = aggregate(A, trials);
  const Eigen::VectorXd expected = aggregate(A, trials.cwiseProduct(probabilities));
  out.probabilities.resize(A.n_groups());
  for (Index g = 0; g < A.n_groups(); ++g) {
    if (!(out.trials[g] > 0.0))
      throw ValidationError("group " + std::to_string(g) + " has zero binomial population");
    out.probabilities[g] = expected[g] / out.trials[g];
  }
  return out;
}

double log_likelihood(const LatentDistribution& latent, const AggregationMatrix& A,
                      const Eigen::VectorXd& y_s) {
  if (latent_size(latent) != A.n_base()) throw ValidationError("latent does not match the base geometry");
  if (y_s.size() != A.n_groups()) throw ValidationError("observation count does not match the groups");
  if (y_s.size() == 0) return 0.0;
  const auto family = family_of(latent);
  if (family != LikelihoodFamily::gaussian)
    for (Index i = 0; i < y_s.size(); ++i)
      if (y_s[i] < 0.0 || y_s[i] != std::floor(y_s[i]))
        throw ValidationError("count likelihoods need nonnegative integer observations");
  switch (family) {
    case LikelihoodFamily::gaussian: {
      const auto m = aggregate_gaussian(std::get<GaussianLatent>(latent), A);
      Eigen::LLT<Eigen::MatrixXd> llt(m.cov);
      if (llt.info() != Eigen::Success) throw NumericalError("aggregated covariance is singular");
      const Eigen::VectorXd r = y_s - m.mean;
      const Eigen::VectorXd z = llt.matrixL().solve(r);
      const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      return -0.5 * (static_cast<double>(y_s.size()) * kLog2Pi + log_det + z.squaredNorm());
    }
    case LikelihoodFamily::poisson: {
      const Eigen::VectorXd mu = aggregate_poisson(std::get<PoissonLatent>(latent).rates, A);
      double total = 0.0;
      for (Index s = 0; s < y_s.size(); ++s)
        total += group_term(family, y_s[s], mu[s], 1.0, 0.0, 0.0).l;
      return total;
    }
    case LikelihoodFamily::binomial: {
      const auto& b = std::get<BinomialLatent>(latent);
      const auto agg = aggregate_binomial_approx(b.trials, b.probabilities, A);
      double total = 0.0;
      for (Index s = 0; s < y_s.size(); ++s) {
        if (y_s[s] > agg.trials[s]) return -std::numeric_limits<double>::infinity();
        total += group_term(family, y_s[s], agg.trials[s] * agg.probabilities[s], 1.0,
                            agg.trials[s], 0.0).l;
      }
      return total;
    }
  }
  return 0.0;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(std::pow(10.0, -6.0 + 0.5 * i));
  return grid;
}

double gaussian_log_evidence(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& group_sizes, double lambda,
                             double noise_variance) {
  return GaussianEvidence(design, y, group_sizes)(lambda, noise_variance);
}

ObjectiveValue map_objective(const Eigen::MatrixXd& features, const Eigen::VectorXd& y_s,
                             const AggregationMatrix& A, const LikelihoodKind& kind, Link link,
                             double lambda, const Eigen::VectorXd& weights, double rate_floor) {
  const auto family = family_of(kind);
  const Index d = features.cols();
  const Index n = features.rows();
  const Eigen::VectorXd eta = features * weights;
  const Eigen::VectorXd* trials = nullptr;
  if (const auto* b = std::get_if<BinomialLikelihood>(&kind)) trials = &b->trials;
  const double noise = family == LikelihoodFamily::gaussian
                           ? std::get<GaussianLikelihood>(kind).noise_variance
                           : 0.0;

  Eigen::VectorXd r(n), dr(n), d2r(n);
  for (Index b = 0; b < n; ++b) {
    const auto v = link_value(link, family, eta[b], trials ? (*trials)[b] : 1.0, rate_floor);
    r[b] = v.r;
    dr[b] = v.dr;
    d2r[b] = v.d2r;
  }
  const Eigen::VectorXd mu = aggregate(A, r);
  const Eigen::VectorXd sizes = A.group_sizes();
  const Eigen::VectorXd n_trials = trials ? aggregate(A, *trials) : Eigen::VectorXd::Zero(A.n_groups());

  ObjectiveValue out;
  out.value = -0.5 * lambda * weights.squaredNorm();
  Eigen::VectorXd dl(A.n_groups()), d2l(A.n_groups());
  for (Index s = 0; s < A.n_groups(); ++s) {
    const auto t = group_term(family, y_s[s], mu[s], sizes[s], n_trials[s], noise);
    out.value += t.l;
    dl[s] = t.dl;
    d2l[s] = t.d2l;
  }
  const Eigen::MatrixXd G = aggregate_rows(A, dr.asDiagonal() * features);
  out.gradient = G.transpose() * dl - lambda * weights;
  Eigen::VectorXd base_curv(n);
  for (Index b = 0; b < n; ++b) base_curv[b] = dl[A.assignment()[b]] * d2r[b];
  out.hessian = G.transpose() * d2l.asDiagonal() * G +
                features.transpose() * base_curv.asDiagonal() * features;
  out.hessian.diagonal().array() -= lambda;
  (void)d;
  return out;
}

LinearModel fit_map(const Eigen::MatrixXd& covariates, const Eigen::VectorXd& y_s,
                    const AggregationMatrix& A, const LikelihoodKind& kind, double lambda,
                    const FitOptions& options) {
  check_fit_inputs(covariates, y_s, A, kind);
  if (!(lambda > 0.0)) throw ValidationError("prior precision must be positive");
  const auto family = family_of(kind);
  LinearModel model;
  model.family = family;
  model.link = resolve_link(family, options);
  model.rate_floor = options.rate_floor;
  model.prior_precision = lambda;
  model.standardization = Standardization::fit(covariates, options.standardize, options.add_intercept);
  const Eigen::MatrixXd F = model.standardization.apply(covariates);

  if (family == LikelihoodFamily::gaussian) {
    const double noise = std::get<GaussianLikelihood>(kind).noise_variance;
    FitOptions fixed = options;
    fixed.fixed_lambda = lambda;
    fixed.fixed_noise_variance = noise;
    const auto fit = fit_gaussian_design(aggregate_rows(A, F), y_s, A.group_sizes(), fixed);
    model.weight_mean = fit.mean;
    model.noise_variance = noise;
    return model;
  }

  auto objective = [&](const Eigen::VectorXd& w) {
    return map_objective(F, y_s, A, kind, model.link, lambda, w, options.rate_floor);
  };
  auto result = newton_ascent(objective,
                              glm_start(family, model.link, kind, y_s, model.standardization, A.n_base()),
                              options.max_iterations, options.gradient_tolerance);
  model.weight_mean = std::move(result.w);
  model.iterations = result.iterations;
  return model;
}

LinearModel fit_bayes(const Eigen::MatrixXd& covariates, const Eigen::VectorXd& y_s,
                      const AggregationMatrix& A, const LikelihoodKind& kind,
                      const FitOptions& options) {
  check_fit_inputs(covariates, y_s, A, kind);
  const auto family = family_of(kind);
  LinearModel model;
  model.family = family;
  model.link = resolve_link(family, options);
  model.rate_floor = options.rate_floor;
  model.standardization = Standardization::fit(covariates, options.standardize, options.add_intercept);
  const Eigen::MatrixXd F = model.standardization.apply(covariates);

  if (family == LikelihoodFamily::gaussian) {
    const auto fit = fit_gaussian_design(aggregate_rows(A, F), y_s, A.group_sizes(), options);
    model.weight_mean = fit.mean;
    model.weight_cov = fit.cov;
    model.prior_precision = fit.lambda;
    model.noise_variance = fit.noise_variance;
    model.log_evidence = fit.log_evidence;
    return model;
  }

  std::vector<double> grid = options.fixed_lambda ? std::vector<double>{*options.fixed_lambda}
                             : options.lambda_grid.empty() ? default_lambda_grid()
                                                           : options.lambda_grid;
  std::sort(grid.begin(), grid.end());
  Eigen::VectorXd w = glm_start(family, model.link, kind, y_s, model.standardization, A.n_base());
  const double d = static_cast<double>(F.cols());
  double best = -std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    if (!(lambda > 0.0)) throw ValidationError("prior precision must be positive");
    auto objective = [&](const Eigen::VectorXd& x) {
      return map_objective(F, y_s, A, kind, model.link, lambda, x, options.rate_floor);
    };
    auto result = newton_ascent(objective, w, options.max_iterations, options.gradient_tolerance);
    w = result.w;
    const Eigen::MatrixXd H = -result.objective.hessian;
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) continue;  // not a local maximum; no Laplace evidence
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double evidence = result.objective.value + 0.5 * d * std::log(lambda) - 0.5 * log_det;
    if (evidence > best) {
      best = evidence;
      model.weight_mean = result.w;
      model.weight_cov = llt.solve(Eigen::MatrixXd::Identity(F.cols(), F.cols()));
      model.prior_precision = lambda;
      model.log_evidence = evidence;
      model.iterations = result.iterations;
    }
  }
  if (!std::isfinite(best)) throw NumericalError("no grid point yielded a valid Laplace approximation");
  return model;
}

DependenceDiagnostic dependence_diagnostic(const Eigen::MatrixXd& covariates,
                                           const Eigen::VectorXd& y_s, const AggregationMatrix& A,
                                           int folds) {
  if (folds < 2) throw ValidationError("dependence diagnostic needs at least 2 folds");
  if (covariates.rows() != A.n_base() || y_s.size() != A.n_groups())
    throw ValidationError("dependence diagnostic: dimension mismatch");
  const Index n = y_s.size();
  if (n < 2 * static_cast<Index>(folds))
    throw ValidationError("too few source regions (" + std::to_string(n) + ") for " +
                          std::to_string(folds) + "-fold dependence diagnostic");
  const auto st = Standardization::fit(covariates, true, true);
  const Eigen::MatrixXd G = aggregate_rows(A, st.apply(covariates));
  const Eigen::VectorXd sizes = A.group_sizes();

  DependenceDiagnostic out;
  out.folds = folds;
  double fold_sum = 0.0;
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) (i % folds == f ? test : train).push_back(i);
    const Index nt = static_cast<Index>(train.size());
    Eigen::MatrixXd Gt(nt, G.cols());
    Eigen::VectorXd yt(nt), st_sizes(nt);
    for (Index i = 0; i < nt; ++i) {
      Gt.row(i) = G.row(train[i]);
      yt[i] = y_s[train[i]];
      st_sizes[i] = sizes[train[i]];
    }
    const auto fit = fit_gaussian_design(Gt, yt, st_sizes, FitOptions{});
    const double mean = yt.mean();
    const double var = std::max((yt.array() - mean).square().sum() / static_cast<double>(nt - 1),
                                1e-12 * (1.0 + mean * mean));
    double gain = 0.0;
    for (Index i : test) {
      const Eigen::VectorXd g = G.row(i).transpose();
      const double pred_var = fit.noise_variance * sizes[i] + g.dot(fit.cov * g);
      gain += log_normal_density(y_s[i], g.dot(fit.mean), pred_var) -
              log_normal_density(y_s[i], mean, var);
    }
    fold_sum += gain / static_cast<double>(test.size());
    out.held_out += static_cast<Index>(test.size());
  }
  out.score = fold_sum / folds;
  out.weak = out.score <= 0.0;
  return out;
}

}  // namespace reagg
