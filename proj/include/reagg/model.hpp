#pragma once

#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "reagg/aggregation.hpp"

namespace reagg {

enum class LikelihoodFamily { gaussian, poisson, binomial };
enum class Link { identity, log, logit };

// Process likelihoods P(Y_b | Z_b).
struct GaussianLikelihood {
  double noise_variance = 1.0;
};
struct PoissonLikelihood {};
struct BinomialLikelihood {
  Eigen::VectorXd trials;  // N_b, positive integers
};
using LikelihoodKind = std::variant<GaussianLikelihood, PoissonLikelihood, BinomialLikelihood>;

LikelihoodFamily family_of(const LikelihoodKind& kind);
Link default_link(LikelihoodFamily family);
const char* to_string(LikelihoodFamily family);
const char* to_string(Link link);

// Per-column centring and scaling computed on the base geometry, with an
// optional trailing intercept column. Constant columns are passed through
// unscaled.
struct Standardization {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  bool intercept = false;

  static Standardization fit(const Eigen::MatrixXd& X, bool standardize, bool intercept);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
  Index n_inputs() const { return mean.size(); }
  Index n_features() const { return mean.size() + (intercept ? 1 : 0); }
};

// Z_b = features(X_b) W, with W either a point estimate or a Gaussian
// posterior. Weights live in the standardised feature space.
struct LinearModel {
  LikelihoodFamily family = LikelihoodFamily::gaussian;
  Link link = Link::identity;
  Eigen::VectorXd weight_mean;
  Eigen::MatrixXd weight_cov;  // empty for point weights
  double prior_precision = 1.0;  // lambda
  double noise_variance = std::numeric_limits<double>::quiet_NaN();  // Gaussian only
  double rate_floor = 1e-8;
  Standardization standardization;
  double log_evidence = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;

  bool has_posterior() const { return weight_cov.size() > 0; }
};

// Gaussian over Y_b with covariance factor * factor_cov * factor^T + diag(noise).
struct GaussianLatent {
  Eigen::VectorXd mean;
  Eigen::MatrixXd factor;      // n x d, may have zero columns
  Eigen::MatrixXd factor_cov;  // d x d, PSD
  Eigen::VectorXd noise;       // n, nonnegative

  Index size() const { return mean.size(); }
  bool separable() const { return factor.cols() == 0; }
  Eigen::MatrixXd covariance() const;

  static GaussianLatent diagonal(Eigen::VectorXd mean, Eigen::VectorXd variance);
  static GaussianLatent dense(Eigen::VectorXd mean, const Eigen::MatrixXd& cov);
};

struct PoissonLatent {
  Eigen::VectorXd rates;
};

struct BinomialLatent {
  Eigen::VectorXd trials;
  Eigen::VectorXd probabilities;
};

using LatentDistribution = std::variant<GaussianLatent, PoissonLatent, BinomialLatent>;

LikelihoodFamily family_of(const LatentDistribution& latent);
Index latent_size(const LatentDistribution& latent);
// Finite means, nonnegative variances and rates, probabilities in [0, 1] and
// nonnegative integer trials.
void validate_latent(const LatentDistribution& latent);

LatentDistribution predict_latent(const LinearModel& model, const Eigen::MatrixXd& covariates);
LatentDistribution predict_latent(const LinearModel& model, const Eigen::MatrixXd& covariates,
                                  const Eigen::VectorXd& trials);

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

GaussianMoments aggregate_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                   const AggregationMatrix& A);
GaussianMoments aggregate_gaussian(const GaussianLatent& latent, const AggregationMatrix& A);

Eigen::VectorXd aggregate_poisson(const Eigen::VectorXd& rates, const AggregationMatrix& A);

struct BinomialParameters {
  Eigen::VectorXd trials;
  Eigen::VectorXd probabilities;
};

// Expectation-matched Binomial(sum N_i, sum N_i p_i / sum N_i) per group.
BinomialParameters aggregate_binomial_approx(const Eigen::VectorXd& trials,
                                             const Eigen::VectorXd& probabilities,
                                             const AggregationMatrix& A);

// log P(Y_s = y_s) under the closed-form aggregate of the latent.
double log_likelihood(const LatentDistribution& latent, const AggregationMatrix& A,
                      const Eigen::VectorXd& y_s);

struct FitOptions {
  bool standardize = true;
  bool add_intercept = true;
  std::optional<Link> link;
  double rate_floor = 1e-8;
  int max_iterations = 200;
  double gradient_tolerance = 1e-8;
  // Empty selects default_lambda_grid().
  std::vector<double> lambda_grid;
  std::optional<double> fixed_lambda;
  std::optional<double> fixed_noise_variance;
};

// 21 log-spaced points over [1e-6, 1e4].
std::vector<double> default_lambda_grid();

// MAP weights under the prior N(0, lambda^{-1} I).
LinearModel fit_map(const Eigen::MatrixXd& covariates, const Eigen::VectorXd& y_s,
                    const AggregationMatrix& A, const LikelihoodKind& kind, double lambda,
                    const FitOptions& options = {});

// Weight posterior with hyperparameters chosen by type-2 marginal likelihood.
// Gaussian: conjugate posterior, lambda on the grid with sigma^2 profiled.
// Poisson/Binomial: Laplace approximation at the MAP for each grid lambda.
LinearModel fit_bayes(const Eigen::MatrixXd& covariates, const Eigen::VectorXd& y_s,
                      const AggregationMatrix& A, const LikelihoodKind& kind,
                      const FitOptions& options = {});

// Log marginal likelihood of y ~ N(0, sigma^2 diag(sizes) + design design^T / lambda).
double gaussian_log_evidence(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& group_sizes, double lambda,
                             double noise_variance);

// Log posterior (up to a constant) of the MAP problem in feature space, with
// analytic gradient and Hessian.
struct ObjectiveValue {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};
ObjectiveValue map_objective(const Eigen::MatrixXd& features, const Eigen::VectorXd& y_s,
                             const AggregationMatrix& A, const LikelihoodKind& kind, Link link,
                             double lambda, const Eigen::VectorXd& weights,
                             double rate_floor = 1e-8);

struct DependenceDiagnostic {
  double score = 0.0;  // mean held-out log density gain per source region
  int folds = 0;
  Index held_out = 0;
  bool weak = false;  // score <= 0
};

// Cross-validated Bayesian linear model against a Gaussian fitted to y_s alone.
DependenceDiagnostic dependence_diagnostic(const Eigen::MatrixXd& covariates,
                                           const Eigen::VectorXd& y_s, const AggregationMatrix& A,
                                           int folds = 5);

}  // namespace reagg
