#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "reagg/aggregation.hpp"
#include "reagg/model.hpp"

namespace reagg {

enum class Strategy { exact, mcmc, variational, projection };

const char* to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

struct ConditioningDiagnostics {
  Strategy strategy = Strategy::exact;
  double acceptance_rate = std::numeric_limits<double>::quiet_NaN();
  Index blocks = 0;
  Index blocks_outside_band = 0;  // per-block acceptance outside [0.05, 0.95]
  double split_mean_discrepancy = std::numeric_limits<double>::quiet_NaN();
  double clipping_rate = std::numeric_limits<double>::quiet_NaN();
  double fallback_rate = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> elbo_trace;
  double infeasible_mass = std::numeric_limits<double>::quiet_NaN();
  bool barrier_active = false;
  int iterations = 0;
  std::vector<std::string> warnings;
};

// The latent distribution restricted to { y : A y = y_s }. Either a sample
// matrix (rows are draws, columns base regions) or a Gaussian over the frame
// coordinates v with y = particular + N v.
struct ConditionedPosterior {
  NullSpaceFrame frame;
  bool gaussian = false;
  Eigen::MatrixXd samples;
  Eigen::VectorXd q_mean;
  Eigen::MatrixXd q_cov;
  ConditioningDiagnostics diagnostics;

  Index n_samples() const { return gaussian ? 0 : samples.rows(); }
  Eigen::VectorXd base_mean() const;
  Eigen::VectorXd base_variance() const;
  // Moments of dest * y under the Gaussian representation.
  GaussianMoments aggregate_moments(const AggregationMatrix& dest) const;
};

struct McmcConfig {
  Index n_samples = 5000;
  Index burn_in = 1000;
  Index thinning = 1;
  std::optional<double> proposal_scale;  // empty = auto-tuned during burn-in
  std::uint64_t seed = 0;
  bool nonnegative = true;  // always enforced for count likelihoods

  void validate() const;
};

// Draws from the latent model and moves each draw to its nearest point on
// the solution set. Count draws (and Gaussian draws when `nonnegative`) that
// land outside the orthant alternate clipping and re-projection up to five
// times, then fall back to shrinking toward the particular solution.
ConditionedPosterior condition_projection(const LatentDistribution& latent,
                                          const NullSpaceFrame& frame, Index n_samples,
                                          std::uint64_t seed, bool nonnegative = true);

// Random-walk Metropolis in frame coordinates. Separable targets run one
// chain per aggregation group (independent, in parallel); otherwise a single
// joint chain.
ConditionedPosterior condition_mcmc(const LatentDistribution& latent, const LikelihoodKind& kind,
                                    const NullSpaceFrame& frame, const McmcConfig& cfg);

// Same sampler with OpenMP disabled; bit-identical output.
ConditionedPosterior condition_mcmc_serial(const LatentDistribution& latent,
                                           const LikelihoodKind& kind,
                                           const NullSpaceFrame& frame, const McmcConfig& cfg);

struct VariationalConfig {
  Index full_covariance_limit = 200;
  double barrier_weight = 10.0;
  double barrier_width = 1.0;
  double infeasible_threshold = 0.01;
  int max_iterations = 200;
  double tolerance = 1e-10;
  bool nonnegative = true;
};

// Gaussian Q over frame coordinates fitted by KL(Q || target). Gaussian
// latents only.
ConditionedPosterior condition_variational(const LatentDistribution& latent,
                                           const NullSpaceFrame& frame,
                                           const VariationalConfig& cfg = {});

// Closed-form slice of a Gaussian latent, returned in frame coordinates.
ConditionedPosterior condition_exact(const GaussianLatent& latent, const NullSpaceFrame& frame);

// Dense textbook conditioning, used as an oracle.
GaussianMoments condition_gaussian_exact(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                         const Eigen::MatrixXd& A, const Eigen::VectorXd& y_s);

// Precision and linear term of the Gaussian latent's log density in frame
// coordinates: log p(v) = -v' P v / 2 + b' v + const.
struct FrameQuadratic {
  Eigen::MatrixXd precision;
  Eigen::VectorXd linear;
};
FrameQuadratic frame_quadratic(const GaussianLatent& latent, const NullSpaceFrame& frame);

// Batch-means Monte Carlo standard error of a chain's mean.
double batch_means_standard_error(const Eigen::VectorXd& chain, Index batches = 50);

}  // namespace reagg
