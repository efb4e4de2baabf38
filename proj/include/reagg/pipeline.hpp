#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "reagg/aggregation.hpp"
#include "reagg/conditioning.hpp"
#include "reagg/model.hpp"

namespace reagg {

enum class Method { weighted, probabilistic };
enum class LearningMode { map, bayes };

const char* to_string(Method m);
const char* to_string(LearningMode m);
Method parse_method(const std::string& name);
LearningMode parse_learning(const std::string& name);
LikelihoodFamily parse_likelihood(const std::string& name);

struct QuantilePair {
  double lower = 0.05;
  double upper = 0.95;

  void validate() const;
  static QuantilePair parse(const std::string& text);  // "0.05,0.95"
};

struct ReaggregationJob {
  Eigen::VectorXd y_s;
  Eigen::MatrixXd covariates;  // X_b, one row per base region
  AggregationMatrix source;    // A_sb
  AggregationMatrix dest;      // A_db
  std::vector<std::string> source_ids;
  std::vector<std::string> dest_ids;
  LikelihoodFamily likelihood = LikelihoodFamily::gaussian;
  Eigen::VectorXd trials;  // Binomial N_b
  Method method = Method::probabilistic;
  std::optional<Strategy> strategy;  // empty picks the per-likelihood default
  LearningMode learning = LearningMode::bayes;
  QuantilePair quantiles;
  std::uint64_t seed = 0;
  Index samples = 5000;
  Index burn_in = 1000;
  Index thinning = 1;
  Index weight_column = 0;  // covariate column used by the weighted method
  double map_lambda = 1.0;
  FitOptions fit;
  std::optional<bool> nonnegative;  // defaults: true for counts, false for Gaussian
  int diagnostic_folds = 5;
  // Skips learning and inference when set.
  std::optional<LatentDistribution> latent;

  void validate() const;
  Strategy resolved_strategy() const;
};

struct PredictiveSummary {
  std::vector<std::string> dest_ids;
  Eigen::VectorXd expectation;
  Eigen::VectorXd lower;  // NaN when intervals are absent
  Eigen::VectorXd upper;
  Eigen::VectorXd sd;
  bool has_intervals = true;
  std::vector<std::string> warnings;
  nlohmann::json metadata = nlohmann::json::object();
};

PredictiveSummary summarize_gaussian(const GaussianMoments& dest_moments, const QuantilePair& q,
                                     bool clip_at_zero = false);
PredictiveSummary summarize_samples(const Eigen::MatrixXd& base_samples, const AggregationMatrix& dest,
                                    const QuantilePair& q, bool clip_at_zero = false);
PredictiveSummary summarize(const ConditionedPosterior& posterior, const AggregationMatrix& dest,
                            const QuantilePair& q, bool clip_at_zero = false);

PredictiveSummary reaggregate_probabilistic(const ReaggregationJob& job);
PredictiveSummary reaggregate_weighted(const ReaggregationJob& job);
PredictiveSummary reaggregate(const ReaggregationJob& job);

// Learns the latent distribution over base regions from (X_b, Y_s, A_sb).
struct LearnedLatent {
  LatentDistribution latent;
  LinearModel model;
};
LearnedLatent learn_latent(const ReaggregationJob& job);

nlohmann::json to_json(const ConditioningDiagnostics& d);
nlohmann::json to_json(const LinearModel& m);

}  // namespace reagg
