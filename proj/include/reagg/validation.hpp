#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "reagg/aggregation.hpp"
#include "reagg/model.hpp"
#include "reagg/pipeline.hpp"

namespace reagg {

double r2(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth);
double rmse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth);
double sse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth);

struct NlpResult {
  double value = 0.0;
  bool clamped = false;  // true when the mean hit the -700 floor
};
inline constexpr double kNlpFloor = -700.0;

// Mean negative log density of truth under per-point N(mean, sd^2).
NlpResult nlp(const Eigen::VectorXd& mean, const Eigen::VectorXd& sd, const Eigen::VectorXd& truth);
// Sample sets (rows = draws, columns = points), scored by a Gaussian moment match.
NlpResult nlp_samples(const Eigen::MatrixXd& samples, const Eigen::VectorXd& truth);

double coverage(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, const Eigen::VectorXd& truth);

enum class Overlap { nested, misaligned };
const char* to_string(Overlap o);
Overlap parse_overlap(const std::string& name);

// Base regions are unit intervals on a line; destination and source regions
// are contiguous runs of them. The misaligned pattern shifts source regions
// by half a destination region (wrapping at the end).
struct SyntheticScenario {
  std::string name = "scenario";
  Index n_base = 1024;
  Index n_source = 64;
  Index n_dest = 256;
  Eigen::VectorXd weights = Eigen::VectorXd::Constant(2, 0.6);  // one per covariate
  double intercept = 0.0;
  LikelihoodFamily likelihood = LikelihoodFamily::poisson;
  double noise_variance = 1.0;  // Gaussian only
  double population_min = 50.0;
  double population_max = 150.0;
  std::uint64_t seed = 0;
  Overlap overlap = Overlap::misaligned;

  void validate() const;
  Index covariates() const { return weights.size(); }
};

struct UnitRecord {
  Index base = 0;
  double x = 0.0;
  double y = 0.0;
};

struct ScenarioData {
  std::vector<UnitRecord> units;  // one per counted individual (count likelihoods)
  Eigen::MatrixXd covariates;     // [population, covariate_1..d]
  Eigen::VectorXd z;              // true linear predictor
  Eigen::VectorXd trials;         // population, used as Binomial trials
  AggregationMatrix source;
  AggregationMatrix dest;
  Eigen::VectorXd y_b;
  Eigen::VectorXd y_s;
  Eigen::VectorXd y_d;
};

ScenarioData generate_scenario(const SyntheticScenario& s);

struct BenchmarkRow {
  std::string scenario;
  std::string method;
  double r2 = 0.0;
  double rmse = 0.0;
  double sse = 0.0;
  double nlp = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();
};

struct BenchmarkOptions {
  std::optional<Strategy> strategy;
  LearningMode learning = LearningMode::bayes;
  Index samples = 2000;
  Index burn_in = 1000;
  QuantilePair quantiles{0.05, 0.95};
};

// Builds the job the benchmark runs for one method; destination data is used
// for scoring only.
ReaggregationJob scenario_job(const SyntheticScenario& s, const ScenarioData& data, Method method,
                              const BenchmarkOptions& options = {});

std::vector<BenchmarkRow> run_benchmark(const SyntheticScenario& s, const ScenarioData& data,
                                        const std::vector<Method>& methods,
                                        const BenchmarkOptions& options = {});

}  // namespace reagg
