#include "reagg/validation.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "reagg/error.hpp"
#include "reagg/numeric.hpp"

namespace reagg {

namespace {

void check_lengths(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const char* what) {
  if (a.size() != b.size()) {
    std::ostringstream msg;
    msg << what << ": lengths differ (" << a.size() << " vs " << b.size() << ")";
    throw ValidationError(msg.str());
  }
}

NlpResult finish_nlp(double total, Index n) {
  NlpResult r;
  r.value = total / static_cast<double>(n);
  if (!(r.value >= kNlpFloor)) {
    if (std::isnan(r.value)) return r;
    r.value = kNlpFloor;
    r.clamped = true;
  }
  return r;
}

double point_nlp(double mean, double sd, double truth) {
  if (sd == 0.0) {
    return truth == mean ? -std::numeric_limits<double>::infinity()
                         : std::numeric_limits<double>::infinity();
  }
  const double z = (truth - mean) / sd;
  return 0.5 * kLog2Pi + std::log(sd) + 0.5 * z * z;
}

}  // namespace

double r2(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth) {
  check_lengths(predicted, truth, "r2");
  if (truth.size() < 2) throw ValidationError("r2 needs at least two points");
  const double mean = truth.mean();
  const double total = (truth.array() - mean).square().sum();
  if (total == 0.0) throw ValidationError("r2 is undefined for a constant truth vector");
  return 1.0 - (truth - predicted).squaredNorm() / total;
}

double rmse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth) {
  check_lengths(predicted, truth, "rmse");
  if (truth.size() == 0) throw ValidationError("rmse of empty vectors");
  return std::sqrt((truth - predicted).squaredNorm() / static_cast<double>(truth.size()));
}

double sse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth) {
  check_lengths(predicted, truth, "sse");
  return (truth - predicted).squaredNorm();
}

NlpResult nlp(const Eigen::VectorXd& mean, const Eigen::VectorXd& sd, const Eigen::VectorXd& truth) {
  check_lengths(mean, truth, "nlp");
  check_lengths(sd, truth, "nlp");
  if (truth.size() == 0) throw ValidationError("nlp of empty vectors");
  double total = 0.0;
  for (Index i = 0; i < truth.size(); ++i) {
    if (!(sd[i] >= 0.0)) throw ValidationError("nlp needs nonnegative standard deviations");
    total += point_nlp(mean[i], sd[i], truth[i]);
  }
  return finish_nlp(total, truth.size());
}

NlpResult nlp_samples(const Eigen::MatrixXd& samples, const Eigen::VectorXd& truth) {
  if (samples.cols() != truth.size()) throw ValidationError("nlp: samples do not match truth");
  if (samples.rows() < 2) throw ValidationError("nlp needs at least two samples per point");
  const Eigen::VectorXd mean = samples.colwise().mean().transpose();
  const Eigen::VectorXd sd =
      ((samples.rowwise() - mean.transpose()).array().square().colwise().sum() /
       static_cast<double>(samples.rows() - 1))
          .sqrt()
          .transpose();
  return nlp(mean, sd, truth);
}

double coverage(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, const Eigen::VectorXd& truth) {
  check_lengths(lower, truth, "coverage");
  check_lengths(upper, truth, "coverage");
  if (truth.size() == 0) throw ValidationError("coverage of empty vectors");
  Index inside = 0;
  for (Index i = 0; i < truth.size(); ++i) {
    if (lower[i] > upper[i]) throw ValidationError("interval " + std::to_string(i) + " has lower > upper");
    if (lower[i] <= truth[i] && truth[i] <= upper[i]) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(truth.size());
}

const char* to_string(Overlap o) { return o == Overlap::nested ? "nested" : "misaligned"; }

Overlap parse_overlap(const std::string& name) {
  if (name == "nested") return Overlap::nested;
  if (name == "misaligned") return Overlap::misaligned;
  throw ValidationError("unknown overlap pattern '" + name + "' (expected nested or misaligned)");
}

void SyntheticScenario::validate() const {
  auto fail = [this](const std::string& why) {
    throw ValidationError("scenario '" + name + "': " + why);
  };
  if (n_base <= 0 || n_source <= 0 || n_dest <= 0) fail("region counts must be positive");
  if (n_source > n_base || n_dest > n_base) fail("source and destination cannot be finer than the base");
  if (n_base % n_source != 0 || n_base % n_dest != 0)
    fail("base count must be a multiple of the source and destination counts");
  if (!weights.allFinite()) fail("weights must be finite");
  if (!(population_min > 0.0 && population_max >= population_min)) fail("invalid population range");
  if (likelihood == LikelihoodFamily::gaussian && !(noise_variance > 0.0)) fail("noise variance must be positive");
  if (overlap == Overlap::misaligned) {
    const Index dest_size = n_base / n_dest;
    const Index source_size = n_base / n_source;
    if (dest_size < 2 && source_size < 2) fail("misaligned pattern needs regions of at least two base units");
  }
}

ScenarioData generate_scenario(const SyntheticScenario& s) {
  s.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(s.seed), static_cast<std::uint32_t>(s.seed >> 32),
                    0x5eedu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> uniform01;
  std::normal_distribution<double> normal;
  const Index nb = s.n_base;
  const Index d = s.covariates();

  ScenarioData data;
  data.covariates.resize(nb, d + 1);
  for (Index b = 0; b < nb; ++b) {
    data.covariates(b, 0) =
        std::round(s.population_min + (s.population_max - s.population_min) * uniform01(rng));
    for (Index j = 0; j < d; ++j) data.covariates(b, j + 1) = normal(rng);
  }
  data.trials = data.covariates.col(0);
  data.z = Eigen::VectorXd::Constant(nb, s.intercept);
  if (d > 0) data.z += data.covariates.rightCols(d) * s.weights;

  data.y_b.resize(nb);
  for (Index b = 0; b < nb; ++b) {
    switch (s.likelihood) {
      case LikelihoodFamily::gaussian:
        data.y_b[b] = data.z[b] + std::sqrt(s.noise_variance) * normal(rng);
        break;
      case LikelihoodFamily::poisson:
        data.y_b[b] = static_cast<double>(std::poisson_distribution<long long>(std::exp(data.z[b]))(rng));
        break;
      case LikelihoodFamily::binomial:
        data.y_b[b] = static_cast<double>(std::binomial_distribution<long long>(
            static_cast<long long>(data.trials[b]), logistic(data.z[b]))(rng));
        break;
    }
  }
  if (s.likelihood != LikelihoodFamily::gaussian) {
    for (Index b = 0; b < nb; ++b)
      for (long long u = 0; u < static_cast<long long>(data.y_b[b]); ++u)
        data.units.push_back({b, static_cast<double>(b) + uniform01(rng), uniform01(rng)});
  }

  const Index dest_size = nb / s.n_dest;
  const Index source_size = nb / s.n_source;
  std::vector<Index> dest(static_cast<std::size_t>(nb)), source(static_cast<std::size_t>(nb));
  const Index shift = s.overlap == Overlap::misaligned ? std::max<Index>(dest_size / 2, 1) : 0;
  for (Index b = 0; b < nb; ++b) {
    dest[b] = b / dest_size;
    source[b] = ((b + shift) % nb) / source_size;
  }
  data.dest = AggregationMatrix::from_assignment(std::move(dest), s.n_dest);
  data.source = AggregationMatrix::from_assignment(std::move(source), s.n_source);
  data.y_s = aggregate(data.source, data.y_b);
  data.y_d = aggregate(data.dest, data.y_b);
  return data;
}

ReaggregationJob scenario_job(const SyntheticScenario& s, const ScenarioData& data, Method method,
                              const BenchmarkOptions& options) {
  ReaggregationJob job;
  job.y_s = data.y_s;
  job.covariates = data.covariates;
  job.source = data.source;
  job.dest = data.dest;
  job.likelihood = s.likelihood;
  if (s.likelihood == LikelihoodFamily::binomial) job.trials = data.trials;
  job.method = method;
  job.strategy = options.strategy;
  job.learning = options.learning;
  job.quantiles = options.quantiles;
  job.seed = s.seed;
  job.samples = options.samples;
  job.burn_in = options.burn_in;
  job.weight_column = 0;
  return job;
}

std::vector<BenchmarkRow> run_benchmark(const SyntheticScenario& s, const ScenarioData& data,
                                        const std::vector<Method>& methods,
                                        const BenchmarkOptions& options) {
  std::vector<BenchmarkRow> rows;
  for (Method m : methods) {
    const auto summary = reaggregate(scenario_job(s, data, m, options));
    BenchmarkRow row;
    row.scenario = s.name;
    row.method = to_string(m);
    row.r2 = r2(summary.expectation, data.y_d);
    row.rmse = rmse(summary.expectation, data.y_d);
    row.sse = sse(summary.expectation, data.y_d);
    if (summary.has_intervals) {
      row.nlp = nlp(summary.expectation, summary.sd, data.y_d).value;
      row.coverage = coverage(summary.lower, summary.upper, data.y_d);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace reagg
