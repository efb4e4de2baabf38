#include "reagg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "reagg/correspondence.hpp"
#include "reagg/error.hpp"
#include "reagg/kernels.hpp"

namespace reagg {

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> default_ids(Index n) {
  std::vector<std::string> ids;
  for (Index i = 0; i < n; ++i) ids.push_back(std::to_string(i));
  return ids;
}

LikelihoodKind likelihood_kind(const ReaggregationJob& job, double noise_variance) {
  switch (job.likelihood) {
    case LikelihoodFamily::gaussian: return GaussianLikelihood{noise_variance};
    case LikelihoodFamily::poisson: return PoissonLikelihood{};
    case LikelihoodFamily::binomial: return BinomialLikelihood{job.trials};
  }
  return PoissonLikelihood{};
}

// Keeps reported intervals ordered around the mean despite rounding.
void order_intervals(PredictiveSummary& s) {
  for (Index i = 0; i < s.expectation.size(); ++i) {
    s.lower[i] = std::min(s.lower[i], s.expectation[i]);
    s.upper[i] = std::max(s.upper[i], s.expectation[i]);
  }
}

}  // namespace

const char* to_string(Method m) { return m == Method::weighted ? "weighted" : "probabilistic"; }
const char* to_string(LearningMode m) { return m == LearningMode::map ? "map" : "bayes"; }

Method parse_method(const std::string& name) {
  if (name == "weighted") return Method::weighted;
  if (name == "probabilistic") return Method::probabilistic;
  throw ValidationError("unknown method '" + name + "' (expected weighted or probabilistic)");
}

LearningMode parse_learning(const std::string& name) {
  if (name == "map") return LearningMode::map;
  if (name == "bayes") return LearningMode::bayes;
  throw ValidationError("unknown learning mode '" + name + "' (expected map or bayes)");
}

LikelihoodFamily parse_likelihood(const std::string& name) {
  if (name == "gaussian") return LikelihoodFamily::gaussian;
  if (name == "poisson") return LikelihoodFamily::poisson;
  if (name == "binomial") return LikelihoodFamily::binomial;
  throw ValidationError("unknown likelihood '" + name + "' (expected gaussian, poisson or binomial)");
}

void QuantilePair::validate() const {
  auto ok = [](double q) { return q > 0.0 && q < 1.0 && q != 0.5; };
  if (!ok(lower) || !ok(upper) || !(lower < 0.5 && upper > 0.5)) {
    std::ostringstream msg;
    msg << "invalid quantile pair (" << lower << ", " << upper
        << "): need 0 < lower < 0.5 < upper < 1";
    throw ValidationError(msg.str());
  }
}

QuantilePair QuantilePair::parse(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ValidationError("quantiles must be given as 'lower,upper'");
  QuantilePair q;
  try {
    std::size_t used = 0;
    const std::string a = text.substr(0, comma);
    const std::string b = text.substr(comma + 1);
    q.lower = std::stod(a, &used);
    if (used != a.size()) throw std::invalid_argument(a);
    q.upper = std::stod(b, &used);
    if (used != b.size()) throw std::invalid_argument(b);
  } catch (const std::logic_error&) {
    throw ValidationError("quantiles '" + text + "' are not numbers");
  }
  q.validate();
  return q;
}

void ReaggregationJob::validate() const {
  quantiles.validate();
  const Index nb = source.n_base();
  if (nb == 0) throw ValidationError("job has no base regions");
  if (dest.n_base() != nb) {
    std::ostringstream msg;
    msg << "source map covers " << nb << " base regions but destination map covers " << dest.n_base();
    throw ValidationError(msg.str());
  }
  if (y_s.size() != source.n_groups()) {
    std::ostringstream msg;
    msg << y_s.size() << " source counts for " << source.n_groups() << " source regions";
    throw ValidationError(msg.str());
  }
  if (!y_s.allFinite()) throw ValidationError("source counts must be finite");
  if (covariates.rows() != nb && !(latent && method == Method::probabilistic)) {
    std::ostringstream msg;
    msg << "covariates have " << covariates.rows() << " rows for " << nb << " base regions";
    throw ValidationError(msg.str());
  }
  if (!covariates.allFinite()) throw ValidationError("covariates must be finite");
  if (!source_ids.empty() && static_cast<Index>(source_ids.size()) != source.n_groups())
    throw ValidationError("source id list does not match the source regions");
  if (!dest_ids.empty() && static_cast<Index>(dest_ids.size()) != dest.n_groups())
    throw ValidationError("destination id list does not match the destination regions");
  if (method == Method::weighted) {
    if (weight_column < 0 || weight_column >= covariates.cols())
      throw ValidationError("weight column " + std::to_string(weight_column) + " is out of range");
    return;
  }
  if (samples <= 0) throw ValidationError("samples must be positive");
  if (burn_in < 0) throw ValidationError("burn_in must be nonnegative");
  if (thinning <= 0) throw ValidationError("thinning must be positive");
  if (likelihood != LikelihoodFamily::gaussian) {
    for (Index i = 0; i < y_s.size(); ++i)
      if (y_s[i] < 0.0 || y_s[i] != std::floor(y_s[i]))
        throw ValidationError("source count " + std::to_string(i) +
                              " is not a nonnegative integer as the count likelihood requires");
  }
  if (likelihood == LikelihoodFamily::binomial && !latent && trials.size() != nb)
    throw ValidationError("binomial likelihood needs trials for every base region");
  if (latent) {
    if (family_of(*latent) != likelihood)
      throw ValidationError("latent override family does not match the likelihood");
    if (latent_size(*latent) != nb) throw ValidationError("latent override does not match the base regions");
    validate_latent(*latent);
  }
  const Strategy s = resolved_strategy();
  if ((s == Strategy::exact || s == Strategy::variational) && likelihood != LikelihoodFamily::gaussian)
    throw ValidationError(std::string("strategy '") + to_string(s) + "' needs a Gaussian likelihood");
}

Strategy ReaggregationJob::resolved_strategy() const {
  if (strategy) return *strategy;
  return likelihood == LikelihoodFamily::gaussian ? Strategy::exact : Strategy::mcmc;
}

PredictiveSummary summarize_gaussian(const GaussianMoments& m, const QuantilePair& q,
                                     bool clip_at_zero) {
  q.validate();
  const Index n = m.mean.size();
  PredictiveSummary s;
  s.expectation = m.mean;
  s.sd = m.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  const boost::math::normal standard;
  const double zl = boost::math::quantile(standard, q.lower);
  const double zu = boost::math::quantile(standard, q.upper);
  s.lower = s.expectation + zl * s.sd;
  s.upper = s.expectation + zu * s.sd;
  if (clip_at_zero) s.lower = s.lower.cwiseMax(0.0);
  order_intervals(s);
  s.dest_ids = default_ids(n);
  return s;
}

PredictiveSummary summarize_samples(const Eigen::MatrixXd& base_samples, const AggregationMatrix& dest,
                                    const QuantilePair& q, bool clip_at_zero) {
  q.validate();
  if (base_samples.cols() != dest.n_base())
    throw ValidationError("samples do not match the destination base regions");
  if (base_samples.rows() == 0) throw ValidationError("no samples to summarise");
  const Eigen::MatrixXd agg = kernels::aggregate_samples_parallel(base_samples, dest.members());
  PredictiveSummary s;
  const Index n = agg.rows();
  s.expectation = agg.colwise().mean().transpose();
  const double denom = std::max<double>(static_cast<double>(n) - 1.0, 1.0);
  s.sd = ((agg.rowwise() - s.expectation.transpose()).array().square().colwise().sum() / denom)
             .sqrt()
             .transpose();
  s.lower = kernels::column_quantiles_parallel(agg, q.lower);
  s.upper = kernels::column_quantiles_parallel(agg, q.upper);
  if (clip_at_zero) s.lower = s.lower.cwiseMax(0.0);
  order_intervals(s);
  if (n < 100)
    s.warnings.push_back("only " + std::to_string(n) + " samples; quantiles are unreliable below 100");
  s.dest_ids = default_ids(dest.n_groups());
  return s;
}

PredictiveSummary summarize(const ConditionedPosterior& posterior, const AggregationMatrix& dest,
                            const QuantilePair& q, bool clip_at_zero) {
  if (posterior.gaussian) return summarize_gaussian(posterior.aggregate_moments(dest), q, clip_at_zero);
  return summarize_samples(posterior.samples, dest, q, clip_at_zero);
}

nlohmann::json to_json(const ConditioningDiagnostics& d) {
  nlohmann::json j;
  j["strategy"] = to_string(d.strategy);
  auto put = [&j](const char* key, double v) {
    if (std::isfinite(v)) j[key] = v;
  };
  put("acceptance_rate", d.acceptance_rate);
  if (d.blocks > 0) {
    j["chains"] = d.blocks;
    j["chains_outside_acceptance_band"] = d.blocks_outside_band;
  }
  put("split_mean_discrepancy", d.split_mean_discrepancy);
  put("clipping_rate", d.clipping_rate);
  put("fallback_rate", d.fallback_rate);
  put("infeasible_mass", d.infeasible_mass);
  if (d.strategy == Strategy::variational) {
    j["barrier_active"] = d.barrier_active;
    j["iterations"] = d.iterations;
    j["elbo_trace"] = d.elbo_trace;
  }
  j["warnings"] = d.warnings;
  return j;
}

nlohmann::json to_json(const LinearModel& m) {
  nlohmann::json j;
  j["family"] = to_string(m.family);
  j["link"] = to_string(m.link);
  j["weights"] = std::vector<double>(m.weight_mean.data(), m.weight_mean.data() + m.weight_mean.size());
  j["prior_precision"] = m.prior_precision;
  if (std::isfinite(m.noise_variance)) j["noise_variance"] = m.noise_variance;
  if (std::isfinite(m.log_evidence)) j["log_evidence"] = m.log_evidence;
  j["intercept"] = m.standardization.intercept;
  const auto& st = m.standardization;
  j["feature_mean"] = std::vector<double>(st.mean.data(), st.mean.data() + st.mean.size());
  j["feature_scale"] = std::vector<double>(st.scale.data(), st.scale.data() + st.scale.size());
  if (m.has_posterior()) {
    const Eigen::VectorXd sd = m.weight_cov.diagonal().cwiseSqrt();
    j["weight_sd"] = std::vector<double>(sd.data(), sd.data() + sd.size());
  }
  return j;
}

LearnedLatent learn_latent(const ReaggregationJob& job) {
  LearnedLatent out;
  const auto kind = likelihood_kind(job, 1.0);
  if (job.learning == LearningMode::bayes) {
    out.model = fit_bayes(job.covariates, job.y_s, job.source, kind, job.fit);
  } else {
    out.model = fit_map(job.covariates, job.y_s, job.source, kind, job.map_lambda, job.fit);
  }
  if (job.likelihood == LikelihoodFamily::binomial)
    out.latent = predict_latent(out.model, job.covariates, job.trials);
  else
    out.latent = predict_latent(out.model, job.covariates);
  return out;
}

PredictiveSummary reaggregate_probabilistic(const ReaggregationJob& job) {
  job.validate();
  nlohmann::json meta;
  meta["method"] = "probabilistic";
  meta["likelihood"] = to_string(job.likelihood);
  const Strategy strategy = job.resolved_strategy();
  meta["strategy"] = to_string(strategy);
  meta["seed"] = job.seed;
  meta["quantiles"] = {job.quantiles.lower, job.quantiles.upper};
  std::vector<std::string> warnings;

  LatentDistribution latent;
  if (job.latent) {
    latent = *job.latent;
    meta["learning"] = "fixed";
  } else {
    meta["learning"] = to_string(job.learning);
    auto learned = learn_latent(job);
    latent = std::move(learned.latent);
    meta["model"] = to_json(learned.model);
  }

  const Index folds = job.diagnostic_folds;
  if (job.latent || job.covariates.rows() != job.source.n_base()) {
    meta["dependence"] = {{"skipped", "latent supplied directly"}};
  } else if (job.source.n_groups() < 2 * folds) {
    meta["dependence"] = {{"skipped", "fewer than " + std::to_string(2 * folds) + " source regions"}};
  } else {
    const auto d = dependence_diagnostic(job.covariates, job.y_s, job.source, static_cast<int>(folds));
    meta["dependence"] = {{"score", d.score}, {"folds", d.folds}, {"held_out", d.held_out}, {"weak", d.weak}};
    if (d.weak)
      warnings.push_back("weak covariate dependence: held-out density gain " + std::to_string(d.score) +
                         " <= 0; the weighted method may be as good");
  }

  const bool count = job.likelihood != LikelihoodFamily::gaussian;
  const bool nonnegative = job.nonnegative.value_or(count);
  const NullSpaceFrame frame(job.source, job.y_s);
  meta["free_dimensions"] = frame.n_free();
  ConditionedPosterior post;
  switch (strategy) {
    case Strategy::exact:
      post = condition_exact(std::get<GaussianLatent>(latent), frame);
      break;
    case Strategy::variational: {
      VariationalConfig cfg;
      cfg.nonnegative = nonnegative;
      post = condition_variational(latent, frame, cfg);
      break;
    }
    case Strategy::projection:
      post = condition_projection(latent, frame, job.samples, job.seed, nonnegative);
      break;
    case Strategy::mcmc: {
      McmcConfig cfg;
      cfg.n_samples = job.samples;
      cfg.burn_in = job.burn_in;
      cfg.thinning = job.thinning;
      cfg.seed = job.seed;
      cfg.nonnegative = nonnegative;
      post = condition_mcmc(latent, likelihood_kind(job, 1.0), frame, cfg);
      break;
    }
  }
  if (!post.gaussian) meta["samples"] = post.n_samples();
  meta["conditioning"] = to_json(post.diagnostics);
  warnings.insert(warnings.end(), post.diagnostics.warnings.begin(), post.diagnostics.warnings.end());

  PredictiveSummary s = summarize(post, job.dest, job.quantiles, count);
  warnings.insert(warnings.end(), s.warnings.begin(), s.warnings.end());
  s.warnings = std::move(warnings);
  s.dest_ids = job.dest_ids.empty() ? default_ids(job.dest.n_groups()) : job.dest_ids;
  meta["warnings"] = s.warnings;
  s.metadata = std::move(meta);
  return s;
}

PredictiveSummary reaggregate_weighted(const ReaggregationJob& job) {
  job.validate();
  Eigen::VectorXd unit = Eigen::VectorXd::Zero(job.covariates.cols());
  unit[job.weight_column] = 1.0;
  const auto feature = weighted_feature(job.covariates, unit);
  const SparseMatrix C = build_correspondence(job.dest, job.source, feature.values, job.source_ids);
  PredictiveSummary s;
  s.expectation = apply_correspondence(C, job.y_s);
  const Index n = s.expectation.size();
  s.lower = Eigen::VectorXd::Constant(n, nan);
  s.upper = Eigen::VectorXd::Constant(n, nan);
  s.sd = Eigen::VectorXd::Constant(n, nan);
  s.has_intervals = false;
  s.dest_ids = job.dest_ids.empty() ? default_ids(job.dest.n_groups()) : job.dest_ids;
  if (feature.clipped > 0)
    s.warnings.push_back(std::to_string(feature.clipped) + " negative weights clipped to zero");
  s.metadata["method"] = "weighted";
  s.metadata["weight_column"] = job.weight_column;
  s.metadata["warnings"] = s.warnings;
  return s;
}

PredictiveSummary reaggregate(const ReaggregationJob& job) {
  return job.method == Method::weighted ? reaggregate_weighted(job) : reaggregate_probabilistic(job);
}

}  // namespace reagg
