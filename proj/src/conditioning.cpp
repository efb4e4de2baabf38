#include "reagg/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "reagg/error.hpp"
#include "reagg/numeric.hpp"

namespace reagg {

namespace {

using Rng = std::mt19937_64;

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

void check_frame(const LatentDistribution& latent, const NullSpaceFrame& frame) {
  validate_latent(latent);
  if (latent_size(latent) != frame.n_base()) {
    std::ostringstream msg;
    msg << "latent has " << latent_size(latent) << " base regions, frame has " << frame.n_base();
    throw ValidationError(msg.str());
  }
}

bool is_count(LikelihoodFamily f) { return f != LikelihoodFamily::gaussian; }

// Per-base log density of a separable latent at a continuous value.
class SeparableTarget {
 public:
  explicit SeparableTarget(const LatentDistribution& latent) : family_(family_of(latent)) {
    switch (family_) {
      case LikelihoodFamily::gaussian: {
        const auto& g = std::get<GaussianLatent>(latent);
        a_ = g.mean;
        b_ = g.noise;
        for (Index i = 0; i < b_.size(); ++i)
          if (!(b_[i] > 0.0)) throw ValidationError("Gaussian latent variance must be positive for sampling");
        break;
      }
      case LikelihoodFamily::poisson:
        a_ = std::get<PoissonLatent>(latent).rates;
        break;
      case LikelihoodFamily::binomial: {
        const auto& b = std::get<BinomialLatent>(latent);
        a_ = b.trials;
        b_ = b.probabilities;
        break;
      }
    }
  }

  double operator()(Index i, double y) const {
    constexpr double ninf = -std::numeric_limits<double>::infinity();
    switch (family_) {
      case LikelihoodFamily::gaussian: {
        const double r = y - a_[i];
        return -0.5 * r * r / b_[i];
      }
      case LikelihoodFamily::poisson: {
        if (y < 0.0) return ninf;
        const double r = a_[i];
        if (r <= 0.0) return y == 0.0 ? 0.0 : ninf;
        return (y > 0.0 ? y * std::log(r) : 0.0) - r - log_factorial(y);
      }
      case LikelihoodFamily::binomial: {
        const double n = a_[i];
        const double p = b_[i];
        if (y < 0.0 || y > n) return ninf;
        double l = log_choose(n, y);
        if (y > 0.0) {
          if (p <= 0.0) return ninf;
          l += y * std::log(p);
        }
        if (n - y > 0.0) {
          if (p >= 1.0) return ninf;
          l += (n - y) * std::log1p(-p);
        }
        return l;
      }
    }
    return ninf;
  }

  // Rough per-coordinate spread used to seed the proposal scale.
  double spread(Index i) const {
    switch (family_) {
      case LikelihoodFamily::gaussian: return std::sqrt(b_[i]);
      case LikelihoodFamily::poisson: return std::sqrt(std::max(a_[i], 1.0));
      case LikelihoodFamily::binomial:
        return std::sqrt(std::max(a_[i] * b_[i] * (1.0 - b_[i]), 0.25));
    }
    return 1.0;
  }

 private:
  LikelihoodFamily family_;
  Eigen::VectorXd a_;
  Eigen::VectorXd b_;
};

struct ChainResult {
  Index accepted = 0;
  Index proposed = 0;
  double scale = 0.0;
};

constexpr Index kTuneEvery = 50;

double tune(double scale, Index accepted, Index proposed) {
  const double rate = static_cast<double>(accepted) / static_cast<double>(proposed);
  if (rate < 0.234) return scale * 0.8;
  if (rate > 0.44) return scale * 1.25;
  return scale;
}

// One chain over a single aggregation group.
ChainResult run_block(const SeparableTarget& target, const LatentDistribution& latent,
                      const NullSpaceFrame::Block& block, double total, const McmcConfig& cfg,
                      bool nonnegative, std::uint64_t stream, Eigen::MatrixXd& samples) {
  const Index k = block.size() + 1;
  const auto& base = block.base;
  const Index dim = k - 1;
  const auto family = family_of(latent);

  // Start point strictly inside the support where possible.
  std::vector<double> y(static_cast<std::size_t>(k));
  double weight_sum = 0.0;
  std::vector<double> weight(static_cast<std::size_t>(k), 1.0);
  if (family == LikelihoodFamily::poisson) {
    for (Index i = 0; i < k; ++i) weight[i] = std::get<PoissonLatent>(latent).rates[base[i]];
  } else if (family == LikelihoodFamily::binomial) {
    for (Index i = 0; i < k; ++i) weight[i] = std::get<BinomialLatent>(latent).trials[base[i]];
  }
  for (double w : weight) weight_sum += w;
  for (Index i = 0; i < k; ++i)
    y[i] = weight_sum > 0.0 ? total * weight[i] / weight_sum : total / static_cast<double>(k);
  const double mean_level = total / static_cast<double>(k);

  std::vector<double> v(static_cast<std::size_t>(dim)), v_new(v.size()), y_new(y.size());
  {
    std::vector<double> centred(y.size());
    for (Index i = 0; i < k; ++i) centred[i] = y[i] - mean_level;
    helmert_coordinates(centred.data(), k, v.data());
  }
  auto log_density = [&](const std::vector<double>& pt) {
    double s = 0.0;
    for (Index i = 0; i < k; ++i) s += target(base[i], pt[i]);
    return s;
  };
  double lp = log_density(y);

  double scale = cfg.proposal_scale.value_or(0.0);
  if (!cfg.proposal_scale) {
    double spread = 0.0;
    for (Index i = 0; i < k; ++i) spread += target.spread(base[i]);
    scale = 2.38 / std::sqrt(static_cast<double>(dim)) * spread / static_cast<double>(k);
  }

  Rng rng = make_rng(cfg.seed, stream);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  ChainResult result;
  Index batch_accepted = 0;
  const Index total_iter = cfg.burn_in + cfg.n_samples * cfg.thinning;
  Index row = 0;
  for (Index it = 0; it < total_iter; ++it) {
    for (Index j = 0; j < dim; ++j) v_new[j] = v[j] + scale * normal(rng);
    std::fill(y_new.begin(), y_new.end(), mean_level);
    helmert_embed_add(v_new.data(), k, y_new.data());
    bool feasible = true;
    if (nonnegative)
      for (double val : y_new)
        if (val < 0.0) feasible = false;
    const double u = uniform(rng);
    bool accept = false;
    if (feasible) {
      const double lp_new = log_density(y_new);
      if (std::isfinite(lp_new) && std::log(u) < lp_new - lp) {
        accept = true;
        lp = lp_new;
        v.swap(v_new);
        y.swap(y_new);
      }
    }
    if (it < cfg.burn_in) {
      if (accept) ++batch_accepted;
      if (!cfg.proposal_scale && (it + 1) % kTuneEvery == 0) {
        scale = tune(scale, batch_accepted, kTuneEvery);
        batch_accepted = 0;
      }
      continue;
    }
    ++result.proposed;
    if (accept) ++result.accepted;
    if ((it - cfg.burn_in) % cfg.thinning == cfg.thinning - 1) {
      for (Index i = 0; i < k; ++i) samples(row, base[i]) = y[i];
      ++row;
    }
  }
  result.scale = scale;
  return result;
}

// Single joint chain for a non-separable Gaussian latent.
ChainResult run_joint(const FrameQuadratic& fq, const NullSpaceFrame& frame, const McmcConfig& cfg,
                      Eigen::MatrixXd& samples) {
  const Index nf = frame.n_free();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(nf);
  auto log_density = [&](const Eigen::VectorXd& x) {
    return -0.5 * x.dot(fq.precision * x) + fq.linear.dot(x);
  };
  double lp = log_density(v);
  double scale = cfg.proposal_scale.value_or(
      2.38 / std::sqrt(static_cast<double>(nf)) /
      std::sqrt(fq.precision.diagonal().mean()));
  Rng rng = make_rng(cfg.seed, 0);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  ChainResult result;
  Index batch_accepted = 0;
  const Index total_iter = cfg.burn_in + cfg.n_samples * cfg.thinning;
  Eigen::VectorXd v_new(nf);
  Eigen::VectorXd y = frame.point(v);
  Index row = 0;
  for (Index it = 0; it < total_iter; ++it) {
    for (Index j = 0; j < nf; ++j) v_new[j] = v[j] + scale * normal(rng);
    const double u = uniform(rng);
    bool accept = false;
    Eigen::VectorXd y_new = frame.point(v_new);
    if (!cfg.nonnegative || y_new.minCoeff() >= 0.0) {
      const double lp_new = log_density(v_new);
      if (std::log(u) < lp_new - lp) {
        accept = true;
        lp = lp_new;
        v = v_new;
        y = std::move(y_new);
      }
    }
    if (it < cfg.burn_in) {
      if (accept) ++batch_accepted;
      if (!cfg.proposal_scale && (it + 1) % kTuneEvery == 0) {
        scale = tune(scale, batch_accepted, kTuneEvery);
        batch_accepted = 0;
      }
      continue;
    }
    ++result.proposed;
    if (accept) ++result.accepted;
    if ((it - cfg.burn_in) % cfg.thinning == cfg.thinning - 1) samples.row(row++) = y.transpose();
  }
  result.scale = scale;
  return result;
}

double split_mean_discrepancy(const Eigen::MatrixXd& samples) {
  const Index n = samples.rows();
  if (n < 4) return std::numeric_limits<double>::quiet_NaN();
  const Index h = n / 2;
  double worst = 0.0;
  for (Index c = 0; c < samples.cols(); ++c) {
    const auto col = samples.col(c);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().mean());
    if (sd <= 1e-12 * (1.0 + std::abs(mean))) continue;
    const double d = std::abs(col.head(h).mean() - col.tail(n - h).mean()) / sd;
    worst = std::max(worst, d);
  }
  return worst;
}

ConditionedPosterior mcmc_impl(const LatentDistribution& latent, const LikelihoodKind& kind,
                               const NullSpaceFrame& frame, const McmcConfig& cfg, bool parallel) {
  cfg.validate();
  check_frame(latent, frame);
  const auto family = family_of(latent);
  if (family_of(kind) != family)
    throw ValidationError(std::string("likelihood '") + to_string(family_of(kind)) +
                          "' does not match the latent family '" + to_string(family) + "'");
  const bool nonnegative = cfg.nonnegative || is_count(family);
  const Eigen::VectorXd& ybar = frame.particular();
  if (nonnegative && frame.observed().size() > 0 && frame.observed().minCoeff() < 0.0)
    throw ValidationError("negative observed totals are infeasible under the positivity constraint");

  ConditionedPosterior post;
  post.frame = frame;
  post.diagnostics.strategy = Strategy::mcmc;
  if (frame.n_free() == 0) {
    post.samples = ybar.transpose();
    post.diagnostics.acceptance_rate = 1.0;
    return post;
  }
  post.samples.resize(cfg.n_samples, frame.n_base());
  for (Index b = 0; b < frame.n_base(); ++b) post.samples.col(b).setConstant(ybar[b]);

  const bool separable =
      family != LikelihoodFamily::gaussian || std::get<GaussianLatent>(latent).separable();
  Index accepted = 0;
  Index proposed = 0;
  if (separable) {
    const SeparableTarget target(latent);
    const auto& blocks = frame.blocks();
    const auto n_blocks = static_cast<std::int64_t>(blocks.size());
    std::vector<ChainResult> results(blocks.size());
    std::vector<char> active(blocks.size(), 1);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const double total = frame.observed()[blocks[i].group];
      // Positivity pins a zero total (and a full Binomial total) to one point.
      bool pinned = nonnegative && total == 0.0;
      if (family == LikelihoodFamily::binomial) {
        double n = 0.0;
        for (Index b : blocks[i].base) n += std::get<BinomialLatent>(latent).trials[b];
        if (total > n) throw ValidationError("binomial total exceeds the trials of its group");
        if (total == n) {
          pinned = true;
          for (Index b : blocks[i].base)
            post.samples.col(b).setConstant(std::get<BinomialLatent>(latent).trials[b]);
        }
      }
      if (pinned) active[i] = 0;
    }
#pragma omp parallel for schedule(dynamic, 1) if (parallel)
    for (std::int64_t i = 0; i < n_blocks; ++i) {
      if (!active[i]) continue;
      results[i] = run_block(target, latent, blocks[i], frame.observed()[blocks[i].group], cfg,
                             nonnegative, static_cast<std::uint64_t>(i), post.samples);
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (!active[i]) continue;
      ++post.diagnostics.blocks;
      accepted += results[i].accepted;
      proposed += results[i].proposed;
      const double rate = static_cast<double>(results[i].accepted) /
                          static_cast<double>(std::max<Index>(results[i].proposed, 1));
      if (rate < 0.05 || rate > 0.95) ++post.diagnostics.blocks_outside_band;
    }
  } else {
    McmcConfig joint = cfg;
    joint.nonnegative = nonnegative;
    const auto result =
        run_joint(frame_quadratic(std::get<GaussianLatent>(latent), frame), frame, joint, post.samples);
    post.diagnostics.blocks = 1;
    accepted = result.accepted;
    proposed = result.proposed;
    const double rate = static_cast<double>(accepted) / static_cast<double>(std::max<Index>(proposed, 1));
    if (rate < 0.05 || rate > 0.95) post.diagnostics.blocks_outside_band = 1;
  }
  post.diagnostics.acceptance_rate =
      proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed) : 1.0;
  post.diagnostics.split_mean_discrepancy = split_mean_discrepancy(post.samples);
  const double rate = post.diagnostics.acceptance_rate;
  if (rate < 0.05 || rate > 0.95) {
    std::ostringstream msg;
    msg << "MCMC acceptance rate " << rate << " outside [0.05, 0.95]";
    post.diagnostics.warnings.push_back(msg.str());
  }
  if (post.diagnostics.blocks_outside_band > 0) {
    std::ostringstream msg;
    msg << post.diagnostics.blocks_outside_band << " of " << post.diagnostics.blocks
        << " chains have acceptance outside [0.05, 0.95]";
    post.diagnostics.warnings.push_back(msg.str());
  }
  if (nonnegative) post.samples = post.samples.cwiseMax(0.0);
  return post;
}

// Draws from the unconditioned latent model.
class LatentSampler {
 public:
  explicit LatentSampler(const LatentDistribution& latent) : latent_(latent) {
    if (const auto* g = std::get_if<GaussianLatent>(&latent)) {
      for (Index i = 0; i < g->noise.size(); ++i)
        if (!(g->noise[i] >= 0.0)) throw ValidationError("Gaussian latent variance must be nonnegative");
      if (g->factor.cols() > 0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g->factor_cov);
        const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        loading_ = g->factor * eig.eigenvectors() * root.asDiagonal();
      }
      noise_sd_ = g->noise.cwiseSqrt();
    }
  }

  Eigen::VectorXd draw(Rng& rng) const {
    std::normal_distribution<double> normal;
    switch (family_of(latent_)) {
      case LikelihoodFamily::gaussian: {
        const auto& g = std::get<GaussianLatent>(latent_);
        Eigen::VectorXd y = g.mean;
        if (loading_.cols() > 0) {
          Eigen::VectorXd z(loading_.cols());
          for (Index j = 0; j < z.size(); ++j) z[j] = normal(rng);
          y += loading_ * z;
        }
        for (Index i = 0; i < y.size(); ++i) y[i] += noise_sd_[i] * normal(rng);
        return y;
      }
      case LikelihoodFamily::poisson: {
        const auto& r = std::get<PoissonLatent>(latent_).rates;
        Eigen::VectorXd y(r.size());
        for (Index i = 0; i < r.size(); ++i) {
          if (r[i] > 0.0) y[i] = static_cast<double>(std::poisson_distribution<long long>(r[i])(rng));
          else y[i] = 0.0;
        }
        return y;
      }
      case LikelihoodFamily::binomial: {
        const auto& b = std::get<BinomialLatent>(latent_);
        Eigen::VectorXd y(b.trials.size());
        for (Index i = 0; i < y.size(); ++i)
          y[i] = static_cast<double>(std::binomial_distribution<long long>(
              static_cast<long long>(b.trials[i]), std::clamp(b.probabilities[i], 0.0, 1.0))(rng));
        return y;
      }
    }
    return {};
  }

 private:
  const LatentDistribution& latent_;
  Eigen::MatrixXd loading_;
  Eigen::VectorXd noise_sd_;
};

// Gauss-Hermite rule (Golub-Welsch) for expectations under N(0, 1).
struct HermiteRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;

  explicit HermiteRule(int n) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(i / 2.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
    nodes = eig.eigenvalues() * std::sqrt(2.0);
    weights = eig.eigenvectors().row(0).array().square();
  }
};

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Eigen::VectorXd base_variances(const SparseMatrix& N, const Eigen::MatrixXd& C) {
  const Eigen::MatrixXd NC = N * C;
  Eigen::VectorXd out(N.rows());
  const Eigen::MatrixXd Nd = N;
  for (Index b = 0; b < N.rows(); ++b) out[b] = NC.row(b).dot(Nd.row(b));
  return out.cwiseMax(0.0);
}

}  // namespace

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::exact: return "exact";
    case Strategy::mcmc: return "mcmc";
    case Strategy::variational: return "variational";
    case Strategy::projection: return "projection";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "exact") return Strategy::exact;
  if (name == "mcmc") return Strategy::mcmc;
  if (name == "variational") return Strategy::variational;
  if (name == "projection") return Strategy::projection;
  throw ValidationError("unknown strategy '" + name + "' (expected exact, mcmc, variational or projection)");
}

void McmcConfig::validate() const {
  if (n_samples <= 0) throw ValidationError("n_samples must be positive");
  if (burn_in < 0) throw ValidationError("burn_in must be nonnegative");
  if (thinning <= 0) throw ValidationError("thinning must be positive");
  if (proposal_scale && !(*proposal_scale > 0.0)) throw ValidationError("proposal scale must be positive");
}

Eigen::VectorXd ConditionedPosterior::base_mean() const {
  if (gaussian) return frame.point(q_mean);
  return samples.colwise().mean().transpose();
}

Eigen::VectorXd ConditionedPosterior::base_variance() const {
  if (gaussian) {
    if (frame.n_free() == 0) return Eigen::VectorXd::Zero(frame.n_base());
    return base_variances(frame.basis(), q_cov);
  }
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const double denom = std::max<double>(static_cast<double>(samples.rows()) - 1.0, 1.0);
  return ((samples.rowwise() - mean).array().square().colwise().sum() / denom).transpose();
}

GaussianMoments ConditionedPosterior::aggregate_moments(const AggregationMatrix& dest) const {
  if (!gaussian) throw ValidationError("aggregate_moments needs a Gaussian posterior");
  if (dest.n_base() != frame.n_base()) throw ValidationError("destination does not match the base geometry");
  GaussianMoments out;
  out.mean = aggregate(dest, base_mean());
  if (frame.n_free() == 0) {
    out.cov = Eigen::MatrixXd::Zero(dest.n_groups(), dest.n_groups());
    return out;
  }
  const SparseMatrix M = dest.sparse() * frame.basis();
  const Eigen::MatrixXd MQ = M * q_cov;
  out.cov = MQ * M.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

FrameQuadratic frame_quadratic(const GaussianLatent& latent, const NullSpaceFrame& frame) {
  if (latent.size() != frame.n_base()) throw ValidationError("latent does not match the frame");
  const SparseMatrix N = frame.basis();
  const Eigen::VectorXd r = latent.mean - frame.particular();
  FrameQuadratic fq;
  if (latent.noise.size() == latent.size() && latent.noise.minCoeff() > 0.0) {
    const Eigen::VectorXd dinv = latent.noise.cwiseInverse();
    const SparseMatrix DN = dinv.asDiagonal() * N;
    fq.precision = Eigen::MatrixXd(SparseMatrix(N.transpose() * DN));
    fq.linear = DN.transpose() * r;
    if (latent.factor.cols() > 0) {
      const Index d = latent.factor.cols();
      const Eigen::MatrixXd U = DN.transpose() * latent.factor;
      const Eigen::MatrixXd M = latent.factor.transpose() * dinv.asDiagonal() * latent.factor;
      const Eigen::MatrixXd IMS = Eigen::MatrixXd::Identity(d, d) + M * latent.factor_cov;
      Eigen::MatrixXd K = latent.factor_cov * IMS.partialPivLu().inverse();
      K = 0.5 * (K + K.transpose());
      fq.precision -= U * K * U.transpose();
      fq.linear -= U * (K * (latent.factor.transpose() * dinv.cwiseProduct(r)));
    }
  } else {
    const Eigen::MatrixXd cov = latent.covariance();
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
      throw NumericalError("latent covariance is not positive definite");
    const Eigen::MatrixXd Nd = N;
    const Eigen::MatrixXd X = llt.solve(Nd);
    fq.precision = Nd.transpose() * X;
    fq.linear = X.transpose() * r;
  }
  fq.precision = 0.5 * (fq.precision + fq.precision.transpose());
  return fq;
}

ConditionedPosterior condition_exact(const GaussianLatent& latent, const NullSpaceFrame& frame) {
  ConditionedPosterior post;
  post.frame = frame;
  post.gaussian = true;
  post.diagnostics.strategy = Strategy::exact;
  const Index nf = frame.n_free();
  if (latent.size() != frame.n_base()) throw ValidationError("latent does not match the frame");
  if (nf == 0) {
    post.q_mean = Eigen::VectorXd(0);
    post.q_cov = Eigen::MatrixXd(0, 0);
    return post;
  }
  const auto fq = frame_quadratic(latent, frame);
  Eigen::LLT<Eigen::MatrixXd> llt(fq.precision);
  if (llt.info() != Eigen::Success)
    throw NumericalError("conditioned precision is not positive definite");
  post.q_cov = llt.solve(Eigen::MatrixXd::Identity(nf, nf));
  post.q_cov = 0.5 * (post.q_cov + post.q_cov.transpose());
  post.q_mean = llt.solve(fq.linear);
  return post;
}

GaussianMoments condition_gaussian_exact(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                         const Eigen::MatrixXd& A, const Eigen::VectorXd& y_s) {
  const Index n = mean.size();
  if (cov.rows() != n || cov.cols() != n || A.cols() != n || A.rows() != y_s.size())
    throw ValidationError("condition_gaussian_exact: dimension mismatch");
  const Eigen::MatrixXd SAt = cov * A.transpose();
  const Eigen::MatrixXd G = A * SAt;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(G);
  if (!lu.isInvertible()) throw NumericalError("A cov A^T is singular");
  GaussianMoments out;
  out.mean = mean + SAt * lu.solve(y_s - A * mean);
  out.cov = cov - SAt * lu.solve(SAt.transpose());
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

ConditionedPosterior condition_projection(const LatentDistribution& latent,
                                          const NullSpaceFrame& frame, Index n_samples,
                                          std::uint64_t seed, bool nonnegative) {
  if (n_samples <= 0) throw ValidationError("n_samples must be positive");
  check_frame(latent, frame);
  const auto family = family_of(latent);
  ConditionedPosterior post;
  post.frame = frame;
  post.diagnostics.strategy = Strategy::projection;
  if (family == LikelihoodFamily::poisson)
    post.diagnostics.warnings.push_back(
        "projection of Poisson draws is biased toward the particular solution; prefer mcmc");
  bool positivity = nonnegative || is_count(family);
  const Eigen::VectorXd& ybar = frame.particular();
  if (positivity && ybar.size() > 0 && ybar.minCoeff() < 0.0) {
    post.diagnostics.warnings.push_back("negative observed totals; positivity not enforced");
    positivity = false;
  }

  const LatentSampler sampler(latent);
  const Index n = frame.n_base();
  post.samples.resize(n_samples, n);
  std::vector<char> clipped(static_cast<std::size_t>(n_samples), 0);
  std::vector<char> fallback(static_cast<std::size_t>(n_samples), 0);
  const double tol = 1e-9 * (1.0 + (ybar.size() > 0 ? ybar.cwiseAbs().maxCoeff() : 0.0));
  const auto total = static_cast<std::int64_t>(n_samples);
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < total; ++s) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(s));
    Eigen::VectorXd y = frame.project(sampler.draw(rng));
    if (positivity && y.size() > 0 && y.minCoeff() < -tol) {
      clipped[s] = 1;
      for (int pass = 0; pass < 5 && y.minCoeff() < -tol; ++pass)
        y = frame.project(y.cwiseMax(0.0));
      if (y.minCoeff() < -tol) {
        // Shrink toward the particular solution, which is feasible and on the plane.
        double t = 1.0;
        for (Index b = 0; b < n; ++b)
          if (y[b] < 0.0) t = std::min(t, ybar[b] / (ybar[b] - y[b]));
        y = ybar + t * (y - ybar);
        fallback[s] = 1;
      }
      y = y.cwiseMax(0.0);
    }
    post.samples.row(s) = y.transpose();
  }
  auto rate = [&](const std::vector<char>& flags) {
    return static_cast<double>(std::count(flags.begin(), flags.end(), 1)) / static_cast<double>(n_samples);
  };
  post.diagnostics.clipping_rate = rate(clipped);
  post.diagnostics.fallback_rate = rate(fallback);
  if (post.diagnostics.fallback_rate > 0.0) {
    std::ostringstream msg;
    msg << "projection fell back to shrinkage on " << post.diagnostics.fallback_rate * 100.0
        << "% of samples";
    post.diagnostics.warnings.push_back(msg.str());
  }
  return post;
}

ConditionedPosterior condition_mcmc(const LatentDistribution& latent, const LikelihoodKind& kind,
                                    const NullSpaceFrame& frame, const McmcConfig& cfg) {
  return mcmc_impl(latent, kind, frame, cfg, true);
}

ConditionedPosterior condition_mcmc_serial(const LatentDistribution& latent,
                                           const LikelihoodKind& kind,
                                           const NullSpaceFrame& frame, const McmcConfig& cfg) {
  return mcmc_impl(latent, kind, frame, cfg, false);
}

ConditionedPosterior condition_variational(const LatentDistribution& latent,
                                           const NullSpaceFrame& frame,
                                           const VariationalConfig& cfg) {
  check_frame(latent, frame);
  if (family_of(latent) != LikelihoodFamily::gaussian)
    throw ValidationError(std::string("variational conditioning supports Gaussian latents only, got ") +
                          to_string(family_of(latent)));
  const auto& g = std::get<GaussianLatent>(latent);
  ConditionedPosterior post;
  post.frame = frame;
  post.gaussian = true;
  post.diagnostics.strategy = Strategy::variational;
  const Index nf = frame.n_free();
  if (nf == 0) {
    post.q_mean = Eigen::VectorXd(0);
    post.q_cov = Eigen::MatrixXd(0, 0);
    return post;
  }
  const bool full = nf <= cfg.full_covariance_limit;
  const auto fq = frame_quadratic(g, frame);
  const SparseMatrix N = frame.basis();
  const Index n = frame.n_base();
  const HermiteRule rule(20);
  const double beta = cfg.barrier_weight;
  const double tau = cfg.barrier_width;

  auto covariance_from = [&](const Eigen::MatrixXd& H) -> Eigen::MatrixXd {
    if (full) {
      Eigen::LLT<Eigen::MatrixXd> llt(H);
      if (llt.info() != Eigen::Success) throw NumericalError("variational precision is not positive definite");
      return llt.solve(Eigen::MatrixXd::Identity(nf, nf));
    }
    return H.diagonal().cwiseInverse().asDiagonal();
  };

  // Expected barrier value, slope and curvature per base region under Q.
  struct BarrierMoments {
    Eigen::VectorXd value, slope, curvature;
  };
  auto barrier_moments = [&](const Eigen::VectorXd& mu, const Eigen::VectorXd& var) {
    BarrierMoments m{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
    for (Index b = 0; b < n; ++b) {
      const double sd = std::sqrt(var[b]);
      for (Index q = 0; q < rule.nodes.size(); ++q) {
        const double y = mu[b] + sd * rule.nodes[q];
        const double w = rule.weights[q];
        const double s = logistic(-y / tau);
        m.value[b] += w * -beta * softplus(-y / tau);
        m.slope[b] += w * beta / tau * s;
        m.curvature[b] += w * -beta / (tau * tau) * s * (1.0 - s);
      }
    }
    return m;
  };

  auto elbo = [&](const Eigen::VectorXd& q, const Eigen::MatrixXd& C, bool barrier) {
    double val = -0.5 * (q.dot(fq.precision * q) + (fq.precision.cwiseProduct(C)).sum()) +
                 fq.linear.dot(q);
    if (barrier) val += barrier_moments(frame.point(q), base_variances(N, C)).value.sum();
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return val + 0.5 * (static_cast<double>(nf) * (1.0 + std::log(2.0 * M_PI)) + log_det);
  };

  auto infeasible_mass = [&](const Eigen::VectorXd& q, const Eigen::MatrixXd& C) {
    const Eigen::VectorXd mu = frame.point(q);
    const Eigen::VectorXd var = base_variances(N, C);
    double mass = 0.0;
    for (Index b = 0; b < n; ++b) {
      if (var[b] <= 0.0) {
        if (mu[b] < 0.0) mass += 1.0;
        continue;
      }
      mass += 0.5 * std::erfc(mu[b] / std::sqrt(2.0 * var[b]));
    }
    return std::min(mass, 1.0);
  };

  Eigen::VectorXd q = Eigen::VectorXd::Zero(nf);
  Eigen::MatrixXd C = covariance_from(fq.precision);
  bool barrier = false;
  bool converged = false;
  int iterations = 0;
  // Fixed point: C^{-1} = -E_Q[Hessian], mean by Newton on E_Q[log p].
  for (int round = 0; round < 2 && !converged; ++round) {
    converged = false;
    for (int it = 0; it < cfg.max_iterations; ++it, ++iterations) {
      Eigen::VectorXd grad = fq.linear - fq.precision * q;
      Eigen::MatrixXd H = fq.precision;
      if (barrier) {
        const auto m = barrier_moments(frame.point(q), base_variances(N, C));
        grad += N.transpose() * m.slope;
        const Eigen::VectorXd neg_curv = -m.curvature;
        H += Eigen::MatrixXd(SparseMatrix(N.transpose() * neg_curv.asDiagonal() * N));
      }
      Eigen::LLT<Eigen::MatrixXd> llt(H);
      if (llt.info() != Eigen::Success) throw NumericalError("variational precision is not positive definite");
      Eigen::VectorXd step = llt.solve(grad);
      if (barrier) {
        // The barrier makes the mean update nonlinear; backtrack on the ELBO.
        const double base = elbo(q, C, true);
        for (int ls = 0; ls < 30 && elbo(q + step, C, true) < base; ++ls) step *= 0.5;
      }
      q += step;
      Eigen::MatrixXd C_new = covariance_from(H);
      if (barrier && it > 0) C_new = 0.5 * (C_new + C);
      const double dc = (C_new - C).norm() / (1.0 + C.norm());
      C = C_new;
      post.diagnostics.elbo_trace.push_back(elbo(q, C, barrier));
      if (step.norm() <= cfg.tolerance * (1.0 + q.norm()) && dc <= cfg.tolerance) {
        converged = true;
        break;
      }
    }
    if (!converged)
      throw NumericalError("variational fixed point did not converge in " +
                           std::to_string(cfg.max_iterations) + " iterations");
    if (barrier || !cfg.nonnegative) break;
    post.diagnostics.infeasible_mass = infeasible_mass(q, C);
    if (post.diagnostics.infeasible_mass > cfg.infeasible_threshold) {
      barrier = true;
      converged = false;
      post.diagnostics.barrier_active = true;
      std::ostringstream msg;
      msg << "variational posterior puts " << post.diagnostics.infeasible_mass * 100.0
          << "% of its mass below zero; positivity barrier engaged";
      post.diagnostics.warnings.push_back(msg.str());
    }
  }
  post.diagnostics.iterations = iterations;
  post.q_mean = q;
  post.q_cov = 0.5 * (C + C.transpose());
  return post;
}

double batch_means_standard_error(const Eigen::VectorXd& chain, Index batches) {
  const Index n = chain.size();
  if (batches < 2 || n < 2 * batches) throw ValidationError("chain too short for batch means");
  const Index len = n / batches;
  Eigen::VectorXd means(batches);
  for (Index i = 0; i < batches; ++i) means[i] = chain.segment(i * len, len).mean();
  const double m = means.mean();
  const double var = (means.array() - m).square().sum() / static_cast<double>(batches - 1);
  return std::sqrt(var / static_cast<double>(batches));
}

}  // namespace reagg
