#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "reagg/conditioning.hpp"
#include "reagg/error.hpp"
#include "reagg/numeric.hpp"
#include "support.hpp"

using namespace reagg;

namespace {

AggregationMatrix toy() { return build_aggregation_matrix({0, 0}, 1); }
NullSpaceFrame toy_frame() { return NullSpaceFrame(toy(), Eigen::VectorXd::Constant(1, 100)); }
GaussianLatent toy_prior() { return GaussianLatent::diagonal(Eigen::Vector2d(50, 35), Eigen::Vector2d(200, 100)); }

Eigen::MatrixXd spd(std::mt19937_64& rng, Index n) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd L(n, n);
  for (Index i = 0; i < L.size(); ++i) L.data()[i] = z(rng);
  return L * L.transpose() / n + 0.5 * Eigen::MatrixXd::Identity(n, n);
}

Eigen::VectorXd column_mean(const Eigen::MatrixXd& s) { return s.colwise().mean().transpose(); }

// Mean and variance of y_1 over [lo, hi] on the line y_1 + y_2 = total, under
// a density known up to a constant, by the trapezoid rule.
template <class LogDensity>
std::pair<double, double> segment_moments(double lo, double hi, LogDensity&& logf, int n = 200000) {
  const double h = (hi - lo) / n;
  double z = 0, m1 = 0, m2 = 0, peak = -INFINITY;
  for (int i = 0; i <= n; ++i) peak = std::max(peak, logf(lo + i * h));
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    const double w = (i == 0 || i == n ? 0.5 : 1.0) * std::exp(logf(x) - peak);
    z += w;
    m1 += w * x;
    m2 += w * x * x;
  }
  const double mean = m1 / z;
  return {mean, m2 / z - mean * mean};
}

}  // namespace

TEST(Conditioning, DenseExactExamples) {
  const auto m = condition_gaussian_exact(Eigen::Vector2d(50, 35), Eigen::Vector2d(200, 100).asDiagonal().toDenseMatrix(),
                                          toy().dense(), Eigen::VectorXd::Constant(1, 100));
  EXPECT_NEAR(m.mean[0], 60.0, 1e-9);
  EXPECT_NEAR(m.mean[1], 40.0, 1e-9);
  EXPECT_NEAR(m.cov(0, 0), 200.0 / 3.0, 1e-9);
  EXPECT_NEAR(m.cov(0, 1), -200.0 / 3.0, 1e-9);

  const auto unit = condition_gaussian_exact(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity(), toy().dense(),
                                             Eigen::VectorXd::Zero(1));
  EXPECT_NEAR(unit.mean.norm(), 0.0, 1e-15);
  EXPECT_NEAR(unit.cov(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(unit.cov(0, 1), -0.5, 1e-15);

  const auto same = condition_gaussian_exact(Eigen::Vector2d(50, 35), Eigen::Matrix2d::Identity(), toy().dense(),
                                             Eigen::VectorXd::Constant(1, 85));
  EXPECT_NEAR((same.mean - Eigen::Vector2d(50, 35)).norm(), 0.0, 1e-12);
}

TEST(Conditioning, ToyMatchesGridIntegration) {
  const auto [mean, var] = segment_moments(-100.0, 200.0, [](double y1) {
    return std::log(fixture::normal_pdf(y1, 50, 200)) + std::log(fixture::normal_pdf(100 - y1, 35, 100));
  });
  EXPECT_NEAR(mean, 60.0, 1e-6);
  EXPECT_NEAR(var, 200.0 / 3.0, 1e-6);

  const auto post = condition_exact(toy_prior(), toy_frame());
  EXPECT_NEAR(post.base_mean()[0], 60.0, 1e-9);
  EXPECT_NEAR(post.base_mean()[1], 40.0, 1e-9);
  EXPECT_NEAR(post.base_variance()[0], 200.0 / 3.0, 1e-9);
  EXPECT_NEAR(post.base_variance()[1], 200.0 / 3.0, 1e-9);
}

TEST(Conditioning, ExactMatchesDenseOracleOnRandomProblems) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto A = fixture::random_aggregation(rng, 30, 6);
    const Eigen::VectorXd mean = Eigen::VectorXd::LinSpaced(30, 1, 30);
    const Eigen::VectorXd y_s = A.dense() * mean + Eigen::VectorXd::LinSpaced(6, -3, 3);
    const NullSpaceFrame frame(A, y_s);
    GaussianLatent latent;
    latent.mean = mean;
    std::normal_distribution<double> z;
    latent.factor = Eigen::MatrixXd(30, 3);
    for (Index i = 0; i < latent.factor.size(); ++i) latent.factor.data()[i] = z(rng);
    latent.factor_cov = spd(rng, 3);
    latent.noise = trial % 2 ? Eigen::VectorXd::Zero(30) : Eigen::VectorXd::Constant(30, 0.7);
    if (trial % 2) latent = GaussianLatent::dense(mean, latent.covariance() + 0.1 * Eigen::MatrixXd::Identity(30, 30));

    const auto oracle = condition_gaussian_exact(mean, latent.covariance(), A.dense(), y_s);
    const auto post = condition_exact(latent, frame);
    EXPECT_LE((post.base_mean() - oracle.mean).norm(), 1e-9 * oracle.mean.norm());
    EXPECT_LE((post.base_variance() - oracle.cov.diagonal()).norm(), 1e-9 * oracle.cov.diagonal().norm());

    const Eigen::MatrixXd N(frame.basis());
    const Eigen::MatrixXd Sinv = latent.covariance().inverse();
    const auto fq = frame_quadratic(latent, frame);
    EXPECT_LE((fq.precision - N.transpose() * Sinv * N).norm(), 1e-8 * fq.precision.norm());
    EXPECT_LE((fq.linear - N.transpose() * Sinv * (mean - frame.particular())).norm(), 1e-8 * (1 + fq.linear.norm()));

    VariationalConfig vc;
    vc.nonnegative = false;
    const auto var = condition_variational(latent, frame, vc);
    EXPECT_LE((var.base_mean() - oracle.mean).norm(), 1e-6 * oracle.mean.norm());
  }
}

TEST(Conditioning, McmcToyWithinMonteCarloError) {
  McmcConfig cfg;
  cfg.n_samples = 50000;
  cfg.burn_in = 2000;
  cfg.seed = 3;
  cfg.nonnegative = false;
  const auto post = condition_mcmc(toy_prior(), GaussianLikelihood{}, toy_frame(), cfg);
  ASSERT_EQ(post.samples.rows(), 50000);
  const Eigen::VectorXd y1 = post.samples.col(0);
  const double se = batch_means_standard_error(y1);
  EXPECT_NEAR(y1.mean(), 60.0, 3 * se);
  EXPECT_NEAR((post.samples.col(0) + post.samples.col(1)).cwiseAbs().maxCoeff(), 100.0, 1e-9);
  const double var = (y1.array() - y1.mean()).square().mean();
  EXPECT_NEAR(var, 200.0 / 3.0, 0.1 * 200.0 / 3.0);
  EXPECT_GT(post.diagnostics.acceptance_rate, 0.05);
  EXPECT_LT(post.diagnostics.acceptance_rate, 0.95);
}

TEST(Conditioning, McmcSymmetricAndDegenerateCases) {
  McmcConfig cfg;
  cfg.n_samples = 20000;
  cfg.seed = 1;
  const auto sym = condition_mcmc(GaussianLatent::diagonal(Eigen::Vector2d(50, 50), Eigen::Vector2d(25, 25)),
                                  GaussianLikelihood{}, toy_frame(), cfg);
  EXPECT_NEAR(sym.samples.col(0).mean(), 50.0, 3 * batch_means_standard_error(sym.samples.col(0)));

  const auto A = build_aggregation_matrix({0, 1}, 2);
  const NullSpaceFrame pinned(A, Eigen::Vector2d(3, 4));
  const auto point = condition_mcmc(PoissonLatent{Eigen::Vector2d(1, 1)}, PoissonLikelihood{}, pinned, cfg);
  for (Index r = 0; r < point.samples.rows(); ++r) EXPECT_EQ(point.samples.row(r), Eigen::RowVector2d(3, 4));
}

TEST(Conditioning, McmcPoissonMatchesRelaxedDensityOnSegment) {
  const double r1 = 2.0, r2 = 6.0, total = 12.0;
  const auto [mean, var] = segment_moments(0.0, total, [&](double y1) {
    const double y2 = total - y1;
    return y1 * std::log(r1) - log_gamma(y1 + 1) + y2 * std::log(r2) - log_gamma(y2 + 1);
  });
  McmcConfig cfg;
  cfg.n_samples = 40000;
  cfg.seed = 9;
  const auto post = condition_mcmc(PoissonLatent{Eigen::Vector2d(r1, r2)}, PoissonLikelihood{},
                                   NullSpaceFrame(toy(), Eigen::VectorXd::Constant(1, total)), cfg);
  const Eigen::VectorXd y1 = post.samples.col(0);
  EXPECT_NEAR(y1.mean(), mean, 3 * batch_means_standard_error(y1));
  EXPECT_GE(post.samples.minCoeff(), 0.0);
  const double v = (y1.array() - y1.mean()).square().mean();
  EXPECT_NEAR(v, var, 0.1 * var);
}

TEST(Conditioning, McmcBinomialRespectsTrials) {
  McmcConfig cfg;
  cfg.n_samples = 5000;
  cfg.seed = 4;
  const auto A = build_aggregation_matrix({0, 0, 0, 1, 1}, 2);
  const NullSpaceFrame frame(A, Eigen::Vector2d(12, 0));
  const BinomialLatent latent{Eigen::VectorXd::Constant(5, 5), Eigen::VectorXd::Constant(5, 0.4)};
  const auto post = condition_mcmc(latent, BinomialLikelihood{latent.trials}, frame, cfg);
  EXPECT_GE(post.samples.minCoeff(), 0.0);
  EXPECT_LE(post.samples.leftCols(3).maxCoeff(), 5.0);
  EXPECT_EQ(post.samples.rightCols(2).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(post.samples.leftCols(3).rowwise().sum().maxCoeff(), 12.0, 1e-9);
  EXPECT_THROW(condition_mcmc(latent, BinomialLikelihood{latent.trials}, NullSpaceFrame(A, Eigen::Vector2d(16, 0)), cfg),
               ValidationError);
}

TEST(Conditioning, McmcSerialAndParallelAreBitIdentical) {
  std::mt19937_64 rng(6);
  const auto A = fixture::random_aggregation(rng, 120, 20);
  const Eigen::VectorXd rates = Eigen::VectorXd::LinSpaced(120, 0.5, 8.0);
  Eigen::VectorXd y(120);
  for (Index i = 0; i < 120; ++i) y[i] = std::poisson_distribution<int>(rates[i])(rng);
  const NullSpaceFrame frame(A, A.dense() * y);
  McmcConfig cfg;
  cfg.n_samples = 500;
  cfg.burn_in = 200;
  cfg.seed = 99;
  const auto a = condition_mcmc(PoissonLatent{rates}, PoissonLikelihood{}, frame, cfg);
  const auto b = condition_mcmc_serial(PoissonLatent{rates}, PoissonLikelihood{}, frame, cfg);
  EXPECT_TRUE(a.samples == b.samples);
  EXPECT_EQ(a.diagnostics.acceptance_rate, b.diagnostics.acceptance_rate);
  const auto c = condition_mcmc(PoissonLatent{rates}, PoissonLikelihood{}, frame, cfg);
  EXPECT_TRUE(a.samples == c.samples);
}

TEST(Conditioning, McmcJointChainForCorrelatedLatent) {
  std::mt19937_64 rng(8);
  const auto A = build_aggregation_matrix({0, 0, 0, 1, 1, 1}, 2);
  const Eigen::MatrixXd cov = spd(rng, 6) * 10.0;
  const Eigen::VectorXd mean = Eigen::VectorXd::Constant(6, 20);
  const Eigen::Vector2d y_s(50, 70);
  const auto oracle = condition_gaussian_exact(mean, cov, A.dense(), y_s);
  McmcConfig cfg;
  cfg.n_samples = 40000;
  cfg.seed = 2;
  cfg.nonnegative = false;
  const auto post = condition_mcmc(GaussianLatent::dense(mean, cov), GaussianLikelihood{}, NullSpaceFrame(A, y_s), cfg);
  for (Index j = 0; j < 6; ++j) {
    const Eigen::VectorXd c = post.samples.col(j);
    EXPECT_NEAR(c.mean(), oracle.mean[j], 4 * batch_means_standard_error(c) + 1e-9) << j;
  }
}

TEST(Conditioning, VariationalToyAndSymmetry) {
  const auto post = condition_variational(toy_prior(), toy_frame());
  EXPECT_NEAR(post.base_mean()[0], 60.0, 1e-6);
  EXPECT_NEAR(post.base_mean()[1], 40.0, 1e-6);
  EXPECT_NEAR(post.base_variance()[0], 200.0 / 3.0, 1e-6);
  EXPECT_FALSE(post.diagnostics.barrier_active);

  const auto iso = condition_variational(GaussianLatent::diagonal(Eigen::Vector2d(50, 50), Eigen::Vector2d(4, 4)),
                                         toy_frame());
  EXPECT_NEAR(iso.q_mean[0], 0.0, 1e-9);
  EXPECT_NEAR(iso.q_cov(0, 0), 4.0, 1e-9);

  const auto A = build_aggregation_matrix({0, 1}, 2);
  const auto none = condition_variational(GaussianLatent::diagonal(Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 1)),
                                          NullSpaceFrame(A, Eigen::Vector2d(3, 4)));
  EXPECT_EQ(none.q_mean.size(), 0);
  EXPECT_EQ(none.base_mean(), Eigen::Vector2d(3, 4));
}

TEST(Conditioning, VariationalBarrierPushesMassIntoOrthant) {
  const auto latent = GaussianLatent::diagonal(Eigen::Vector2d(-5, 15), Eigen::Vector2d(100, 100));
  const NullSpaceFrame frame(toy(), Eigen::VectorXd::Constant(1, 10));
  const auto free = condition_exact(latent, frame);
  const auto post = condition_variational(latent, frame);
  EXPECT_TRUE(post.diagnostics.barrier_active);
  EXPECT_GT(post.base_mean()[0], free.base_mean()[0]);
  EXPECT_NEAR(post.base_mean().sum(), 10.0, 1e-9);
  EXPECT_FALSE(post.diagnostics.elbo_trace.empty());
}

TEST(Conditioning, ProjectionToyIsBiasedAndReproducible) {
  const auto a = condition_projection(toy_prior(), toy_frame(), 40000, 5, false);
  const auto b = condition_projection(toy_prior(), toy_frame(), 40000, 5, false);
  EXPECT_TRUE(a.samples == b.samples);
  // Projected draws: mean Ybar + N N^T (m - Ybar), variance (200 + 100) / 4.
  const double se = std::sqrt(75.0 / 40000);
  EXPECT_NEAR(column_mean(a.samples)[0], 57.5, 4 * se);
  EXPECT_NEAR(column_mean(a.samples)[1], 42.5, 4 * se);

  const auto pinned =
      condition_projection(GaussianLatent::diagonal(Eigen::Vector2d(70, 30), Eigen::Vector2d::Zero()), toy_frame(), 50, 1);
  EXPECT_LE((pinned.samples.rowwise() - Eigen::RowVector2d(70, 30)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Conditioning, ProjectionOfCountsStaysFeasible) {
  std::mt19937_64 rng(10);
  const auto A = fixture::random_aggregation(rng, 50, 10);
  const Eigen::VectorXd rates = Eigen::VectorXd::LinSpaced(50, 0.1, 3.0);
  Eigen::VectorXd y(50);
  for (Index i = 0; i < 50; ++i) y[i] = std::poisson_distribution<int>(rates[i])(rng);
  const NullSpaceFrame frame(A, A.dense() * y);
  const auto post = condition_projection(PoissonLatent{rates}, frame, 2000, 3);
  EXPECT_GE(post.samples.minCoeff(), -1e-9);
  const Eigen::MatrixXd agg = post.samples * A.dense().transpose();
  for (Index r = 0; r < agg.rows(); ++r)
    EXPECT_LE((agg.row(r).transpose() - frame.observed()).norm(), 1e-9 * (1 + frame.observed().norm()));
  EXPECT_GE(post.diagnostics.clipping_rate, 0.0);
}

TEST(Conditioning, BatchMeansStandardErrorOfIidChain) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  Eigen::VectorXd chain(100000);
  for (auto& v : chain) v = z(rng);
  EXPECT_NEAR(batch_means_standard_error(chain), 1.0 / std::sqrt(100000.0), 0.3 / std::sqrt(100000.0));
}

TEST(Conditioning, ConfigValidation) {
  McmcConfig bad;
  bad.n_samples = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_THROW(parse_strategy("gibbs"), ValidationError);
  EXPECT_EQ(parse_strategy("variational"), Strategy::variational);
  EXPECT_THROW(condition_variational(PoissonLatent{Eigen::Vector2d(1, 1)}, toy_frame()), ValidationError);
}
