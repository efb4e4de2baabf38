#include <benchmark/benchmark.h>

#include <random>

#include "reagg/conditioning.hpp"
#include "reagg/kernels.hpp"
#include "support.hpp"

using namespace reagg;

namespace {

std::vector<Polygon> tile_regions(int side) {
  std::vector<Polygon> regions;
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j)
      regions.push_back({std::to_string(i * side + j), {{double(i), double(j)}, {i + 1.0, double(j)}, {i + 1.0, j + 1.0}, {double(i), j + 1.0}}});
  return regions;
}

std::vector<PointRecord> random_points(Index n, double extent) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, extent);
  std::vector<PointRecord> pts(n);
  for (auto& p : pts) p = {u(rng), u(rng), 1.0};
  return pts;
}

std::vector<Polygon> random_stars(int n) {
  std::mt19937_64 rng(2);
  std::vector<Polygon> stars;
  for (int i = 0; i < n; ++i) stars.push_back(fixture::random_star_polygon(rng, 4.0 + (i % 8) * 4.0, 4.0 + (i / 8) * 4.0, 3.0));
  return stars;
}

Eigen::MatrixXd random_samples(Index rows, Index cols) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = z(rng);
  return m;
}

AggregationMatrix random_groups(Index n_base, Index n_groups) {
  std::mt19937_64 rng(4);
  return fixture::random_aggregation(rng, n_base, n_groups);
}

void AssignPointsSerial(benchmark::State& state) {
  const auto regions = tile_regions(30);
  const auto pts = random_points(state.range(0), 30.0);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::assign_points_serial(pts, regions));
}
void AssignPointsParallel(benchmark::State& state) {
  const auto regions = tile_regions(30);
  const auto pts = random_points(state.range(0), 30.0);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::assign_points_parallel(pts, regions));
}

void ClipToGridSerial(benchmark::State& state) {
  const auto stars = random_stars(64);
  const GridSpec grid{0, 0, 0.25, 0.25, 136, 136};
  for (auto _ : state) benchmark::DoNotOptimize(kernels::clip_to_grid_serial(stars, grid));
}
void ClipToGridParallel(benchmark::State& state) {
  const auto stars = random_stars(64);
  const GridSpec grid{0, 0, 0.25, 0.25, 136, 136};
  for (auto _ : state) benchmark::DoNotOptimize(kernels::clip_to_grid_parallel(stars, grid));
}

void AggregateSerial(benchmark::State& state) {
  const auto A = random_groups(state.range(0), state.range(0) / 16);
  const Eigen::VectorXd x = random_samples(state.range(0), 1);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::aggregate_serial(A.sparse(), x));
}
void AggregateParallel(benchmark::State& state) {
  const auto A = random_groups(state.range(0), state.range(0) / 16);
  const Eigen::VectorXd x = random_samples(state.range(0), 1);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::aggregate_parallel(A.members(), x));
}

void AggregateSamplesSerial(benchmark::State& state) {
  const auto A = random_groups(4096, 256);
  const Eigen::MatrixXd s = random_samples(state.range(0), 4096);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::aggregate_samples_serial(s, A.sparse()));
}
void AggregateSamplesParallel(benchmark::State& state) {
  const auto A = random_groups(4096, 256);
  const Eigen::MatrixXd s = random_samples(state.range(0), 4096);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::aggregate_samples_parallel(s, A.members()));
}

void ColumnQuantilesSerial(benchmark::State& state) {
  const Eigen::MatrixXd s = random_samples(2000, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::column_quantiles_serial(s, 0.95));
}
void ColumnQuantilesParallel(benchmark::State& state) {
  const Eigen::MatrixXd s = random_samples(2000, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::column_quantiles_parallel(s, 0.95));
}

struct McmcProblem {
  NullSpaceFrame frame;
  PoissonLatent latent;
  McmcConfig cfg;
};

McmcProblem mcmc_problem(Index n_base) {
  const auto A = random_groups(n_base, n_base / 8);
  McmcProblem p{NullSpaceFrame(A, Eigen::VectorXd::Constant(A.n_groups(), 40.0)),
                PoissonLatent{Eigen::VectorXd::Constant(n_base, 5.0)}, {}};
  p.cfg.n_samples = 500;
  p.cfg.burn_in = 200;
  p.cfg.seed = 9;
  return p;
}

void McmcSerial(benchmark::State& state) {
  const auto p = mcmc_problem(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(condition_mcmc_serial(p.latent, PoissonLikelihood{}, p.frame, p.cfg));
}
void McmcParallel(benchmark::State& state) {
  const auto p = mcmc_problem(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(condition_mcmc(p.latent, PoissonLikelihood{}, p.frame, p.cfg));
}

}  // namespace

BENCHMARK(AssignPointsSerial)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(AssignPointsParallel)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(ClipToGridSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(ClipToGridParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(AggregateSerial)->Arg(1 << 20);
BENCHMARK(AggregateParallel)->Arg(1 << 20);
BENCHMARK(AggregateSamplesSerial)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(AggregateSamplesParallel)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(ColumnQuantilesSerial)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(ColumnQuantilesParallel)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(McmcSerial)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(McmcParallel)->Arg(1024)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
