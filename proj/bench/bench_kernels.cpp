// Serial reference path against the OpenMP path for the per-sample kernels.
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include "aprecond/analytic.hpp"
#include "aprecond/distill.hpp"
#include "aprecond/metrics.hpp"

using namespace aprecond;

namespace {

Exec exec_of(const benchmark::State& state) { return state.range(0) == 0 ? Exec::serial : Exec::parallel; }

void label(benchmark::State& state) {
  state.SetLabel(state.range(0) == 0 ? "serial" : "omp x" + std::to_string(max_threads()));
}

void BM_EstimateL(benchmark::State& state) {
  const GaussianMixture gm = GaussianMixture::two_mode();
  const auto mode = state.range(1) == 0 ? TraceMode::analytic_trace : TraceMode::hutchinson;
  for (auto _ : state) benchmark::DoNotOptimize(estimate_l(gm, 0.7, 4096, mode, 64, 1, exec_of(state)));
  label(state);
}
BENCHMARK(BM_EstimateL)->ArgsProduct({{0, 1}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_BuildTables(benchmark::State& state) {
  const GaussianMixture gm = GaussianMixture::two_mode();
  const TimeGrid grid = edm_grid(64, 0.002, 80.0, 7.0);
  TableOptions opt;
  opt.n_samples = 1024;
  for (auto _ : state) benchmark::DoNotOptimize(build_tables(gm, grid, opt, exec_of(state)));
  label(state);
}
BENCHMARK(BM_BuildTables)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_CtmLossGradient(benchmark::State& state) {
  const GaussianMixture gm = GaussianMixture::two_mode();
  TrainConfig cfg;
  cfg.exec = exec_of(state);
  cfg.seed = 2;
  const EmaPair pair(StudentNet(cfg.net, 2), cfg.ema_mu);
  const DistillBatch batch = draw_batch(gm, cfg, 0);
  for (auto _ : state) benchmark::DoNotOptimize(ctm_loss(pair, batch, cfg, true));
  label(state);
}
BENCHMARK(BM_CtmLossGradient)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TeacherTrajectories(benchmark::State& state) {
  const GaussianMixture gm = GaussianMixture::two_mode();
  const TimeGrid grid = index_subgrid(edm_grid(18, 0.002, 80.0, 7.0), 3);
  const auto noise = initial_noise(1, grid[0], 256, 3);
  for (auto _ : state) benchmark::DoNotOptimize(teacher_trajectories(gm, grid, noise, 1000, exec_of(state)));
  label(state);
}
BENCHMARK(BM_TeacherTrajectories)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_EnergyDistance(benchmark::State& state) {
  const GaussianMixture gm({0.5, 0.5}, {{-1.0, 0.0}, {1.0, 1.0}}, {0.5, 0.3});
  const auto a = sample_data(gm, 1500, 1);
  const auto b = sample_data(gm, 1500, 2);
  for (auto _ : state) benchmark::DoNotOptimize(energy_distance(a, b, exec_of(state)));
  label(state);
}
BENCHMARK(BM_EnergyDistance)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
