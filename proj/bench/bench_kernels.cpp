#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "mkvrisk/convex.hpp"
#include "mkvrisk/kernels.hpp"
#include "mkvrisk/particles.hpp"
#include "mkvrisk/rng.hpp"

namespace {

using mkv::kernels::Backend;

std::vector<double> noise(std::size_t n) {
    std::vector<double> v(n);
    mkv::CounterRng{17}.normals(0, 0, mkv::StreamTag::experiment, v);
    return v;
}

void BM_MeanRows(benchmark::State& state, Backend backend) {
    const auto rows = noise(static_cast<std::size_t>(state.range(0)) * 2);
    std::vector<double> out(2);
    for (auto _ : state) {
        mkv::kernels::mean_rows(backend, rows, 2, out);
        benchmark::DoNotOptimize(out.data());
    }
}

void BM_ExpMoments(benchmark::State& state, Backend backend) {
    const auto v = noise(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(mkv::kernels::exp_moments(backend, v, 4.0));
}

void BM_Legendre(benchmark::State& state, Backend backend) {
    const auto grid = mkv::UniformGrid::cube(1, -3, 3, static_cast<std::size_t>(state.range(0)));
    const auto f = mkv::sample_on_grid(mkv::CostFunction::power(4.0), grid);
    const auto dual = mkv::UniformGrid::cube(1, -27, 27, static_cast<std::size_t>(state.range(0)));
    mkv::TransformOptions opts{true, backend};
    for (auto _ : state) benchmark::DoNotOptimize(mkv::legendre_transform(f, dual, nullptr, opts));
}

void BM_Simulate(benchmark::State& state, Backend backend) {
    const auto coeffs = mkv::CoefficientSet::linear(0.0, -0.5, 0.5, 1.0);
    const auto init = mkv::InitialCondition::point({0.0});
    mkv::SimulationOptions opts;
    opts.backend = backend;
    for (auto _ : state) {
        benchmark::DoNotOptimize(mkv::simulate_mckv(coeffs, mkv::TimeGrid(0.0, 64),
                                                    init, static_cast<std::size_t>(state.range(0)), nullptr, 1, opts));
    }
}

void BM_Envelope(benchmark::State& state, Backend backend) {
    const auto grid = mkv::UniformGrid::cube(2, -1, 1, static_cast<std::size_t>(state.range(0)));
    mkv::GridTable t{grid, noise(grid.size())};
    for (auto _ : state) benchmark::DoNotOptimize(mkv::pasch_hausdorff(t, 2.0, backend));
}

}  // namespace

BENCHMARK_CAPTURE(BM_MeanRows, serial, Backend::serial)->Arg(1 << 18);
BENCHMARK_CAPTURE(BM_MeanRows, parallel, Backend::parallel)->Arg(1 << 18);
BENCHMARK_CAPTURE(BM_ExpMoments, serial, Backend::serial)->Arg(1 << 18);
BENCHMARK_CAPTURE(BM_ExpMoments, parallel, Backend::parallel)->Arg(1 << 18);
BENCHMARK_CAPTURE(BM_Legendre, serial, Backend::serial)->Arg(2001);
BENCHMARK_CAPTURE(BM_Legendre, parallel, Backend::parallel)->Arg(2001);
BENCHMARK_CAPTURE(BM_Simulate, serial, Backend::serial)->Arg(1 << 15)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Simulate, parallel, Backend::parallel)->Arg(1 << 15)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Envelope, serial, Backend::serial)->Arg(41);
BENCHMARK_CAPTURE(BM_Envelope, parallel, Backend::parallel)->Arg(41);

BENCHMARK_MAIN();
