#include "dustmagnet/geometry.hpp"

#include "fixtures.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace dustmagnet;

static void BM_PositionToWeights(benchmark::State& state) {
    std::mt19937_64 rng(1);
    const auto poly = fixtures::random_convex_layout(rng, static_cast<std::size_t>(state.range(0)));
    const MagnetLayout layout(poly);
    std::vector<Point2D> points;
    for (int i = 0; i < 256; ++i) points.push_back(fixtures::random_interior_point(rng, poly));
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(position_to_weights(layout, points[i++ & 255]));
    }
}
BENCHMARK(BM_PositionToWeights)->DenseRange(2, 8);

static void BM_WeightsToPosition(benchmark::State& state) {
    std::mt19937_64 rng(2);
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const MagnetLayout layout(fixtures::random_convex_layout(rng, n));
    const WeightVector w = fixtures::random_weights(rng, n);
    for (auto _ : state) benchmark::DoNotOptimize(weights_to_position(layout, w));
}
BENCHMARK(BM_WeightsToPosition)->DenseRange(2, 8);

static void BM_ProjectConvex(benchmark::State& state) {
    const MagnetLayout layout(fixtures::square_layout());
    for (auto _ : state) benchmark::DoNotOptimize(validate_or_project_convex(layout, 2, {0.3, 0.3}));
}
BENCHMARK(BM_ProjectConvex);
