#include "dustmagnet/prompting.hpp"

#include "fixtures.hpp"

#include <benchmark/benchmark.h>

using namespace dustmagnet;

static void BM_SteeredGenerationPrompt(benchmark::State& state) {
    const auto h = fixtures::horse_world();
    const PromptBuilder builder;
    for (auto _ : state) {
        benchmark::DoNotOptimize(builder.build_steered_generation(h.world, {h.factions}, ElementKind::character, std::nullopt));
    }
}
BENCHMARK(BM_SteeredGenerationPrompt);

static void BM_RecognitionPrompt(benchmark::State& state) {
    const auto h = fixtures::horse_world();
    const PromptBuilder builder;
    for (auto _ : state) benchmark::DoNotOptimize(builder.build_recognition(h.world, h.loyalties, h.silver));
}
BENCHMARK(BM_RecognitionPrompt);

static void BM_ParseRecognition(benchmark::State& state) {
    const std::string text = "The colt leans to the Sect.\n====\n{\"A\": 3, \"B\": 50, \"C\": 47}";
    for (auto _ : state) benchmark::DoNotOptimize(parse_recognition(text, 3));
}
BENCHMARK(BM_ParseRecognition);
