#include <benchmark/benchmark.h>

#include "selfdebias/parsing.hpp"
#include "selfdebias/simulator.hpp"

using namespace selfdebias;

static void BM_ParseLoneLetter(benchmark::State& state) {
    const auto records = synthetic_records(1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(parse_answer("(B)", records[0]));
    }
}
BENCHMARK(BM_ParseLoneLetter);

static void BM_ParseSentence(benchmark::State& state) {
    const auto records = synthetic_records(1);
    const std::string raw =
        "Based on the context, the answer is (C) because nothing in the text says otherwise.";
    for (auto _ : state) {
        benchmark::DoNotOptimize(parse_answer(raw, records[0]));
    }
}
BENCHMARK(BM_ParseSentence);

static void BM_ParseOptionEcho(benchmark::State& state) {
    const auto records = synthetic_records(1);
    const std::string raw = "It was " + records[0].options[1].text + " most likely.";
    for (auto _ : state) {
        benchmark::DoNotOptimize(parse_answer(raw, records[0]));
    }
}
BENCHMARK(BM_ParseOptionEcho);

static void BM_ClassifyOutcome(benchmark::State& state) {
    const auto records = synthetic_records(1);
    const ParsedAnswer parsed = ParsedAnswer::chosen(1, "(B)");
    for (auto _ : state) {
        benchmark::DoNotOptimize(classify_outcome(parsed, records[0]));
    }
}
BENCHMARK(BM_ClassifyOutcome);
