#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "selfdebias/metrics.hpp"

using namespace selfdebias;

namespace {

OutcomeSet random_set(std::size_t n) {
    std::mt19937_64 gen(12345);
    OutcomeSet set;
    set.outcomes.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = gen() % 10;
        set.outcomes.push_back(r < 3   ? OutcomeKind::Biased
                               : r < 4 ? OutcomeKind::CounterBiased
                                       : OutcomeKind::Unknown);
    }
    return set;
}

}  // namespace

static void BM_BiasScore(benchmark::State& state) {
    const OutcomeSet set = random_set(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(bias_score(set));
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_BiasScore)->Range(256, 1 << 16)->Complexity(benchmark::oN);

static void BM_BootstrapBias(benchmark::State& state) {
    const OutcomeSet set = random_set(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(bootstrap_bias(set, 1000, 42));
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_BootstrapBias)->Range(500, 4000)->Unit(benchmark::kMillisecond);

static void BM_TransitionTable(benchmark::State& state) {
    std::vector<TransitionPair> pairs;
    std::mt19937_64 gen(7);
    for (int i = 0; i < state.range(0); ++i) {
        TransitionPair pair;
        pair.first = ParsedAnswer::chosen(static_cast<int>(gen() % 3), "x");
        pair.first_correct = gen() % 2 == 0;
        pair.second = ParsedAnswer::chosen(static_cast<int>(gen() % 3), "x");
        pair.second_correct = gen() % 2 == 0;
        pairs.push_back(pair);
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(transition_table(pairs));
    }
}
BENCHMARK(BM_TransitionTable)->Range(1000, 1 << 15);

BENCHMARK_MAIN();
